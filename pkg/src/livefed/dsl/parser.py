"""Recursive-descent parser for the SQL subset and REST view definitions.

Grammar (informal)::

    script      := [stmt] {";" [stmt]}
    stmt        := create_table | create_view | insert | select | update | delete
    create_view := CREATE VIEW id OF "(" coldef {"," coldef} ")" [uritype] AS GET string
                 | CREATE VIEW id AS select
    uritype     := [id] "^^" ( [id] ":" id | string )
"""

from __future__ import annotations

from livefed.dsl import ast as A
from livefed.dsl.lexer import Token, tokenize
from livefed.errors import ParseError, TypeMismatch
from livefed.values import ColumnType

COMPARISONS = ("=", "<>", "<", "<=", ">", ">=")


class Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = tokenize(text)
        self.i = 0

    # -- token helpers -----------------------------------------------------

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def advance(self) -> Token:
        t = self.toks[self.i]
        if t.kind != "eof":
            self.i += 1
        return t

    def error(self, what: str, expected=()) -> ParseError:
        t = self.tok
        found = "end of input" if t.kind == "eof" else repr(self.text[t.pos:t.end])
        return ParseError(f"expected {what}, found {found}", t.pos, expected)

    def accept_kw(self, *words) -> Token | None:
        if self.tok.is_kw(*words):
            return self.advance()
        return None

    def expect_kw(self, *words) -> Token:
        t = self.accept_kw(*words)
        if t is None:
            raise self.error(" or ".join(w.upper() for w in words), [w.upper() for w in words])
        return t

    def accept_op(self, *ops) -> Token | None:
        if self.tok.is_op(*ops):
            return self.advance()
        return None

    def expect_op(self, *ops) -> Token:
        t = self.accept_op(*ops)
        if t is None:
            raise self.error(" or ".join(repr(o) for o in ops), ops)
        return t

    def ident(self) -> str:
        if self.tok.kind == "ident":
            return self.advance().value
        raise self.error("identifier", ["identifier"])

    def string(self) -> str:
        if self.tok.kind == "string":
            return self.advance().value
        raise self.error("string literal", ["string"])

    # -- statements ----------------------------------------------------------

    def script(self) -> list:
        out = []
        while self.tok.kind != "eof":
            if self.accept_op(";"):
                continue
            out.append(self.statement())
            if self.tok.kind != "eof":
                self.expect_op(";")
        return out

    def statement(self):
        start = self.tok.pos
        if self.accept_kw("create"):
            if self.accept_kw("table"):
                node = self.create_table
            elif self.accept_kw("view"):
                node = self.create_view
            else:
                raise self.error("TABLE or VIEW", ["TABLE", "VIEW"])
        elif self.accept_kw("insert"):
            node = self.insert
        elif self.tok.is_kw("select"):
            node = self.select_stmt
        elif self.accept_kw("update"):
            node = self.update
        elif self.accept_kw("delete"):
            node = self.delete
        else:
            raise self.error("statement", ["CREATE", "INSERT", "SELECT", "UPDATE", "DELETE"])
        stmt = node()
        end = self.toks[self.i - 1].end
        object.__setattr__(stmt, "span", (start, end))
        return stmt

    def coldef(self) -> A.ColumnDef:
        name = self.ident()
        if self.tok.kind != "ident":
            raise self.error("column type", ["type"])
        t = self.advance()
        try:
            ColumnType.from_name(t.value)
        except TypeMismatch:
            raise ParseError(f"unknown type {t.value!r}", t.pos, ["type"]) from None
        args = []
        if self.accept_op("("):
            while True:
                if self.tok.kind != "number" or not isinstance(self.tok.value, int):
                    raise self.error("integer", ["number"])
                args.append(self.advance().value)
                if not self.accept_op(","):
                    break
            self.expect_op(")")
        not_null = False
        if self.accept_kw("not"):
            self.expect_kw("null")
            not_null = True
        return A.ColumnDef(name, t.value.lower(), tuple(args), not_null)

    def ident_list(self) -> tuple:
        self.expect_op("(")
        out = [self.ident()]
        while self.accept_op(","):
            out.append(self.ident())
        self.expect_op(")")
        return tuple(out)

    def create_table(self):
        name = self.ident()
        self.expect_op("(")
        cols, pk = [], ()
        while True:
            if self.accept_kw("primary"):
                self.expect_kw("key")
                pk = self.ident_list()
            else:
                col = self.coldef()
                if self.accept_kw("primary"):
                    self.expect_kw("key")
                    pk = (col.name,)
                cols.append(col)
            if not self.accept_op(","):
                break
        self.expect_op(")")
        return A.CreateTable(name, tuple(cols), pk)

    def uri_type(self) -> A.UriType:
        abbrev = None
        if self.tok.kind == "ident":
            abbrev = self.advance().value
        self.expect_op("^^")
        if self.tok.kind == "string":
            return A.UriType(abbrev=abbrev, uri=self.advance().value)
        namespace = None
        if self.tok.kind == "ident":
            namespace = self.advance().value
        self.expect_op(":")
        return A.UriType(abbrev, namespace, self.ident())

    def create_view(self):
        name = self.ident()
        if self.accept_kw("of"):
            self.expect_op("(")
            cols = [self.coldef()]
            while self.accept_op(","):
                cols.append(self.coldef())
            self.expect_op(")")
            uri = None
            if not self.tok.is_kw("as"):
                uri = self.uri_type()
            self.expect_kw("as")
            self.expect_kw("get")
            url = self.string()
            return A.CreateViewRest(name, tuple(cols), url, uri)
        self.expect_kw("as")
        if self.tok.is_kw("get"):
            raise self.error("OF column list before AS GET", ["OF"])
        return A.CreateViewSelect(name, self.select())

    def insert(self):
        self.expect_kw("into")
        table = self.ident()
        cols = None
        if self.tok.is_op("("):
            cols = self.ident_list()
        self.expect_kw("values")
        rows = [self.value_row()]
        while self.accept_op(","):
            rows.append(self.value_row())
        return A.Insert(table, cols, tuple(rows))

    def value_row(self) -> tuple:
        self.expect_op("(")
        vals = [self.expr()]
        while self.accept_op(","):
            vals.append(self.expr())
        self.expect_op(")")
        return tuple(vals)

    def select_stmt(self):
        return A.Select(self.select())

    def update(self):
        target = self.ident()
        self.expect_kw("set")
        assigns = []
        while True:
            col = self.ident()
            self.expect_op("=")
            assigns.append((col, self.expr()))
            if not self.accept_op(","):
                break
        where = self.expr() if self.accept_kw("where") else None
        return A.Update(target, tuple(assigns), where)

    def delete(self):
        self.expect_kw("from")
        target = self.ident()
        where = self.expr() if self.accept_kw("where") else None
        return A.Delete(target, where)

    # -- select --------------------------------------------------------------

    def select(self) -> A.SelectAst:
        self.expect_kw("select")
        if self.accept_op("*"):
            items = (A.Star(),)
        else:
            items = [self.select_item()]
            while self.accept_op(","):
                items.append(self.select_item())
            items = tuple(items)
            aliases = [i.alias.lower() for i in items if i.alias]
            if len(set(aliases)) != len(aliases):
                raise ParseError("duplicate alias in select list", self.tok.pos)
        self.expect_kw("from")
        source = self.from_clause()
        where = self.expr() if self.accept_kw("where") else None
        group = ()
        if self.accept_kw("group"):
            self.expect_kw("by")
            g = [self.expr()]
            while self.accept_op(","):
                g.append(self.expr())
            group = tuple(g)
        return A.SelectAst(items, source, where, group)

    def select_item(self) -> A.SelectItem:
        e = self.expr()
        alias = None
        if self.accept_kw("as"):
            alias = self.ident()
        elif self.tok.kind == "ident":
            alias = self.advance().value
        return A.SelectItem(e, alias)

    def relation(self) -> A.Relation:
        name = self.ident()
        alias = None
        if self.accept_kw("as"):
            alias = self.ident()
        elif self.tok.kind == "ident":
            alias = self.advance().value
        return A.Relation(name, alias)

    def from_clause(self):
        left = self.relation()
        while True:
            if self.accept_op(","):
                left = A.JoinItem("cross", left, self.relation())
            elif self.accept_kw("natural"):
                self.expect_kw("join")
                left = A.JoinItem("natural", left, self.relation())
            elif self.accept_kw("cross"):
                self.expect_kw("join")
                left = A.JoinItem("cross", left, self.relation())
            elif self.tok.is_kw("inner", "join"):
                self.accept_kw("inner")
                self.expect_kw("join")
                right = self.relation()
                self.expect_kw("on")
                left = A.JoinItem("inner", left, right, self.expr())
            else:
                return left

    # -- expressions -----------------------------------------------------------

    def expr(self):
        left = self.and_expr()
        while self.accept_kw("or"):
            left = A.BinOp("or", left, self.and_expr())
        return left

    def and_expr(self):
        left = self.not_expr()
        while self.accept_kw("and"):
            left = A.BinOp("and", left, self.not_expr())
        return left

    def not_expr(self):
        if self.accept_kw("not"):
            return A.UnaryOp("not", self.not_expr())
        return self.comparison()

    def comparison(self):
        left = self.additive()
        if self.tok.is_op(*COMPARISONS):
            op = self.advance().value
            return A.BinOp(op, left, self.additive())
        if self.accept_kw("is"):
            neg = bool(self.accept_kw("not"))
            self.expect_kw("null")
            return A.IsNull(left, neg)
        return left

    def additive(self):
        left = self.term()
        while self.tok.is_op("+", "-"):
            op = self.advance().value
            left = A.BinOp(op, left, self.term())
        return left

    def term(self):
        left = self.unary()
        while self.tok.is_op("*", "/"):
            op = self.advance().value
            left = A.BinOp(op, left, self.unary())
        return left

    def unary(self):
        if self.accept_op("-"):
            return A.UnaryOp("-", self.unary())
        if self.accept_op("+"):
            return self.unary()
        return self.primary()

    def primary(self):
        t = self.tok
        if t.kind in ("number", "string", "date", "timestamp"):
            self.advance()
            return A.Literal(t.value)
        if t.is_kw("null"):
            self.advance()
            return A.Literal(None)
        if self.accept_op("("):
            e = self.expr()
            self.expect_op(")")
            return e
        if self.accept_kw("extract"):
            self.expect_op("(")
            field = self.ident().lower()
            if field not in ("year", "month", "day", "hour", "minute", "second"):
                raise ParseError(f"unknown extract field {field!r}", self.toks[self.i - 1].pos)
            self.expect_kw("from")
            e = self.expr()
            self.expect_op(")")
            return A.Extract(field, e)
        if t.kind == "ident":
            self.advance()
            if self.tok.is_op("(") and not t.quoted:
                self.advance()
                if self.accept_op("*"):
                    self.expect_op(")")
                    return A.FuncCall(t.value.lower(), (), star=True)
                args = []
                if not self.tok.is_op(")"):
                    args.append(self.expr())
                    while self.accept_op(","):
                        args.append(self.expr())
                self.expect_op(")")
                return A.FuncCall(t.value.lower(), tuple(args))
            if self.accept_op("."):
                return A.ColumnRef(self.ident(), t.value)
            return A.ColumnRef(t.value)
        raise self.error("expression", ["expression"])


def parse(text: str) -> list:
    """Parse a script into a list of statements."""
    return Parser(text).script()


def parse_one(text: str):
    stmts = parse(text)
    if len(stmts) != 1:
        raise ParseError(f"expected one statement, got {len(stmts)}", 0)
    return stmts[0]


def parse_expr(text: str):
    p = Parser(text)
    e = p.expr()
    if p.tok.kind != "eof":
        raise p.error("end of expression")
    return e


def parse_select(text: str) -> A.SelectAst:
    p = Parser(text)
    s = p.select()
    p.accept_op(";")
    if p.tok.kind != "eof":
        raise p.error("end of query")
    return s
