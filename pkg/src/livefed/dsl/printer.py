"""Canonical SQL text for syntax trees. Binary operations are fully parenthesized."""

from __future__ import annotations

import datetime as dt
import re

from livefed.dsl import ast as A
from livefed.dsl.lexer import KEYWORDS

_BARE = re.compile(r"[A-Za-z0-9_]+")


def ident(name: str) -> str:
    if _BARE.fullmatch(name) and not name.isdigit() and name.lower() not in KEYWORDS:
        return name
    return '"' + name + '"'


def string(s: str) -> str:
    return "'" + s.replace("'", "''") + "'"


def literal(v) -> str:
    if v is None:
        return "NULL"
    if isinstance(v, bool):
        raise TypeError("boolean literals are not supported")
    if isinstance(v, str):
        return string(v)
    if isinstance(v, dt.datetime):
        return f"timestamp'{v.isoformat(sep=' ')}'"
    if isinstance(v, dt.date):
        return f"date'{v.isoformat()}'"
    return str(v)


def expr(e) -> str:
    if isinstance(e, A.Literal):
        return literal(e.value)
    if isinstance(e, A.ColumnRef):
        return f"{ident(e.qualifier)}.{ident(e.name)}" if e.qualifier else ident(e.name)
    if isinstance(e, A.BinOp):
        op = e.op.upper() if e.op in ("and", "or") else e.op
        return f"({expr(e.left)} {op} {expr(e.right)})"
    if isinstance(e, A.UnaryOp):
        if e.op == "not":
            return f"(NOT {expr(e.operand)})"
        return f"(-{expr(e.operand)})"
    if isinstance(e, A.Extract):
        return f"EXTRACT({e.field.upper()} FROM {expr(e.expr)})"
    if isinstance(e, A.FuncCall):
        if e.star:
            return f"{e.name.upper()}(*)"
        return f"{e.name.upper()}({', '.join(expr(a) for a in e.args)})"
    if isinstance(e, A.IsNull):
        return f"({expr(e.expr)} IS {'NOT ' if e.negated else ''}NULL)"
    raise TypeError(f"cannot print {e!r}")


def source(s) -> str:
    if isinstance(s, A.Relation):
        return ident(s.name) + (f" AS {ident(s.alias)}" if s.alias else "")
    if s.kind == "natural":
        return f"{source(s.left)} NATURAL JOIN {source(s.right)}"
    if s.kind == "cross":
        return f"{source(s.left)} CROSS JOIN {source(s.right)}"
    return f"{source(s.left)} JOIN {source(s.right)} ON {expr(s.on)}"


def select(s: A.SelectAst) -> str:
    items = []
    for it in s.items:
        if isinstance(it, A.Star):
            items.append("*")
        else:
            items.append(expr(it.expr) + (f" AS {ident(it.alias)}" if it.alias else ""))
    out = f"SELECT {', '.join(items)} FROM {source(s.source)}"
    if s.where is not None:
        out += f" WHERE {expr(s.where)}"
    if s.group_by:
        out += " GROUP BY " + ", ".join(expr(g) for g in s.group_by)
    return out


def coldef(c: A.ColumnDef) -> str:
    out = f"{ident(c.name)} {c.type_name.upper()}"
    if c.type_args:
        out += "(" + ", ".join(str(a) for a in c.type_args) + ")"
    if c.not_null:
        out += " NOT NULL"
    return out


def statement(st) -> str:
    if isinstance(st, A.CreateTable):
        parts = [coldef(c) for c in st.columns]
        if st.primary_key:
            parts.append("PRIMARY KEY (" + ", ".join(ident(k) for k in st.primary_key) + ")")
        return f"CREATE TABLE {ident(st.name)} ({', '.join(parts)})"
    if isinstance(st, A.Insert):
        cols = f" ({', '.join(ident(c) for c in st.columns)})" if st.columns else ""
        rows = ", ".join("(" + ", ".join(expr(v) for v in r) + ")" for r in st.rows)
        return f"INSERT INTO {ident(st.table)}{cols} VALUES {rows}"
    if isinstance(st, A.CreateViewSelect):
        return f"CREATE VIEW {ident(st.name)} AS {select(st.select)}"
    if isinstance(st, A.CreateViewRest):
        cols = ", ".join(coldef(c) for c in st.columns)
        uri = ""
        if st.uri_type is not None:
            u = st.uri_type
            uri = (f" {ident(u.abbrev)}" if u.abbrev else "") + " ^^ "
            if u.uri is not None:
                uri += string(u.uri)
            else:
                uri += (ident(u.namespace) if u.namespace else "") + ":" + ident(u.ident)
        return f"CREATE VIEW {ident(st.name)} OF ({cols}){uri} AS GET {string(st.url)}"
    if isinstance(st, A.Select):
        return select(st.select)
    if isinstance(st, A.Update):
        sets = ", ".join(f"{ident(c)} = {expr(v)}" for c, v in st.assignments)
        out = f"UPDATE {ident(st.target)} SET {sets}"
        return out + (f" WHERE {expr(st.where)}" if st.where is not None else "")
    if isinstance(st, A.Delete):
        out = f"DELETE FROM {ident(st.target)}"
        return out + (f" WHERE {expr(st.where)}" if st.where is not None else "")
    raise TypeError(f"cannot print {st!r}")


def script(stmts) -> str:
    return ";\n".join(statement(s) for s in stmts) + (";\n" if stmts else "")
