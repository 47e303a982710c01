"""Type-checked compilation of scalar expressions into closures."""

from __future__ import annotations

import datetime as dt
import operator
from decimal import Decimal, DivisionByZero, InvalidOperation
from typing import Callable, NamedTuple

from livefed import values as V
from livefed.dsl import ast as A
from livefed.dsl.printer import expr as expr_text
from livefed.errors import QueryTypeError
from livefed.values import ColumnType, Interval

BOOL = "bool"
NUMERIC_TYPES = (ColumnType.INT, ColumnType.NUMERIC)


class Col(NamedTuple):
    name: str
    type: ColumnType | None
    qual: str | None = None


def find(columns, ref: A.ColumnRef) -> int:
    low = ref.name.lower()
    hits = [i for i, c in enumerate(columns) if c.name.lower() == low]
    if ref.qualifier and len(hits) > 1:
        q = ref.qualifier.lower()
        hits = [i for i in hits if (columns[i].qual or "").lower() == q] or hits
    if not hits:
        raise QueryTypeError(f"unknown column {expr_text(ref)}")
    if len(hits) > 1:
        raise QueryTypeError(f"ambiguous column {expr_text(ref)}")
    return hits[0]


def has_column(columns, ref: A.ColumnRef) -> bool:
    try:
        find(columns, ref)
        return True
    except QueryTypeError:
        return False


def _temporal(v):
    if isinstance(v, dt.date) and not isinstance(v, dt.datetime):
        return dt.datetime(v.year, v.month, v.day)
    return v


_CMP = {
    "=": operator.eq,
    "<>": operator.ne,
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}


def _comparable(a, b) -> bool:
    if a is None or b is None:
        return True
    if a in NUMERIC_TYPES and b in NUMERIC_TYPES:
        return True
    if a.is_temporal and b.is_temporal:
        return True
    return a == b


def _divide(x, y):
    if y == 0:
        return None
    try:
        return Decimal(x) / Decimal(y)
    except (DivisionByZero, InvalidOperation):
        return None


def compile_expr(e, columns) -> tuple[Callable, object]:
    """Return ``(fn, type)`` where ``fn(row_values)`` evaluates ``e``."""
    if isinstance(e, A.Literal):
        v = e.value
        return (lambda row: v), V.type_of(v)

    if isinstance(e, A.ColumnRef):
        i = find(columns, e)
        return (lambda row: row[i]), columns[i].type

    if isinstance(e, A.UnaryOp):
        f, t = compile_expr(e.operand, columns)
        if e.op == "not":
            if t not in (BOOL, None):
                raise QueryTypeError(f"NOT needs a condition: {expr_text(e)}")

            def neg(row):
                v = f(row)
                return None if v is None else not v

            return neg, BOOL
        if t not in NUMERIC_TYPES + (None,):
            raise QueryTypeError(f"unary minus needs a number: {expr_text(e)}")
        return (lambda row: None if (v := f(row)) is None else -v), t

    if isinstance(e, A.IsNull):
        f, _ = compile_expr(e.expr, columns)
        if e.negated:
            return (lambda row: f(row) is not None), BOOL
        return (lambda row: f(row) is None), BOOL

    if isinstance(e, A.Extract):
        f, t = compile_expr(e.expr, columns)
        if t not in (ColumnType.INTERVAL, ColumnType.DATE, ColumnType.DATETIME, None):
            raise QueryTypeError(f"cannot extract from {expr_text(e.expr)}")
        field = e.field
        return (lambda row: V.extract(field, f(row))), ColumnType.INT

    if isinstance(e, A.FuncCall):
        if A.is_aggregate(e):
            raise QueryTypeError(f"aggregate {expr_text(e)} not allowed here")
        raise QueryTypeError(f"unknown function {e.name}")

    if isinstance(e, A.BinOp):
        lf, lt = compile_expr(e.left, columns)
        rf, rt = compile_expr(e.right, columns)
        op = e.op
        if op in ("and", "or"):
            for t in (lt, rt):
                if t not in (BOOL, None):
                    raise QueryTypeError(f"{op.upper()} needs conditions: {expr_text(e)}")
            if op == "and":

                def conj(row):
                    a = lf(row)
                    if a is False:
                        return False
                    b = rf(row)
                    if b is False:
                        return False
                    return None if a is None or b is None else True

                return conj, BOOL

            def disj(row):
                a = lf(row)
                if a is True:
                    return True
                b = rf(row)
                if b is True:
                    return True
                return None if a is None or b is None else False

            return disj, BOOL

        if op in _CMP:
            if not _comparable(lt, rt) or BOOL in (lt, rt):
                raise QueryTypeError(f"cannot compare {expr_text(e)}")
            cmp = _CMP[op]

            def compare(row):
                a, b = lf(row), rf(row)
                if a is None or b is None:
                    return None
                return cmp(_temporal(a), _temporal(b))

            return compare, BOOL

        if op == "-" and lt is not None and rt is not None and lt.is_temporal and rt.is_temporal:
            return (lambda row: None if (a := lf(row)) is None or (b := rf(row)) is None
                    else V.interval_between(a, b)), ColumnType.INTERVAL

        for t in (lt, rt):
            if t not in NUMERIC_TYPES + (None,):
                raise QueryTypeError(f"arithmetic on non-number: {expr_text(e)}")
        if op == "/":
            return (lambda row: None if (a := lf(row)) is None or (b := rf(row)) is None
                    else _divide(a, b)), ColumnType.NUMERIC
        fn = {"+": operator.add, "-": operator.sub, "*": operator.mul}[op]
        out = ColumnType.INT if lt == rt == ColumnType.INT else ColumnType.NUMERIC
        if lt is None or rt is None:
            out = lt or rt

        def arith(row):
            a, b = lf(row), rf(row)
            if a is None or b is None:
                return None
            if isinstance(a, Decimal) or isinstance(b, Decimal):
                return fn(Decimal(a), Decimal(b))
            return fn(a, b)

        return arith, out

    raise QueryTypeError(f"unsupported expression {e!r}")


def constant(e):
    """Evaluate an expression with no column references."""
    f, _ = compile_expr(e, ())
    return f(())


def is_literal(e) -> bool:
    return isinstance(e, A.Literal) and e.value is not None


def expr_type(e, columns):
    return compile_expr(e, columns)[1]


__all__ = ["Col", "BOOL", "compile_expr", "constant", "find", "has_column", "is_literal", "expr_type", "Interval"]
