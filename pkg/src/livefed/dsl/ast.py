"""Syntax tree for the supported SQL subset plus REST view definitions.

Nodes are frozen dataclasses; source spans are excluded from equality so a
re-parsed pretty-print compares equal to the original tree.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

Span = tuple[int, int]


def _span():
    return field(default=None, compare=False, repr=False)


# -- expressions ----------------------------------------------------------


@dataclass(frozen=True)
class Literal:
    value: Any


@dataclass(frozen=True)
class ColumnRef:
    name: str
    qualifier: str | None = None

    def __eq__(self, other):
        if not isinstance(other, ColumnRef):
            return NotImplemented
        q1 = self.qualifier.lower() if self.qualifier else None
        q2 = other.qualifier.lower() if other.qualifier else None
        return self.name.lower() == other.name.lower() and q1 == q2

    def __hash__(self):
        return hash((self.name.lower(), (self.qualifier or "").lower()))


@dataclass(frozen=True)
class BinOp:
    op: str
    left: Any
    right: Any


@dataclass(frozen=True)
class UnaryOp:
    op: str  # "-" | "not"
    operand: Any


@dataclass(frozen=True)
class Extract:
    field: str
    expr: Any


@dataclass(frozen=True)
class FuncCall:
    name: str
    args: tuple = ()
    star: bool = False


@dataclass(frozen=True)
class IsNull:
    expr: Any
    negated: bool = False


AGGREGATES = ("count", "sum", "min", "max")


def is_aggregate(e) -> bool:
    return isinstance(e, FuncCall) and e.name.lower() in AGGREGATES


def walk(e):
    """Yield ``e`` and all sub-expressions, pre-order."""
    yield e
    if isinstance(e, BinOp):
        yield from walk(e.left)
        yield from walk(e.right)
    elif isinstance(e, (UnaryOp,)):
        yield from walk(e.operand)
    elif isinstance(e, (Extract, IsNull)):
        yield from walk(e.expr)
    elif isinstance(e, FuncCall):
        for a in e.args:
            yield from walk(a)


def columns_of(e) -> list[ColumnRef]:
    return [x for x in walk(e) if isinstance(x, ColumnRef)]


def conjuncts(e) -> list:
    if e is None:
        return []
    if isinstance(e, BinOp) and e.op == "and":
        return conjuncts(e.left) + conjuncts(e.right)
    return [e]


def conjoin(parts):
    parts = [p for p in parts if p is not None]
    if not parts:
        return None
    out = parts[0]
    for p in parts[1:]:
        out = BinOp("and", out, p)
    return out


# -- select ---------------------------------------------------------------


@dataclass(frozen=True)
class Star:
    pass


@dataclass(frozen=True)
class SelectItem:
    expr: Any
    alias: str | None = None


@dataclass(frozen=True)
class Relation:
    name: str
    alias: str | None = None


@dataclass(frozen=True)
class JoinItem:
    kind: str  # "natural" | "inner" | "cross"
    left: Any
    right: Any
    on: Any = None


@dataclass(frozen=True)
class SelectAst:
    items: tuple
    source: Any
    where: Any = None
    group_by: tuple = ()


# -- statements -----------------------------------------------------------


@dataclass(frozen=True)
class ColumnDef:
    name: str
    type_name: str
    type_args: tuple = ()
    not_null: bool = False


@dataclass(frozen=True)
class CreateTable:
    name: str
    columns: tuple
    primary_key: tuple
    span: Span | None = _span()


@dataclass(frozen=True)
class Insert:
    table: str
    columns: tuple | None
    rows: tuple
    span: Span | None = _span()


@dataclass(frozen=True)
class UriType:
    abbrev: str | None = None
    namespace: str | None = None
    ident: str | None = None
    uri: str | None = None


@dataclass(frozen=True)
class CreateViewSelect:
    name: str
    select: SelectAst
    span: Span | None = _span()


@dataclass(frozen=True)
class CreateViewRest:
    name: str
    columns: tuple
    url: str
    uri_type: UriType | None = None
    span: Span | None = _span()


@dataclass(frozen=True)
class Select:
    select: SelectAst
    span: Span | None = _span()


@dataclass(frozen=True)
class Update:
    target: str
    assignments: tuple  # ((column, expr), ...)
    where: Any = None
    span: Span | None = _span()


@dataclass(frozen=True)
class Delete:
    target: str
    where: Any = None
    span: Span | None = _span()


Statement = CreateTable | Insert | CreateViewSelect | CreateViewRest | Select | Update | Delete
