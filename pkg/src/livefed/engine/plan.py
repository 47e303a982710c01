"""Algebraic query plans, the planner, and predicate pushdown.

Plans are immutable trees. ``KeyScan`` is only produced when the predicate
pins a complete primary key with literals; anything else on a base table is a
``PredScan``. Views are expanded inline before that classification, so a key
predicate on a projection view still reaches the base table.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any

from livefed import values as V
from livefed.dsl import ast as A
from livefed.dsl.printer import expr as expr_text
from livefed.engine.catalog import RestViewDef, ViewDef
from livefed.engine.expr import BOOL, Col, compile_expr, find, has_column
from livefed.errors import QueryTypeError, TypeMismatch, UnknownRelation
from livefed.store import TableDef
from livefed.values import ColumnType


def _cols():
    return field(default=(), compare=False, repr=False)


@dataclass(frozen=True)
class KeyScan:
    table: str
    keys: tuple
    columns: tuple = _cols()
    pk: tuple = _cols()


@dataclass(frozen=True)
class PredScan:
    table: str
    predicate: Any = None
    columns: tuple = _cols()
    pk: tuple = _cols()


@dataclass(frozen=True)
class Filter:
    predicate: Any
    input: Any
    columns: tuple = _cols()


@dataclass(frozen=True)
class Project:
    items: tuple  # ((expr, name), ...)
    input: Any
    columns: tuple = _cols()


@dataclass(frozen=True)
class Aggregate:
    group: tuple  # ((expr, name), ...)
    aggregates: tuple  # ((FuncCall, name), ...)
    input: Any
    columns: tuple = _cols()


@dataclass(frozen=True)
class Join:
    kind: str  # natural | inner | cross
    left: Any
    right: Any
    on: Any = None
    columns: tuple = _cols()


@dataclass(frozen=True)
class Union:
    left: Any
    right: Any
    columns: tuple = _cols()


@dataclass(frozen=True)
class RestGet:
    view: str
    url: str
    predicate: Any = None
    columns: tuple = _cols()


Plan = KeyScan | PredScan | Filter | Project | Aggregate | Join | Union | RestGet


def children(p) -> list:
    if isinstance(p, (Join, Union)):
        return [p.left, p.right]
    if isinstance(p, (Filter, Project, Aggregate)):
        return [p.input]
    return []


def leaves(p, kind=None) -> list:
    if not children(p):
        return [p] if kind is None or isinstance(p, kind) else []
    return [x for c in children(p) for x in leaves(c, kind)]


def requalify(p, qual: str):
    return replace(p, columns=tuple(Col(c.name, c.type, qual) for c in p.columns))


# -- join schemas -------------------------------------------------------------


def natural_shared(left_cols, right_cols) -> list[tuple[int, int]]:
    rnames = {c.name.lower(): j for j, c in enumerate(right_cols)}
    return [(i, rnames[c.name.lower()]) for i, c in enumerate(left_cols) if c.name.lower() in rnames]


def join_columns(kind, left_cols, right_cols) -> tuple:
    if kind != "natural":
        return tuple(left_cols) + tuple(right_cols)
    shared = natural_shared(left_cols, right_cols)
    ls = {i for i, _ in shared}
    rs = {j for _, j in shared}
    out = [left_cols[i] for i, _ in shared]
    out += [c for i, c in enumerate(left_cols) if i not in ls]
    out += [c for j, c in enumerate(right_cols) if j not in rs]
    return tuple(out)


def make_join(kind, left, right, on=None) -> Join:
    cols = join_columns(kind, left.columns, right.columns)
    if on is not None:
        _, t = compile_expr(on, cols)
        if t not in (BOOL, None):
            raise QueryTypeError(f"join condition is not boolean: {expr_text(on)}")
    if kind == "natural":
        for i, j in natural_shared(left.columns, right.columns):
            lt, rt = left.columns[i].type, right.columns[j].type
            if lt and rt and not V.compatible(lt, rt):
                raise QueryTypeError(f"natural join column {left.columns[i].name} has incompatible types")
    return Join(kind, left, right, on, cols)


def make_filter(pred, inp) -> Filter:
    _, t = compile_expr(pred, inp.columns)
    if t not in (BOOL, None):
        raise QueryTypeError(f"WHERE clause is not a condition: {expr_text(pred)}")
    return Filter(pred, inp, inp.columns)


def make_project(items, inp) -> Project:
    cols = []
    for e, name in items:
        _, t = compile_expr(e, inp.columns)
        if t == BOOL:
            raise QueryTypeError(f"boolean select items are not supported: {expr_text(e)}")
        cols.append(Col(name, t))
    names = [c.name.lower() for c in cols]
    if len(set(names)) != len(names):
        raise QueryTypeError("duplicate output column names")
    return Project(tuple(items), inp, tuple(cols))


def make_union(left, right) -> Union:
    if len(left.columns) != len(right.columns):
        raise QueryTypeError("union inputs differ in arity")
    return Union(left, right, left.columns)


# -- planner ------------------------------------------------------------------


def _scan(t: TableDef, qual: str) -> PredScan:
    cols = tuple(Col(n, ty, qual) for n, ty in t.columns)
    return PredScan(t.name, None, cols, t.primary_key)


def rest_get(v: RestViewDef, qual: str | None = None) -> RestGet:
    return RestGet(v.name, v.url, None, tuple(Col(n, t, qual or v.name) for n, t in v.columns))


def plan_source(src, catalog):
    if isinstance(src, A.Relation):
        obj = catalog.lookup(src.name)
        qual = src.alias or src.name
        if isinstance(obj, TableDef):
            return _scan(obj, qual)
        if isinstance(obj, ViewDef):
            return requalify(plan_select(obj.select, catalog, optimize=False), qual)
        if isinstance(obj, RestViewDef):
            return rest_get(obj, qual)
        raise UnknownRelation(f"cannot query {src.name}")
    left = plan_source(src.left, catalog)
    right = plan_source(src.right, catalog)
    return make_join(src.kind, left, right, src.on)


def _item_name(item: A.SelectItem) -> str:
    if item.alias:
        return item.alias
    if isinstance(item.expr, A.ColumnRef):
        return item.expr.name
    return expr_text(item.expr)


def _agg_type(call: A.FuncCall, cols):
    name = call.name.lower()
    if name == "count":
        if not call.star and len(call.args) != 1:
            raise QueryTypeError("COUNT takes one argument or *")
        if call.args:
            compile_expr(call.args[0], cols)
        return ColumnType.INT
    if call.star or len(call.args) != 1:
        raise QueryTypeError(f"{name.upper()} takes exactly one argument")
    _, t = compile_expr(call.args[0], cols)
    if name == "sum" and t not in (ColumnType.INT, ColumnType.NUMERIC, None):
        raise QueryTypeError("SUM needs a numeric argument")
    if t == BOOL:
        raise QueryTypeError(f"{name.upper()} of a condition")
    return t


def _substitute(e, mapping: list[tuple[Any, str]]):
    for src, name in mapping:
        if e == src:
            return A.ColumnRef(name)
    if isinstance(e, A.BinOp):
        return A.BinOp(e.op, _substitute(e.left, mapping), _substitute(e.right, mapping))
    if isinstance(e, A.UnaryOp):
        return A.UnaryOp(e.op, _substitute(e.operand, mapping))
    if isinstance(e, A.Extract):
        return A.Extract(e.field, _substitute(e.expr, mapping))
    if isinstance(e, A.IsNull):
        return A.IsNull(_substitute(e.expr, mapping), e.negated)
    if isinstance(e, A.FuncCall) and not A.is_aggregate(e):
        return A.FuncCall(e.name, tuple(_substitute(a, mapping) for a in e.args), e.star)
    return e


def _build_aggregate(ast: A.SelectAst, src):
    cols = src.columns
    items = [it for it in ast.items if isinstance(it, A.SelectItem)]
    if len(items) != len(ast.items):
        raise QueryTypeError("SELECT * cannot be combined with GROUP BY")
    aliases = {it.alias.lower(): it.expr for it in items if it.alias}
    group = []
    for g in ast.group_by:
        if isinstance(g, A.ColumnRef) and not has_column(cols, g) and g.name.lower() in aliases:
            expr = aliases[g.name.lower()]
            if any(A.is_aggregate(x) for x in A.walk(expr)):
                raise QueryTypeError(f"cannot group by aggregate {g.name}")
            group.append((expr, g.name))
        elif isinstance(g, A.ColumnRef):
            group.append((g, cols[find(cols, g)].name))
        else:
            group.append((g, expr_text(g)))
    calls = []
    for it in items:
        for x in A.walk(it.expr):
            if A.is_aggregate(x) and x not in calls:
                for arg in x.args:
                    if any(A.is_aggregate(y) for y in A.walk(arg)):
                        raise QueryTypeError("nested aggregates are not supported")
                calls.append(x)
    aggs = tuple((c, f"_agg{i}") for i, c in enumerate(calls))
    out_cols = []
    for e, name in group:
        _, t = compile_expr(e, cols)
        out_cols.append(Col(name, t))
    for c, name in aggs:
        out_cols.append(Col(name, _agg_type(c, cols)))
    agg = Aggregate(tuple(group), aggs, src, tuple(out_cols))
    mapping = list(group) + list(aggs)
    proj = []
    for it in items:
        e = _substitute(it.expr, mapping)
        for ref in A.columns_of(e):
            if not has_column(agg.columns, ref):
                raise QueryTypeError(f"{expr_text(ref)} must appear in GROUP BY")
        proj.append((e, _item_name(it)))
    return make_project(proj, agg)


def plan_select(ast: A.SelectAst, catalog, optimize: bool = True, push_remote: bool = True):
    src = plan_source(ast.source, catalog)
    if ast.where is not None:
        if any(A.is_aggregate(x) for x in A.walk(ast.where)):
            raise QueryTypeError("aggregates are not allowed in WHERE")
        src = make_filter(ast.where, src)
    has_agg = bool(ast.group_by) or any(
        isinstance(it, A.SelectItem) and any(A.is_aggregate(x) for x in A.walk(it.expr)) for it in ast.items
    )
    if has_agg:
        out = _build_aggregate(ast, src)
    elif len(ast.items) == 1 and isinstance(ast.items[0], A.Star):
        out = src
    else:
        items = []
        for it in ast.items:
            if isinstance(it, A.Star):
                items += [(A.ColumnRef(c.name, c.qual), c.name) for c in src.columns]
            else:
                items.append((it.expr, _item_name(it)))
        out = make_project(items, src)
    if optimize:
        out = push_filters(out, push_remote)
    return out


def plan(ast, catalog, push_remote: bool = True):
    """Plan a ``SelectAst`` (or ``Select`` statement) against ``catalog``."""
    if isinstance(ast, A.Select):
        ast = ast.select
    return plan_select(ast, catalog, optimize=True, push_remote=push_remote)


# -- predicate pushdown ----------------------------------------------------------


def _refs_within(pred, cols) -> bool:
    return all(has_column(cols, r) for r in A.columns_of(pred))


def push_filters(p, push_remote: bool = True):
    if isinstance(p, Filter):
        return _push_into(p.input, A.conjuncts(p.predicate), push_remote)
    if isinstance(p, Join):
        return replace(p, left=push_filters(p.left, push_remote), right=push_filters(p.right, push_remote))
    if isinstance(p, Union):
        return replace(p, left=push_filters(p.left, push_remote), right=push_filters(p.right, push_remote))
    if isinstance(p, (Project, Aggregate)):
        return replace(p, input=push_filters(p.input, push_remote))
    if isinstance(p, PredScan):
        return classify(p)
    return p


def _on_top(preds, node):
    return make_filter(A.conjoin(preds), node) if preds else node


def _push_into(node, preds, push_remote):
    if not preds:
        return push_filters(node, push_remote)
    if isinstance(node, Filter):
        return _push_into(node.input, preds + A.conjuncts(node.predicate), push_remote)
    if isinstance(node, PredScan):
        return classify(replace(node, predicate=A.conjoin(A.conjuncts(node.predicate) + preds)))
    if isinstance(node, RestGet) and push_remote:
        return replace(node, predicate=A.conjoin(A.conjuncts(node.predicate) + preds))
    if isinstance(node, Project):
        plain = {}
        for e, name in node.items:
            if isinstance(e, A.ColumnRef):
                plain[name.lower()] = e
        down, keep = [], []
        for pr in preds:
            refs = A.columns_of(pr)
            if refs and all(r.name.lower() in plain for r in refs):
                down.append(_rename(pr, plain))
            else:
                keep.append(pr)
        inner = _push_into(node.input, down, push_remote)
        return _on_top(keep, replace(node, input=inner))
    if isinstance(node, Aggregate):
        keys = {name.lower(): e for e, name in node.group}
        down, keep = [], []
        for pr in preds:
            refs = A.columns_of(pr)
            if refs and all(r.name.lower() in keys for r in refs):
                down.append(_rename(pr, keys))
            else:
                keep.append(pr)
        inner = _push_into(node.input, down, push_remote)
        return _on_top(keep, replace(node, input=inner))
    if isinstance(node, Join):
        lp, rp, keep = [], [], []
        for pr in preds:
            in_l = _refs_within(pr, node.left.columns)
            in_r = _refs_within(pr, node.right.columns)
            if in_l and in_r and node.kind == "natural":
                lp.append(pr)
                rp.append(pr)
            elif in_l and not in_r:
                lp.append(pr)
            elif in_r and not in_l:
                rp.append(pr)
            else:
                keep.append(pr)
        left = _push_into(node.left, lp, push_remote)
        right = _push_into(node.right, rp, push_remote)
        return _on_top(keep, replace(node, left=left, right=right))
    return _on_top(preds, push_filters(node, push_remote))


def _rename(pred, mapping: dict):
    if isinstance(pred, A.ColumnRef):
        return mapping.get(pred.name.lower(), pred)
    if isinstance(pred, A.BinOp):
        return A.BinOp(pred.op, _rename(pred.left, mapping), _rename(pred.right, mapping))
    if isinstance(pred, A.UnaryOp):
        return A.UnaryOp(pred.op, _rename(pred.operand, mapping))
    if isinstance(pred, A.Extract):
        return A.Extract(pred.field, _rename(pred.expr, mapping))
    if isinstance(pred, A.IsNull):
        return A.IsNull(_rename(pred.expr, mapping), pred.negated)
    return pred


# -- key classification ------------------------------------------------------------


def _eq_pin(e, cols):
    """``col = literal`` (either side) -> (column index, literal value)."""
    if not (isinstance(e, A.BinOp) and e.op == "="):
        return None
    for c, lit in ((e.left, e.right), (e.right, e.left)):
        if isinstance(c, A.ColumnRef) and isinstance(lit, A.Literal) and lit.value is not None:
            try:
                return find(cols, c), lit.value
            except QueryTypeError:
                return None
    return None


def _pin_key(conjs, cols, pk_idx):
    """Match a conjunction that pins every key column; return (key, used indexes)."""
    found, used = {}, []
    for n, c in enumerate(conjs):
        pin = _eq_pin(c, cols)
        if pin and pin[0] in pk_idx and pin[0] not in found:
            found[pin[0]] = pin[1]
            used.append(n)
    if len(found) != len(pk_idx):
        return None
    try:
        key = tuple(V.coerce(found[i], cols[i].type) for i in pk_idx)
    except TypeMismatch:
        return None
    return key, used


def _disjuncts(e) -> list:
    if isinstance(e, A.BinOp) and e.op == "or":
        return _disjuncts(e.left) + _disjuncts(e.right)
    return [e]


def _keys_of(conj, cols, pk_idx):
    """Key list if ``conj`` is a disjunction of exact key pins."""
    keys = []
    for d in _disjuncts(conj):
        parts = A.conjuncts(d)
        got = _pin_key(parts, cols, pk_idx)
        if got is None or len(got[1]) != len(parts):
            return None
        if got[0] not in keys:
            keys.append(got[0])
    return keys


def classify(scan: PredScan):
    if scan.predicate is None:
        return scan
    cols = scan.columns
    pk_idx = [find(cols, A.ColumnRef(k)) for k in scan.pk]
    conjs = A.conjuncts(scan.predicate)
    got = _pin_key(conjs, cols, pk_idx)
    if got is not None:
        key, used = got
        residual = [c for n, c in enumerate(conjs) if n not in used]
        node = KeyScan(scan.table, (key,), cols, scan.pk)
        return _on_top(residual, node)
    for n, c in enumerate(conjs):
        if isinstance(c, A.BinOp) and c.op == "or":
            keys = _keys_of(c, cols, pk_idx)
            if keys:
                node = KeyScan(scan.table, tuple(keys), cols, scan.pk)
                return _on_top(conjs[:n] + conjs[n + 1:], node)
    return scan


# -- text form ------------------------------------------------------------------


def plan_text(p) -> str:
    """Normalized rendering used for cache keys and debugging."""
    if isinstance(p, KeyScan):
        return f"KeyScan({p.table},{list(p.keys)!r})"
    if isinstance(p, PredScan):
        pred = expr_text(p.predicate) if p.predicate is not None else "true"
        return f"PredScan({p.table},{pred})"
    if isinstance(p, RestGet):
        pred = expr_text(p.predicate) if p.predicate is not None else "true"
        return f"RestGet({p.url},{pred})"
    if isinstance(p, Filter):
        return f"Filter({expr_text(p.predicate)},{plan_text(p.input)})"
    if isinstance(p, Project):
        items = ",".join(f"{expr_text(e)} AS {n}" for e, n in p.items)
        return f"Project([{items}],{plan_text(p.input)})"
    if isinstance(p, Aggregate):
        g = ",".join(f"{expr_text(e)} AS {n}" for e, n in p.group)
        a = ",".join(f"{expr_text(e)} AS {n}" for e, n in p.aggregates)
        return f"Aggregate([{g}],[{a}],{plan_text(p.input)})"
    if isinstance(p, Join):
        on = f",{expr_text(p.on)}" if p.on is not None else ""
        return f"Join({p.kind},{plan_text(p.left)},{plan_text(p.right)}{on})"
    if isinstance(p, Union):
        return f"Union({plan_text(p.left)},{plan_text(p.right)})"
    raise TypeError(f"unknown plan node {p!r}")
