from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal

from livefed import readcheck as RC
from livefed import values as V
from livefed.dsl import ast as A
from livefed.engine import plan as P
from livefed.engine.expr import compile_expr
from livefed.errors import QueryError
from livefed.store import Database, Snapshot


@dataclass
class ResultSet:
    columns: list  # [(name, ColumnType | None)]
    rows: list
    row_validators: list | None = None
    row_entries: list | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        for r in self.rows:
            if len(r) != len(self.columns):
                raise QueryError("row arity does not match result columns")
        if self.row_validators is not None and len(self.row_validators) != len(self.rows):
            raise QueryError("row validator count does not match rows")

    @property
    def column_names(self) -> list[str]:
        return [c[0] for c in self.columns]

    def as_dicts(self) -> list[dict]:
        names = self.column_names
        return [dict(zip(names, r)) for r in self.rows]


@dataclass
class Fragment:
    """Rows fetched for one remote view, already typed to its declared columns."""

    rows: list
    etag: str = ""
    row_validators: list | None = None

    @property
    def vector(self) -> RC.ReadCheckVector:
        return RC.parse(self.etag) if self.etag else RC.ReadCheckVector()


def _key(values):
    return tuple(V.sort_key(v) for v in values)


class _Evaluator:
    def __init__(self, snap: Snapshot | None, fragments: dict | None):
        self.snap = snap
        self.fragments = fragments or {}

    @property
    def db_name(self):
        return self.snap.db_name if self.snap is not None else None

    def run(self, p) -> list[tuple[tuple, tuple]]:
        method = getattr(self, "_" + type(p).__name__)
        return method(p)

    def _KeyScan(self, p):
        t = self.snap.table(p.table)
        out = []
        for key in p.keys:
            row = self.snap.row(t.table_id, key)
            if row is not None:
                out.append((row.values, (RC.RowStamp(row.rvv, t.table_id, key),)))
        return out

    def _PredScan(self, p):
        t = self.snap.table(p.table)
        pred = compile_expr(p.predicate, p.columns)[0] if p.predicate is not None else None
        out = []
        for row in sorted(self.snap.scan(t.table_id), key=lambda r: _key(r.key)):
            if pred is None or pred(row.values) is True:
                out.append((row.values, (RC.RowStamp(row.rvv, t.table_id, row.key),)))
        return out

    def _RestGet(self, p):
        frag = self.fragments.get(p)
        if frag is None:
            raise QueryError(f"no fetched rows for remote view {p.view}")
        vals = frag.row_validators
        out = []
        for n, r in enumerate(frag.rows):
            if vals is None:
                ents = ()
            else:
                ents = tuple(e if e is not None else RC.Absent() for e in RC.parse_row(vals[n]))
            out.append((tuple(r), ents))
        return out

    def _Filter(self, p):
        f = compile_expr(p.predicate, p.input.columns)[0]
        return [(v, e) for v, e in self.run(p.input) if f(v) is True]

    def _Project(self, p):
        fns = [compile_expr(e, p.input.columns)[0] for e, _ in p.items]
        return [(tuple(f(v) for f in fns), e) for v, e in self.run(p.input)]

    def _Aggregate(self, p):
        cols = p.input.columns
        gfns = [compile_expr(e, cols)[0] for e, _ in p.group]
        aggs = []
        for call, _ in p.aggregates:
            arg = compile_expr(call.args[0], cols)[0] if call.args else None
            aggs.append((call.name.lower(), call.star, arg))
        groups: dict[tuple, list] = {}
        for v, _ in self.run(p.input):
            k = tuple(f(v) for f in gfns)
            groups.setdefault(k, []).append(v)
        if not groups and not p.group:
            groups[()] = []
        marker = (RC.Absent(self.db_name),)
        out = []
        for k in sorted(groups, key=_key):
            rows = groups[k]
            vals = list(k)
            for name, star, arg in aggs:
                vals.append(_aggregate(name, star, arg, rows))
            out.append((tuple(vals), marker))
        return out

    def _Join(self, p):
        left = self.run(p.left)
        right = self.run(p.right)
        out = []
        if p.kind == "natural":
            shared = P.natural_shared(p.left.columns, p.right.columns)
            ls = [i for i, _ in shared]
            rs = [j for _, j in shared]
            lrest = [i for i in range(len(p.left.columns)) if i not in ls]
            rrest = [j for j in range(len(p.right.columns)) if j not in rs]
            index: dict[tuple, list] = {}
            for rv, re_ in right:
                k = tuple(rv[j] for j in rs)
                if any(x is None for x in k):
                    continue
                index.setdefault(_key(k), []).append((rv, re_))
            for lv, le in left:
                k = tuple(lv[i] for i in ls)
                if any(x is None for x in k):
                    continue
                for rv, re_ in index.get(_key(k), ()):
                    vals = tuple(lv[i] for i in ls) + tuple(lv[i] for i in lrest) + tuple(rv[j] for j in rrest)
                    out.append((vals, le + re_))
            return out
        on = compile_expr(p.on, p.columns)[0] if p.on is not None else None
        for lv, le in left:
            for rv, re_ in right:
                vals = lv + rv
                if on is None or on(vals) is True:
                    out.append((vals, le + re_))
        return out

    def _Union(self, p):
        seen, out = set(), []
        for v, e in self.run(p.left) + self.run(p.right):
            k = _key(v)
            if k not in seen:
                seen.add(k)
                out.append((v, e))
        return out


def _aggregate(name, star, arg, rows):
    if name == "count":
        if star:
            return len(rows)
        return sum(1 for r in rows if arg(r) is not None)
    vals = [x for x in (arg(r) for r in rows) if x is not None]
    if not vals:
        return None
    if name == "sum":
        if any(isinstance(x, Decimal) for x in vals):
            return sum((Decimal(x) for x in vals), Decimal(0))
        return sum(vals)
    if name == "min":
        return min(vals, key=V.sort_key)
    if name == "max":
        return max(vals, key=V.sort_key)
    raise QueryError(f"unknown aggregate {name}")


def _vector(p, snap, fragments) -> RC.ReadCheckVector:
    if not P.leaves(p, P.RestGet):
        return RC.compute(p, snap)
    if isinstance(p, P.RestGet):
        return fragments[p].vector
    if not P.children(p):
        return RC.compute(p, snap)
    return RC.combine(*(_vector(c, snap, fragments) for c in P.children(p)))


def evaluate(p, db: Database | Snapshot | None = None, fragments: dict | None = None, row_validators: bool = False):
    """Evaluate ``p`` on one snapshot; return ``(ResultSet, ReadCheckVector)``.

    ``fragments`` maps ``RestGet`` leaves to fetched :class:`Fragment` rows.
    """
    snap = db.snapshot() if isinstance(db, Database) else db
    ev = _Evaluator(snap, fragments)
    pairs = ev.run(p)
    rows = [v for v, _ in pairs]
    entries = [e for _, e in pairs]
    vals = [RC.render_row(e) for e in entries] if row_validators else None
    rs = ResultSet([(c.name, c.type) for c in p.columns], rows, vals, entries)
    return rs, _vector(p, snap, fragments or {})


def eval_expr(expr, row: dict | None = None):
    """Evaluate one expression against a ``{column: value}`` mapping."""
    from livefed.engine.expr import Col

    row = row or {}
    cols = tuple(Col(k, V.type_of(v)) for k, v in row.items())
    fn, _ = compile_expr(expr, cols)
    return fn(tuple(row.values()))


__all__ = ["ResultSet", "Fragment", "evaluate", "eval_expr", "A"]
