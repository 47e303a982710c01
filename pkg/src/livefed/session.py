"""Statement execution against one local database."""

from __future__ import annotations

from dataclasses import dataclass

from livefed import readcheck as RC
from livefed.dsl import ast as A
from livefed.dsl import parse
from livefed.dsl.printer import select as select_text
from livefed.engine import plan as P
from livefed.engine.catalog import LocalCatalog, ViewDef
from livefed.engine.evaluate import evaluate
from livefed.engine.expr import Col, compile_expr, constant, find
from livefed.errors import NotUpdatable, QueryError, SchemaMismatch, UnknownRelation
from livefed.store import Database, TableDef, Transaction
from livefed.values import ColumnType


@dataclass(frozen=True)
class Target:
    """Base table behind an updatable view, with view-to-base column names."""

    table: TableDef
    columns: tuple  # view column names, in view order
    base: dict  # lower view column -> base column name

    def base_name(self, col: str) -> str:
        try:
            return self.base[col.lower()]
        except KeyError:
            raise NotUpdatable(f"column {col} is not updatable") from None


def updatable_target(catalog: LocalCatalog, name: str) -> Target:
    obj = catalog.lookup(name)
    if isinstance(obj, TableDef):
        cols = tuple(obj.column_names)
        return Target(obj, cols, {c.lower(): c for c in cols})
    if not isinstance(obj, ViewDef):
        raise NotUpdatable(f"{name} is not updatable")
    p = P.plan_select(obj.select, catalog, optimize=False)
    mapping = None
    node = p
    if isinstance(node, P.Project):
        mapping = {}
        for e, out in node.items:
            if not isinstance(e, A.ColumnRef):
                raise NotUpdatable(f"{name}: column {out} is computed")
            mapping[out.lower()] = e.name
        node = node.input
    if not isinstance(node, P.PredScan) or node.predicate is not None:
        raise NotUpdatable(f"{name} is not a plain projection of one base table")
    t = catalog.lookup(node.table)
    if mapping is None:
        cols = tuple(t.column_names)
        mapping = {c.lower(): c for c in cols}
    else:
        cols = tuple(out for _, out in p.items)
        mapping = {k: t.column_names[t.index(v)] for k, v in mapping.items()}
    exposed = {v.lower() for v in mapping.values()}
    if not all(k.lower() in exposed for k in t.primary_key):
        raise NotUpdatable(f"{name} does not expose the key of {t.name}")
    return Target(t, cols, mapping)


class Session:
    def __init__(self, db: Database):
        self.db = db

    def catalog(self, snap=None) -> LocalCatalog:
        return LocalCatalog(snap or self.db.snapshot())

    # -- reads ------------------------------------------------------------

    def plan(self, select: A.SelectAst, snap=None):
        return P.plan(select, self.catalog(snap))

    def query(self, sql_or_ast, row_validators: bool = False, snap=None):
        ast = sql_or_ast
        if isinstance(ast, str):
            (ast,) = parse(ast)
        if isinstance(ast, A.Select):
            ast = ast.select
        snap = snap or self.db.snapshot()
        plan = P.plan(ast, LocalCatalog(snap))
        return evaluate(plan, snap, row_validators=row_validators)

    def view_select(self, view: str, where: A.Any | None = None, rename: list[str] | None = None):
        """``SELECT * FROM view [WHERE ...]``; ``rename`` relabels columns by position."""
        snap = self.db.snapshot()
        cat = LocalCatalog(snap)
        src = P.plan_source(A.Relation(view), cat)
        if rename is not None:
            if len(rename) != len(src.columns):
                raise SchemaMismatch(f"{view} has {len(src.columns)} columns, not {len(rename)}")
            items = tuple((A.ColumnRef(c.name, c.qual), r) for c, r in zip(src.columns, rename))
            src = P.make_project(items, src)
        if where is not None:
            src = P.make_filter(where, src)
        return P.push_filters(src), snap

    # -- statements -----------------------------------------------------------

    def execute(self, stmt):
        if isinstance(stmt, A.CreateTable):
            cols = [(c.name, ColumnType.from_name(c.type_name)) for c in stmt.columns]
            return self.db.create_table(stmt.name, cols, stmt.primary_key)
        if isinstance(stmt, A.CreateViewSelect):
            P.plan_select(stmt.select, self.catalog(), optimize=False)
            self.db.create_view(stmt.name, select_text(stmt.select))
            return None
        if isinstance(stmt, A.CreateViewRest):
            raise QueryError("REST views belong to a requester schema, not a contractor database")
        if isinstance(stmt, A.Select):
            return self.query(stmt.select)
        if isinstance(stmt, A.Insert):
            return self.insert(stmt)
        if isinstance(stmt, A.Update):
            return self.update(stmt.target, dict(stmt.assignments), stmt.where)
        if isinstance(stmt, A.Delete):
            return self.delete(stmt.target, stmt.where)
        raise QueryError(f"unsupported statement {type(stmt).__name__}")

    def run_script(self, text: str) -> list:
        return [self.execute(s) for s in parse(text)]

    def insert(self, stmt: A.Insert, txn: Transaction | None = None) -> int:
        tgt = updatable_target(self.catalog(), stmt.table)
        own = txn is None
        txn = txn or self.db.begin()
        for exprs in stmt.rows:
            cols = stmt.columns or tgt.columns
            if len(cols) != len(exprs):
                raise QueryError(f"INSERT into {stmt.table}: {len(exprs)} values for {len(cols)} columns")
            self.insert_row(txn, tgt, {c: constant(e) for c, e in zip(cols, exprs)})
        if own:
            txn.commit()
        return len(stmt.rows)

    @staticmethod
    def insert_row(txn: Transaction, tgt: Target, values: dict):
        t = tgt.table
        row = [None] * len(t.columns)
        for c, v in values.items():
            row[t.index(tgt.base_name(c))] = v
        return txn.insert(t.name, row)

    def _matches(self, tgt: Target, target_name: str, where, snap):
        cat = LocalCatalog(snap)
        src = P.plan_source(A.Relation(target_name), cat)
        if where is not None:
            src = P.make_filter(where, src)
        p = P.push_filters(src)
        rs, _ = evaluate(p, snap)
        out = []
        for values, ents in zip(rs.rows, rs.row_entries):
            (stamp,) = [e for e in ents if isinstance(e, RC.RowStamp)]
            out.append((values, stamp))
        return out, src.columns

    def update(self, target: str, assignments: dict, where=None, txn: Transaction | None = None) -> int:
        own = txn is None
        txn = txn or self.db.begin()
        tgt = updatable_target(LocalCatalog(txn.snapshot), target)
        rows, cols = self._matches(tgt, target, where, txn.snapshot)
        fns = {tgt.base_name(c): compile_expr(e, cols)[0] for c, e in assignments.items()}
        for values, stamp in rows:
            txn.update(tgt.table.name, stamp.key, {c: f(values) for c, f in fns.items()}, expect=stamp.rvv)
        if own:
            txn.commit()
        return len(rows)

    def delete(self, target: str, where=None, txn: Transaction | None = None) -> int:
        own = txn is None
        txn = txn or self.db.begin()
        tgt = updatable_target(LocalCatalog(txn.snapshot), target)
        rows, _ = self._matches(tgt, target, where, txn.snapshot)
        for _, stamp in rows:
            txn.delete(tgt.table.name, stamp.key, expect=stamp.rvv)
        if own:
            txn.commit()
        return len(rows)


def key_columns(tgt: Target) -> list[str]:
    """View column names exposing the base table key, in key order."""
    inv = {v.lower(): k for k, v in tgt.base.items()}
    names = {c.lower(): c for c in tgt.columns}
    return [names[inv[k.lower()]] for k in tgt.table.primary_key]


__all__ = ["Session", "Target", "updatable_target", "key_columns", "Col", "find", "UnknownRelation"]
