"""Decomposition of a global plan into per-contractor subqueries."""

from __future__ import annotations

from dataclasses import dataclass

from livefed.dsl import ast as A
from livefed.dsl.printer import expr as expr_text
from livefed.engine import plan as P


@dataclass(frozen=True)
class Subquery:
    url: str
    node: P.RestGet

    @property
    def where(self) -> str | None:
        """Pushed predicate as SQL text over the view's declared column names."""
        if self.node.predicate is None:
            return None
        return expr_text(_unqualify(self.node.predicate))

    @property
    def fingerprint(self) -> str:
        return f"{self.url}?{self.where or ''}"


def _unqualify(e):
    if isinstance(e, A.ColumnRef):
        return A.ColumnRef(e.name)
    if isinstance(e, A.BinOp):
        return A.BinOp(e.op, _unqualify(e.left), _unqualify(e.right))
    if isinstance(e, A.UnaryOp):
        return A.UnaryOp(e.op, _unqualify(e.operand))
    if isinstance(e, A.Extract):
        return A.Extract(e.field, _unqualify(e.expr))
    if isinstance(e, A.IsNull):
        return A.IsNull(_unqualify(e.expr), e.negated)
    if isinstance(e, A.FuncCall):
        return A.FuncCall(e.name, tuple(_unqualify(a) for a in e.args), e.star)
    return e


def rewrite_over_views(plan, rest_views=None):
    """Split ``plan`` into ``(subqueries, assembly)``.

    Each ``RestGet`` leaf (with whatever predicate pushdown attached to it)
    becomes one subquery; the plan itself is the assembly, its ``RestGet``
    leaves standing for the fetched fragments. ``rest_views``, when given,
    restricts which views may appear.
    """
    subs: list[Subquery] = []
    for leaf in P.leaves(plan, P.RestGet):
        if rest_views is not None and leaf.view.lower() not in {v.lower() for v in rest_views}:
            raise KeyError(f"remote view {leaf.view} is not registered")
        sq = Subquery(leaf.url, leaf)
        if sq not in subs:
            subs.append(sq)
    return subs, plan
