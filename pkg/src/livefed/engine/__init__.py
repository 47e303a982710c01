"""Relational algebra over the versioned store, plus global-view decomposition."""

from livefed.engine.catalog import LocalCatalog, RestViewDef, ViewDef
from livefed.engine.evaluate import Fragment, ResultSet, eval_expr, evaluate
from livefed.engine.plan import (
    Aggregate,
    Filter,
    Join,
    KeyScan,
    PredScan,
    Project,
    RestGet,
    Union,
    plan_text,
)
from livefed.engine.plan import plan as build_plan
from livefed.engine.rewrite import Subquery, rewrite_over_views

__all__ = [
    "LocalCatalog", "RestViewDef", "ViewDef", "Fragment", "ResultSet", "eval_expr", "evaluate",
    "Aggregate", "Filter", "Join", "KeyScan", "PredScan", "Project", "RestGet", "Union",
    "build_plan", "plan_text", "Subquery", "rewrite_over_views",
]
