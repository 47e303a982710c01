"""The requester: global schema over REST views, cached federated queries."""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass, field

from livefed import readcheck as RC
from livefed import values as V
from livefed.dsl import ast as A
from livefed.dsl import parse, parse_expr
from livefed.dsl.printer import expr as expr_text
from livefed.engine import plan as P
from livefed.engine.catalog import RestViewDef, ViewDef
from livefed.engine.evaluate import Fragment, ResultSet, evaluate
from livefed.engine.expr import Col, compile_expr
from livefed.engine.rewrite import Subquery, _unqualify, rewrite_over_views
from livefed.errors import (
    DuplicateView,
    LiveFedError,
    MalformedValidator,
    NotUpdatable,
    QueryError,
    RemoteError,
    SchemaMismatch,
    SourceUnavailable,
    SqlError,
    StaleAfterRetry,
    StaleRead,
    UnknownRelation,
)
from livefed.wire import (
    HttpTransport,
    Response,
    decode_rows,
    encode_result,
    error_response,
    etag_list,
    json_response,
    key_path,
    quote_etag,
    split_target,
    with_query,
)

log = logging.getLogger(__name__)

FRESH, STALE, UNKNOWN = "fresh", "stale", "unknown"


@dataclass
class CacheEntry:
    fingerprint: str
    fragment: Fragment
    fetched_at: float


@dataclass
class GlobalResult:
    result: ResultSet
    validator: str
    row_validators: list
    fetched: list = field(default_factory=list)  # fingerprints answered with a body
    revalidated: list = field(default_factory=list)  # fingerprints answered 304
    attempts: int = 1

    @property
    def rows(self):
        return self.result.rows


@dataclass
class Freshness:
    sources: dict  # db name -> fresh | stale | unknown

    @property
    def fresh(self) -> bool:
        return bool(self.sources) and all(s == FRESH for s in self.sources.values())

    @property
    def stale(self) -> list[str]:
        return [k for k, s in self.sources.items() if s == STALE]

    @property
    def unknown(self) -> list[str]:
        return [k for k, s in self.sources.items() if s == UNKNOWN]


class Coordinator:
    MAX_RETRIES = 2

    def __init__(self, name: str = "Requester", transport=None, trust_window: float = 0.0):
        self.name = name
        self.transport = transport or HttpTransport()
        self.trust_window = trust_window
        self.rest_views: dict[str, RestViewDef] = {}
        self.views: dict[str, ViewDef] = {}
        self.cache: dict[str, CacheEntry] = {}
        self._lock = threading.Lock()
        self.txn_manager = None
        self.base_url: str | None = None  # own address, handed to participants

    # -- schema -----------------------------------------------------------------

    def lookup(self, name: str):
        low = name.lower()
        if low in self.rest_views:
            return self.rest_views[low]
        if low in self.views:
            return self.views[low]
        raise UnknownRelation(f"no view named {name} in {self.name}")

    def register_view(self, defn: RestViewDef) -> None:
        low = defn.name.lower()
        if low in self.rest_views or low in self.views:
            raise DuplicateView(f"{defn.name} already defined")
        self.rest_views[low] = defn

    def define_view(self, name: str, select: A.SelectAst) -> None:
        low = name.lower()
        if low in self.rest_views or low in self.views:
            raise DuplicateView(f"{name} already defined")
        P.plan_select(select, self, optimize=False)
        self.views[low] = ViewDef(name, select)

    def source_base(self, db: str) -> str | None:
        for v in self.rest_views.values():
            if v.db == db:
                return v.base
        return None

    def execute(self, stmt):
        if isinstance(stmt, A.CreateViewRest):
            return self.register_view(RestViewDef.from_ast(stmt))
        if isinstance(stmt, A.CreateViewSelect):
            return self.define_view(stmt.name, stmt.select)
        if isinstance(stmt, A.Select):
            return self.execute_global(stmt)
        if isinstance(stmt, (A.Update, A.Delete)):
            return self.write_through(stmt)
        raise QueryError(f"{type(stmt).__name__} is not supported by a requester")

    def run_script(self, text: str) -> list:
        return [self.execute(s) for s in parse(text)]

    # -- fetching ------------------------------------------------------------------

    def _headers(self, extra: dict | None = None) -> dict:
        h = {"X-Requester": self.name}
        h.update(extra or {})
        return h

    def _view_of(self, sq: Subquery) -> RestViewDef:
        return self.rest_views[sq.node.view.lower()]

    def _subquery_url(self, view: RestViewDef, where: str | None) -> str:
        names = ",".join(n for n, _ in view.columns)
        return with_query(view.url, where=where, **{"as": names}, rc="1")

    def fetch(self, sq: Subquery, force: bool = False) -> tuple[Fragment, bool]:
        """Return the fragment for ``sq`` and whether a body was transferred."""
        view = self._view_of(sq)
        url = self._subquery_url(view, sq.where)
        key = sq.fingerprint
        entry = self.cache.get(key)
        headers = self._headers()
        if entry is not None and not force:
            if self.trust_window > 0 and time.monotonic() - entry.fetched_at < self.trust_window:
                return entry.fragment, False
            headers["If-None-Match"] = quote_etag(entry.fragment.etag)
        resp = self.transport.request("GET", url, headers)
        if resp.status == 304 and entry is not None:
            with self._lock:
                self.cache[key] = CacheEntry(key, entry.fragment, time.monotonic())
            return entry.fragment, False
        if resp.status != 200:
            msg = (resp.json() or {}).get("error", "") if resp.body else ""
            if resp.status == 422:
                raise SchemaMismatch(f"{view.name}: {msg}")
            raise RemoteError(resp.status, msg)
        body = resp.json()
        rows = decode_rows(body, view.columns)
        vals = body.get("rowValidators")
        frag = Fragment(rows, resp.etag or body.get("etag", ""), vals)
        with self._lock:
            self.cache[key] = CacheEntry(key, frag, time.monotonic())
        return frag, True

    def _validate_at(self, db: str, items: list[str]) -> list[bool] | None:
        base = self.source_base(db)
        if base is None:
            return None
        try:
            r = self.transport.post_json(f"{base}/{db}/validate", items, self._headers())
        except SourceUnavailable:
            return None
        if r.status != 200:
            return None
        return [x["fresh"] for x in r.json()["results"]]

    # -- global queries ----------------------------------------------------------------

    def plan(self, query):
        """Plan a global query; an already-built plan passes through."""
        if isinstance(query, P.Plan.__args__):
            return query
        if isinstance(query, str):
            (query,) = parse(query)
        if isinstance(query, A.Select):
            query = query.select
        if not isinstance(query, A.SelectAst):
            raise QueryError("expected a SELECT")
        return P.plan(query, self)

    def execute_global(self, query) -> GlobalResult:
        plan = self.plan(query)
        subs, assembly = rewrite_over_views(plan, self.rest_views.keys())
        fetched, revalidated = [], []
        force = set()
        for attempt in range(1, self.MAX_RETRIES + 2):
            frags, order = {}, []
            for sq in subs:
                frag, body = self.fetch(sq, force=sq.fingerprint in force)
                frags[sq.node] = frag
                order.append(sq)
                (fetched if body else revalidated).append(sq.fingerprint)
            stale = self._stale_fragments(order[:-1], frags)
            if not stale:
                rs, _ = evaluate(assembly, None, frags, row_validators=True)
                tags = []
                for sq in subs:
                    t = frags[sq.node].etag
                    if t and t not in tags:
                        tags.append(t)
                return GlobalResult(rs, ";".join(tags), rs.row_validators, fetched, revalidated, attempt)
            force = {sq.fingerprint for sq in stale}
        raise StaleRead("sources kept changing while the query was assembled")

    def _stale_fragments(self, subs, frags) -> list[Subquery]:
        by_db: dict[str, list[Subquery]] = {}
        for sq in subs:
            by_db.setdefault(self._view_of(sq).db, []).append(sq)
        stale = []
        for db, group in by_db.items():
            res = self._validate_at(db, [frags[sq.node].etag for sq in group])
            if res is None:
                raise SourceUnavailable(self.source_base(db) or db, "revalidation failed")
            stale += [sq for sq, ok in zip(group, res) if not ok]
        return stale

    def check_still_current(self, validator: str) -> Freshness:
        try:
            groups = RC.split_sources(validator)
        except MalformedValidator:
            raise
        out = {}
        for db, items in groups.items():
            res = self._validate_at(db, [items])
            out[db] = UNKNOWN if res is None else (FRESH if all(res) else STALE)
        return Freshness(out)

    # -- updates through REST views ---------------------------------------------------------

    def _write_view(self, stmt) -> RestViewDef:
        target = self.lookup(stmt.target)
        if isinstance(target, RestViewDef):
            return target
        if isinstance(stmt, A.Delete):
            raise NotUpdatable(f"delete from {stmt.target} is ambiguous; delete from one REST view")
        p = P.plan_select(target.select, self, optimize=False)
        for node in _nodes(p):
            if isinstance(node, (P.Aggregate, P.Filter, P.Union)):
                raise NotUpdatable(f"{stmt.target} is not updatable")
            if isinstance(node, P.Project):
                for e, out in node.items:
                    if not (isinstance(e, A.ColumnRef) and e.name.lower() == out.lower()):
                        raise NotUpdatable(f"{stmt.target}.{out} is computed or renamed")
        leaves = [self.rest_views[x.view.lower()] for x in P.leaves(p, P.RestGet)]
        set_cols = {c.lower() for c, _ in stmt.assignments}
        where_cols = {r.name.lower() for r in A.columns_of(stmt.where)} if stmt.where is not None else set()
        owners = [v for v in leaves if set_cols <= {n.lower() for n, _ in v.columns}]
        if not owners:
            raise NotUpdatable("the assignments span more than one source view")
        for v in owners:
            if where_cols <= {n.lower() for n, _ in v.columns}:
                return v
        raise NotUpdatable("the WHERE clause needs columns from another source view")

    def write_through(self, stmt) -> int:
        if isinstance(stmt, str):
            (stmt,) = parse(stmt)
        view = self._write_view(stmt)
        where = expr_text(_unqualify(stmt.where)) if stmt.where is not None else None
        names = ",".join(n for n, _ in view.columns)
        resp = self.transport.request("GET", self._subquery_url(view, where), self._headers())
        if resp.status == 405:
            raise NotUpdatable(f"{view.name} is not updatable at its source")
        if resp.status != 200:
            raise RemoteError(resp.status, resp.body.decode(errors="replace"))
        body = resp.json()
        if "key" not in body:
            raise NotUpdatable(f"{view.name} is not updatable at its source")
        rows = decode_rows(body, view.columns)
        cols = tuple(Col(n, t) for n, t in view.columns)
        idx = {n.lower(): i for i, (n, _) in enumerate(view.columns)}
        key_idx = [idx[k.lower()] for k in body["key"]]
        assigns = []
        if isinstance(stmt, A.Update):
            assigns = [(c, compile_expr(e, cols)[0]) for c, e in stmt.assignments]
        count = 0
        for row, tag in zip(rows, body.get("rowValidators") or [None] * len(rows)):
            if self._write_row(view, stmt, assigns, row, tag, key_idx, names, where):
                count += 1
        return count

    def _write_row(self, view, stmt, assigns, row, tag, key_idx, names, where) -> bool:
        method = "PUT" if isinstance(stmt, A.Update) else "DELETE"
        key = [row[i] for i in key_idx]
        row_url = key_path(view.url, key)
        for attempt in range(2):
            payload = {c: V.to_json(f(row)) for c, f in assigns} if assigns else None
            headers = self._headers({"If-Match": quote_etag(tag or "*"), "Content-Type": "application/json"})
            r = self.transport.request(
                method, with_query(row_url, **{"as": names}), headers,
                json.dumps(payload).encode() if payload is not None else None,
            )
            if r.status in (200, 204):
                return True
            if r.status == 405:
                raise NotUpdatable(f"{view.name} is not updatable at its source")
            if r.status not in (409, 412):
                raise RemoteError(r.status, r.body.decode(errors="replace"))
            if attempt == 1:
                break
            reread = self.transport.request("GET", with_query(row_url, where=where, **{"as": names}, rc="1"), self._headers())
            if reread.status == 404:
                return False  # gone, or no longer matches
            if reread.status != 200:
                raise RemoteError(reread.status, reread.body.decode(errors="replace"))
            b = reread.json()
            fresh_rows = decode_rows(b, view.columns)
            if not fresh_rows:
                return False
            row, tag = fresh_rows[0], (b.get("rowValidators") or [None])[0]
        raise StaleAfterRetry(f"{view.name} row {key} changed again during retry")

    # -- own endpoint ---------------------------------------------------------------------------

    def handle(self, method: str, target: str, headers: dict, body: bytes) -> Response:
        headers = {k.lower(): v for k, v in headers.items()}
        segs, params = split_target(target)
        try:
            if not segs or segs[0].lower() != self.name.lower():
                return error_response(404, f"this coordinator is {self.name}")
            rest = segs[1:]
            if rest == ["query"] and method == "POST":
                return self._query(body.decode("utf-8"))
            if rest == ["sql"] and method == "POST":
                n = len(self.run_script(body.decode("utf-8")))
                return json_response(200, {"statements": n})
            if rest == ["validate"] and method == "POST":
                items = json.loads(body or b"null")
                if not isinstance(items, list):
                    return error_response(400, "expected a JSON list of validators")
                res = [self.check_still_current(x).sources for x in items]
                return json_response(200, {"results": res})
            if len(rest) == 2 and rest[0] == "txn" and method == "GET":
                decision = self.txn_manager.decision(rest[1]) if self.txn_manager else "unknown"
                return json_response(200, {"tid": rest[1], "decision": decision})
            if len(rest) == 2 and rest[0].lower() == self.name.lower() and method == "GET":
                return self._get_view(rest[1], params, headers)
            return error_response(404, "no such resource")
        except SqlError as e:
            return error_response(400, str(e), position=e.position)
        except (SourceUnavailable, SchemaMismatch) as e:
            return error_response(502, str(e))
        except StaleRead as e:
            return error_response(409, str(e))
        except StaleAfterRetry as e:
            return error_response(412, str(e))
        except NotUpdatable as e:
            return error_response(405, str(e))
        except UnknownRelation as e:
            return error_response(404, str(e))
        except RemoteError as e:
            return error_response(502, str(e))
        except (LiveFedError, ValueError) as e:
            return error_response(400, str(e))

    def _query(self, text: str) -> Response:
        stmts = parse(text)
        if len(stmts) != 1:
            return error_response(400, "send exactly one statement")
        out = self.execute(stmts[0])
        if isinstance(out, GlobalResult):
            return json_response(
                200, encode_result(out.result, {"etag": out.validator}), {"ETag": quote_etag(out.validator)}
            )
        if isinstance(out, int):
            return json_response(200, {"count": out})
        return json_response(200, {"ok": True})

    def _get_view(self, view: str, params, headers) -> Response:
        plan = self.plan(A.SelectAst((A.Star(),), A.Relation(view)))
        if params.get("as"):
            names = [x.strip() for x in params["as"].split(",")]
            if len(names) != len(plan.columns):
                return error_response(422, "column list does not match the view")
            plan = P.make_project(tuple((A.ColumnRef(c.name, c.qual), n) for c, n in zip(plan.columns, names)), plan)
        if params.get("where"):
            plan = P.push_filters(P.make_filter(parse_expr(params["where"]), plan))
        out = self.execute_global(plan)
        inm = headers.get("if-none-match")
        if inm is not None and out.validator in etag_list(inm):
            return Response(304, {"ETag": quote_etag(out.validator)})
        rs = out.result
        if params.get("rc") != "1":
            rs = ResultSet(rs.columns, rs.rows)
        return json_response(200, encode_result(rs, {"etag": out.validator}), {"ETag": quote_etag(out.validator)})


def _nodes(p):
    yield p
    for c in P.children(p):
        yield from _nodes(c)


__all__ = ["Coordinator", "GlobalResult", "Freshness", "CacheEntry", "FRESH", "STALE", "UNKNOWN"]
