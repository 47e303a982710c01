"""Contractor node: serves one database's views over HTTP.

Endpoints (``{db}`` is the database name, repeated as the schema segment)::

    GET    /{db}/{db}/{view}[/{key...}][?where=&as=&rc=1]   read, ETag, If-None-Match
    PUT    /{db}/{db}/{view}/{key...}[?as=]                 update one row, If-Match
    DELETE /{db}/{db}/{view}/{key...}[?as=]                 delete one row, If-Match
    POST   /{db}/{db}/{view}[?as=]                          insert one row
    POST   /{db}/validate                                   revalidate validators
    POST   /{db}/txn/{tid}/prepare|commit|abort             2PC participant
    GET    /{db}/txn/{tid}                                  participant state
    POST   /{db}/sql                                        run a script

``as`` renames the view's columns positionally (a requester's declared REST
view columns); ``where`` is then expressed over those names.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path

from livefed import readcheck as RC
from livefed import values as V
from livefed.dsl import ast as A
from livefed.dsl import parse_expr
from livefed.engine.catalog import LocalCatalog
from livefed.engine.evaluate import evaluate
from livefed.errors import (
    DuplicateKey,
    LiveFedError,
    MalformedValidator,
    NotFound,
    NotUpdatable,
    PinConflict,
    QueryError,
    SchemaMismatch,
    SerializationConflict,
    SourceUnavailable,
    SqlError,
    TxnClosed,
    TypeMismatch,
    UnknownRelation,
    UnknownTxn,
)
from livefed.session import Session, Target, key_columns, updatable_target
from livefed.store import Database, Rvv, recover
from livefed.values import ColumnType
from livefed.wire import (
    HttpTransport,
    Response,
    error_response,
    etag_list,
    json_response,
    quote_etag,
    split_target,
)

log = logging.getLogger(__name__)

FAULT_POINTS = ("before_vote", "after_vote", "after_apply")


@dataclass
class NodeConfig:
    db_name: str
    host: str = "127.0.0.1"
    port: int = 8180
    log_path: str | None = None
    views: list | None = None  # None exposes every table and view
    permissions: dict | None = None  # requester -> {view or "*": ["read", "write", "admin"]}
    in_doubt_timeout: float = 30.0

    @classmethod
    def from_file(cls, path) -> "NodeConfig":
        text = Path(path).read_text()
        try:
            data = json.loads(text)
        except ValueError:
            data = {}
            for line in text.splitlines():
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                k, _, v = line.partition("=")
                data[k.strip()] = v.strip()
            if "views" in data:
                data["views"] = [x.strip() for x in data["views"].split(",") if x.strip()]
        known = {f for f in cls.__dataclass_fields__}
        bad = set(data) - known
        if bad:
            raise ValueError(f"unknown config keys: {', '.join(sorted(bad))}")
        if "db_name" not in data:
            raise ValueError("config needs db_name")
        if "port" in data:
            data["port"] = int(data["port"])
        if "in_doubt_timeout" in data:
            data["in_doubt_timeout"] = float(data["in_doubt_timeout"])
        return cls(**data)

    def with_env(self, env=None) -> "NodeConfig":
        env = os.environ if env is None else env
        cfg = NodeConfig(**self.__dict__)
        if env.get("LIVEFED_PORT"):
            cfg.port = int(env["LIVEFED_PORT"])
        if env.get("LIVEFED_DB"):
            cfg.log_path = env["LIVEFED_DB"]
        return cfg

    def allows(self, requester: str | None, view: str, right: str) -> bool:
        if self.permissions is None:
            return True
        grants = self.permissions.get(requester or "", self.permissions.get("*", {}))
        for k in (view, view.lower(), "*"):
            if right in grants.get(k, ()):
                return True
        return False


class Crashed(Exception):
    """Raised by a fault hook to simulate a process crash."""


def _from_text(text: str, ty: ColumnType):
    try:
        if ty is ColumnType.INT:
            return int(text)
        if ty is ColumnType.NUMERIC:
            return Decimal(text)
    except (ValueError, ArithmeticError):
        raise TypeMismatch(f"bad {ty.value} key value {text!r}") from None
    return V.coerce(text, ty)


def _stale_text(entries) -> list[str]:
    out = []
    for e in entries:
        out.append(str(e.rvv) if isinstance(e, RC.RowStamp) else RC.render([e]))
    return out


@dataclass
class _View:
    """An updatable view as addressed by a request, with optional renaming."""

    target: Target
    names: tuple  # request-space column names in view order
    to_view: dict = field(default_factory=dict)  # lower request name -> view column

    def base_column(self, name: str) -> str:
        try:
            return self.target.base_name(self.to_view[name.lower()])
        except KeyError:
            raise NotUpdatable(f"column {name} is not updatable") from None

    def key_names(self) -> list[str]:
        view_keys = [k.lower() for k in key_columns(self.target)]
        inv = {v.lower(): k for k, v in self.to_view.items()}
        names = {n.lower(): n for n in self.names}
        return [names[inv[k]] for k in view_keys]


class ContractorNode:
    def __init__(self, config: NodeConfig, db: Database | None = None, transport=None):
        self.config = config
        self.transport = transport or HttpTransport()
        if db is None:
            db = Database.open(config.log_path, config.db_name) if config.log_path else Database.memory(config.db_name)
        self.db = db
        self.down = False
        self.faults: dict[str, object] = {}
        self._prepared_at: dict[str, float] = {}
        self._crash_image: bytes | None = None
        self._stop = threading.Event()

    @property
    def name(self) -> str:
        return self.config.db_name

    @property
    def session(self) -> Session:
        return Session(self.db)

    # -- fault injection --------------------------------------------------

    def crash(self) -> None:
        """Drop all in-memory state; only the log survives."""
        if self.down:
            return
        if self.db.path is None:
            self._crash_image = self.db.log_bytes()
        else:
            self.db.close()
        self.db = None
        self.down = True
        self._prepared_at.clear()

    def restart(self) -> None:
        if self._crash_image is not None:
            self.db = recover(self._crash_image)
            self._crash_image = None
        else:
            self.db = Database.open(self.config.log_path, self.config.db_name)
        self.down = False

    def _fault(self, point: str) -> str | None:
        f = self.faults.pop(point, None)
        if f is None:
            return None
        if callable(f):
            f()
            return None
        return f  # "crash" (reply lost) or "crash_after_reply"

    # -- dispatch -------------------------------------------------------------

    def handle(self, method: str, target: str, headers: dict, body: bytes) -> Response | None:
        if self.down:
            return None
        headers = {k.lower(): v for k, v in headers.items()}
        segs, params = split_target(target)
        try:
            if not segs or segs[0].lower() != self.name.lower():
                return error_response(404, f"this node serves {self.name}")
            rest = segs[1:]
            if len(rest) >= 2 and rest[0] == "txn":
                return self._txn(method, rest[1:], body)
            if rest == ["validate"] and method == "POST":
                return self._validate(body)
            if rest == ["sql"] and method == "POST":
                return self._sql(headers, body)
            if len(rest) >= 2:
                if rest[0].lower() != self.name.lower():
                    return error_response(404, f"unknown schema {rest[0]}")
                return self._view(method, rest[1], rest[2:], params, headers, body)
            return error_response(404, "no such resource")
        except Crashed:
            self.crash()
            return None
        except UnknownRelation as e:
            return error_response(404, str(e))
        except SchemaMismatch as e:
            return error_response(422, str(e))
        except SqlError as e:
            return error_response(400, str(e), position=e.position)
        except (QueryError, TypeMismatch, MalformedValidator, ValueError) as e:
            return error_response(400, str(e))
        except LiveFedError as e:
            log.exception("request failed")
            return error_response(500, str(e))

    # -- views ----------------------------------------------------------------

    def _check(self, headers, view: str, right: str) -> Response | None:
        exposed = self.config.views
        if exposed is not None and view.lower() not in {v.lower() for v in exposed}:
            return error_response(404, f"view {view} is not published")
        if not self.config.allows(headers.get("x-requester"), view, right):
            return error_response(403, f"{right} on {view} not permitted")
        return None

    def _rename(self, params) -> list[str] | None:
        text = params.get("as")
        if text is None:
            return None
        return [x.strip() for x in text.split(",")]

    def _where(self, params):
        text = params.get("where")
        return parse_expr(text) if text else None

    def _view(self, method, view, key_segs, params, headers, body) -> Response:
        right = "read" if method == "GET" else "write"
        denied = self._check(headers, view, right)
        if denied:
            return denied
        if method == "GET":
            return self._get(view, key_segs, params, headers)
        if method in ("PUT", "DELETE") and not key_segs:
            return error_response(405, f"{method} needs a row key in the path")
        if method == "POST" and key_segs:
            return error_response(405, "POST goes to the view, not a row")
        if method not in ("PUT", "DELETE", "POST"):
            return error_response(405, f"{method} not supported")
        try:
            uv = self._updatable(view, self._rename(params))
        except NotUpdatable as e:
            return error_response(405, str(e))
        return self._write(method, uv, key_segs, params, headers, body)

    def _key_predicate(self, uv: _View, key_segs):
        names = uv.key_names()
        if len(key_segs) != len(names):
            raise QueryError(f"row key has {len(names)} parts")
        pred = None
        for name, seg, ty in zip(names, key_segs, uv.target.table.key_types):
            eq = A.BinOp("=", A.ColumnRef(name), A.Literal(_from_text(seg, ty)))
            pred = eq if pred is None else A.BinOp("and", pred, eq)
        return pred

    def _get(self, view, key_segs, params, headers) -> Response:
        sess = self.session
        rename = self._rename(params)
        where = self._where(params)
        uv = None
        try:
            uv = self._updatable(view, rename)
        except NotUpdatable:
            if key_segs:
                return error_response(405, f"{view} has no row addressing")
        if key_segs:
            kp = self._key_predicate(uv, key_segs)
            where = kp if where is None else A.BinOp("and", where, kp)
        plan, snap = sess.view_select(view, where, rename)
        vector = RC.compute(plan, snap)
        tag = RC.render(vector)
        inm = headers.get("if-none-match")
        if inm is not None and not key_segs:
            tags = etag_list(inm)
            if "*" in tags or tag in tags:
                return Response(304, {"ETag": quote_etag(tag)})
        rs, _ = evaluate(plan, snap, row_validators=params.get("rc") == "1")
        if key_segs and not rs.rows:
            return error_response(404, "no such row", etag=tag)
        from livefed.wire import encode_result

        extra = {"etag": tag}
        if uv is not None:
            extra["key"] = uv.key_names()
        return json_response(200, encode_result(rs, extra), {"ETag": quote_etag(tag)})

    def _updatable(self, view: str, rename) -> _View:
        tgt = updatable_target(LocalCatalog(self.db.snapshot()), view)
        names = tuple(rename) if rename is not None else tuple(tgt.columns)
        if len(names) != len(tgt.columns):
            raise SchemaMismatch(f"{view} has {len(tgt.columns)} columns, not {len(names)}")
        return _View(tgt, names, {n.lower(): c for n, c in zip(names, tgt.columns)})

    # -- writes ---------------------------------------------------------------

    def _stage(self, txn, uv: _View, op: str, key=None, values: dict | None = None):
        t = uv.target.table
        values = values or {}
        if op == "insert":
            row = [None] * len(t.columns)
            for c, v in values.items():
                i = t.index(uv.base_column(c))
                row[i] = V.from_json(v, t.columns[i][1])
            return txn.insert(t.name, row)
        key = tuple(V.from_json(k, ty) for k, ty in zip(key, t.key_types))
        if op == "update":
            assigns = {}
            for c, v in values.items():
                col = uv.base_column(c)
                assigns[col] = V.from_json(v, t.columns[t.index(col)][1])
            return txn.update(t.name, key, assigns)
        if op == "delete":
            return txn.delete(t.name, key)
        raise QueryError(f"unknown write op {op!r}")

    def _covers(self, entries, table_id: int, key) -> bool:
        for e in entries:
            if isinstance(e, RC.RowStamp) and self.db.positions.get(e.rvv.log_position) == (table_id, key):
                return True
            if isinstance(e, RC.TableStamp) and e.table_id == table_id:
                return True
        return False

    def _write(self, method, uv: _View, key_segs, params, headers, body) -> Response:
        t = uv.target.table
        im = headers.get("if-match")
        if im is None and method in ("PUT", "DELETE"):
            return error_response(428, "If-Match required")
        entries = []
        if im is not None and etag_list(im) != ["*"]:
            for tag in etag_list(im):
                entries.extend(RC.parse(tag))
            foreign = [e for e in entries if not isinstance(e, RC.Absent) and e.db != self.name]
            if foreign:
                return error_response(412, "validator names another database")
        try:
            values = json.loads(body) if body else {}
        except ValueError:
            return error_response(400, "body is not JSON")
        if not isinstance(values, dict):
            return error_response(400, "body must be a JSON object")
        txn = self.db.begin()
        try:
            if method == "POST":
                ch = self._stage(txn, uv, "insert", values=values)
            else:
                key = [_from_text(s, ty) for s, ty in zip(key_segs, t.key_types)]
                if len(key_segs) != len(t.key_types):
                    return error_response(400, f"row key has {len(t.key_types)} parts")
                key = t.coerce_key(key)
                if entries and not self._covers(entries, t.table_id, key):
                    return error_response(412, "validator does not cover the target row")
                ch = self._stage(txn, uv, "update" if method == "PUT" else "delete", key, values)
            txn.add_read_checks(entries)
            txn.commit()
        except PinConflict as e:
            return error_response(409, str(e))
        except SerializationConflict as e:
            return error_response(412, str(e), stale=_stale_text(e.stale))
        except NotFound as e:
            return error_response(412 if entries else 404, str(e))
        except DuplicateKey as e:
            return error_response(409, str(e))
        except NotUpdatable as e:
            return error_response(405, str(e))
        s = self.db.snapshot()
        stamp = s.table_rvv(t.table_id)
        new = [RC.TableStamp(self.name, t.table_id, stamp.log_position)]
        row = s.row(t.table_id, ch.key)
        if row is not None:
            new.insert(0, RC.RowStamp(row.rvv))
        tag = RC.render(new)
        return Response(201 if method == "POST" else 204, {"ETag": quote_etag(tag)})

    # -- validation -------------------------------------------------------------

    def _validate(self, body) -> Response:
        try:
            items = json.loads(body or b"null")
        except ValueError:
            return error_response(400, "body is not JSON")
        if not isinstance(items, list) or not all(isinstance(x, str) for x in items):
            return error_response(400, "expected a JSON list of validator strings")
        results = []
        for text in items:
            try:
                v = RC.parse(text)
            except MalformedValidator as e:
                return error_response(400, str(e))
            if any(not isinstance(e, RC.Absent) and e.db != self.name for e in v):
                return error_response(400, f"validator {text!r} names another database")
            stale = RC.stale_entries(v, self.db)
            results.append({"validator": text, "fresh": not stale, "stale": _stale_text(stale)})
        return json_response(200, {"results": results, "fresh": all(r["fresh"] for r in results)})

    # -- scripts ------------------------------------------------------------------

    def _sql(self, headers, body) -> Response:
        if not self.config.allows(headers.get("x-requester"), "*", "admin"):
            return error_response(403, "loading scripts needs admin rights")
        from livefed.dsl import parse

        stmts = parse(body.decode("utf-8"))
        sess = self.session
        for i, st in enumerate(stmts):
            try:
                sess.execute(st)
            except LiveFedError as e:
                return error_response(400, f"statement {i + 1}: {e}", executed=i, position=st.span[0] if st.span else None)
        return json_response(200, {"statements": len(stmts)})

    # -- two-phase commit (participant) ------------------------------------------

    def _txn(self, method, rest, body) -> Response:
        tid = rest[0]
        action = rest[1] if len(rest) > 1 else None
        if method == "GET" and action is None:
            return json_response(200, {"tid": tid, "state": self.txn_state(tid)})
        if method != "POST" or action not in ("prepare", "commit", "abort"):
            return error_response(405, "unsupported transaction operation")
        if action == "prepare":
            return self._prepare(tid, body)
        if action == "commit":
            return self._commit(tid)
        return self._abort(tid)

    def txn_state(self, tid: str) -> str:
        if tid in self.db.intents:
            return "prepared"
        if tid in self.db.outcomes:
            return self.db.outcomes[tid][0]
        return "unknown"

    def _after(self, point: str, resp: Response) -> Response | None:
        mode = self._fault(point)
        if mode == "crash":
            self.crash()
            return None
        if mode == "crash_after_reply":
            self.crash()
        return resp

    def _prepare(self, tid, body) -> Response | None:
        try:
            req = json.loads(body or b"{}")
        except ValueError:
            return error_response(400, "body is not JSON")
        if self._fault("before_vote") in ("crash", "crash_after_reply"):
            self.crash()
            return None
        reads = list(req.get("readChecks", []))
        txn = self.db.begin()
        try:
            for w in req.get("writes", []):
                uv = self._updatable(w["view"], w.get("as"))
                key = w.get("key")
                if isinstance(key, dict):
                    kd = {k.lower(): v for k, v in key.items()}
                    key = [kd[n.lower()] for n in uv.key_names()]
                self._stage(txn, uv, w["op"], key, w.get("values") or w.get("set"))
            meta = {"coordinator": req["coordinator"]} if req.get("coordinator") else None
            self.db.prepare(tid, txn.changes, reads, meta)
        except SerializationConflict as e:
            return json_response(409, {"vote": "no", "reason": str(e), "stale": _stale_text(e.stale)})
        except (NotFound, DuplicateKey, NotUpdatable, TxnClosed) as e:
            return json_response(409, {"vote": "no", "reason": str(e), "stale": []})
        self._prepared_at[tid] = time.monotonic()
        return self._after("after_vote", json_response(200, {"vote": "yes"}))

    def _commit(self, tid) -> Response | None:
        it = self.db.intents.get(tid)
        try:
            n = self.db.commit_prepared(tid)
        except UnknownTxn:
            return error_response(404, f"unknown transaction {tid}")
        except TxnClosed as e:
            return error_response(409, str(e))
        self._prepared_at.pop(tid, None)
        s = self.db.snapshot()
        validators = []
        if it is not None:
            touched = []
            for ch in it.changes:
                row = s.row(ch.table_id, ch.key)
                if row is not None:
                    validators.append(str(row.rvv))
                if ch.table_id not in touched:
                    touched.append(ch.table_id)
            for t in touched:
                validators.append(RC.render([RC.TableStamp(self.name, t, s.table_rvv(t).log_position)]))
        return self._after("after_apply", json_response(200, {"state": "committed", "txn": n, "validators": validators}))

    def _abort(self, tid) -> Response:
        try:
            self.db.abort_prepared(tid)
        except UnknownTxn:
            return error_response(404, f"unknown transaction {tid}")
        except TxnClosed as e:
            return error_response(409, str(e))
        self._prepared_at.pop(tid, None)
        return json_response(200, {"state": "aborted"})

    def resolve_in_doubt(self, timeout: float | None = None, now: float | None = None) -> dict:
        """Ask the coordinator about intents held longer than ``timeout``.

        An intent is resolved only by a recorded decision; if the coordinator
        is unreachable or undecided the pin stays.
        """
        timeout = self.config.in_doubt_timeout if timeout is None else timeout
        now = time.monotonic() if now is None else now
        done = {}
        for tid, it in list(self.db.intents.items()):
            since = self._prepared_at.setdefault(tid, now)
            coord = it.meta.get("coordinator")
            if now - since < timeout or not coord:
                continue
            try:
                r = self.transport.request("GET", f"{coord.rstrip('/')}/txn/{tid}")
            except SourceUnavailable:
                continue
            decision = (r.json() or {}).get("decision") if r.status == 200 else None
            if decision == "commit":
                self.db.commit_prepared(tid)
            elif decision == "abort":
                self.db.abort_prepared(tid)
            else:
                continue
            self._prepared_at.pop(tid, None)
            done[tid] = decision
        return done

    def start_in_doubt_monitor(self, interval: float = 1.0) -> threading.Thread:
        def loop():
            while not self._stop.wait(interval):
                if not self.down:
                    try:
                        self.resolve_in_doubt()
                    except LiveFedError:
                        log.exception("in-doubt resolution failed")

        th = threading.Thread(target=loop, daemon=True)
        th.start()
        return th

    def stop(self) -> None:
        self._stop.set()
        if self.db is not None:
            self.db.close()


__all__ = ["ContractorNode", "NodeConfig", "Crashed", "FAULT_POINTS", "Rvv"]
