"""Distributed transactions: read validators, staged writes, optimistic 2PC.

A transaction reads through the coordinator and records the validator of
every fragment it saw. At commit, each source that receives writes gets a
``prepare`` carrying that source's validators and writes; sources that were
only read get a plain revalidation. Any stale validator aborts everything.

The coordinator's decision is forced to its own log before phase two, so a
coordinator restart can finish (or abort) whatever was in flight.
"""

from __future__ import annotations

import enum
import itertools
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from livefed import readcheck as RC
from livefed import values as V
from livefed.errors import AlreadyFinished, LiveFedError, QueryError, SourceUnavailable
from livefed.store import encode_record, iter_records
from livefed.dsl.printer import ident, literal
from livefed.wire import with_query

log = logging.getLogger(__name__)


class TxnState(enum.Enum):
    ACTIVE = "Active"
    VALIDATING = "Validating"
    PREPARED = "Prepared"
    COMMITTED = "Committed"
    ABORTED = "Aborted"


class FailureKind(enum.Enum):
    STALE_AT_START = "StaleAtStart"
    CONCURRENT_UPDATE = "ConcurrentUpdate"
    ROW_DELETED = "RowDeleted"


_NEXT = {
    TxnState.ACTIVE: {TxnState.VALIDATING, TxnState.ABORTED},
    TxnState.VALIDATING: {TxnState.PREPARED, TxnState.ABORTED},
    TxnState.PREPARED: {TxnState.COMMITTED, TxnState.ABORTED},
    TxnState.COMMITTED: set(),
    TxnState.ABORTED: set(),
}


class CoordinatorCrashed(Exception):
    """Raised by the ``after_decision`` fault point."""


@dataclass(frozen=True)
class TxnId:
    coordinator: str
    sources: tuple
    timestamp: float
    ta_no: int

    def __str__(self) -> str:
        return f"{self.coordinator}-{int(self.timestamp * 1000)}-{self.ta_no}"


@dataclass(frozen=True)
class WriteOp:
    view: str  # requester-side REST view name
    op: str  # insert | update | delete
    key: dict | None = None  # declared column -> value
    values: dict | None = None


@dataclass
class Committed:
    tid: str
    validators: dict = field(default_factory=dict)  # db -> [validator strings]
    pending: list = field(default_factory=list)  # participants still to acknowledge

    committed = True


@dataclass
class Aborted:
    tid: str
    kind: FailureKind | None
    stale: list = field(default_factory=list)
    reason: str = ""

    committed = False


@dataclass
class TxnContext:
    id: TxnId
    read_set: list = field(default_factory=list)  # [(db, validator)]
    staged_writes: list = field(default_factory=list)  # [(db, WriteOp)]
    state: TxnState = TxnState.ACTIVE
    precheck_stale: set | None = None  # validators stale at the last precheck
    outcome: Committed | Aborted | None = None

    @property
    def tid(self) -> str:
        return str(self.id)

    def _move(self, to: TxnState) -> None:
        if to not in _NEXT[self.state]:
            raise AlreadyFinished(f"transaction {self.tid} is {self.state.value}")
        self.state = to


class DecisionLog:
    """Append-only, checksummed log of prepare/decision/done records."""

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self._buf = bytearray()
        self._lock = threading.Lock()
        self.state: dict[str, dict] = {}
        if self.path is not None and self.path.exists():
            data = self.path.read_bytes()
            end = 0
            for _, end, rec in iter_records(data):
                self._apply(rec)
            if end < len(data):
                with open(self.path, "r+b") as fh:
                    fh.truncate(end)

    def _apply(self, rec: dict) -> None:
        st = self.state.setdefault(rec["tid"], {"participants": [], "decision": None, "done": False})
        if rec["k"] == "prepare":
            st["participants"] = rec["participants"]
        elif rec["k"] == "decision":
            st["decision"] = rec["d"]
        elif rec["k"] == "done":
            st["done"] = True

    def append(self, rec: dict) -> None:
        data = encode_record(rec)
        with self._lock:
            if self.path is not None:
                with open(self.path, "ab") as fh:
                    fh.write(data)
                    fh.flush()
                    os.fsync(fh.fileno())
            else:
                self._buf.extend(data)
            self._apply(rec)

    def records(self) -> list[dict]:
        data = self.path.read_bytes() if self.path is not None else bytes(self._buf)
        return [r for _, _, r in iter_records(data)]


class TransactionManager:
    def __init__(self, coordinator, log_path=None, log: DecisionLog | None = None):
        self.coordinator = coordinator
        self.log = log or DecisionLog(log_path)
        self.faults: dict[str, object] = {}
        self._counter = itertools.count(len(self.log.state) + 1)
        self.pending: dict[str, tuple[str, list]] = {}  # tid -> (decision, [db])
        coordinator.txn_manager = self

    @property
    def transport(self):
        return self.coordinator.transport

    def _url(self, db: str) -> str:
        base = self.coordinator.source_base(db)
        if base is None:
            raise QueryError(f"no REST view leads to database {db}")
        return f"{base}/{db}"

    # -- client protocol ---------------------------------------------------------

    def begin(self) -> TxnContext:
        tid = TxnId(self.coordinator.name, (), time.time(), next(self._counter))
        return TxnContext(tid)

    def read(self, ctx: TxnContext, query):
        """Run a global query inside ``ctx`` and record what it depended on.

        The answer may come from revalidated cache entries; freshness is only
        settled at commit.
        """
        if ctx.state is not TxnState.ACTIVE:
            raise AlreadyFinished(f"transaction {ctx.tid} is {ctx.state.value}")
        out = self.coordinator.execute_global(query)
        for db, items in RC.split_sources(out.validator).items():
            for item in items.split(";"):
                if (db, item) not in ctx.read_set:
                    ctx.read_set.append((db, item))
        return out.result

    def precheck(self, ctx: TxnContext) -> dict:
        """Revalidate the read set now; returns ``{validator: fresh|stale|unknown}``."""
        if ctx.state is not TxnState.ACTIVE:
            raise AlreadyFinished(f"transaction {ctx.tid} is {ctx.state.value}")
        result = {}
        for db, items in _group(ctx.read_set).items():
            res = self.coordinator._validate_at(db, items)
            for item, ok in zip(items, res or [None] * len(items)):
                result[item] = "unknown" if ok is None else ("fresh" if ok else "stale")
        ctx.precheck_stale = {k for k, v in result.items() if v == "stale"}
        return result

    def stage_write(self, ctx: TxnContext, view: str, op: str, key: dict | None = None, values: dict | None = None):
        if ctx.state is not TxnState.ACTIVE:
            raise AlreadyFinished(f"transaction {ctx.tid} is {ctx.state.value}")
        if op not in ("insert", "update", "delete"):
            raise QueryError(f"unknown write op {op!r}")
        rv = self.coordinator.rest_views.get(view.lower())
        if rv is None:
            raise QueryError(f"{view} is not a REST view")
        w = WriteOp(rv.name, op, dict(key or {}) or None, dict(values or {}) or None)
        ctx.staged_writes.append((rv.db, w))
        return w

    # -- commit ---------------------------------------------------------------------

    def _write_json(self, w: WriteOp) -> dict:
        rv = self.coordinator.rest_views[w.view.lower()]
        types = dict((n.lower(), t) for n, t in rv.columns)
        enc = lambda d: {k: V.to_json(V.coerce(v, types[k.lower()])) for k, v in d.items()} if d else None
        return {
            "op": w.op,
            "view": rv.remote_view,
            "as": [n for n, _ in rv.columns],
            "key": enc(w.key),
            "values": enc(w.values),
        }

    def _post(self, url: str, obj) -> tuple[int | None, dict]:
        try:
            r = self.transport.post_json(url, obj, self.coordinator._headers())
        except SourceUnavailable:
            return None, {}
        try:
            return r.status, (r.json() or {})
        except ValueError:
            return r.status, {}

    def _fault(self, point: str) -> None:
        if self.faults.pop(point, None):
            raise CoordinatorCrashed(point)

    def commit(self, ctx: TxnContext) -> Committed | Aborted:
        if ctx.state is not TxnState.ACTIVE:
            raise AlreadyFinished(f"transaction {ctx.tid} is {ctx.state.value}")
        if not ctx.staged_writes and not ctx.read_set:
            raise QueryError("nothing to commit")
        ctx._move(TxnState.VALIDATING)
        tid = ctx.tid
        reads = _group(ctx.read_set)
        writes: dict[str, list[WriteOp]] = {}
        for db, w in ctx.staged_writes:
            writes.setdefault(db, []).append(w)
        writers = list(writes)
        readers = [db for db in reads if db not in writes]
        self.log.append({"k": "prepare", "tid": tid, "participants": writers})

        voted: list[str] = []
        failure = None
        coord_url = self.coordinator.base_url and f"{self.coordinator.base_url}/{self.coordinator.name}"
        for db in writers:
            body = {"readChecks": reads.get(db, []), "writes": [self._write_json(w) for w in writes[db]]}
            if coord_url:
                body["coordinator"] = coord_url
            status, resp = self._post(f"{self._url(db)}/txn/{tid}/prepare", body)
            if status == 200 and resp.get("vote") == "yes":
                voted.append(db)
                continue
            failure = (db, status, resp)
            if status is None:
                voted.append(db)  # may hold an intent we never heard about
            break
        if failure is None:
            for db in readers:
                res = self.coordinator._validate_at(db, reads[db])
                if res is None or not all(res):
                    stale = [i for i, ok in zip(reads[db], res or []) if not ok]
                    failure = (db, None if res is None else 409, {"stale": stale, "vote": "no"})
                    break

        if failure is not None:
            self.log.append({"k": "decision", "tid": tid, "d": "abort"})
            self._phase2(tid, "abort", voted)
            ctx._move(TxnState.ABORTED)
            db, status, resp = failure
            if status is None:
                ctx.outcome = Aborted(tid, None, [], f"{db} unavailable")
            else:
                stale = resp.get("stale", [])
                kind = self.classify_failure(ctx, next(iter(writes.get(db, [])), None), stale)
                ctx.outcome = Aborted(tid, kind, stale, resp.get("reason", "stale read validators"))
            return ctx.outcome

        ctx._move(TxnState.PREPARED)
        self.log.append({"k": "decision", "tid": tid, "d": "commit"})
        self._fault("after_decision")
        validators, pending = self._phase2(tid, "commit", writers)
        ctx._move(TxnState.COMMITTED)
        ctx.outcome = Committed(tid, validators, pending)
        return ctx.outcome

    def _phase2(self, tid: str, decision: str, dbs: list[str]) -> tuple[dict, list]:
        action = "commit" if decision == "commit" else "abort"
        validators, pending = {}, []
        for db in dbs:
            status, resp = self._post(f"{self._url(db)}/txn/{tid}/{action}", {})
            if status == 200 or (action == "abort" and status == 404):
                validators[db] = resp.get("validators", [])
            else:
                pending.append(db)
        if pending:
            self.pending[tid] = (decision, pending)
        else:
            self.pending.pop(tid, None)
            self.log.append({"k": "done", "tid": tid})
        return validators, pending

    def retry_pending(self) -> dict:
        """Resend recorded decisions to participants that have not acknowledged."""
        out = {}
        for tid, (decision, dbs) in list(self.pending.items()):
            _, still = self._phase2(tid, decision, dbs)
            out[tid] = still
        return out

    def recover(self) -> dict:
        """Finish every transaction the log shows as undone."""
        out = {}
        for tid, st in list(self.log.state.items()):
            if st["done"]:
                continue
            decision = st["decision"]
            if decision is None:
                decision = "abort"
                self.log.append({"k": "decision", "tid": tid, "d": "abort"})
            self._phase2(tid, decision, st["participants"])
            out[tid] = decision
        return out

    def decision(self, tid: str) -> str:
        st = self.log.state.get(tid)
        if st is None or st["decision"] is None:
            return "unknown"
        return st["decision"]

    # -- failure analysis ----------------------------------------------------------

    def classify_failure(self, ctx: TxnContext, write: WriteOp | None, stale=()) -> FailureKind:
        """Tell a deleted row from a changed one by re-reading without a validator."""
        if write is not None and write.key and write.op != "insert":
            rv = self.coordinator.rest_views[write.view.lower()]
            pred = " and ".join(f"{ident(k)} = {literal(v)}" for k, v in write.key.items())
            url = with_query(rv.url, where=pred, **{"as": ",".join(n for n, _ in rv.columns)})
            try:
                r = self.transport.request("GET", url, self.coordinator._headers())
                if r.status == 200 and not (r.json() or {}).get("rows"):
                    return FailureKind.ROW_DELETED
            except SourceUnavailable:
                pass
        if ctx.precheck_stale and _seen_stale(stale, ctx.precheck_stale):
            return FailureKind.STALE_AT_START
        return FailureKind.CONCURRENT_UPDATE


def _group(pairs) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    for db, item in pairs:
        out.setdefault(db, []).append(item)
    return out


def _seen_stale(stale, prechecked) -> bool:
    """Whether the entries that failed were already stale at the precheck."""
    try:
        pre = set(RC.parse_entries(prechecked))
        return not stale or bool(set(RC.parse_entries(stale)) & pre)
    except LiveFedError:
        return False


__all__ = [
    "TxnState",
    "FailureKind",
    "TxnId",
    "TxnContext",
    "WriteOp",
    "Committed",
    "Aborted",
    "DecisionLog",
    "TransactionManager",
    "CoordinatorCrashed",
]
