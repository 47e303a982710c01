"""Embedded log-structured row store with per-row and per-table version stamps.

Every committed change is an append-only log record. A record's byte offset in
the log is its ``log_position``; together with the database name and the
committing transaction number it forms the row version stamp (:class:`Rvv`).

Log framing: ``>II`` (payload length, crc32 of payload) followed by a UTF-8
JSON payload. A commit is a run of change records closed by a ``commit``
record, written with a single ``write`` call. Recovery replays complete
commits and drops a torn tail; a checksum failure on a complete record is
corruption.
"""

from __future__ import annotations

import json
import os
import struct
import threading
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from livefed import values as V
from livefed.errors import (
    CorruptLog,
    DuplicateKey,
    DuplicateTable,
    NotFound,
    PinConflict,
    SerializationConflict,
    TxnClosed,
    TypeMismatch,
    UnknownTxn,
)
from livefed.values import ColumnType

HEADER = struct.Struct(">II")
MAX_RECORD = 64 * 1024 * 1024


@dataclass(frozen=True)
class Rvv:
    db_name: str
    log_position: int
    txn_id: int

    def __str__(self) -> str:
        return f"{self.db_name}:{self.log_position}:{self.txn_id}"

    def __lt__(self, other: "Rvv") -> bool:
        return self.log_position < other.log_position

    def __le__(self, other: "Rvv") -> bool:
        return self.log_position <= other.log_position


@dataclass(frozen=True)
class TableDef:
    table_id: int
    name: str
    columns: tuple[tuple[str, ColumnType], ...]
    primary_key: tuple[str, ...]

    def __post_init__(self):
        names = [c.lower() for c, _ in self.columns]
        if len(set(names)) != len(names):
            raise TypeMismatch(f"duplicate column in {self.name}")
        for k in self.primary_key:
            if k.lower() not in names:
                raise TypeMismatch(f"primary key column {k} not in {self.name}")
        if not self.primary_key:
            raise TypeMismatch(f"table {self.name} needs a primary key")

    @property
    def column_names(self) -> list[str]:
        return [c for c, _ in self.columns]

    def index(self, column: str) -> int:
        low = column.lower()
        for i, (c, _) in enumerate(self.columns):
            if c.lower() == low:
                return i
        raise NotFound(f"no column {column} in {self.name}")

    @property
    def key_indexes(self) -> list[int]:
        return [self.index(k) for k in self.primary_key]

    @property
    def key_types(self) -> list[ColumnType]:
        return [self.columns[i][1] for i in self.key_indexes]

    def key_of(self, values: tuple) -> tuple:
        return tuple(values[i] for i in self.key_indexes)

    def coerce_row(self, values) -> tuple:
        if len(values) != len(self.columns):
            raise TypeMismatch(f"{self.name} expects {len(self.columns)} values, got {len(values)}")
        row = tuple(V.coerce(v, t) for v, (_, t) in zip(values, self.columns))
        if any(v is None for v in self.key_of(row)):
            raise TypeMismatch(f"null key in {self.name}")
        return row

    def coerce_key(self, key) -> tuple:
        if not isinstance(key, (tuple, list)):
            key = (key,)
        if len(key) != len(self.primary_key):
            raise TypeMismatch(f"{self.name} key has {len(self.primary_key)} parts")
        return tuple(V.coerce(v, t) for v, t in zip(key, self.key_types))

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "cols": [[c, t.value] for c, t in self.columns],
            "pk": list(self.primary_key),
        }


@dataclass(frozen=True)
class Row:
    key: tuple
    values: tuple
    rvv: Rvv


@dataclass(frozen=True)
class Change:
    kind: str  # "ins" | "upd" | "del"
    table_id: int
    key: tuple
    values: tuple | dict | None = None  # full row for ins, assignments for upd
    expect: Rvv | None = None
    seen: Rvv | None = None  # row stamp in the writer's snapshot


@dataclass(frozen=True)
class Snapshot:
    """Immutable committed state. Readers hold one for the life of a query."""

    db_name: str
    txn_id: int
    position: int
    tables: dict  # table_id -> TableDef
    rows: dict  # table_id -> {key: Row}
    stamps: dict  # table_id -> Rvv
    names: dict  # lower name -> table_id
    views: dict  # lower name -> (name, sql text)

    def table(self, name_or_id) -> TableDef:
        if isinstance(name_or_id, int):
            try:
                return self.tables[name_or_id]
            except KeyError:
                raise NotFound(f"no table {name_or_id} in {self.db_name}") from None
        tid = self.names.get(name_or_id.lower())
        if tid is None:
            raise NotFound(f"no table {name_or_id} in {self.db_name}")
        return self.tables[tid]

    def has_table(self, name: str) -> bool:
        return name.lower() in self.names

    def row(self, table_id: int, key: tuple) -> Row | None:
        return self.rows.get(table_id, {}).get(key)

    def scan(self, table_id: int) -> Iterable[Row]:
        return self.rows.get(table_id, {}).values()

    def table_rvv(self, table_id: int) -> Rvv:
        try:
            return self.stamps[table_id]
        except KeyError:
            raise NotFound(f"no table {table_id} in {self.db_name}") from None

    def row_rvv(self, table_id: int, key: tuple) -> Rvv:
        r = self.row(table_id, key)
        if r is None:
            raise NotFound(f"no row {key!r} in table {table_id}")
        return r.rvv


def encode_record(obj: dict) -> bytes:
    payload = json.dumps(obj, separators=(",", ":"), sort_keys=True).encode()
    return HEADER.pack(len(payload), zlib.crc32(payload)) + payload


def iter_records(data: bytes) -> Iterator[tuple[int, int, dict]]:
    """Yield ``(position, end, record)``; stop silently at a torn tail."""
    pos, n = 0, len(data)
    while pos < n:
        if n - pos < HEADER.size:
            return
        length, crc = HEADER.unpack_from(data, pos)
        end = pos + HEADER.size + length
        if length > MAX_RECORD:
            raise CorruptLog(f"implausible record length at {pos}")
        if end > n:
            return
        payload = data[pos + HEADER.size:end]
        if zlib.crc32(payload) != crc:
            if end == n:  # half-written last record
                return
            raise CorruptLog(f"checksum mismatch in record at {pos}")
        try:
            rec = json.loads(payload)
        except ValueError:
            raise CorruptLog(f"undecodable record at {pos}") from None
        yield pos, end, rec
        pos = end


@dataclass
class Intent:
    tid: str
    position: int
    changes: list[Change]
    reads: list[str]
    pinned_rows: set = field(default_factory=set)
    pinned_tables: set = field(default_factory=set)
    meta: dict = field(default_factory=dict)


class Transaction:
    """Single-owner unit of work. Reads see the start snapshot only."""

    def __init__(self, db: "Database"):
        self.db = db
        self.snapshot = db.snapshot()
        self.changes: list[Change] = []
        self.read_checks: list = []
        self.state = "active"
        self.started = time.time()

    def _check_active(self):
        if self.state != "active":
            raise TxnClosed(f"transaction is {self.state}")

    def _staged(self, table_id, key):
        found = self.snapshot.row(table_id, key) is not None
        for ch in self.changes:
            if ch.table_id == table_id and ch.key == key:
                found = ch.kind != "del"
        return found

    def insert(self, table, values) -> Change:
        self._check_active()
        t = self.snapshot.table(table)
        row = t.coerce_row(values)
        key = t.key_of(row)
        if self._staged(t.table_id, key):
            raise DuplicateKey(f"{t.name} already has key {key!r}")
        ch = Change("ins", t.table_id, key, row)
        self.changes.append(ch)
        return ch

    def update(self, table, key, assignments: dict, expect: Rvv | None = None) -> Change:
        self._check_active()
        t = self.snapshot.table(table)
        key = t.coerce_key(key)
        if not self._staged(t.table_id, key):
            raise NotFound(f"no row {key!r} in {t.name}")
        norm = {}
        for col, val in assignments.items():
            i = t.index(col)
            if i in t.key_indexes:
                raise TypeMismatch("key columns cannot be updated")
            norm[t.columns[i][0]] = V.coerce(val, t.columns[i][1])
        seen = self.snapshot.row(t.table_id, key)
        ch = Change("upd", t.table_id, key, norm, expect, seen.rvv if seen else None)
        self.changes.append(ch)
        return ch

    def delete(self, table, key, expect: Rvv | None = None) -> Change:
        self._check_active()
        t = self.snapshot.table(table)
        key = t.coerce_key(key)
        if not self._staged(t.table_id, key):
            raise NotFound(f"no row {key!r} in {t.name}")
        seen = self.snapshot.row(t.table_id, key)
        ch = Change("del", t.table_id, key, None, expect, seen.rvv if seen else None)
        self.changes.append(ch)
        return ch

    def add_read_checks(self, entries) -> None:
        self._check_active()
        for e in entries:
            if e not in self.read_checks:
                self.read_checks.append(e)

    def commit(self) -> int:
        self._check_active()
        try:
            txn_id = self.db._commit(self.changes, self.read_checks)
        except Exception:
            self.state = "aborted"
            raise
        self.state = "committed"
        return txn_id

    def abort(self) -> None:
        self._check_active()
        self.state = "aborted"


class Database:
    def __init__(self, name: str, path: str | os.PathLike | None = None, sync: bool = True):
        self.name = name
        self.path = Path(path) if path is not None else None
        self.sync = sync
        self._lock = threading.RLock()
        self._buf = bytearray()
        self._fh = None
        self._end = 0
        self.positions: dict[int, tuple[int, tuple]] = {}
        self.intents: dict[str, Intent] = {}
        self.outcomes: dict[str, tuple[str, int | None]] = {}
        self._state = Snapshot(name, 0, 0, {}, {}, {}, {}, {})

    # -- construction -------------------------------------------------

    @classmethod
    def open(cls, path, name: str | None = None, sync: bool = True) -> "Database":
        path = Path(path)
        if path.exists() and path.stat().st_size > 0:
            db = recover(path.read_bytes(), path=path, sync=sync)
            if name is not None and db.name != name:
                raise CorruptLog(f"log {path} belongs to {db.name}, not {name}")
            return db
        if name is None:
            name = path.stem
        db = cls(name, path, sync)
        db._append([{"k": "db", "name": name}])
        return db

    @classmethod
    def memory(cls, name: str) -> "Database":
        db = cls(name)
        db._append([{"k": "db", "name": name}])
        return db

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.flush()
                os.fsync(self._fh.fileno())
                self._fh.close()
                self._fh = None

    # -- log I/O ------------------------------------------------------

    def _append(self, records: list[dict]) -> list[int]:
        """Append records in one write; return their positions."""
        blobs = [encode_record(r) for r in records]
        positions, pos = [], self._end
        for b in blobs:
            positions.append(pos)
            pos += len(b)
        data = b"".join(blobs)
        if self.path is not None:
            if self._fh is None:
                self._fh = open(self.path, "ab")
            self._fh.write(data)
            self._fh.flush()
            if self.sync:
                os.fsync(self._fh.fileno())
        else:
            self._buf.extend(data)
        self._end = pos
        return positions

    def log_bytes(self) -> bytes:
        with self._lock:
            if self.path is not None:
                if self._fh is not None:
                    self._fh.flush()
                return self.path.read_bytes()
            return bytes(self._buf)

    @property
    def log_end(self) -> int:
        return self._end

    # -- reads --------------------------------------------------------

    def snapshot(self) -> Snapshot:
        return self._state

    @property
    def latest_txn(self) -> int:
        return self._state.txn_id

    def table(self, name_or_id) -> TableDef:
        return self._state.table(name_or_id)

    def row_rvv(self, table, key) -> Rvv:
        s = self._state
        t = s.table(table)
        return s.row_rvv(t.table_id, t.coerce_key(key))

    def table_rvv(self, table) -> Rvv:
        s = self._state
        return s.table_rvv(s.table(table).table_id)

    def begin(self) -> Transaction:
        return Transaction(self)

    # -- schema -------------------------------------------------------

    def create_table(self, name: str, columns, primary_key) -> int:
        cols = tuple((c, t if isinstance(t, ColumnType) else ColumnType.from_name(t)) for c, t in columns)
        with self._lock:
            s = self._state
            if s.has_table(name) or name.lower() in s.views:
                raise DuplicateTable(f"{name} already exists in {self.name}")
            probe = TableDef(1, name, cols, tuple(primary_key))
            rec = {"k": "table", **probe.to_json()}
            (pos,) = self._append([rec])
            self._apply_table(pos, rec)
            return pos

    def create_view(self, name: str, sql: str) -> None:
        with self._lock:
            s = self._state
            if s.has_table(name) or name.lower() in s.views:
                raise DuplicateTable(f"{name} already exists in {self.name}")
            rec = {"k": "view", "name": name, "sql": sql}
            self._append([rec])
            self._apply_view(rec)

    def _apply_table(self, pos: int, rec: dict) -> None:
        s = self._state
        cols = tuple((c, ColumnType(t)) for c, t in rec["cols"])
        t = TableDef(pos, rec["name"], cols, tuple(rec["pk"]))
        self._state = _replace(
            s,
            tables={**s.tables, pos: t},
            rows={**s.rows, pos: {}},
            stamps={**s.stamps, pos: Rvv(self.name, pos, s.txn_id)},
            names={**s.names, t.name.lower(): pos},
            position=pos,
        )

    def _apply_view(self, rec: dict) -> None:
        s = self._state
        self._state = _replace(s, views={**s.views, rec["name"].lower(): (rec["name"], rec["sql"])})

    # -- commit -------------------------------------------------------

    def _check_pins(self, changes: list[Change], owner: str | None) -> None:
        for it in self.intents.values():
            if it.tid == owner:
                continue
            for ch in changes:
                if (ch.table_id, ch.key) in it.pinned_rows or ch.table_id in it.pinned_tables:
                    raise PinConflict(
                        f"row {ch.key!r} of table {ch.table_id} is held by prepared txn {it.tid}"
                    )

    def _validate_changes(self, changes: list[Change]) -> list[tuple]:
        """Resolve staged changes against current state into log-ready rows."""
        s = self._state
        live = {}
        out = []
        for ch in changes:
            t = s.tables.get(ch.table_id)
            if t is None:
                raise SerializationConflict(f"table {ch.table_id} no longer exists")
            cur = live.get((ch.table_id, ch.key), s.row(ch.table_id, ch.key))
            if ch.kind == "ins":
                if cur is not None:
                    raise SerializationConflict(f"{t.name} key {ch.key!r} inserted concurrently")
                new = ch.values
            else:
                if cur is None:
                    raise SerializationConflict(f"{t.name} key {ch.key!r} was deleted", [ch])
                rv = cur.rvv if isinstance(cur, Row) else None
                if rv is not None:
                    if ch.expect is not None and rv != ch.expect:
                        raise SerializationConflict(f"{t.name} key {ch.key!r} changed", [ch])
                    if ch.seen is not None and rv != ch.seen:
                        raise SerializationConflict(f"{t.name} key {ch.key!r} changed", [ch])
                if ch.kind == "upd":
                    base = list(cur.values if isinstance(cur, Row) else cur)
                    for col, val in ch.values.items():
                        base[t.index(col)] = val
                    new = tuple(base)
                else:
                    new = None
            live[(ch.table_id, ch.key)] = new
            out.append((ch, t, new))
        return out

    def _write_commit(self, resolved, intent: str | None = None) -> int:
        s = self._state
        txn = s.txn_id + 1
        recs = []
        for ch, t, new in resolved:
            rec = {"k": ch.kind, "tx": txn, "t": t.table_id, "key": [V.to_json(v) for v in ch.key]}
            if new is not None:
                rec["row"] = [V.to_json(v) for v in new]
            recs.append(rec)
        marker = {"k": "commit", "tx": txn, "n": len(recs), "ts": int(time.time() * 1000)}
        if intent is not None:
            marker["intent"] = intent
        positions = self._append(recs + [marker])
        self._apply_commit(txn, recs, positions[:-1], positions[-1], intent)
        return txn

    def _apply_commit(self, txn, recs, positions, marker_pos, intent=None) -> None:
        s = self._state
        rows = dict(s.rows)
        stamps = dict(s.stamps)
        copied = set()
        for rec, pos in zip(recs, positions):
            tid = rec["t"]
            t = s.tables[tid]
            if tid not in copied:
                rows[tid] = dict(rows[tid])
                copied.add(tid)
            key = tuple(V.from_json(v, ty) for v, ty in zip(rec["key"], t.key_types))
            rvv = Rvv(self.name, pos, txn)
            if rec["k"] == "del":
                rows[tid].pop(key, None)
            else:
                vals = tuple(V.from_json(v, ty) for v, (_, ty) in zip(rec["row"], t.columns))
                rows[tid][key] = Row(key, vals, rvv)
            stamps[tid] = rvv
            self.positions[pos] = (tid, key)
        self._state = _replace(s, rows=rows, stamps=stamps, txn_id=txn, position=marker_pos)
        if intent is not None:
            self.intents.pop(intent, None)
            self.outcomes[intent] = ("committed", txn)

    def _commit(self, changes: list[Change], read_checks) -> int:
        from livefed import readcheck

        with self._lock:
            if read_checks:
                stale = readcheck.stale_entries(read_checks, self)
                if stale:
                    raise SerializationConflict("stale read validators", stale)
            self._check_pins(changes, None)
            resolved = self._validate_changes(changes)
            return self._write_commit(resolved)

    def write(self, txn: Transaction, change) -> Change:
        """Stage ``("ins", table, values)``, ``("upd", table, key, assignments)``
        or ``("del", table, key)`` in ``txn``."""
        kind, table, *rest = change
        if kind == "ins":
            return txn.insert(table, *rest)
        if kind == "upd":
            return txn.update(table, *rest)
        if kind == "del":
            return txn.delete(table, *rest)
        raise TypeMismatch(f"unknown change kind {kind!r}")

    def commit(self, txn: Transaction) -> int:
        return txn.commit()

    # -- prepared intents (2PC participant side) -----------------------

    def _pins_for(self, changes, reads) -> tuple[set, set]:
        from livefed import readcheck

        rows = {(ch.table_id, ch.key) for ch in changes}
        tables = set()
        for e in readcheck.parse_entries(reads):
            if isinstance(e, readcheck.RowStamp):
                loc = self.positions.get(e.rvv.log_position)
                if loc is not None:
                    rows.add(loc)
            elif isinstance(e, readcheck.TableStamp):
                tables.add(e.table_id)
        return rows, tables

    def prepare(self, tid: str, changes: list[Change], reads: list[str], meta: dict | None = None) -> int:
        """Validate and durably record an intent. Idempotent per ``tid``."""
        from livefed import readcheck

        with self._lock:
            if tid in self.intents:
                return self.intents[tid].position
            if tid in self.outcomes:
                raise TxnClosed(f"txn {tid} already {self.outcomes[tid][0]}")
            entries = readcheck.parse_entries(reads)
            stale = readcheck.stale_entries(entries, self)
            if stale:
                raise SerializationConflict("stale read validators", stale)
            self._check_pins(changes, tid)
            self._validate_changes(changes)
            rec = {"k": "intent", "tid": tid, "reads": list(reads), "writes": [_change_json(c) for c in changes]}
            if meta:
                rec["meta"] = meta
            (pos,) = self._append([rec])
            self._install_intent(tid, pos, changes, list(reads), meta)
            return pos

    def _install_intent(self, tid, pos, changes, reads, meta=None) -> None:
        rows, tables = self._pins_for(changes, reads)
        self.intents[tid] = Intent(tid, pos, changes, reads, rows, tables, dict(meta or {}))

    def commit_prepared(self, tid: str) -> int:
        with self._lock:
            if tid in self.outcomes:
                state, txn = self.outcomes[tid]
                if state == "committed":
                    return txn
                raise TxnClosed(f"txn {tid} was aborted")
            it = self.intents.get(tid)
            if it is None:
                raise UnknownTxn(tid)
            resolved = self._validate_changes(it.changes)
            return self._write_commit(resolved, intent=tid)

    def abort_prepared(self, tid: str) -> None:
        with self._lock:
            if tid in self.outcomes:
                state, _ = self.outcomes[tid]
                if state == "committed":
                    raise TxnClosed(f"txn {tid} already committed")
                return
            if tid not in self.intents:
                raise UnknownTxn(tid)
            self._append([{"k": "abort", "tid": tid}])
            del self.intents[tid]
            self.outcomes[tid] = ("aborted", None)


def _replace(s: Snapshot, **kw) -> Snapshot:
    d = dict(s.__dict__)
    d.update(kw)
    return Snapshot(**d)


def _change_json(ch: Change) -> dict:
    out = {"k": ch.kind, "t": ch.table_id, "key": [V.to_json(v) for v in ch.key]}
    if ch.kind == "ins":
        out["row"] = [V.to_json(v) for v in ch.values]
    elif ch.kind == "upd":
        out["set"] = {c: V.to_json(v) for c, v in ch.values.items()}
    if ch.expect is not None:
        out["expect"] = str(ch.expect)
    if ch.seen is not None:
        out["seen"] = str(ch.seen)
    return out


def _change_from_json(d: dict, s: Snapshot) -> Change:
    t = s.tables[d["t"]]
    key = tuple(V.from_json(v, ty) for v, ty in zip(d["key"], t.key_types))
    vals = None
    if d["k"] == "ins":
        vals = tuple(V.from_json(v, ty) for v, (_, ty) in zip(d["row"], t.columns))
    elif d["k"] == "upd":
        vals = {c: V.from_json(v, t.columns[t.index(c)][1]) for c, v in d["set"].items()}
    return Change(d["k"], t.table_id, key, vals, parse_rvv(d.get("expect")), parse_rvv(d.get("seen")))


def parse_rvv(text: str | None) -> Rvv | None:
    if text is None:
        return None
    name, pos, txn = text.rsplit(":", 2)
    return Rvv(name, int(pos), int(txn))


def recover(data: bytes, path=None, sync: bool = True) -> Database:
    """Rebuild a database from log bytes, keeping complete commits only."""
    db: Database | None = None
    pending: list[tuple[int, dict]] = []
    good_end = 0
    for pos, end, rec in iter_records(data):
        kind = rec.get("k")
        if db is None:
            if kind != "db":
                raise CorruptLog("log does not start with a database header")
            db = Database(rec["name"], path, sync)
            good_end = end
            continue
        if kind in ("ins", "upd", "del"):
            pending.append((pos, rec))
            continue
        if pending and kind != "commit":
            raise CorruptLog(f"change records not closed by a commit before {pos}")
        if kind == "table":
            db._apply_table(pos, rec)
        elif kind == "view":
            db._apply_view(rec)
        elif kind == "commit":
            if len(pending) != rec["n"] or any(r["tx"] != rec["tx"] for _, r in pending):
                raise CorruptLog(f"commit at {pos} does not match its change records")
            if rec["tx"] != db._state.txn_id + 1:
                raise CorruptLog(f"transaction number gap at {pos}")
            db._apply_commit(rec["tx"], [r for _, r in pending], [p for p, _ in pending], pos, rec.get("intent"))
            pending = []
        elif kind == "intent":
            s = db._state
            changes = [_change_from_json(w, s) for w in rec["writes"]]
            db._install_intent(rec["tid"], pos, changes, rec["reads"], rec.get("meta"))
        elif kind == "abort":
            db.intents.pop(rec["tid"], None)
            db.outcomes[rec["tid"]] = ("aborted", None)
        else:
            raise CorruptLog(f"unknown record kind {kind!r} at {pos}")
        if not pending:
            good_end = end
    if db is None:
        raise CorruptLog("empty log")
    db._end = good_end
    if path is None:
        db._buf = bytearray(data[:good_end])
    elif good_end < len(data):
        with open(path, "r+b") as fh:
            fh.truncate(good_end)
    return db


def record_boundaries(data: bytes) -> list[int]:
    """Byte offsets at which a complete record ends (for crash testing)."""
    return [end for _, end, _ in iter_records(data)]
