"""readCheck vectors: computing, rendering, combining and validating them.

A vector is an ordered list of stamps gathered by walking a query plan:

* a key lookup contributes one :class:`RowStamp` per selected row,
* any other scan contributes one :class:`TableStamp` for the whole table,
* joins and unions concatenate the vectors of their inputs,
* projections, filters and aggregates pass their input vector through.

String forms::

    rvv   := name ":" digits ":" digits
    etag  := name "|" digits "|" "[" pair {"," pair} "]" ; pair := digits "-" digits
    combined := item {";" item}

Adjacent table stamps of one database at one position render as a single
etag item. The etag position is the largest table stamp observed, so a table
watch is fresh while every listed table's stamp is still at or below it.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable

from livefed.errors import MalformedValidator, NotFound
from livefed.store import Database, Rvv, Snapshot

NAME = r"[^:|;,\[\]\s]+"
_RVV = re.compile(rf"({NAME}):(\d+):(\d+)")
_ETAG = re.compile(rf"({NAME})\|(\d+)\|\[(\d+-\d+(?:,\d+-\d+)*)\]")


@dataclass(frozen=True)
class RowStamp:
    rvv: Rvv
    # Location is a cache of what the rvv's log position already identifies.
    table_id: int | None = field(default=None, compare=False)
    key: tuple | None = field(default=None, compare=False)

    @property
    def db(self) -> str:
        return self.rvv.db_name

    def __str__(self) -> str:
        return str(self.rvv)


@dataclass(frozen=True)
class TableStamp:
    db: str
    table_id: int
    position: int


@dataclass(frozen=True)
class Absent:
    """A row contribution hidden by aggregation."""

    db: str | None = None


Entry = RowStamp | TableStamp | Absent


def _dedup(entries: Iterable[Entry]) -> tuple:
    seen, out = set(), []
    for e in entries:
        if isinstance(e, Absent) or e not in seen:
            seen.add(e)
            out.append(e)
    return tuple(out)


@dataclass(frozen=True)
class ReadCheckVector:
    entries: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "entries", _dedup(self.entries))

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __bool__(self) -> bool:
        return bool(self.entries)

    @property
    def databases(self) -> list[str]:
        return list(dict.fromkeys(e.db for e in self.entries if e.db))

    def for_db(self, name: str) -> "ReadCheckVector":
        return ReadCheckVector(tuple(e for e in self.entries if e.db == name))

    def __str__(self) -> str:
        return render(self)


def combine(*vectors: ReadCheckVector) -> ReadCheckVector:
    """Concatenate vectors, collapsing duplicate stamps."""
    return ReadCheckVector(tuple(e for v in vectors for e in v))


# -- computation ----------------------------------------------------------


def _walk(plan, snap: Snapshot, out: list) -> None:
    from livefed.engine import plan as P

    if isinstance(plan, P.KeyScan):
        t = snap.table(plan.table)
        missing = False
        for key in plan.keys:
            row = snap.row(t.table_id, key)
            if row is None:
                missing = True
            else:
                out.append(RowStamp(row.rvv, t.table_id, key))
        if missing:
            # an absent key has no row stamp; only a table watch sees its insertion
            out.append(TableStamp(snap.db_name, t.table_id, snap.table_rvv(t.table_id).log_position))
    elif isinstance(plan, P.PredScan):
        t = snap.table(plan.table)
        out.append(TableStamp(snap.db_name, t.table_id, snap.table_rvv(t.table_id).log_position))
    elif isinstance(plan, (P.Join, P.Union)):
        _walk(plan.left, snap, out)
        _walk(plan.right, snap, out)
    elif isinstance(plan, (P.Project, P.Filter, P.Aggregate)):
        _walk(plan.input, snap, out)
    elif isinstance(plan, P.RestGet):
        raise ValueError(f"remote view {plan.view} has no local readCheck")
    else:
        raise TypeError(f"unknown plan node {plan!r}")


def normalize(entries: Iterable[Entry]) -> ReadCheckVector:
    """Lift table stamps of each database to their common maximum.

    Only valid for stamps observed in one snapshot: no listed table changed
    between its own stamp and the maximum.
    """
    entries = list(entries)
    top: dict[str, int] = {}
    for e in entries:
        if isinstance(e, TableStamp):
            top[e.db] = max(top.get(e.db, 0), e.position)
    return ReadCheckVector(
        tuple(TableStamp(e.db, e.table_id, top[e.db]) if isinstance(e, TableStamp) else e for e in entries)
    )


def compute(plan, db: Database | Snapshot) -> ReadCheckVector:
    snap = db.snapshot() if isinstance(db, Database) else db
    out: list = []
    _walk(plan, snap, out)
    return normalize(out)


# -- string forms -----------------------------------------------------------


def render(v: Iterable[Entry]) -> str:
    items: list[str] = []
    group: list[TableStamp] = []

    def flush():
        if group:
            pairs = ",".join(f"{t.table_id}-0" for t in group)
            items.append(f"{group[0].db}|{group[0].position}|[{pairs}]")
            group.clear()

    for e in v:
        if isinstance(e, TableStamp):
            if group and (group[0].db, group[0].position) != (e.db, e.position):
                flush()
            group.append(e)
            continue
        flush()
        if isinstance(e, RowStamp):
            items.append(str(e.rvv))
        else:
            raise MalformedValidator("aggregated (absent) entries only appear in row validators")
    flush()
    return ";".join(items)


def parse_item(item: str) -> list[Entry]:
    m = _RVV.fullmatch(item)
    if m:
        return [RowStamp(Rvv(m.group(1), int(m.group(2)), int(m.group(3))))]
    m = _ETAG.fullmatch(item)
    if m:
        db, pos = m.group(1), int(m.group(2))
        out = []
        for pair in m.group(3).split(","):
            tid, qual = pair.split("-")
            if qual != "0":
                raise MalformedValidator(f"unsupported table qualifier in {item!r}")
            out.append(TableStamp(db, int(tid), pos))
        return out
    raise MalformedValidator(f"not a validator: {item!r}")


def parse(text: str) -> ReadCheckVector:
    text = text.strip()
    if text.startswith('"') and text.endswith('"') and len(text) >= 2:
        text = text[1:-1]
    if not text:
        return ReadCheckVector()
    out: list[Entry] = []
    for item in text.split(";"):
        out.extend(parse_item(item))
    return ReadCheckVector(tuple(out))


def parse_entries(texts: Iterable[str]) -> list[Entry]:
    out: list[Entry] = []
    for t in texts:
        out.extend(parse(t))
    return out


def render_row(entries: Iterable[Entry]) -> str:
    """Per-row validator: comma-joined components, blank where aggregated."""
    parts = []
    for e in entries:
        if isinstance(e, RowStamp):
            parts.append(str(e.rvv))
        elif isinstance(e, Absent):
            parts.append("")
        else:
            raise MalformedValidator("table stamps do not belong in row validators")
    return ",".join(parts)


def parse_row(text: str) -> list[RowStamp | None]:
    out: list[RowStamp | None] = []
    for part in text.split(","):
        if not part:
            out.append(None)
            continue
        m = _RVV.fullmatch(part)
        if not m:
            raise MalformedValidator(f"not a row validator: {part!r}")
        out.append(RowStamp(Rvv(m.group(1), int(m.group(2)), int(m.group(3)))))
    return out


def split_sources(text: str) -> dict[str, str]:
    """Group the items of a combined validator by database name, in order."""
    groups: dict[str, list[str]] = {}
    for item in filter(None, text.strip().strip('"').split(";")):
        (e, *_) = parse_item(item)
        groups.setdefault(e.db, []).append(item)
    return {db: ";".join(items) for db, items in groups.items()}


# -- validation -------------------------------------------------------------


@dataclass(frozen=True)
class Validation:
    stale: tuple = ()

    @property
    def fresh(self) -> bool:
        return not self.stale

    def __bool__(self) -> bool:
        return self.fresh


def entry_is_fresh(e: Entry, db: Database) -> bool:
    s = db.snapshot()
    if isinstance(e, Absent):
        return True
    if e.db != db.name:
        return False
    if isinstance(e, RowStamp):
        if e.table_id is not None and e.key is not None:
            loc = (e.table_id, e.key)
        else:
            loc = db.positions.get(e.rvv.log_position)
            if loc is None:
                return False
        row = s.row(*loc)
        return row is not None and row.rvv == e.rvv
    if isinstance(e, TableStamp):
        if e.position >= db.log_end:
            return False
        try:
            return s.table_rvv(e.table_id).log_position <= e.position
        except NotFound:
            return False
    return False


def stale_entries(v: Iterable[Entry], db: Database) -> list[Entry]:
    return [e for e in v if not entry_is_fresh(e, db)]


def validate(v: Iterable[Entry], db: Database) -> Validation:
    return Validation(tuple(stale_entries(v, db)))
