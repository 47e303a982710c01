from __future__ import annotations

from dataclasses import dataclass
from urllib.parse import urlsplit

from livefed.dsl import ast as A
from livefed.dsl.parser import parse_select
from livefed.errors import MalformedUrl, UnknownRelation
from livefed.store import Snapshot, TableDef
from livefed.values import ColumnType


@dataclass(frozen=True)
class ViewDef:
    name: str
    select: A.SelectAst


@dataclass(frozen=True)
class RestViewDef:
    name: str
    columns: tuple  # ((name, ColumnType), ...)
    url: str
    uri_type: A.UriType | None = None

    def __post_init__(self):
        split_view_url(self.url)

    @property
    def base(self) -> str:
        """``scheme://host:port`` of the serving node."""
        parts = urlsplit(self.url)
        return f"{parts.scheme}://{parts.netloc}"

    @property
    def db(self) -> str:
        return split_view_url(self.url)[1]

    @property
    def remote_view(self) -> str:
        return split_view_url(self.url)[3]

    @classmethod
    def from_ast(cls, st: A.CreateViewRest) -> "RestViewDef":
        cols = tuple((c.name, ColumnType.from_name(c.type_name)) for c in st.columns)
        return cls(st.name, cols, st.url, st.uri_type)


def split_view_url(url: str) -> tuple[str, str, str, str]:
    """Return (base, db, schema, view) for ``scheme://host[:port]/db/schema/view``."""
    parts = urlsplit(url)
    if parts.scheme not in ("http", "https") or not parts.netloc:
        raise MalformedUrl(f"not an absolute http url: {url!r}")
    try:
        parts.port
    except ValueError:
        raise MalformedUrl(f"bad port in {url!r}") from None
    segs = [s for s in parts.path.split("/") if s]
    if len(segs) != 3:
        raise MalformedUrl(f"expected /db/schema/view path in {url!r}")
    return f"{parts.scheme}://{parts.netloc}", segs[0], segs[1], segs[2]


class LocalCatalog:
    """Name resolution over one database snapshot: tables and stored views."""

    def __init__(self, snap: Snapshot):
        self.snap = snap
        self._views: dict[str, ViewDef] = {}

    def lookup(self, name: str):
        low = name.lower()
        if low in self.snap.names:
            return self.snap.table(name)
        if low in self.snap.views:
            v = self._views.get(low)
            if v is None:
                vname, sql = self.snap.views[low]
                v = self._views[low] = ViewDef(vname, parse_select(sql))
            return v
        raise UnknownRelation(f"no table or view named {name} in {self.snap.db_name}")


def is_table(x) -> bool:
    return isinstance(x, TableDef)
