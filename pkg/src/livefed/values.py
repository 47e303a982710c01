"""Column types, scalar coercion and the JSON value codec."""

from __future__ import annotations

import calendar
import datetime as dt
import enum
import re
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation

from livefed.errors import TypeMismatch


class ColumnType(enum.Enum):
    INT = "int"
    CHAR = "char"
    DATE = "date"
    DATETIME = "datetime"
    INTERVAL = "interval"
    NUMERIC = "numeric"

    @classmethod
    def from_name(cls, name: str) -> "ColumnType":
        key = name.lower()
        try:
            return _TYPE_ALIASES[key]
        except KeyError:
            raise TypeMismatch(f"unknown column type {name!r}") from None

    @property
    def is_temporal(self) -> bool:
        return self in (ColumnType.DATE, ColumnType.DATETIME)


_TYPE_ALIASES = {
    "int": ColumnType.INT,
    "integer": ColumnType.INT,
    "bigint": ColumnType.INT,
    "smallint": ColumnType.INT,
    "char": ColumnType.CHAR,
    "varchar": ColumnType.CHAR,
    "text": ColumnType.CHAR,
    "string": ColumnType.CHAR,
    "date": ColumnType.DATE,
    "datetime": ColumnType.DATETIME,
    "timestamp": ColumnType.DATETIME,
    "interval": ColumnType.INTERVAL,
    "numeric": ColumnType.NUMERIC,
    "decimal": ColumnType.NUMERIC,
    "real": ColumnType.NUMERIC,
}


@dataclass(frozen=True, order=True)
class Interval:
    """Signed calendar interval. All fields carry the same sign."""

    years: int = 0
    months: int = 0
    days: int = 0
    seconds: int = 0

    def __neg__(self) -> "Interval":
        return Interval(-self.years, -self.months, -self.days, -self.seconds)

    def iso(self) -> str:
        sign = "-" if min(self.years, self.months, self.days, self.seconds) < 0 else ""
        a = abs
        return f"{sign}P{a(self.years)}Y{a(self.months)}M{a(self.days)}DT{a(self.seconds)}S"

    @classmethod
    def from_iso(cls, text: str) -> "Interval":
        m = _ISO_INTERVAL.fullmatch(text)
        if not m:
            raise TypeMismatch(f"bad interval {text!r}")
        iv = cls(*(int(g) for g in m.group(2, 3, 4, 5)))
        return -iv if m.group(1) else iv


_ISO_INTERVAL = re.compile(r"(-?)P(\d+)Y(\d+)M(\d+)DT(\d+)S")


def _as_datetime(v) -> dt.datetime:
    if isinstance(v, dt.datetime):
        return v
    return dt.datetime(v.year, v.month, v.day)


def _add_months(d: dt.datetime, months: int) -> dt.datetime:
    y, m = divmod(d.month - 1 + months, 12)
    year, month = d.year + y, m + 1
    day = min(d.day, calendar.monthrange(year, month)[1])
    return d.replace(year=year, month=month, day=day)


def interval_between(later, earlier) -> Interval:
    """Calendar difference ``later - earlier`` as years/months/days/seconds."""
    a, b = _as_datetime(later), _as_datetime(earlier)
    if a < b:
        return -interval_between(b, a)
    months = (a.year - b.year) * 12 + (a.month - b.month)
    if (a.day, a.time()) < (b.day, b.time()):
        months -= 1
    anchor = _add_months(b, months)
    if anchor > a:  # day clamping overshot
        months -= 1
        anchor = _add_months(b, months)
    rest = a - anchor
    return Interval(months // 12, months % 12, rest.days, rest.seconds)


def extract(field: str, value):
    field = field.lower()
    if isinstance(value, Interval):
        if field == "year":
            return value.years
        if field == "month":
            return value.months
        if field == "day":
            return value.days
        if field == "second":
            return value.seconds
    elif isinstance(value, (dt.date, dt.datetime)):
        if field in ("year", "month", "day"):
            return getattr(value, field)
        if isinstance(value, dt.datetime) and field in ("hour", "minute", "second"):
            return getattr(value, field)
    elif value is None:
        return None
    raise TypeMismatch(f"cannot extract {field} from {value!r}")


def parse_date(text: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError:
        raise TypeMismatch(f"bad date literal {text!r}") from None


def parse_datetime(text: str) -> dt.datetime:
    t = text.strip()
    try:
        if len(t) == 10:
            return _as_datetime(dt.date.fromisoformat(t))
        return dt.datetime.fromisoformat(t.replace(" ", "T", 1))
    except ValueError:
        raise TypeMismatch(f"bad datetime literal {text!r}") from None


def coerce(value, ctype: ColumnType):
    """Convert ``value`` to the canonical Python representation of ``ctype``."""
    if value is None:
        return None
    if ctype is ColumnType.INT:
        if isinstance(value, bool):
            raise TypeMismatch(f"expected int, got {value!r}")
        if isinstance(value, int):
            return value
        if isinstance(value, Decimal) and value == value.to_integral_value():
            return int(value)
        raise TypeMismatch(f"expected int, got {value!r}")
    if ctype is ColumnType.CHAR:
        if isinstance(value, str):
            return value
        raise TypeMismatch(f"expected string, got {value!r}")
    if ctype is ColumnType.DATE:
        if isinstance(value, dt.datetime):
            return value.date()
        if isinstance(value, dt.date):
            return value
        if isinstance(value, str):
            return parse_datetime(value).date()
        raise TypeMismatch(f"expected date, got {value!r}")
    if ctype is ColumnType.DATETIME:
        if isinstance(value, (dt.date, dt.datetime)):
            return _as_datetime(value)
        if isinstance(value, str):
            return parse_datetime(value)
        raise TypeMismatch(f"expected datetime, got {value!r}")
    if ctype is ColumnType.NUMERIC:
        if isinstance(value, bool):
            raise TypeMismatch(f"expected number, got {value!r}")
        if isinstance(value, (int, Decimal)):
            return Decimal(value)
        if isinstance(value, (float, str)):
            try:
                return Decimal(str(value))
            except InvalidOperation:
                pass
        raise TypeMismatch(f"expected number, got {value!r}")
    if ctype is ColumnType.INTERVAL:
        if isinstance(value, Interval):
            return value
        if isinstance(value, str):
            return Interval.from_iso(value)
        raise TypeMismatch(f"expected interval, got {value!r}")
    raise TypeMismatch(f"unsupported type {ctype}")


def type_of(value) -> ColumnType | None:
    if value is None:
        return None
    if isinstance(value, bool):
        return None
    if isinstance(value, int):
        return ColumnType.INT
    if isinstance(value, str):
        return ColumnType.CHAR
    if isinstance(value, dt.datetime):
        return ColumnType.DATETIME
    if isinstance(value, dt.date):
        return ColumnType.DATE
    if isinstance(value, Interval):
        return ColumnType.INTERVAL
    if isinstance(value, Decimal):
        return ColumnType.NUMERIC
    return None


def to_json(value):
    if isinstance(value, dt.datetime):
        return value.isoformat()
    if isinstance(value, dt.date):
        return value.isoformat()
    if isinstance(value, Decimal):
        return float(value)
    if isinstance(value, Interval):
        return value.iso()
    return value


def from_json(value, ctype: ColumnType):
    if value is None:
        return None
    if ctype is ColumnType.INT and isinstance(value, float) and value.is_integer():
        value = int(value)
    return coerce(value, ctype)


def sort_key(value):
    """Total order used for deterministic grouping output; nulls first."""
    if value is None:
        return (0, 0)
    if isinstance(value, dt.datetime):
        return (1, value.date().toordinal(), value.time())
    if isinstance(value, dt.date):
        return (1, value.toordinal(), dt.time())
    return (1, value)


def compatible(a: ColumnType, b: ColumnType) -> bool:
    if a == b:
        return True
    if a.is_temporal and b.is_temporal:
        return True
    numeric = (ColumnType.INT, ColumnType.NUMERIC)
    return a in numeric and b in numeric
