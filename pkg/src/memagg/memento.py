"""Memento domain model: URI-R normalization, HTTP datetimes, TimeMaps.

The types here are immutable values; every operation is a pure function.
A TimeMap is always kept in canonical order (ascending capture datetime,
ties broken by archive_id then URI-M) with exact duplicates removed, so
serialization is byte-deterministic.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Iterable, Optional
from urllib.parse import urlsplit, urlunsplit

from memagg.errors import MalformedDatetime, MalformedUri

_DEFAULT_PORTS = {"http": 80, "https": 443}

_DAY_NAMES = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")
_MONTH_NAMES = (
    "Jan", "Feb", "Mar", "Apr", "May", "Jun",
    "Jul", "Aug", "Sep", "Oct", "Nov", "Dec",
)
_HTTP_DATETIME_RE = re.compile(
    r"^(Mon|Tue|Wed|Thu|Fri|Sat|Sun), "
    r"(\d{2}) (Jan|Feb|Mar|Apr|May|Jun|Jul|Aug|Sep|Oct|Nov|Dec) (\d{4}) "
    r"(\d{2}):(\d{2}):(\d{2}) GMT$"
)

_LINK_LINE_RE = re.compile(r'^<([^>]*)>((?:; [A-Za-z_]+="[^"]*")*)$')
_LINK_PARAM_RE = re.compile(r'; ([A-Za-z_]+)="([^"]*)"')


@dataclass(frozen=True, slots=True)
class OriginalUri:
    """An original resource URI as received plus its canonical form.

    The normalized form is the cache and feature-extraction key: lowercase
    scheme and host, default ports dropped, fragment stripped, path and
    query preserved verbatim. Normalization is idempotent.
    """

    raw: str
    normalized: str


@dataclass(frozen=True, slots=True)
class Memento:
    """One archived copy: its URI-M, capture datetime, and owning archive."""

    uri_m: str
    datetime: datetime
    archive_id: str

    def __post_init__(self) -> None:
        dt = self.datetime
        if dt.tzinfo is None:
            raise ValueError(f"memento datetime must be timezone-aware: {dt!r}")
        # Second precision, always UTC.
        object.__setattr__(
            self, "datetime", dt.astimezone(timezone.utc).replace(microsecond=0)
        )


@dataclass(frozen=True, slots=True)
class TimeMap:
    """All known mementos for one original URI, in canonical order."""

    original: OriginalUri
    mementos: tuple[Memento, ...]
    assembled_at: datetime

    @classmethod
    def assemble(
        cls,
        original: OriginalUri,
        mementos: Iterable[Memento],
        assembled_at: datetime,
    ) -> "TimeMap":
        """Build a TimeMap, de-duplicating and sorting the mementos."""
        seen: set[tuple[str, str, datetime]] = set()
        unique: list[Memento] = []
        for m in mementos:
            key = (m.archive_id, m.uri_m, m.datetime)
            if key in seen:
                continue
            seen.add(key)
            unique.append(m)
        unique.sort(key=lambda m: (m.datetime, m.archive_id, m.uri_m))
        return cls(original=original, mementos=tuple(unique), assembled_at=assembled_at)

    def holder_ids(self) -> set[str]:
        """Archive ids that contribute at least one memento."""
        return {m.archive_id for m in self.mementos}


@dataclass(frozen=True, slots=True)
class ArchiveDescriptor:
    """A registered upstream archive and how the aggregator treats it.

    Archives without a prediction model are queried unconditionally on
    every miss and are excluded from recall / false-positive accounting.
    """

    archive_id: str
    name: str
    timegate_endpoint: str
    has_model: bool = True
    always_query: bool = False

    def __post_init__(self) -> None:
        if not self.archive_id:
            raise ValueError("archive_id must be non-empty")
        if not self.has_model and not self.always_query:
            raise ValueError(
                f"archive {self.archive_id!r}: has_model=False requires always_query=True"
            )


def normalize_uri(raw: str) -> OriginalUri:
    """Normalize an absolute http/https URI into its canonical form.

    Lowercases scheme and host, drops default ports, strips the fragment,
    and preserves path case, query, and any trailing slash. Raises
    MalformedUri for relative or unparseable input.
    """
    if not isinstance(raw, str):
        raise MalformedUri(f"expected a string URI, got {type(raw).__name__}")
    candidate = raw.strip()
    if not candidate:
        raise MalformedUri("empty URI")
    try:
        parts = urlsplit(candidate)
        host = parts.hostname
        port = parts.port
    except ValueError as exc:
        raise MalformedUri(f"unparseable URI {raw!r}: {exc}") from None
    scheme = parts.scheme.lower()
    if scheme not in _DEFAULT_PORTS:
        raise MalformedUri(f"not an absolute http/https URI: {raw!r}")
    if not host:
        raise MalformedUri(f"URI has no host: {raw!r}")
    netloc = f"[{host}]" if ":" in host else host
    if "@" in parts.netloc:
        userinfo = parts.netloc.rsplit("@", 1)[0]
        netloc = f"{userinfo}@{netloc}"
    if port is not None and port != _DEFAULT_PORTS[scheme]:
        netloc = f"{netloc}:{port}"
    normalized = urlunsplit((scheme, netloc, parts.path, parts.query, ""))
    return OriginalUri(raw=raw, normalized=normalized)


def parse_http_datetime(s: str) -> datetime:
    """Parse an RFC 1123 datetime ("Thu, 01 Jan 2015 00:00:00 GMT") to UTC.

    Strict: the weekday name must match the date, the zone must be GMT,
    and no other layout is accepted. This keeps parse/format a bijection.
    """
    if not isinstance(s, str):
        raise MalformedDatetime(f"expected a string, got {type(s).__name__}")
    m = _HTTP_DATETIME_RE.match(s)
    if m is None:
        raise MalformedDatetime(f"not an RFC 1123 datetime: {s!r}")
    day_name, day, month_name, year, hour, minute, second = m.groups()
    try:
        dt = datetime(
            int(year),
            _MONTH_NAMES.index(month_name) + 1,
            int(day),
            int(hour),
            int(minute),
            int(second),
            tzinfo=timezone.utc,
        )
    except ValueError as exc:
        raise MalformedDatetime(f"invalid calendar date in {s!r}: {exc}") from None
    if _DAY_NAMES[dt.weekday()] != day_name:
        raise MalformedDatetime(
            f"weekday {day_name} does not match date in {s!r}"
        )
    return dt


def format_http_datetime(dt: datetime) -> str:
    """Format a datetime as RFC 1123 GMT, locale-independent."""
    if dt.tzinfo is None:
        raise ValueError(f"naive datetime cannot be formatted: {dt!r}")
    dt = dt.astimezone(timezone.utc)
    return (
        f"{_DAY_NAMES[dt.weekday()]}, {dt.day:02d} {_MONTH_NAMES[dt.month - 1]} "
        f"{dt.year:04d} {dt.hour:02d}:{dt.minute:02d}:{dt.second:02d} GMT"
    )


def closest_memento(tm: TimeMap, target: datetime) -> Optional[Memento]:
    """Pick the memento temporally closest to `target`.

    Exact distance ties go to the earlier datetime; identical datetimes go
    to the first memento in TimeMap order. Returns None for an empty map.
    """
    best: Optional[Memento] = None
    best_key: Optional[tuple] = None
    for m in tm.mementos:
        key = (abs(m.datetime - target), m.datetime)
        if best_key is None or key < best_key:
            best, best_key = m, key
    return best


def serialize_timemap_link(tm: TimeMap) -> str:
    """Render a TimeMap in link format, one link per line.

    The first line carries the original relation; each memento line carries
    rel="memento", its RFC 1123 datetime, and an archive parameter so the
    output parses back losslessly. Output is byte-deterministic.
    """
    lines = [f'<{tm.original.normalized}>; rel="original"']
    for m in tm.mementos:
        lines.append(
            f'<{m.uri_m}>; rel="memento"; '
            f'datetime="{format_http_datetime(m.datetime)}"; '
            f'archive="{m.archive_id}"'
        )
    return ",\n".join(lines) + "\n"


def parse_timemap_link(text: str, assembled_at: datetime) -> TimeMap:
    """Parse link-format text produced by serialize_timemap_link.

    `assembled_at` is supplied by the caller because assembly time is not
    part of the wire format. Raises ValueError on structural problems.
    """
    original: Optional[OriginalUri] = None
    mementos: list[Memento] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.endswith(","):
            line = line[:-1]
        m = _LINK_LINE_RE.match(line)
        if m is None:
            raise ValueError(f"line {lineno}: not a link-format entry: {line!r}")
        target, params_blob = m.groups()
        params = dict(_LINK_PARAM_RE.findall(params_blob))
        rel = params.get("rel")
        if rel == "original":
            original = normalize_uri(target)
        elif rel == "memento":
            if "datetime" not in params or "archive" not in params:
                raise ValueError(f"line {lineno}: memento link missing parameters")
            mementos.append(
                Memento(
                    uri_m=target,
                    datetime=parse_http_datetime(params["datetime"]),
                    archive_id=params["archive"],
                )
            )
        else:
            raise ValueError(f"line {lineno}: unsupported relation {rel!r}")
    if original is None:
        raise ValueError("timemap has no original relation")
    return TimeMap.assemble(original, mementos, assembled_at)
