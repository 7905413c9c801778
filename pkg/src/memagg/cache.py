"""Binary result cache with an age-only Fresh -> Stale -> Expired lifecycle.

A record is servable (Hit) while younger than the fresh window, then spends
the stale window present-but-not-servable (StaleMiss), then is dropped.
Boundaries are half-open: age < fresh is Fresh, fresh <= age < fresh+stale
is Stale, everything after is Expired. There is no capacity eviction.

All time-dependent operations take `now` explicitly so lifecycle behavior
is testable without waiting out 30-day windows. The store is optionally
write-through to an append-only JSONL snapshot that is replayed on open.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from datetime import datetime, timedelta
from enum import Enum
from pathlib import Path
from typing import Optional

from memagg.errors import ClockSkew, VersionMismatch
from memagg.memento import (
    Memento,
    OriginalUri,
    TimeMap,
    parse_http_datetime,
    format_http_datetime,
)

SNAPSHOT_FORMAT = "memagg-cache"
SNAPSHOT_VERSION = 1


class AgeState(Enum):
    FRESH = "Fresh"
    STALE = "Stale"
    EXPIRED = "Expired"


class OutcomeKind(Enum):
    HIT = "Hit"
    STALE_MISS = "StaleMiss"
    COLD_MISS = "ColdMiss"


@dataclass(frozen=True, slots=True)
class CachePolicy:
    """How long records stay servable and how long they linger as stale."""

    fresh_duration: timedelta = timedelta(days=30)
    stale_duration: timedelta = timedelta(days=30)

    def __post_init__(self) -> None:
        if self.fresh_duration <= timedelta(0) or self.stale_duration <= timedelta(0):
            raise ValueError("cache durations must be strictly positive")


@dataclass(frozen=True, slots=True)
class CacheRecord:
    """A complete aggregated result set keyed by normalized URI-R."""

    key: str
    timemap: TimeMap
    inserted_at: datetime

    def __post_init__(self) -> None:
        if self.timemap.original.normalized != self.key:
            raise ValueError(
                f"record key {self.key!r} does not match timemap original "
                f"{self.timemap.original.normalized!r}"
            )


@dataclass(frozen=True, slots=True)
class CacheOutcome:
    """Result of a lookup. `record` is present unless the miss was cold.

    A StaleMiss still carries its record for diagnostics, but the record
    MUST NOT be served as the response.
    """

    kind: OutcomeKind
    record: Optional[CacheRecord] = None


def classify_age(
    inserted_at: datetime, now: datetime, policy: CachePolicy
) -> AgeState:
    """Classify a record's lifecycle state at time `now`."""
    if now < inserted_at:
        raise ClockSkew(f"now {now.isoformat()} precedes insertion {inserted_at.isoformat()}")
    age = now - inserted_at
    if age < policy.fresh_duration:
        return AgeState.FRESH
    if age < policy.fresh_duration + policy.stale_duration:
        return AgeState.STALE
    return AgeState.EXPIRED


class MementoCache:
    """In-memory cache with optional write-through JSONL persistence.

    Concurrent lookups and inserts are safe; a lookup observes either the
    old or the new record, never a torn state. Expired records are removed
    lazily on touch; `purge_expired` sweeps them out eagerly.
    """

    def __init__(
        self,
        policy: CachePolicy | None = None,
        path: str | Path | None = None,
    ) -> None:
        self.policy = policy or CachePolicy()
        self._records: dict[str, CacheRecord] = {}
        self._lock = threading.RLock()
        self._path = Path(path) if path is not None else None
        self._fh = None
        if self._path is not None:
            self._open_snapshot()

    # -- lifecycle ---------------------------------------------------------

    def lookup(self, key: str, now: datetime) -> CacheOutcome:
        """Resolve a key to Hit / StaleMiss / ColdMiss at time `now`."""
        with self._lock:
            record = self._records.get(key)
            if record is None:
                return CacheOutcome(OutcomeKind.COLD_MISS)
            state = classify_age(record.inserted_at, now, self.policy)
            if state is AgeState.FRESH:
                return CacheOutcome(OutcomeKind.HIT, record)
            if state is AgeState.STALE:
                return CacheOutcome(OutcomeKind.STALE_MISS, record)
            del self._records[key]
            return CacheOutcome(OutcomeKind.COLD_MISS)

    def insert(self, record: CacheRecord) -> None:
        """Store a record, replacing any prior record for the key."""
        with self._lock:
            self._records[record.key] = record
            if self._fh is not None:
                self._fh.write(_record_line(record))
                self._fh.flush()

    def purge_expired(self, now: datetime) -> int:
        """Drop every record whose stale window has ended; return the count."""
        with self._lock:
            expired = [
                key
                for key, record in self._records.items()
                if classify_age(record.inserted_at, now, self.policy) is AgeState.EXPIRED
            ]
            for key in expired:
                del self._records[key]
            return len(expired)

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None

    # -- persistence -------------------------------------------------------

    def compact(self, now: datetime) -> int:
        """Purge expired records and rewrite the snapshot file, if any."""
        with self._lock:
            removed = self.purge_expired(now)
            if self._path is not None:
                if self._fh is not None:
                    self._fh.close()
                tmp = self._path.with_suffix(self._path.suffix + ".tmp")
                with open(tmp, "w", encoding="utf-8") as fh:
                    fh.write(_header_line())
                    for record in self._records.values():
                        fh.write(_record_line(record))
                tmp.replace(self._path)
                self._fh = open(self._path, "a", encoding="utf-8")
            return removed

    def _open_snapshot(self) -> None:
        assert self._path is not None
        if self._path.exists():
            with open(self._path, encoding="utf-8") as fh:
                header = fh.readline()
                _check_header(header, self._path)
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    record = _record_from_line(line)
                    # Later lines win: the file is append-ordered.
                    self._records[record.key] = record
        else:
            self._path.parent.mkdir(parents=True, exist_ok=True)
            with open(self._path, "w", encoding="utf-8") as fh:
                fh.write(_header_line())
        self._fh = open(self._path, "a", encoding="utf-8")


def _header_line() -> str:
    return json.dumps({"format": SNAPSHOT_FORMAT, "version": SNAPSHOT_VERSION}) + "\n"


def _check_header(header: str, path: Path) -> None:
    try:
        meta = json.loads(header)
    except json.JSONDecodeError:
        raise VersionMismatch(f"{path}: missing cache snapshot header") from None
    if meta.get("format") != SNAPSHOT_FORMAT:
        raise VersionMismatch(f"{path}: not a cache snapshot file")
    if meta.get("version") != SNAPSHOT_VERSION:
        raise VersionMismatch(
            f"{path}: snapshot version {meta.get('version')!r}, expected {SNAPSHOT_VERSION}"
        )


def _record_line(record: CacheRecord) -> str:
    tm = record.timemap
    payload = {
        "key": record.key,
        "inserted_at": record.inserted_at.isoformat(),
        "raw": tm.original.raw,
        "assembled_at": tm.assembled_at.isoformat(),
        "mementos": [
            [m.archive_id, m.uri_m, format_http_datetime(m.datetime)]
            for m in tm.mementos
        ],
    }
    return json.dumps(payload, separators=(",", ":")) + "\n"


def _record_from_line(line: str) -> CacheRecord:
    payload = json.loads(line)
    original = OriginalUri(raw=payload["raw"], normalized=payload["key"])
    mementos = [
        Memento(uri_m=uri_m, datetime=parse_http_datetime(dt), archive_id=archive_id)
        for archive_id, uri_m, dt in payload["mementos"]
    ]
    timemap = TimeMap.assemble(
        original, mementos, datetime.fromisoformat(payload["assembled_at"])
    )
    return CacheRecord(
        key=payload["key"],
        timemap=timemap,
        inserted_at=datetime.fromisoformat(payload["inserted_at"]),
    )
