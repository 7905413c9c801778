"""Aggregation events: one structured line per handled request.

The line-delimited UTF-8 event file is the sole input to analytics, so
field names and value encodings here are a frozen contract. Sets are
serialized as sorted arrays and datetimes as ISO 8601 UTC strings; a
given event always serializes to identical bytes.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Iterable, Iterator, Optional

from memagg.memento import Memento

SERVICES = ("TimeTravel", "Extension", "Api", "Redirect")
CACHE_OUTCOMES = ("Hit", "StaleMiss", "ColdMiss")
QUERY_OUTCOMES = ("Holds", "Empty", "Timeout", "UpstreamError")
QUERY_PHASES = ("first", "backfill")


@dataclass(frozen=True, slots=True)
class ArchiveQueryResult:
    """Outcome of one upstream timegate query."""

    archive_id: str
    outcome: str
    latency: float
    phase: str = "first"
    status: Optional[int] = None
    mementos: tuple[Memento, ...] = ()

    def __post_init__(self) -> None:
        if self.outcome not in QUERY_OUTCOMES:
            raise ValueError(f"unknown query outcome {self.outcome!r}")
        if self.phase not in QUERY_PHASES:
            raise ValueError(f"unknown query phase {self.phase!r}")
        if self.outcome == "Holds" and not self.mementos:
            raise ValueError("Holds outcome requires a non-empty memento list")

    def to_dict(self) -> dict:
        return {
            "archive_id": self.archive_id,
            "outcome": self.outcome,
            "latency": self.latency,
            "phase": self.phase,
            "status": self.status,
            "memento_count": len(self.mementos),
        }


@dataclass(slots=True)
class AggregationEvent:
    """Everything recorded about one handled request.

    Holder fields are archive-id sets; `final_holders` equals the union of
    first-phase and backfill holders once the backfill has completed. The
    in-memory memento payloads of per_archive_outcomes are not serialized,
    only their counts.
    """

    event_id: str
    service: str
    uri_r: str
    requested_datetime: datetime
    cache_outcome: str
    predicted_set: set[str] = field(default_factory=set)
    first_phase_holders: set[str] = field(default_factory=set)
    backfill_holders: set[str] = field(default_factory=set)
    final_holders: set[str] = field(default_factory=set)
    per_archive_outcomes: list[ArchiveQueryResult] = field(default_factory=list)
    response_latency: float = 0.0
    completed_backfill: bool = False
    timestamp: datetime = field(default_factory=lambda: datetime.now(timezone.utc))

    def __post_init__(self) -> None:
        if self.service not in SERVICES:
            raise ValueError(f"unknown service {self.service!r}")
        if self.cache_outcome not in CACHE_OUTCOMES:
            raise ValueError(f"unknown cache outcome {self.cache_outcome!r}")

    def to_json_line(self) -> str:
        payload = {
            "event_id": self.event_id,
            "service": self.service,
            "uri_r": self.uri_r,
            "requested_datetime": self.requested_datetime.isoformat(),
            "cache_outcome": self.cache_outcome,
            "predicted_set": sorted(self.predicted_set),
            "first_phase_holders": sorted(self.first_phase_holders),
            "backfill_holders": sorted(self.backfill_holders),
            "final_holders": sorted(self.final_holders),
            "per_archive_outcomes": [r.to_dict() for r in self.per_archive_outcomes],
            "response_latency": self.response_latency,
            "completed_backfill": self.completed_backfill,
            "timestamp": self.timestamp.isoformat(),
        }
        return json.dumps(payload, separators=(",", ":")) + "\n"

    @classmethod
    def from_json_line(cls, line: str) -> "AggregationEvent":
        d = json.loads(line)
        outcomes = [
            ArchiveQueryResult(
                archive_id=o["archive_id"],
                outcome=o["outcome"],
                latency=o["latency"],
                phase=o.get("phase", "first"),
                status=o.get("status"),
                # Memento payloads are not on the wire; Holds entries get a
                # placeholder so the non-empty invariant still holds.
                mementos=tuple(
                    _PLACEHOLDER_MEMENTO for _ in range(o.get("memento_count", 0))
                )
                if o["outcome"] == "Holds"
                else (),
            )
            for o in d["per_archive_outcomes"]
        ]
        return cls(
            event_id=d["event_id"],
            service=d["service"],
            uri_r=d["uri_r"],
            requested_datetime=datetime.fromisoformat(d["requested_datetime"]),
            cache_outcome=d["cache_outcome"],
            predicted_set=set(d["predicted_set"]),
            first_phase_holders=set(d["first_phase_holders"]),
            backfill_holders=set(d["backfill_holders"]),
            final_holders=set(d["final_holders"]),
            per_archive_outcomes=outcomes,
            response_latency=d["response_latency"],
            completed_backfill=d["completed_backfill"],
            timestamp=datetime.fromisoformat(d["timestamp"]),
        )


_PLACEHOLDER_MEMENTO = Memento(
    uri_m="urn:memagg:placeholder",
    datetime=datetime(2000, 1, 1, tzinfo=timezone.utc),
    archive_id="placeholder",
)


class EventLogWriter:
    """Append-only event sink; writes are serialized per sink."""

    def __init__(self, target: str | Path | IO[str]) -> None:
        self._lock = threading.Lock()
        if isinstance(target, (str, Path)):
            path = Path(target)
            path.parent.mkdir(parents=True, exist_ok=True)
            self._fh: IO[str] = open(path, "a", encoding="utf-8")
            self._owns_fh = True
        else:
            self._fh = target
            self._owns_fh = False

    def append(self, event: AggregationEvent) -> None:
        line = event.to_json_line()
        with self._lock:
            self._fh.write(line)
            self._fh.flush()

    def close(self) -> None:
        with self._lock:
            if self._owns_fh:
                self._fh.close()


class EventCollector:
    """In-memory event sink for simulations and tests."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.events: list[AggregationEvent] = []

    def append(self, event: AggregationEvent) -> None:
        with self._lock:
            self.events.append(event)


def read_events(path: str | Path) -> Iterator[AggregationEvent]:
    """Stream events from a line-delimited log file."""
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield AggregationEvent.from_json_line(line)


def write_events(path: str | Path, events: Iterable[AggregationEvent]) -> int:
    """Write events to a log file, returning the count written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for event in events:
            fh.write(event.to_json_line())
            n += 1
    return n
