"""Request orchestration: cache consult, prediction, fan-out, backfill.

The flow per request:

  1. Normalize the URI and consult the cache. A fresh record answers the
     request with zero upstream queries.
  2. On any miss, extract features and ask the model registry which
     archives to try. Predicted archives plus always-query archives are
     queried concurrently under one first-phase deadline, and the response
     is assembled from whatever they returned: accurate, maybe incomplete.
  3. A backfill then queries every remaining archive (plus retries of
     first-phase transient failures) sequentially in batch mode, merges
     the complete result set, populates the cache, and completes the
     event record. The backfill never delays the response.

Each handled request emits exactly one AggregationEvent to the sink; the
event stream is append-only.
"""

from __future__ import annotations

import itertools
import logging
import queue
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Callable, Optional, Protocol

from memagg.cache import CachePolicy, CacheRecord, MementoCache, OutcomeKind
from memagg.events import AggregationEvent, ArchiveQueryResult
from memagg.features import FeatureSchema, DEFAULT_SCHEMA, extract_features
from memagg.memento import ArchiveDescriptor, Memento, OriginalUri, TimeMap, normalize_uri
from memagg.predictor import ModelRegistry, predict_set
from memagg.transport import TimegateReply

logger = logging.getLogger(__name__)

_TRANSIENT_OUTCOMES = ("Timeout", "UpstreamError")


class Transport(Protocol):
    blocking: bool

    def timegate(
        self,
        descriptor: ArchiveDescriptor,
        uri_r: str,
        accept_datetime: datetime,
        timeout: float,
    ) -> TimegateReply: ...


@dataclass(frozen=True, slots=True)
class EngineConfig:
    """Timeouts and politeness knobs for the two query phases."""

    first_phase_timeout: float = 3.0
    backfill_timeout: float = 30.0
    backfill_batch_delay: float = 0.0
    cache_policy: CachePolicy = field(default_factory=CachePolicy)

    def __post_init__(self) -> None:
        if self.first_phase_timeout <= 0 or self.backfill_timeout <= 0:
            raise ValueError("timeouts must be strictly positive")
        if self.backfill_batch_delay < 0:
            raise ValueError("backfill_batch_delay must be non-negative")


def query_archive(
    transport: Transport,
    descriptor: ArchiveDescriptor,
    uri_r: str,
    accept_datetime: datetime,
    timeout: float,
    phase: str = "first",
) -> ArchiveQueryResult:
    """Issue one timegate query and classify the result. Never raises."""
    try:
        reply = transport.timegate(descriptor, uri_r, accept_datetime, timeout)
    except Exception:  # a transport bug must not kill the request
        logger.exception("transport failed querying %s", descriptor.archive_id)
        reply = TimegateReply("error", (), timeout, None)
    if reply.kind == "timeout" or reply.latency > timeout:
        return ArchiveQueryResult(
            archive_id=descriptor.archive_id,
            outcome="Timeout",
            latency=timeout,
            phase=phase,
        )
    if reply.kind == "error":
        return ArchiveQueryResult(
            archive_id=descriptor.archive_id,
            outcome="UpstreamError",
            latency=reply.latency,
            phase=phase,
            status=reply.status,
        )
    if reply.kind == "holds":
        return ArchiveQueryResult(
            archive_id=descriptor.archive_id,
            outcome="Holds",
            latency=reply.latency,
            phase=phase,
            status=reply.status,
            mementos=reply.mementos,
        )
    return ArchiveQueryResult(
        archive_id=descriptor.archive_id,
        outcome="Empty",
        latency=reply.latency,
        phase=phase,
        status=reply.status,
    )


@dataclass(slots=True)
class _BackfillJob:
    event: AggregationEvent
    original: OriginalUri
    accept_datetime: datetime
    now: datetime
    phase_results: list[ArchiveQueryResult]


class AggregationEngine:
    """Binds cache, registry, transport, and event sink into the full flow.

    backfill_mode:
      inline   - run the backfill synchronously after the response is
                 assembled (deterministic; used by simulations)
      deferred - queue jobs until drain_backfills() is called (tests)
      thread   - background worker drains the queue (service mode)
    """

    def __init__(
        self,
        registry: ModelRegistry,
        cache: MementoCache,
        transport: Transport,
        event_sink,
        config: EngineConfig | None = None,
        schema: FeatureSchema = DEFAULT_SCHEMA,
        clock: Callable[[], datetime] | None = None,
        backfill_mode: str = "inline",
    ) -> None:
        if backfill_mode not in ("inline", "deferred", "thread"):
            raise ValueError(f"unknown backfill_mode {backfill_mode!r}")
        self.registry = registry
        self.cache = cache
        self.transport = transport
        self.event_sink = event_sink
        self.config = config or EngineConfig()
        self.schema = schema
        self.clock = clock or (lambda: datetime.now(timezone.utc))
        self.backfill_mode = backfill_mode

        self._seq = itertools.count(1)
        self._registry_lock = threading.Lock()
        self._inflight: set[str] = set()
        self._inflight_lock = threading.Lock()
        self._stats_lock = threading.Lock()
        self.stats: dict[str, int] = {
            "requests": 0,
            "cache_hits": 0,
            "stale_misses": 0,
            "cold_misses": 0,
            "upstream_queries": 0,
            "backfills_completed": 0,
            "events_emitted": 0,
        }
        for service in ("TimeTravel", "Extension", "Api", "Redirect"):
            self.stats[f"requests_{service}"] = 0

        self._executor: Optional[ThreadPoolExecutor] = None
        self._queue: "queue.Queue[Optional[_BackfillJob]]" = queue.Queue()
        self._worker: Optional[threading.Thread] = None
        if backfill_mode == "thread":
            self._worker = threading.Thread(target=self._worker_loop, daemon=True)
            self._worker.start()

    # -- public ------------------------------------------------------------

    def handle_request(
        self,
        service: str,
        uri_r: str,
        accept_datetime: Optional[datetime] = None,
        now: Optional[datetime] = None,
    ) -> tuple[TimeMap, AggregationEvent]:
        """Serve one request; returns the response TimeMap and its event.

        Raises MalformedUri for invalid input before any event is emitted.
        """
        now = now or self.clock()
        accept_datetime = accept_datetime or now
        original = normalize_uri(uri_r)
        key = original.normalized
        event_id = f"evt-{next(self._seq):08d}"

        outcome = self.cache.lookup(key, now)
        self._bump("requests")
        self._bump(f"requests_{service}")

        if outcome.kind is OutcomeKind.HIT:
            self._bump("cache_hits")
            tm = outcome.record.timemap
            event = AggregationEvent(
                event_id=event_id,
                service=service,
                uri_r=key,
                requested_datetime=accept_datetime,
                cache_outcome="Hit",
                final_holders=tm.holder_ids(),
                timestamp=now,
            )
            self._emit(event)
            return tm, event

        cache_outcome = (
            "StaleMiss" if outcome.kind is OutcomeKind.STALE_MISS else "ColdMiss"
        )
        self._bump("stale_misses" if cache_outcome == "StaleMiss" else "cold_misses")

        features = extract_features(original, self.schema)
        with self._registry_lock:
            registry = self.registry
        predicted = predict_set(registry, features)
        phase_one = [
            d
            for d in registry.descriptors
            if d.archive_id in predicted or d.always_query
        ]
        results = self._fan_out(phase_one, key, accept_datetime)
        holders = {r.archive_id for r in results if r.outcome == "Holds"}
        mementos: list[Memento] = []
        for r in results:
            mementos.extend(r.mementos)
        tm = TimeMap.assemble(original, mementos, now)

        event = AggregationEvent(
            event_id=event_id,
            service=service,
            uri_r=key,
            requested_datetime=accept_datetime,
            cache_outcome=cache_outcome,
            predicted_set=predicted,
            first_phase_holders=set(holders),
            final_holders=set(holders),
            per_archive_outcomes=list(results),
            response_latency=max((r.latency for r in results), default=0.0),
            timestamp=now,
        )

        job = _BackfillJob(
            event=event,
            original=original,
            accept_datetime=accept_datetime,
            now=now,
            phase_results=list(results),
        )
        if self._claim_backfill(key):
            if self.backfill_mode == "inline":
                self._run_backfill(job)
            else:
                self._queue.put(job)
        else:
            # A backfill for this key is already in flight; this request
            # keeps its first-phase answer and its event completes as-is.
            self._emit(event)
        return tm, event

    def drain_backfills(self) -> int:
        """Run queued backfills to completion (deferred mode); returns count."""
        drained = 0
        while True:
            try:
                job = self._queue.get_nowait()
            except queue.Empty:
                return drained
            if job is None:
                continue
            self._run_backfill(job)
            drained += 1

    def swap_registry(self, registry: ModelRegistry) -> None:
        """Atomically install a retrained registry; in-flight requests finish on the old one."""
        with self._registry_lock:
            self.registry = registry

    def snapshot_stats(self) -> dict[str, int]:
        with self._stats_lock:
            return dict(self.stats)

    def shutdown(self, drain_deadline: float = 10.0) -> None:
        """Stop the backfill worker, draining in-flight jobs up to the deadline."""
        if self._worker is not None:
            self._queue.put(None)
            self._worker.join(timeout=drain_deadline)
            self._worker = None
        if self._executor is not None:
            self._executor.shutdown(wait=False)
            self._executor = None

    # -- internals ---------------------------------------------------------

    def _claim_backfill(self, key: str) -> bool:
        with self._inflight_lock:
            if key in self._inflight:
                return False
            self._inflight.add(key)
            return True

    def _release_backfill(self, key: str) -> None:
        with self._inflight_lock:
            self._inflight.discard(key)

    def _fan_out(
        self,
        descriptors: list[ArchiveDescriptor],
        uri_r: str,
        accept_datetime: datetime,
    ) -> list[ArchiveQueryResult]:
        """Query the first-phase archives under the shared deadline."""
        timeout = self.config.first_phase_timeout
        if not descriptors:
            return []
        self._bump("upstream_queries", len(descriptors))
        if self.transport.blocking and len(descriptors) > 1:
            if self._executor is None:
                self._executor = ThreadPoolExecutor(
                    max_workers=max(8, len(self.registry.descriptors))
                )
            futures = [
                self._executor.submit(
                    query_archive, self.transport, d, uri_r, accept_datetime, timeout
                )
                for d in descriptors
            ]
            results = [f.result() for f in futures]
        else:
            results = [
                query_archive(self.transport, d, uri_r, accept_datetime, timeout)
                for d in descriptors
            ]
        results.sort(key=lambda r: r.archive_id)
        return results

    def _worker_loop(self) -> None:
        while True:
            job = self._queue.get()
            if job is None:
                return
            try:
                self._run_backfill(job)
            except Exception:
                logger.exception("backfill failed for %s", job.original.normalized)
                self._release_backfill(job.original.normalized)

    def _run_backfill(self, job: _BackfillJob) -> None:
        """Query remaining archives in batch mode, cache the complete set."""
        event = job.event
        key = job.original.normalized
        queried = {r.archive_id for r in job.phase_results}
        failed = {
            r.archive_id for r in job.phase_results if r.outcome in _TRANSIENT_OUTCOMES
        }
        with self._registry_lock:
            registry = self.registry
        targets = [
            d
            for d in registry.descriptors
            if d.archive_id not in queried or d.archive_id in failed
        ]

        backfill_results: list[ArchiveQueryResult] = []
        for i, descriptor in enumerate(targets):
            if (
                i > 0
                and self.config.backfill_batch_delay > 0
                and self.transport.blocking
            ):
                time.sleep(self.config.backfill_batch_delay)
            backfill_results.append(
                query_archive(
                    self.transport,
                    descriptor,
                    key,
                    job.accept_datetime,
                    self.config.backfill_timeout,
                    phase="backfill",
                )
            )
        self._bump("upstream_queries", len(targets))

        backfill_holders = {
            r.archive_id for r in backfill_results if r.outcome == "Holds"
        }
        mementos: list[Memento] = []
        for r in job.phase_results:
            mementos.extend(r.mementos)
        for r in backfill_results:
            mementos.extend(r.mementos)

        completion_now = job.now if self.backfill_mode != "thread" else self.clock()
        complete_tm = TimeMap.assemble(job.original, mementos, completion_now)
        self.cache.insert(
            CacheRecord(key=key, timemap=complete_tm, inserted_at=completion_now)
        )

        event.per_archive_outcomes.extend(backfill_results)
        event.backfill_holders = backfill_holders
        event.final_holders = event.first_phase_holders | backfill_holders
        event.completed_backfill = True
        self._bump("backfills_completed")
        self._release_backfill(key)
        self._emit(event)

    def _emit(self, event: AggregationEvent) -> None:
        self.event_sink.append(event)
        self._bump("events_emitted")

    def _bump(self, name: str, by: int = 1) -> None:
        with self._stats_lock:
            self.stats[name] += by
