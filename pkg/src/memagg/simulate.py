"""End-to-end experiment runner: workload -> engine -> event log.

Requests are executed in a single logical order with inline backfills and
a virtual clock driven by workload arrival ticks, so a given (workload,
archive specs, engine config, seed) tuple reproduces identical event logs
run-to-run.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from memagg.cache import MementoCache
from memagg.engine import AggregationEngine, EngineConfig
from memagg.events import AggregationEvent, EventCollector
from memagg.features import FeatureSchema, DEFAULT_SCHEMA
from memagg.memento import ArchiveDescriptor
from memagg.predictor import ArchiveModel, ModelRegistry
from memagg.simarchive import (
    InProcessTransport,
    SimArchive,
    SimArchiveHttpServer,
    SimArchiveSpec,
    SimClock,
    WorkloadSpec,
    generate_workload,
)
from memagg.transport import HttpTransport


@dataclass(slots=True)
class SimulationResult:
    events: list[AggregationEvent]
    stats: dict[str, int]
    archives: dict[str, SimArchive]
    clock: SimClock


def run_simulation(
    archives: Sequence[ArchiveDescriptor],
    sim_specs: Sequence[SimArchiveSpec],
    workload: WorkloadSpec,
    engine_config: Optional[EngineConfig] = None,
    models: Optional[dict[str, ArchiveModel]] = None,
    schema: FeatureSchema = DEFAULT_SCHEMA,
    transport_kind: str = "inprocess",
    event_sink=None,
    cache: Optional[MementoCache] = None,
) -> SimulationResult:
    """Run one workload against simulated archives and collect events."""
    if transport_kind not in ("inprocess", "http"):
        raise ValueError(f"unknown transport kind {transport_kind!r}")
    sim_ids = {s.archive_id for s in sim_specs}
    missing = [a.archive_id for a in archives if a.archive_id not in sim_ids]
    if missing:
        raise ValueError(f"no simulator configured for archives {missing}")

    clock = SimClock(tick_seconds=workload.tick_seconds)
    sims = [SimArchive(s) for s in sim_specs]
    registry = ModelRegistry.degrade_missing(list(archives), models or {})
    collector = event_sink if event_sink is not None else EventCollector()
    cache = cache or MementoCache(policy=(engine_config or EngineConfig()).cache_policy)

    server = None
    transport = None
    try:
        if transport_kind == "http":
            server = SimArchiveHttpServer(sims, clock)
            server.start()
            rewired = [
                ArchiveDescriptor(
                    archive_id=a.archive_id,
                    name=a.name,
                    timegate_endpoint=server.endpoint_for(a.archive_id),
                    has_model=a.has_model,
                    always_query=a.always_query,
                )
                for a in archives
            ]
            registry = ModelRegistry.degrade_missing(rewired, models or {})
            transport = HttpTransport()
        else:
            transport = InProcessTransport(sims, clock)

        engine = AggregationEngine(
            registry=registry,
            cache=cache,
            transport=transport,
            event_sink=collector,
            config=engine_config,
            schema=schema,
            clock=clock.now,
            backfill_mode="inline",
        )
        for item in generate_workload(workload):
            clock.set_tick(item.arrival_tick)
            engine.handle_request(
                item.service, item.uri_r, item.accept_datetime, now=clock.now()
            )
        stats = engine.snapshot_stats()
        engine.shutdown()
    finally:
        if server is not None:
            server.stop()
        if transport_kind == "http" and transport is not None:
            transport.close()

    events = collector.events if isinstance(collector, EventCollector) else []
    return SimulationResult(
        events=events,
        stats=stats,
        archives={s.spec.archive_id: s for s in sims},
        clock=clock,
    )
