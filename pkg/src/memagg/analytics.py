"""Metrics over aggregation event logs.

Three report families, all derived from the line-delimited event file:

  * cache ratios   - per-service hit / miss / stale fractions
  * recall + FP    - per-archive confusion counts from predicted sets vs
                     backfilled ground truth, with a transient-error-
                     segregated false-positive variant
  * churn          - result-set change accounting across repeated
                     backfilled requests for the same URI

Computations are streaming accumulators whose merge is associative and
commutative, so logs can be sharded and reduced; a naive full-pass
recomputation must agree exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from memagg.errors import EmptyLog, UnknownArchiveInEvent
from memagg.events import AggregationEvent, SERVICES

# Observed recall of the previously deployed prediction models, echoed in
# recall reports as a fixed comparison constant.
BASELINE_RECALL = 0.847

_TRANSIENT = ("Timeout", "UpstreamError")


# ---------------------------------------------------------------------------
# Cache ratios
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class ServiceCacheRatios:
    service: str
    hits: int
    misses: int
    stales: int

    @property
    def total(self) -> int:
        return self.hits + self.misses + self.stales

    @property
    def hit_ratio(self) -> float:
        return self.hits / self.total

    @property
    def miss_ratio(self) -> float:
        return self.misses / self.total

    @property
    def stale_ratio(self) -> float:
        return self.stales / self.total


@dataclass(frozen=True, slots=True)
class CacheRatioReport:
    per_service: tuple[ServiceCacheRatios, ...]
    total_requests: int
    overall_hit_ratio: float


class CacheRatioAccumulator:
    """Streaming per-service Hit/ColdMiss/StaleMiss counter."""

    def __init__(self) -> None:
        self.counts: dict[str, list[int]] = {}  # service -> [hits, misses, stales]

    def update(self, event: AggregationEvent) -> None:
        row = self.counts.setdefault(event.service, [0, 0, 0])
        if event.cache_outcome == "Hit":
            row[0] += 1
        elif event.cache_outcome == "ColdMiss":
            row[1] += 1
        else:
            row[2] += 1

    def merge(self, other: "CacheRatioAccumulator") -> "CacheRatioAccumulator":
        merged = CacheRatioAccumulator()
        for acc in (self, other):
            for service, row in acc.counts.items():
                target = merged.counts.setdefault(service, [0, 0, 0])
                for i in range(3):
                    target[i] += row[i]
        return merged

    def finalize(self) -> CacheRatioReport:
        total = sum(sum(row) for row in self.counts.values())
        if total == 0:
            raise EmptyLog("no events to compute cache ratios from")
        ordered = [s for s in SERVICES if s in self.counts]
        per_service = tuple(
            ServiceCacheRatios(
                service=s,
                hits=self.counts[s][0],
                misses=self.counts[s][1],
                stales=self.counts[s][2],
            )
            for s in ordered
        )
        overall_hits = sum(row[0] for row in self.counts.values())
        return CacheRatioReport(
            per_service=per_service,
            total_requests=total,
            overall_hit_ratio=overall_hits / total,
        )


def compute_cache_ratios(events: Iterable[AggregationEvent]) -> CacheRatioReport:
    acc = CacheRatioAccumulator()
    for event in events:
        acc.update(event)
    return acc.finalize()


# ---------------------------------------------------------------------------
# Recall and false positives
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class ArchiveEvalMetrics:
    archive_id: str
    tp: int
    fn: int
    fp: int
    tn: int

    @property
    def recall(self) -> Optional[float]:
        """TP/(TP+FN); undefined (None) when the archive never held anything."""
        if self.tp + self.fn == 0:
            return None
        return self.tp / (self.tp + self.fn)


@dataclass(frozen=True, slots=True)
class RecallReport:
    metrics: tuple[ArchiveEvalMetrics, ...]
    macro_recall: Optional[float]
    baseline_recall: float = BASELINE_RECALL
    excluded_transient: bool = False


def _registry_sets(registry) -> tuple[tuple[str, ...], set[str]]:
    """Accept a ModelRegistry or a plain descriptor sequence."""
    if hasattr(registry, "modeled_ids"):
        return tuple(registry.modeled_ids), set(registry.archive_ids)
    modeled = tuple(d.archive_id for d in registry if d.has_model)
    known = {d.archive_id for d in registry}
    return modeled, known


class RecallAccumulator:
    """Streaming per-archive confusion counters.

    Only events with a completed backfill and a non-Hit cache outcome are
    eligible: those are the requests where a prediction actually happened
    and the ground-truth holder set is complete. Always-query archives are
    excluded from the accounting entirely.

    With exclude_transient=True, an (event, archive) pair is dropped when
    that archive's recorded outcome in the event was a timeout or upstream
    error, segregating infrastructure trouble from genuine mispredictions.
    """

    def __init__(self, modeled_ids: Sequence[str], known_ids: set[str],
                 exclude_transient: bool = False) -> None:
        self.modeled_ids = tuple(modeled_ids)
        self.known_ids = set(known_ids)
        self.exclude_transient = exclude_transient
        self.counts: dict[str, list[int]] = {
            a: [0, 0, 0, 0] for a in self.modeled_ids  # [tp, fn, fp, tn]
        }
        self.events_seen = 0

    def update(self, event: AggregationEvent) -> None:
        self.events_seen += 1
        unknown = (event.predicted_set | event.final_holders) - self.known_ids
        if unknown:
            raise UnknownArchiveInEvent(
                f"event {event.event_id} references unregistered archives {sorted(unknown)}"
            )
        if not event.completed_backfill or event.cache_outcome == "Hit":
            return
        transient: set[str] = set()
        if self.exclude_transient:
            transient = {
                r.archive_id
                for r in event.per_archive_outcomes
                if r.outcome in _TRANSIENT
            }
        for archive_id in self.modeled_ids:
            if archive_id in transient:
                continue
            predicted = archive_id in event.predicted_set
            held = archive_id in event.final_holders
            row = self.counts[archive_id]
            if predicted and held:
                row[0] += 1
            elif not predicted and held:
                row[1] += 1
            elif predicted and not held:
                row[2] += 1
            else:
                row[3] += 1

    def merge(self, other: "RecallAccumulator") -> "RecallAccumulator":
        if (
            self.modeled_ids != other.modeled_ids
            or self.exclude_transient != other.exclude_transient
        ):
            raise ValueError("cannot merge accumulators with different settings")
        merged = RecallAccumulator(
            self.modeled_ids, self.known_ids, self.exclude_transient
        )
        merged.events_seen = self.events_seen + other.events_seen
        for archive_id in self.modeled_ids:
            merged.counts[archive_id] = [
                a + b
                for a, b in zip(self.counts[archive_id], other.counts[archive_id])
            ]
        return merged

    def finalize(self) -> RecallReport:
        if self.events_seen == 0:
            raise EmptyLog("no events to compute recall from")
        metrics = tuple(
            ArchiveEvalMetrics(archive_id=a, tp=row[0], fn=row[1], fp=row[2], tn=row[3])
            for a, row in sorted(self.counts.items())
        )
        defined = [m.recall for m in metrics if m.recall is not None]
        macro = sum(defined) / len(defined) if defined else None
        return RecallReport(
            metrics=metrics,
            macro_recall=macro,
            excluded_transient=self.exclude_transient,
        )


def compute_recall_fp(
    events: Iterable[AggregationEvent],
    registry,
    exclude_transient_errors: bool = False,
) -> RecallReport:
    modeled, known = _registry_sets(registry)
    acc = RecallAccumulator(modeled, known, exclude_transient_errors)
    for event in events:
        acc.update(event)
    return acc.finalize()


# ---------------------------------------------------------------------------
# Churn
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class ChurnReport:
    """Result-set change accounting over consecutive complete lookups.

    A comparable instance is a consecutive pair of completed-backfill
    events for the same URI. A pair with both additions and removals
    counts in both case categories.
    """

    comparable_instances: int
    unchanged: int
    added_cases: int
    removed_cases: int
    per_archive_added: dict[str, int] = field(default_factory=dict)
    per_archive_removed: dict[str, int] = field(default_factory=dict)

    @property
    def unchanged_fraction(self) -> float:
        return self.unchanged / self.comparable_instances if self.comparable_instances else 0.0

    @property
    def added_fraction(self) -> float:
        return self.added_cases / self.comparable_instances if self.comparable_instances else 0.0

    @property
    def removed_fraction(self) -> float:
        return self.removed_cases / self.comparable_instances if self.comparable_instances else 0.0


def compute_churn(events: Iterable[AggregationEvent]) -> ChurnReport:
    """Classify holder-set transitions for repeatedly backfilled URIs."""
    complete = [e for e in events if e.completed_backfill]
    complete.sort(key=lambda e: (e.timestamp, e.event_id))
    last_seen: dict[str, set[str]] = {}
    comparable = unchanged = added_cases = removed_cases = 0
    per_added: dict[str, int] = {}
    per_removed: dict[str, int] = {}
    for event in complete:
        previous = last_seen.get(event.uri_r)
        current = set(event.final_holders)
        if previous is not None:
            comparable += 1
            added = current - previous
            removed = previous - current
            if not added and not removed:
                unchanged += 1
            if added:
                added_cases += 1
                for a in added:
                    per_added[a] = per_added.get(a, 0) + 1
            if removed:
                removed_cases += 1
                for a in removed:
                    per_removed[a] = per_removed.get(a, 0) + 1
        last_seen[event.uri_r] = current
    return ChurnReport(
        comparable_instances=comparable,
        unchanged=unchanged,
        added_cases=added_cases,
        removed_cases=removed_cases,
        per_archive_added=dict(sorted(per_added.items())),
        per_archive_removed=dict(sorted(per_removed.items())),
    )


# ---------------------------------------------------------------------------
# False-positive comparison (base vs transient-segregated)
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class FpComparisonReport:
    """FP counts with and without transient-error (event, archive) pairs."""

    base: RecallReport
    segregated: RecallReport


def compute_fp_comparison(events: Sequence[AggregationEvent], registry) -> FpComparisonReport:
    return FpComparisonReport(
        base=compute_recall_fp(events, registry),
        segregated=compute_recall_fp(events, registry, exclude_transient_errors=True),
    )


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------

def _fmt_recall(value: Optional[float]) -> str:
    return "NA" if value is None else f"{value:.3f}"


def emit_report(report, format: str = "csv") -> bytes:
    """Render a report deterministically; ratios get 3 decimals, counts are exact."""
    if format not in ("csv", "text"):
        raise ValueError(f"unknown report format {format!r}")
    if isinstance(report, CacheRatioReport):
        out = _emit_cache(report, format)
    elif isinstance(report, RecallReport):
        out = _emit_recall(report, format)
    elif isinstance(report, ChurnReport):
        out = _emit_churn(report, format)
    elif isinstance(report, FpComparisonReport):
        out = _emit_fp(report, format)
    else:
        raise TypeError(f"cannot emit report of type {type(report).__name__}")
    return out.encode("utf-8")


def _emit_cache(report: CacheRatioReport, format: str) -> str:
    if format == "csv":
        lines = ["service,hit,miss,stale,total"]
        for row in report.per_service:
            lines.append(
                f"{row.service},{row.hit_ratio:.3f},{row.miss_ratio:.3f},"
                f"{row.stale_ratio:.3f},{row.total}"
            )
        lines.append(
            f"overall,{report.overall_hit_ratio:.3f},,,{report.total_requests}"
        )
        return "\n".join(lines) + "\n"
    lines = ["cache ratios"]
    for row in report.per_service:
        lines.append(
            f"  {row.service:<12} hit={row.hit_ratio:.3f} miss={row.miss_ratio:.3f} "
            f"stale={row.stale_ratio:.3f} total={row.total}"
        )
    lines.append(
        f"  overall hit ratio {report.overall_hit_ratio:.3f} "
        f"over {report.total_requests} requests"
    )
    return "\n".join(lines) + "\n"


def _emit_recall(report: RecallReport, format: str) -> str:
    if format == "csv":
        lines = ["archive,tp,fn,fp,tn,recall"]
        for m in report.metrics:
            lines.append(
                f"{m.archive_id},{m.tp},{m.fn},{m.fp},{m.tn},{_fmt_recall(m.recall)}"
            )
        lines.append(f"macro_average,,,,,{_fmt_recall(report.macro_recall)}")
        lines.append(f"reference_baseline,,,,,{report.baseline_recall:.3f}")
        return "\n".join(lines) + "\n"
    title = "recall / false positives"
    if report.excluded_transient:
        title += " (transient errors excluded)"
    lines = [title]
    for m in report.metrics:
        lines.append(
            f"  {m.archive_id:<12} tp={m.tp} fn={m.fn} fp={m.fp} tn={m.tn} "
            f"recall={_fmt_recall(m.recall)}"
        )
    lines.append(f"  macro-average recall {_fmt_recall(report.macro_recall)}")
    lines.append(f"  reference baseline   {report.baseline_recall:.3f}")
    return "\n".join(lines) + "\n"


def _emit_churn(report: ChurnReport, format: str) -> str:
    if format == "csv":
        lines = ["metric,count,fraction"]
        lines.append(f"comparable_instances,{report.comparable_instances},")
        lines.append(f"unchanged,{report.unchanged},{report.unchanged_fraction:.3f}")
        lines.append(f"added_cases,{report.added_cases},{report.added_fraction:.3f}")
        lines.append(
            f"removed_cases,{report.removed_cases},{report.removed_fraction:.3f}"
        )
        for archive_id, count in report.per_archive_added.items():
            lines.append(f"added:{archive_id},{count},")
        for archive_id, count in report.per_archive_removed.items():
            lines.append(f"removed:{archive_id},{count},")
        return "\n".join(lines) + "\n"
    lines = [
        "result-set churn",
        f"  comparable instances {report.comparable_instances}",
        f"  unchanged {report.unchanged} ({report.unchanged_fraction:.3f})",
        f"  added     {report.added_cases} ({report.added_fraction:.3f})",
        f"  removed   {report.removed_cases} ({report.removed_fraction:.3f})",
    ]
    for archive_id, count in report.per_archive_added.items():
        lines.append(f"    added   {archive_id:<12} {count}")
    for archive_id, count in report.per_archive_removed.items():
        lines.append(f"    removed {archive_id:<12} {count}")
    return "\n".join(lines) + "\n"


def _emit_fp(report: FpComparisonReport, format: str) -> str:
    seg = {m.archive_id: m for m in report.segregated.metrics}
    if format == "csv":
        lines = ["archive,fp,fp_excluding_transient"]
        for m in report.base.metrics:
            lines.append(f"{m.archive_id},{m.fp},{seg[m.archive_id].fp}")
        return "\n".join(lines) + "\n"
    lines = ["false positives (all vs transient-errors excluded)"]
    for m in report.base.metrics:
        lines.append(f"  {m.archive_id:<12} {m.fp} vs {seg[m.archive_id].fp}")
    return "\n".join(lines) + "\n"
