"""Shared test fixtures: generators, archive setups, and naive oracles.

The naive_* functions are independent full-pass recomputations of the
analytics metrics, kept deliberately dumb (dicts and loops) so they can
serve as oracles for the streaming implementations.
"""

from __future__ import annotations

import random
from datetime import datetime, timedelta, timezone

from memagg.events import AggregationEvent, ArchiveQueryResult
from memagg.memento import ArchiveDescriptor, Memento, OriginalUri, TimeMap, normalize_uri
from memagg.simarchive import HoldingsRule, SimArchiveSpec

UTC = timezone.utc
EPOCH = datetime(2018, 1, 1, tzinfo=UTC)

TLDS = ("com", "org", "net", "edu", "gov", "uk", "de", "fr", "jp", "io")


def make_archives(n=5, always_query=False):
    """n archive descriptors; always_query=True makes them model-less probes."""
    return [
        ArchiveDescriptor(
            archive_id=f"arc{i}",
            name=f"Archive {i}",
            timegate_endpoint=f"http://arc{i}.invalid/timegate/{{uri}}",
            has_model=not always_query,
            always_query=always_query,
        )
        for i in range(n)
    ]


def make_archives_with_ia(n=5):
    """n modeled archives plus a model-less always-query entry."""
    return make_archives(n) + [
        ArchiveDescriptor(
            archive_id="ia",
            name="Internet Archive",
            timegate_endpoint="http://ia.invalid/timegate/{uri}",
            has_model=False,
            always_query=True,
        )
    ]


def make_tld_sims(n=5, seed=42, **overrides):
    """n simulated archives partitioning the TLD vocabulary two apiece."""
    return [
        SimArchiveSpec(
            archive_id=f"arc{i}",
            holdings_rule=HoldingsRule(kind="tld", tlds=(TLDS[2 * i], TLDS[2 * i + 1])),
            seed=seed + i,
            **overrides,
        )
        for i in range(n)
    ]


def random_timemap(rng: random.Random) -> TimeMap:
    """A random TimeMap whose original is already in canonical form."""
    host = f"site{rng.randrange(1000)}.example.{rng.choice(TLDS)}"
    path = "/" + "/".join(f"p{rng.randrange(50)}" for _ in range(rng.randrange(3)))
    original = normalize_uri(f"http://{host}{path.rstrip('/') or '/'}")
    mementos = []
    for _ in range(rng.randrange(0, 6)):
        archive_id = f"arc{rng.randrange(5)}"
        dt = EPOCH - timedelta(
            days=rng.randrange(1, 2000), seconds=rng.randrange(86400)
        )
        mementos.append(
            Memento(
                uri_m=f"https://web.{archive_id}.example/{rng.randrange(10**6)}/{original.normalized}",
                datetime=dt,
                archive_id=archive_id,
            )
        )
    assembled = EPOCH - timedelta(days=rng.randrange(0, 30))
    return TimeMap.assemble(original, mementos, assembled)


def random_uri(rng: random.Random) -> OriginalUri:
    host = f"h{rng.randrange(10**5)}.example.{rng.choice(TLDS)}"
    depth = rng.randrange(0, 4)
    path = "".join(f"/s{rng.randrange(100)}" for _ in range(depth)) or "/"
    query = f"?a={rng.randrange(100)}&b={rng.randrange(100)}" if rng.random() < 0.4 else ""
    return normalize_uri(f"http://{host}{path}{query}")


# ---------------------------------------------------------------------------
# Synthetic event logs
# ---------------------------------------------------------------------------

def synthetic_events(
    count: int,
    seed: int = 0,
    archive_ids=("arc0", "arc1", "arc2", "arc3", "arc4"),
    always_query_ids=("ia",),
    uri_pool: int = 2000,
) -> list[AggregationEvent]:
    """Random but invariant-respecting events for analytics oracle checks."""
    rng = random.Random(seed)
    services = ("TimeTravel", "Extension", "Api", "Redirect")
    all_ids = tuple(archive_ids) + tuple(always_query_ids)
    events = []
    for i in range(count):
        uri = f"http://pool{rng.randrange(uri_pool)}.example.com/x"
        service = services[rng.randrange(4)]
        roll = rng.random()
        ts = EPOCH + timedelta(seconds=i)
        if roll < 0.4:
            events.append(
                AggregationEvent(
                    event_id=f"evt-{i:08d}",
                    service=service,
                    uri_r=uri,
                    requested_datetime=ts,
                    cache_outcome="Hit",
                    final_holders={a for a in all_ids if rng.random() < 0.3},
                    timestamp=ts,
                )
            )
            continue
        cache_outcome = "StaleMiss" if roll < 0.55 else "ColdMiss"
        predicted = {a for a in archive_ids if rng.random() < 0.4}
        first = {a for a in all_ids if rng.random() < 0.25 and (a in predicted or a in always_query_ids)}
        completed = rng.random() < 0.9
        backfill = {a for a in all_ids if rng.random() < 0.2} if completed else set()
        outcomes = []
        for a in sorted(predicted | set(always_query_ids)):
            held = a in first
            kind = rng.random()
            if held:
                outcome = "Holds"
            elif kind < 0.1:
                outcome = "Timeout"
            elif kind < 0.2:
                outcome = "UpstreamError"
            else:
                outcome = "Empty"
            outcomes.append(
                ArchiveQueryResult(
                    archive_id=a,
                    outcome=outcome,
                    latency=rng.random(),
                    phase="first",
                    status=503 if outcome == "UpstreamError" else None,
                    mementos=(_memento_for(a, uri),) if outcome == "Holds" else (),
                )
            )
        events.append(
            AggregationEvent(
                event_id=f"evt-{i:08d}",
                service=service,
                uri_r=uri,
                requested_datetime=ts,
                cache_outcome=cache_outcome,
                predicted_set=predicted,
                first_phase_holders=first,
                backfill_holders=backfill,
                final_holders=first | backfill if completed else set(first),
                per_archive_outcomes=outcomes,
                response_latency=rng.random() * 3,
                completed_backfill=completed,
                timestamp=ts,
            )
        )
    return events


def _memento_for(archive_id: str, uri: str) -> Memento:
    return Memento(
        uri_m=f"https://web.{archive_id}.example/20150101000000/{uri}",
        datetime=datetime(2015, 1, 1, tzinfo=UTC),
        archive_id=archive_id,
    )


# ---------------------------------------------------------------------------
# Naive analytics oracles (independent full-pass recomputation)
# ---------------------------------------------------------------------------

def naive_cache_ratios(events):
    """Per-service (hits, misses, stales, hit_ratio, miss_ratio, stale_ratio)."""
    counts = {}
    for e in events:
        h, m, s = counts.get(e.service, (0, 0, 0))
        if e.cache_outcome == "Hit":
            h += 1
        elif e.cache_outcome == "ColdMiss":
            m += 1
        else:
            s += 1
        counts[e.service] = (h, m, s)
    out = {}
    for service, (h, m, s) in counts.items():
        total = h + m + s
        out[service] = (h, m, s, h / total, m / total, s / total)
    grand_total = sum(h + m + s for h, m, s in counts.values())
    grand_hits = sum(h for h, _, _ in counts.values())
    overall = grand_hits / grand_total if grand_total else None
    return out, grand_total, overall


def naive_recall_fp(events, modeled_ids, exclude_transient=False):
    """Per-archive {tp, fn, fp, tn, recall(None when undefined)}."""
    table = {a: {"tp": 0, "fn": 0, "fp": 0, "tn": 0} for a in modeled_ids}
    for e in events:
        if not e.completed_backfill or e.cache_outcome == "Hit":
            continue
        transient = set()
        if exclude_transient:
            for r in e.per_archive_outcomes:
                if r.outcome in ("Timeout", "UpstreamError"):
                    transient.add(r.archive_id)
        for a in modeled_ids:
            if a in transient:
                continue
            predicted = a in e.predicted_set
            held = a in e.final_holders
            if predicted and held:
                table[a]["tp"] += 1
            elif held:
                table[a]["fn"] += 1
            elif predicted:
                table[a]["fp"] += 1
            else:
                table[a]["tn"] += 1
    for a, row in table.items():
        denom = row["tp"] + row["fn"]
        row["recall"] = row["tp"] / denom if denom else None
    return table


def naive_churn(events):
    """(comparable, unchanged, added_cases, removed_cases, per_added, per_removed)."""
    complete = sorted(
        (e for e in events if e.completed_backfill),
        key=lambda e: (e.timestamp, e.event_id),
    )
    history = {}
    for e in complete:
        history.setdefault(e.uri_r, []).append(set(e.final_holders))
    comparable = unchanged = added_cases = removed_cases = 0
    per_added, per_removed = {}, {}
    for runs in history.values():
        for prev, cur in zip(runs, runs[1:]):
            comparable += 1
            added = cur - prev
            removed = prev - cur
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
    return comparable, unchanged, added_cases, removed_cases, per_added, per_removed
