"""Desk-scale stand-ins for public web archives, plus workload generation.

Every simulated behavior is a deterministic function of (seed, uri, tick):
holdings come from a feature-aligned rule XOR-ed with cohort-level churn
flips, latencies are hash-sampled from a uniform range, and failures are
hash-coin flips. Concurrent queries therefore cannot perturb results, and
the true holder set for any (uri, tick) is computable independently of the
engine, which makes these archives the ground-truth oracle for recall and
false-positive evaluation.

Churn is applied to whole TLD cohorts rather than to individual URIs: an
archive's index gains or loses an entire URI cohort at a flip, the way a
real archive ingests or takes down a crawl collection. Cohort flips keep
the post-churn index learnable from URI features, which is what makes
retraining able to recover prediction quality after decay.
"""

from __future__ import annotations

import bisect
import hashlib
import math
import random
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Iterable, Optional
from urllib.parse import urlsplit

from memagg.memento import (
    ArchiveDescriptor,
    Memento,
    TimeMap,
    normalize_uri,
    serialize_timemap_link,
)
from memagg.transport import TimegateReply

SIM_EPOCH = datetime(2018, 1, 1, tzinfo=timezone.utc)
_MEMENTO_BASE = datetime(2012, 1, 1, tzinfo=timezone.utc)

_WORDS = (
    "news", "blog", "wiki", "shop", "data", "photo", "video", "mail",
    "forum", "maps", "docs", "apps", "cloud", "static", "media", "archive",
    "search", "portal", "store", "labs", "dev", "api", "cdn", "events",
    "travel", "music", "games", "sports", "weather", "jobs", "auto",
    "health", "food", "books", "art", "science", "tech", "finance",
)


def stable_hash(*parts: object) -> int:
    """Deterministic 64-bit hash of the string forms of `parts`."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(str(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "big")


def _hash_unit(*parts: object) -> float:
    """Deterministic float in [0, 1)."""
    return stable_hash(*parts) / 2**64


def _tld_of(uri: str) -> str:
    host = urlsplit(uri).hostname or ""
    return host.rsplit(".", 1)[-1] if host else ""


# ---------------------------------------------------------------------------
# Holdings rules
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class HoldingsRule:
    """Deterministic predicate over a URI deciding base index membership.

    kinds:
      all          - every URI
      tld          - final host label in `tlds`
      hash_bucket  - stable_hash(salt, uri) % modulus < less_than
      and          - conjunction of sub-rules
    """

    kind: str
    tlds: tuple[str, ...] = ()
    modulus: int = 10
    less_than: int = 10
    salt: str = ""
    rules: tuple["HoldingsRule", ...] = ()

    def matches(self, uri: str) -> bool:
        if self.kind == "all":
            return True
        if self.kind == "tld":
            return _tld_of(uri) in self.tlds
        if self.kind == "hash_bucket":
            return stable_hash(self.salt, uri) % self.modulus < self.less_than
        if self.kind == "and":
            return all(r.matches(uri) for r in self.rules)
        raise ValueError(f"unknown holdings rule kind {self.kind!r}")

    def tld_cohort_held(self, tld: str) -> bool:
        """Whether this rule's base index includes the given TLD cohort."""
        if self.kind == "tld":
            return tld in self.tlds
        if self.kind == "and":
            return all(r.tld_cohort_held(tld) for r in self.rules)
        return True

    def to_dict(self) -> dict:
        if self.kind == "all":
            return {"kind": "all"}
        if self.kind == "tld":
            return {"kind": "tld", "tlds": list(self.tlds)}
        if self.kind == "hash_bucket":
            return {
                "kind": "hash_bucket",
                "modulus": self.modulus,
                "less_than": self.less_than,
                "salt": self.salt,
            }
        return {"kind": "and", "rules": [r.to_dict() for r in self.rules]}

    @classmethod
    def from_dict(cls, d: dict) -> "HoldingsRule":
        kind = d["kind"]
        if kind == "all":
            return cls(kind="all")
        if kind == "tld":
            return cls(kind="tld", tlds=tuple(d["tlds"]))
        if kind == "hash_bucket":
            return cls(
                kind="hash_bucket",
                modulus=int(d["modulus"]),
                less_than=int(d["less_than"]),
                salt=str(d.get("salt", "")),
            )
        if kind == "and":
            return cls(kind="and", rules=tuple(cls.from_dict(r) for r in d["rules"]))
        raise ValueError(f"unknown holdings rule kind {kind!r}")


# ---------------------------------------------------------------------------
# Simulated archive
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class SimArchiveSpec:
    """Configuration of one simulated archive."""

    archive_id: str
    holdings_rule: HoldingsRule
    latency_min: float = 0.01
    latency_max: float = 0.05
    failure_rate: float = 0.0
    churn_add_rate: float = 0.0
    churn_remove_rate: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("failure_rate", "churn_add_rate", "churn_remove_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0,1]: {value}")
        if self.latency_min < 0 or self.latency_max < self.latency_min:
            raise ValueError("latency range must satisfy 0 <= min <= max")

    def to_dict(self) -> dict:
        return {
            "archive_id": self.archive_id,
            "holdings_rule": self.holdings_rule.to_dict(),
            "latency_min": self.latency_min,
            "latency_max": self.latency_max,
            "failure_rate": self.failure_rate,
            "churn_add_rate": self.churn_add_rate,
            "churn_remove_rate": self.churn_remove_rate,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimArchiveSpec":
        return cls(
            archive_id=d["archive_id"],
            holdings_rule=HoldingsRule.from_dict(d["holdings_rule"]),
            latency_min=float(d.get("latency_min", 0.01)),
            latency_max=float(d.get("latency_max", 0.05)),
            failure_rate=float(d.get("failure_rate", 0.0)),
            churn_add_rate=float(d.get("churn_add_rate", 0.0)),
            churn_remove_rate=float(d.get("churn_remove_rate", 0.0)),
            seed=int(d.get("seed", 0)),
        )


def _geometric_wait(rng: random.Random, p: float) -> Optional[int]:
    """Ticks until the next churn flip; None when the rate is zero."""
    if p <= 0.0:
        return None
    if p >= 1.0:
        return 1
    u = rng.random()
    return 1 + int(math.log(1.0 - u) / math.log(1.0 - p))


class _ChurnTrack:
    """Deterministic flip schedule for one (archive, TLD cohort) pair."""

    __slots__ = ("_rng", "_held", "_add", "_remove", "_flips", "_done")

    def __init__(self, seed_material: int, base_held: bool, add: float, remove: float):
        self._rng = random.Random(seed_material)
        self._held = base_held
        self._add = add
        self._remove = remove
        self._flips: list[int] = []
        self._done = False

    def bit_at(self, tick: int) -> bool:
        """Parity of churn flips that occurred at or before `tick`."""
        while not self._done and (not self._flips or self._flips[-1] <= tick):
            rate = self._remove if self._held else self._add
            wait = _geometric_wait(self._rng, rate)
            if wait is None:
                self._done = True
                break
            self._flips.append((self._flips[-1] if self._flips else 0) + wait)
            self._held = not self._held
        return bisect.bisect_right(self._flips, tick) % 2 == 1


@dataclass(frozen=True, slots=True)
class SimResponse:
    """Raw simulated archive behavior before transport classification."""

    kind: str  # holds | empty | timeout | error
    mementos: tuple[Memento, ...]
    latency: float
    status: Optional[int]


class SimArchive:
    """One simulated archive: holdings oracle, timegate behavior, counters."""

    def __init__(self, spec: SimArchiveSpec) -> None:
        self.spec = spec
        self._tracks: dict[str, _ChurnTrack] = {}
        self._lock = threading.Lock()
        self.request_count = 0

    # -- ground truth ------------------------------------------------------

    def holds(self, uri: str, tick: int) -> bool:
        """True holder-set membership at `tick`: base rule XOR cohort churn."""
        base = self.spec.holdings_rule.matches(uri)
        if self.spec.churn_add_rate == 0.0 and self.spec.churn_remove_rate == 0.0:
            return base
        tld = _tld_of(uri)
        with self._lock:
            track = self._tracks.get(tld)
            if track is None:
                track = _ChurnTrack(
                    stable_hash(self.spec.seed, self.spec.archive_id, "churn", tld),
                    self.spec.holdings_rule.tld_cohort_held(tld),
                    self.spec.churn_add_rate,
                    self.spec.churn_remove_rate,
                )
                self._tracks[tld] = track
            return base != track.bit_at(tick)

    def mementos_for(self, uri: str) -> tuple[Memento, ...]:
        """Synthetic mementos with datetimes derived from the URI hash."""
        count = 1 + stable_hash(self.spec.seed, self.spec.archive_id, "n", uri) % 3
        out = []
        for i in range(count):
            offset_days = stable_hash(self.spec.archive_id, "dt", uri, i) % 1800
            dt = _MEMENTO_BASE + timedelta(days=offset_days - 700, hours=i * 7)
            stamp = dt.strftime("%Y%m%d%H%M%S")
            out.append(
                Memento(
                    uri_m=f"https://web.{self.spec.archive_id}.example/{stamp}/{uri}",
                    datetime=dt,
                    archive_id=self.spec.archive_id,
                )
            )
        return tuple(out)

    # -- behavior ----------------------------------------------------------

    def serve_timegate(self, uri: str, accept_datetime: datetime, tick: int) -> SimResponse:
        """Simulated datetime-negotiation response at `tick`."""
        with self._lock:
            self.request_count += 1
        spec = self.spec
        latency = spec.latency_min + _hash_unit(
            spec.seed, spec.archive_id, "lat", uri, tick
        ) * (spec.latency_max - spec.latency_min)
        if spec.failure_rate > 0.0 and _hash_unit(
            spec.seed, spec.archive_id, "fail", uri, tick
        ) < spec.failure_rate:
            if stable_hash(spec.seed, spec.archive_id, "failkind", uri, tick) % 2 == 0:
                return SimResponse("timeout", (), float("inf"), None)
            return SimResponse("error", (), latency, 503)
        if self.holds(uri, tick):
            return SimResponse("holds", self.mementos_for(uri), latency, 200)
        return SimResponse("empty", (), latency, 404)


class SimClock:
    """Shared virtual clock: integer tick mapped onto UTC wall time."""

    def __init__(self, epoch: datetime = SIM_EPOCH, tick_seconds: float = 1.0) -> None:
        self.epoch = epoch
        self.tick_seconds = tick_seconds
        self._tick = 0
        self._lock = threading.Lock()

    def set_tick(self, tick: int) -> None:
        with self._lock:
            self._tick = tick

    def current_tick(self) -> int:
        with self._lock:
            return self._tick

    def now(self) -> datetime:
        return self.epoch + timedelta(seconds=self.current_tick() * self.tick_seconds)


class InProcessTransport:
    """Function-call transport to simulated archives.

    Latency is reported as data rather than slept away (blocking=False), so
    a ten-second archive costs nothing at desk scale; with real_sleep=True
    the sampled latency is actually slept, for wall-clock experiments.
    """

    def __init__(
        self,
        archives: Iterable[SimArchive],
        clock: SimClock,
        real_sleep: bool = False,
    ) -> None:
        self._archives = {a.spec.archive_id: a for a in archives}
        self._clock = clock
        self._real_sleep = real_sleep
        self.blocking = real_sleep

    def archive(self, archive_id: str) -> SimArchive:
        return self._archives[archive_id]

    def timegate(
        self,
        descriptor: ArchiveDescriptor,
        uri_r: str,
        accept_datetime: datetime,
        timeout: float,
    ) -> TimegateReply:
        sim = self._archives[descriptor.archive_id]
        resp = sim.serve_timegate(uri_r, accept_datetime, self._clock.current_tick())
        if self._real_sleep:
            time.sleep(min(resp.latency, timeout))
        if resp.kind == "timeout":
            return TimegateReply("timeout", (), resp.latency, None)
        if resp.kind == "error":
            return TimegateReply("error", (), resp.latency, resp.status)
        if resp.kind == "holds":
            return TimegateReply("holds", resp.mementos, resp.latency, resp.status)
        return TimegateReply("empty", (), resp.latency, resp.status)


# ---------------------------------------------------------------------------
# Local HTTP listener
# ---------------------------------------------------------------------------

class SimArchiveHttpServer:
    """Serves simulated archives over real HTTP on 127.0.0.1.

    Route shape: /{archive_id}/timegate/{uri}. Responses are link-format
    timemaps (200), not-found (404), or injected upstream errors (503);
    injected timeouts hold the connection past any sane client deadline.
    """

    def __init__(
        self,
        archives: Iterable[SimArchive],
        clock: SimClock,
        port: int = 0,
        max_hold_seconds: float = 30.0,
    ) -> None:
        self._archives = {a.spec.archive_id: a for a in archives}
        self._clock = clock
        self._max_hold = max_hold_seconds
        handler = self._make_handler()
        self._server = ThreadingHTTPServer(("127.0.0.1", port), handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    def endpoint_for(self, archive_id: str) -> str:
        return f"http://127.0.0.1:{self.port}/{archive_id}/timegate/{{uri}}"

    def start(self) -> None:
        self._thread.start()

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def _make_handler(self):
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, fmt, *args):  # keep test output quiet
                pass

            def do_GET(self):
                parts = self.path.split("/timegate/", 1)
                archive_id = parts[0].lstrip("/")
                sim = outer._archives.get(archive_id)
                if sim is None or len(parts) != 2 or not parts[1]:
                    self.send_error(404, "unknown archive or missing uri")
                    return
                uri = parts[1]
                resp = sim.serve_timegate(
                    uri, datetime.now(timezone.utc), outer._clock.current_tick()
                )
                if resp.kind == "timeout":
                    time.sleep(outer._max_hold)
                    self.send_error(503, "simulated timeout elapsed")
                    return
                time.sleep(min(resp.latency, outer._max_hold))
                if resp.kind == "error":
                    self.send_error(resp.status or 500, "injected upstream error")
                    return
                if resp.kind == "empty":
                    self.send_error(404, "no mementos")
                    return
                tm = TimeMap.assemble(normalize_uri(uri), resp.mementos, SIM_EPOCH)
                body = serialize_timemap_link(tm).encode("utf-8")
                self.send_response(200)
                self.send_header("Content-Type", "application/link-format")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

        return Handler


# ---------------------------------------------------------------------------
# Workloads
# ---------------------------------------------------------------------------

DEFAULT_SERVICE_MIX = {
    "TimeTravel": 0.25,
    "Extension": 0.25,
    "Api": 0.25,
    "Redirect": 0.25,
}


@dataclass(frozen=True, slots=True)
class WorkloadSpec:
    """Synthetic request stream definition.

    Zipfian and uniform draws model popularity-driven vs machine-driven
    traffic; `repeat_interval` switches to a scripted mode that re-requests
    the whole universe every interval, the way batch experiments re-poll
    the same URIs. Time advances one tick per `requests_per_tick` requests,
    each tick worth `tick_seconds` of virtual time.
    """

    distribution: str = "zipfian"  # zipfian | uniform
    zipf_s: float = 1.0
    uri_universe_size: int = 1000
    request_count: int = 10000
    service_mix: dict[str, float] = field(
        default_factory=lambda: dict(DEFAULT_SERVICE_MIX)
    )
    repeat_interval: Optional[float] = None  # virtual seconds between rounds
    seed: int = 0
    requests_per_tick: int = 1
    tick_seconds: float = 1.0
    start_tick: int = 0
    tld_vocabulary: tuple[str, ...] = (
        "com", "org", "net", "edu", "gov", "uk", "de", "fr", "jp", "io",
    )

    def __post_init__(self) -> None:
        if self.distribution not in ("zipfian", "uniform"):
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if self.zipf_s <= 0:
            raise ValueError("zipf_s must be > 0")
        if abs(sum(self.service_mix.values()) - 1.0) > 1e-9:
            raise ValueError("service_mix fractions must sum to 1")
        if self.uri_universe_size <= 0 or self.request_count <= 0:
            raise ValueError("universe and request counts must be positive")
        if self.requests_per_tick <= 0:
            raise ValueError("requests_per_tick must be positive")

    def to_dict(self) -> dict:
        return {
            "distribution": self.distribution,
            "zipf_s": self.zipf_s,
            "uri_universe_size": self.uri_universe_size,
            "request_count": self.request_count,
            "service_mix": dict(self.service_mix),
            "repeat_interval": self.repeat_interval,
            "seed": self.seed,
            "requests_per_tick": self.requests_per_tick,
            "tick_seconds": self.tick_seconds,
            "start_tick": self.start_tick,
            "tld_vocabulary": list(self.tld_vocabulary),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WorkloadSpec":
        out = dict(d)
        if "tld_vocabulary" in out:
            out["tld_vocabulary"] = tuple(out["tld_vocabulary"])
        return cls(**out)


@dataclass(frozen=True, slots=True)
class WorkloadItem:
    service: str
    uri_r: str
    accept_datetime: datetime
    arrival_tick: int


class UriUniverse:
    """Lazy deterministic URI universe with controlled TLD/path structure."""

    def __init__(self, size: int, seed: int, tld_vocabulary: tuple[str, ...]) -> None:
        self.size = size
        self.seed = seed
        self.tlds = tld_vocabulary
        self._cache: dict[int, str] = {}

    def uri(self, index: int) -> str:
        cached = self._cache.get(index)
        if cached is not None:
            return cached
        rng = random.Random(stable_hash(self.seed, "uri", index))
        tld = self.tlds[rng.randrange(len(self.tlds))]
        host = f"{rng.choice(_WORDS)}{rng.randrange(1000)}.{rng.choice(_WORDS)}.{tld}"
        depth = rng.randrange(0, 4)
        path = "".join(f"/{rng.choice(_WORDS)}" for _ in range(depth)) or "/"
        query = f"?id={rng.randrange(10000)}" if rng.random() < 0.3 else ""
        uri = f"http://{host}{path}{query}"
        self._cache[index] = uri
        return uri


def generate_workload(spec: WorkloadSpec) -> list[WorkloadItem]:
    """Materialize the deterministic request stream for a workload spec."""
    rng = random.Random(spec.seed)
    universe = UriUniverse(spec.uri_universe_size, spec.seed, spec.tld_vocabulary)
    services = sorted(spec.service_mix)
    service_weights = [spec.service_mix[s] for s in services]

    items: list[WorkloadItem] = []
    if spec.repeat_interval is not None:
        interval_ticks = max(1, int(round(spec.repeat_interval / spec.tick_seconds)))
        for i in range(spec.request_count):
            round_no, slot = divmod(i, spec.uri_universe_size)
            tick = spec.start_tick + round_no * interval_ticks
            items.append(
                WorkloadItem(
                    service=rng.choices(services, weights=service_weights)[0],
                    uri_r=universe.uri(slot),
                    accept_datetime=_random_accept_datetime(rng),
                    arrival_tick=tick,
                )
            )
        return items

    if spec.distribution == "zipfian":
        weights = [1.0 / (rank**spec.zipf_s) for rank in range(1, spec.uri_universe_size + 1)]
        cum = list(_running_sum(weights))
        indices = rng.choices(range(spec.uri_universe_size), cum_weights=cum, k=spec.request_count)
    else:
        indices = [rng.randrange(spec.uri_universe_size) for _ in range(spec.request_count)]

    for i, index in enumerate(indices):
        items.append(
            WorkloadItem(
                service=rng.choices(services, weights=service_weights)[0],
                uri_r=universe.uri(index),
                accept_datetime=_random_accept_datetime(rng),
                arrival_tick=spec.start_tick + i // spec.requests_per_tick,
            )
        )
    return items


def _running_sum(values: list[float]):
    total = 0.0
    for v in values:
        total += v
        yield total


def _random_accept_datetime(rng: random.Random) -> datetime:
    return SIM_EPOCH - timedelta(days=rng.randrange(1, 1000), hours=rng.randrange(24))
