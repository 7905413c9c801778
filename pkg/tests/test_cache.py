import random
from datetime import timedelta

import pytest

from memagg.cache import (
    AgeState,
    CachePolicy,
    CacheRecord,
    MementoCache,
    OutcomeKind,
    classify_age,
)
from memagg.errors import ClockSkew, VersionMismatch
from memagg.memento import TimeMap, normalize_uri

from helpers import EPOCH


def days(n):
    return timedelta(days=n)


def record_for(uri, inserted_at):
    original = normalize_uri(uri)
    tm = TimeMap.assemble(original, [], inserted_at)
    return CacheRecord(key=original.normalized, timemap=tm, inserted_at=inserted_at)


POLICY = CachePolicy()


class TestClassifyAge:
    @pytest.mark.parametrize(
        "age_days,expected",
        [
            (0, AgeState.FRESH),
            (29, AgeState.FRESH),
            (30, AgeState.STALE),  # half-open boundary
            (45, AgeState.STALE),
            (59, AgeState.STALE),
            (60, AgeState.EXPIRED),  # half-open boundary
            (61, AgeState.EXPIRED),
            (400, AgeState.EXPIRED),
        ],
    )
    def test_lifecycle_boundaries(self, age_days, expected):
        assert classify_age(EPOCH, EPOCH + days(age_days), POLICY) is expected

    def test_clock_skew(self):
        with pytest.raises(ClockSkew):
            classify_age(EPOCH, EPOCH - timedelta(seconds=1), POLICY)

    def test_exhaustive_partition(self):
        rng = random.Random(3)
        for _ in range(1000):
            now = EPOCH + timedelta(seconds=rng.randrange(0, 90 * 86400))
            states = [s for s in AgeState if classify_age(EPOCH, now, POLICY) is s]
            assert len(states) == 1

    def test_monotone_forward_only(self):
        order = [AgeState.FRESH, AgeState.STALE, AgeState.EXPIRED]
        rng = random.Random(4)
        nows = sorted(rng.randrange(0, 90 * 86400) for _ in range(200))
        ranks = [order.index(classify_age(EPOCH, EPOCH + timedelta(seconds=s), POLICY)) for s in nows]
        assert ranks == sorted(ranks)

    def test_positive_durations_required(self):
        with pytest.raises(ValueError):
            CachePolicy(fresh_duration=timedelta(0))


class TestLookupInsert:
    def test_hit_within_fresh_window(self):
        cache = MementoCache()
        cache.insert(record_for("http://a.com/x", EPOCH))
        assert cache.lookup("http://a.com/x", EPOCH + days(29)).kind is OutcomeKind.HIT

    def test_stale_miss_after_fresh(self):
        cache = MementoCache()
        cache.insert(record_for("http://a.com/x", EPOCH))
        out = cache.lookup("http://a.com/x", EPOCH + days(31))
        assert out.kind is OutcomeKind.STALE_MISS
        assert out.record is not None  # diagnostics only, never served

    def test_cold_miss_unknown_key(self):
        cache = MementoCache()
        out = cache.lookup("http://never.com/", EPOCH)
        assert out.kind is OutcomeKind.COLD_MISS and out.record is None

    def test_never_hit_at_or_after_fresh_boundary(self):
        cache = MementoCache()
        cache.insert(record_for("http://a.com/x", EPOCH))
        assert cache.lookup("http://a.com/x", EPOCH + days(30)).kind is OutcomeKind.STALE_MISS

    def test_read_your_write(self):
        cache = MementoCache()
        rec = record_for("http://a.com/x", EPOCH)
        cache.insert(rec)
        out = cache.lookup(rec.key, EPOCH)
        assert out.kind is OutcomeKind.HIT and out.record.timemap == rec.timemap

    def test_insert_replaces_stale_record(self):
        cache = MementoCache()
        cache.insert(record_for("http://a.com/x", EPOCH))
        newer = record_for("http://a.com/x", EPOCH + days(40))
        cache.insert(newer)
        out = cache.lookup(newer.key, EPOCH + days(41))
        assert out.kind is OutcomeKind.HIT
        assert out.record.inserted_at == newer.inserted_at

    def test_key_uniqueness(self):
        cache = MementoCache()
        cache.insert(record_for("http://a.com/x", EPOCH))
        cache.insert(record_for("http://a.com/x", EPOCH + days(1)))
        assert len(cache) == 1

    def test_lazy_expiry_on_touch(self):
        cache = MementoCache()
        cache.insert(record_for("http://a.com/x", EPOCH))
        assert cache.lookup("http://a.com/x", EPOCH + days(61)).kind is OutcomeKind.COLD_MISS
        assert len(cache) == 0

    def test_key_must_match_timemap_original(self):
        original = normalize_uri("http://a.com/x")
        tm = TimeMap.assemble(original, [], EPOCH)
        with pytest.raises(ValueError):
            CacheRecord(key="http://other.com/", timemap=tm, inserted_at=EPOCH)


class TestPurge:
    def test_empty_cache(self):
        assert MementoCache().purge_expired(EPOCH) == 0

    def test_single_expired(self):
        cache = MementoCache()
        cache.insert(record_for("http://a.com/x", EPOCH))
        assert cache.purge_expired(EPOCH + days(61)) == 1
        assert cache.lookup("http://a.com/x", EPOCH + days(61)).kind is OutcomeKind.COLD_MISS

    def test_mixed_ages(self):
        # Expected states derived from the classify_age oracle at now = insertion+0d
        # for records aged 10/40/70 days.
        cache = MementoCache()
        now = EPOCH + days(70)
        for age in (10, 40, 70):
            uri = f"http://a.com/{age}"
            cache.insert(record_for(uri, now - days(age)))
            assert classify_age(now - days(age), now, POLICY) is (
                AgeState.FRESH if age < 30 else AgeState.STALE if age < 60 else AgeState.EXPIRED
            )
        assert cache.purge_expired(now) == 1
        assert cache.lookup("http://a.com/40", now).kind is OutcomeKind.STALE_MISS
        assert cache.lookup("http://a.com/10", now).kind is OutcomeKind.HIT


class TestConcurrency:
    def test_concurrent_lookups_and_inserts_never_tear(self):
        import threading

        cache = MementoCache()
        keys = [f"http://a.com/{i}" for i in range(20)]
        stop = threading.Event()
        failures = []

        def writer():
            i = 0
            while not stop.is_set():
                cache.insert(record_for(keys[i % len(keys)], EPOCH + days(i % 40)))
                i += 1

        def reader():
            while not stop.is_set():
                for key in keys:
                    out = cache.lookup(normalize_uri(key).normalized, EPOCH + days(45))
                    if out.kind is not OutcomeKind.COLD_MISS and out.record is None:
                        failures.append("outcome without record")

        threads = [threading.Thread(target=writer)] + [
            threading.Thread(target=reader) for _ in range(3)
        ]
        for t in threads:
            t.start()
        import time

        time.sleep(0.3)
        stop.set()
        for t in threads:
            t.join()
        assert failures == []


class TestPersistence:
    def test_restart_preserves_lookup_results(self, tmp_path):
        path = tmp_path / "cache.jsonl"
        cache = MementoCache(path=path)
        fresh = record_for("http://a.com/fresh", EPOCH + days(50))
        stale = record_for("http://a.com/stale", EPOCH + days(20))
        cache.insert(fresh)
        cache.insert(stale)
        cache.close()

        now = EPOCH + days(55)
        reopened = MementoCache(path=path)
        assert reopened.lookup(fresh.key, now).kind is OutcomeKind.HIT
        assert reopened.lookup(stale.key, now).kind is OutcomeKind.STALE_MISS
        assert reopened.lookup(fresh.key, now).record.timemap == fresh.timemap
        reopened.close()

    def test_last_write_wins_after_restart(self, tmp_path):
        path = tmp_path / "cache.jsonl"
        cache = MementoCache(path=path)
        cache.insert(record_for("http://a.com/x", EPOCH))
        cache.insert(record_for("http://a.com/x", EPOCH + days(10)))
        cache.close()
        reopened = MementoCache(path=path)
        out = reopened.lookup("http://a.com/x", EPOCH + days(10))
        assert out.record.inserted_at == EPOCH + days(10)
        reopened.close()

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "cache.jsonl"
        path.write_text('{"format":"something-else","version":9}\n')
        with pytest.raises(VersionMismatch):
            MementoCache(path=path)

    def test_compact_drops_expired_from_disk(self, tmp_path):
        path = tmp_path / "cache.jsonl"
        cache = MementoCache(path=path)
        cache.insert(record_for("http://a.com/old", EPOCH))
        cache.insert(record_for("http://a.com/new", EPOCH + days(50)))
        removed = cache.compact(EPOCH + days(65))
        cache.close()
        assert removed == 1
        reopened = MementoCache(path=path)
        assert len(reopened) == 1
        reopened.close()
