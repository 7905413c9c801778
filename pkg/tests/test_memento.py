import random
from datetime import datetime, timedelta, timezone

import pytest

from memagg.errors import MalformedDatetime, MalformedUri
from memagg.memento import (
    Memento,
    TimeMap,
    closest_memento,
    format_http_datetime,
    normalize_uri,
    parse_http_datetime,
    parse_timemap_link,
    serialize_timemap_link,
)

from helpers import EPOCH, UTC, random_timemap


class TestNormalizeUri:
    def test_lowercases_and_strips(self):
        u = normalize_uri("HTTP://Example.COM:80/A?q=1#frag")
        assert u.normalized == "http://example.com/A?q=1"
        assert u.raw == "HTTP://Example.COM:80/A?q=1#frag"

    def test_identity_case(self):
        assert normalize_uri("http://example.com/a").normalized == "http://example.com/a"

    def test_unparseable_raises(self):
        with pytest.raises(MalformedUri):
            normalize_uri("not a uri")

    @pytest.mark.parametrize("bad", ["", "   ", "/relative/path", "ftp://x.com/", "http://"])
    def test_rejects_non_http_absolute(self, bad):
        with pytest.raises(MalformedUri):
            normalize_uri(bad)

    def test_https_default_port_dropped_custom_kept(self):
        assert normalize_uri("https://x.com:443/a").normalized == "https://x.com/a"
        assert normalize_uri("http://x.com:8080/a").normalized == "http://x.com:8080/a"

    def test_trailing_slash_and_query_preserved(self):
        assert normalize_uri("http://x.com/a/").normalized == "http://x.com/a/"
        assert normalize_uri("http://x.com/a?B=2&a=1").normalized == "http://x.com/a?B=2&a=1"

    def test_idempotent_over_random_uris(self):
        rng = random.Random(101)
        for _ in range(300):
            scheme = rng.choice(["http", "HTTP", "https"])
            host = rng.choice(["WWW.Site.COM", "a.b.co.uk", "x.io"])
            port = rng.choice(["", ":80", ":443", ":9999"])
            path = rng.choice(["", "/", "/A/b", "/p%20q"])
            query = rng.choice(["", "?x=1", "?x=1&y=Z"])
            frag = rng.choice(["", "#top"])
            once = normalize_uri(f"{scheme}://{host}{port}{path}{query}{frag}")
            twice = normalize_uri(once.normalized)
            assert twice.normalized == once.normalized


class TestHttpDatetime:
    def test_parse_rfc1123(self):
        assert parse_http_datetime("Thu, 01 Jan 2015 00:00:00 GMT") == datetime(
            2015, 1, 1, tzinfo=UTC
        )

    def test_rejects_other_formats(self):
        for bad in ["2015-01-01", "01 Jan 2015", "Thu, 1 Jan 2015 00:00:00 GMT",
                    "Thu, 01 Jan 2015 00:00:00 UTC", "Thu, 01 Jan 2015 00:00 GMT"]:
            with pytest.raises(MalformedDatetime):
                parse_http_datetime(bad)

    def test_rejects_wrong_weekday(self):
        with pytest.raises(MalformedDatetime):
            parse_http_datetime("Fri, 01 Jan 2015 00:00:00 GMT")

    def test_round_trip_identity(self):
        rng = random.Random(7)
        for _ in range(500):
            dt = EPOCH - timedelta(days=rng.randrange(8000), seconds=rng.randrange(86400))
            s = format_http_datetime(dt)
            assert parse_http_datetime(s) == dt
            assert format_http_datetime(parse_http_datetime(s)) == s


class TestClosestMemento:
    @staticmethod
    def _tm(years):
        original = normalize_uri("http://x.com/")
        mementos = [
            Memento(f"http://a/{y}", datetime(y, 1, 1, tzinfo=UTC), "a") for y in years
        ]
        return TimeMap.assemble(original, mementos, EPOCH)

    def test_smaller_absolute_delta_wins(self):
        tm = self._tm([2010, 2012])
        assert closest_memento(tm, datetime(2011, 9, 1, tzinfo=UTC)).datetime.year == 2012

    def test_exact_match(self):
        tm = self._tm([2010, 2012])
        target = datetime(2012, 1, 1, tzinfo=UTC)
        assert closest_memento(tm, target).datetime == target

    def test_equidistant_earlier_wins(self):
        tm = self._tm([2010, 2012])
        assert closest_memento(tm, datetime(2011, 1, 1, tzinfo=UTC)).datetime.year == 2010

    def test_identical_datetimes_first_in_order_wins(self):
        original = normalize_uri("http://x.com/")
        dt = datetime(2011, 1, 1, tzinfo=UTC)
        tm = TimeMap.assemble(
            original,
            [Memento("http://b/1", dt, "b"), Memento("http://a/1", dt, "a")],
            EPOCH,
        )
        # sort order puts archive "a" first
        assert closest_memento(tm, dt).archive_id == "a"

    def test_empty_returns_none(self):
        tm = TimeMap.assemble(normalize_uri("http://x.com/"), [], EPOCH)
        assert closest_memento(tm, EPOCH) is None

    def test_distance_optimality_property(self):
        rng = random.Random(13)
        for _ in range(500)        :
            tm = random_timemap(rng)
            target = EPOCH - timedelta(days=rng.randrange(3000))
            chosen = closest_memento(tm, target)
            if not tm.mementos:
                assert chosen is None
                continue
            for m in tm.mementos:
                assert abs(chosen.datetime - target) <= abs(m.datetime - target)


class TestTimeMap:
    def test_assemble_sorts_and_dedupes(self):
        original = normalize_uri("http://x.com/")
        dt1 = datetime(2012, 1, 1, tzinfo=UTC)
        dt2 = datetime(2010, 1, 1, tzinfo=UTC)
        m1 = Memento("http://a/1", dt1, "a")
        m2 = Memento("http://a/2", dt2, "b")
        tm = TimeMap.assemble(original, [m1, m2, m1], EPOCH)
        assert tm.mementos == (m2, m1)

    def test_merge_preserves_sort_invariant(self):
        rng = random.Random(31)
        for _ in range(100):
            a, b = random_timemap(rng), random_timemap(rng)
            merged = TimeMap.assemble(a.original, a.mementos + b.mementos, EPOCH)
            keys = [(m.datetime, m.archive_id, m.uri_m) for m in merged.mementos]
            assert keys == sorted(keys)
            assert len(set(keys)) == len(keys)


class TestLinkFormat:
    def test_empty_timemap_single_line(self):
        tm = TimeMap.assemble(normalize_uri("http://x.com/"), [], EPOCH)
        assert serialize_timemap_link(tm) == '<http://x.com/>; rel="original"\n'

    def test_single_memento_layout(self):
        tm = TimeMap.assemble(
            normalize_uri("http://x.com/"),
            [Memento("http://a/1", datetime(2015, 1, 1, tzinfo=UTC), "pt")],
            EPOCH,
        )
        assert serialize_timemap_link(tm) == (
            '<http://x.com/>; rel="original",\n'
            '<http://a/1>; rel="memento"; '
            'datetime="Thu, 01 Jan 2015 00:00:00 GMT"; archive="pt"\n'
        )

    def test_serialization_deterministic(self):
        rng = random.Random(5)
        tm = random_timemap(rng)
        assert serialize_timemap_link(tm) == serialize_timemap_link(tm)

    def test_parse_back_reproduces_timemap(self):
        rng = random.Random(17)
        for _ in range(200):
            tm = random_timemap(rng)
            parsed = parse_timemap_link(serialize_timemap_link(tm), tm.assembled_at)
            assert parsed == tm

    def test_parse_rejects_garbage(self):
        with pytest.raises(ValueError):
            parse_timemap_link("definitely not link format", EPOCH)
        with pytest.raises(ValueError):
            parse_timemap_link('<http://a/1>; rel="memento"; datetime="x"; archive="a"', EPOCH)


class TestMementoType:
    def test_datetime_truncated_to_seconds_utc(self):
        dt = datetime(2015, 6, 1, 12, 30, 45, 999999, tzinfo=timezone(timedelta(hours=2)))
        m = Memento("http://a/1", dt, "a")
        assert m.datetime == datetime(2015, 6, 1, 10, 30, 45, tzinfo=UTC)

    def test_naive_datetime_rejected(self):
        with pytest.raises(ValueError):
            Memento("http://a/1", datetime(2015, 1, 1), "a")
