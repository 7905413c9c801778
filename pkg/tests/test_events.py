import json

import pytest

from memagg.events import AggregationEvent, ArchiveQueryResult, read_events, write_events

from helpers import synthetic_events


EXPECTED_FIELDS = [
    "event_id",
    "service",
    "uri_r",
    "requested_datetime",
    "cache_outcome",
    "predicted_set",
    "first_phase_holders",
    "backfill_holders",
    "final_holders",
    "per_archive_outcomes",
    "response_latency",
    "completed_backfill",
    "timestamp",
]


class TestEventLine:
    def test_field_names_are_the_contract(self):
        event = synthetic_events(1, seed=1)[0]
        payload = json.loads(event.to_json_line())
        assert list(payload.keys()) == EXPECTED_FIELDS

    def test_round_trip_preserves_analytics_fields(self):
        for event in synthetic_events(200, seed=2):
            back = AggregationEvent.from_json_line(event.to_json_line())
            assert back.event_id == event.event_id
            assert back.service == event.service
            assert back.uri_r == event.uri_r
            assert back.cache_outcome == event.cache_outcome
            assert back.predicted_set == event.predicted_set
            assert back.first_phase_holders == event.first_phase_holders
            assert back.backfill_holders == event.backfill_holders
            assert back.final_holders == event.final_holders
            assert back.completed_backfill == event.completed_backfill
            assert back.timestamp == event.timestamp
            assert [
                (r.archive_id, r.outcome, r.phase, r.status, len(r.mementos))
                for r in back.per_archive_outcomes
            ] == [
                (r.archive_id, r.outcome, r.phase, r.status, len(r.mementos))
                for r in event.per_archive_outcomes
            ]

    def test_line_bytes_deterministic(self):
        event = synthetic_events(1, seed=3)[0]
        assert event.to_json_line() == event.to_json_line()

    def test_sets_serialized_sorted(self):
        event = synthetic_events(50, seed=4)[10]
        payload = json.loads(event.to_json_line())
        for field in ("predicted_set", "first_phase_holders", "final_holders"):
            assert payload[field] == sorted(payload[field])

    def test_file_round_trip(self, tmp_path):
        events = synthetic_events(100, seed=5)
        path = tmp_path / "events.jsonl"
        assert write_events(path, events) == 100
        back = list(read_events(path))
        assert [e.to_json_line() for e in back] == [e.to_json_line() for e in events]


class TestArchiveQueryResult:
    def test_holds_requires_mementos(self):
        with pytest.raises(ValueError):
            ArchiveQueryResult(archive_id="a", outcome="Holds", latency=0.1)

    def test_unknown_outcome_rejected(self):
        with pytest.raises(ValueError):
            ArchiveQueryResult(archive_id="a", outcome="Weird", latency=0.1)

    def test_unknown_service_rejected(self):
        event = synthetic_events(1, seed=6)[0]
        with pytest.raises(ValueError):
            AggregationEvent(
                event_id="x",
                service="Nope",
                uri_r=event.uri_r,
                requested_datetime=event.requested_datetime,
                cache_outcome="Hit",
            )
