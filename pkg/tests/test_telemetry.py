"""Telemetry: event log ordering/filters and metrics monotonicity/exposition."""

from __future__ import annotations

import random

import pytest

from wifirange.access import Forbidden, Role
from wifirange.store import Store
from wifirange.telemetry import EventCategory, EventLog, MetricsRegistry


@pytest.fixture
def db(tmp_path):
    s = Store(tmp_path / "telemetry.db")
    yield s
    s.close()


class TestEventLog:
    def test_record_and_query(self, db):
        log = EventLog(db)
        log.record(EventCategory.SCENARIO, "launch queued", actor="bob", subject="i1")
        events = log.query(category=EventCategory.SCENARIO)
        assert len(events) == 1
        assert events[0].detail == "launch queued"
        assert events[0].actor == "bob"

    def test_timestamp_order_oracle(self, db):
        # Feed events with a deliberately jittery clock; the log must clamp so
        # stored order equals sorted order.
        times = [5.0, 4.0, 6.0, 5.5, 7.0]
        clock = iter(times)
        log = EventLog(db, clock=lambda: next(clock))
        for i in range(len(times)):
            log.record(EventCategory.AUTH, f"e{i}")
        stored = [e.timestamp for e in log.query()]
        assert stored == sorted(stored)
        assert [e.detail for e in log.query()] == [f"e{i}" for i in range(len(times))]

    def test_many_events_sorted(self, db):
        log = EventLog(db)
        rng = random.Random(7)
        base = 1000.0
        for i in range(1000):
            base += rng.random()
            log.record(EventCategory.INSTANCE, f"event {i}", timestamp=base)
        events = log.query(limit=1000)
        assert len(events) == 1000
        timestamps = [e.timestamp for e in events]
        assert timestamps == sorted(timestamps)

    def test_filters_and_limit(self, db):
        log = EventLog(db)
        for i in range(30):
            log.record(
                EventCategory.AUTH if i % 2 == 0 else EventCategory.SECURITY,
                f"e{i}",
                actor="alice" if i % 3 == 0 else "bob",
                timestamp=float(i),
            )
        auth = log.query(category=EventCategory.AUTH)
        assert all(e.category == EventCategory.AUTH for e in auth)
        assert log.query(since=100.0) == []
        assert len(log.query(limit=10)) == 10
        alice_auth = log.query(category="AUTH", actor="alice")
        assert all(e.actor == "alice" for e in alice_auth)

    def test_viewer_role_gate(self, db):
        log = EventLog(db)
        log.record(EventCategory.AUTH, "x")
        assert log.query(viewer_role=Role.INSTRUCTOR)
        assert log.query(viewer_role=Role.ADMIN)
        with pytest.raises(Forbidden):
            log.query(viewer_role=Role.LEARNER)


class TestMetrics:
    def test_initial_counters_zero(self):
        m = MetricsRegistry()
        snap = m.snapshot()
        assert snap["total_launches"] == 0
        assert snap["failed_deployments"] == 0
        assert snap["auth_failures"] == 0

    def test_counters_monotone_under_random_ops(self):
        m = MetricsRegistry()
        rng = random.Random(99)
        names = ["total_launches", "failed_deployments", "auth_failures", "custom_counter"]
        previous = m.snapshot()
        for _ in range(500):
            m.inc(rng.choice(names), rng.choice((1, 2, 5)))
            current = {k: v for k, v in m.snapshot().items()}
            for name in names:
                assert current.get(name, 0) >= previous.get(name, 0)
            previous = current

    def test_negative_delta_rejected(self):
        m = MetricsRegistry()
        with pytest.raises(ValueError):
            m.inc("total_launches", -1)

    def test_gauges_clamped_non_negative(self):
        m = MetricsRegistry()
        m.register_gauge("weird", lambda: -5)
        assert m.snapshot()["weird"] == 0

    def test_text_exposition_format(self):
        m = MetricsRegistry()
        m.inc("total_launches", 3)
        m.register_gauge("active_instances", lambda: 2)
        text = m.render_text()
        lines = text.splitlines()
        assert "active_instances 2" in lines
        assert "total_launches 3" in lines
        assert text.endswith("\n")
        for line in lines:
            name, value = line.split(" ")
            float(value)  # parses as a number

    def test_gauge_tracks_store(self, db):
        from wifirange.store import InstanceRow

        m = MetricsRegistry()
        m.register_gauge("active_instances", db.active_instance_count)
        assert m.snapshot()["active_instances"] == 0
        db.create_instance_guarded(InstanceRow("i1", "s", 1, "u", "RUNNING", 0, 10, None), 5, 5)
        assert m.snapshot()["active_instances"] == 1
        db.set_instance_state("i1", "TERMINATED")
        assert m.snapshot()["active_instances"] == 0
