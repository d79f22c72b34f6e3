"""Monitoring facility: structured event log and a metrics registry.

Events are persisted through the store (append-only, FIFO retention);
metrics live in process as monotone counters plus gauge callbacks, exposed
in a plain "name value" text form that common scrapers accept.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable

from .access import Action, Forbidden, Role, decide_permission
from .store import Store


class EventCategory(str, Enum):
    AUTH = "AUTH"
    SCENARIO = "SCENARIO"
    INSTANCE = "INSTANCE"
    DEPLOYMENT = "DEPLOYMENT"
    SECURITY = "SECURITY"


@dataclass(frozen=True)
class Event:
    timestamp: float
    category: EventCategory
    actor: str | None
    subject: str | None
    detail: str

    def to_dict(self) -> dict:
        return {
            "timestamp": self.timestamp,
            "category": self.category.value,
            "actor": self.actor,
            "subject": self.subject,
            "detail": self.detail,
        }


class EventLog:
    """Append-only event feed; timestamps are monotone per writer."""

    def __init__(self, store: Store, clock: Callable[[], float] = time.time):
        self._store = store
        self._clock = clock
        self._lock = threading.Lock()
        self._last_ts = 0.0

    def record(
        self,
        category: EventCategory,
        detail: str,
        actor: str | None = None,
        subject: str | None = None,
        timestamp: float | None = None,
    ) -> Event:
        with self._lock:
            ts = self._clock() if timestamp is None else timestamp
            if ts < self._last_ts:
                ts = self._last_ts
            self._last_ts = ts
        event = Event(ts, EventCategory(category), actor, subject, detail)
        self._store.append_event(ts, event.category.value, actor, subject, detail)
        return event

    def query(
        self,
        category: EventCategory | str | None = None,
        actor: str | None = None,
        since: float | None = None,
        until: float | None = None,
        limit: int = 1000,
        viewer_role: Role | None = None,
    ) -> list[Event]:
        """Time-ordered, filtered events; callers with a role need METRICS_READ."""
        if viewer_role is not None and not decide_permission(viewer_role, Action.METRICS_READ):
            raise Forbidden("event access requires METRICS_READ")
        rows = self._store.query_events(
            category=EventCategory(category).value if category is not None else None,
            actor=actor,
            since=since,
            until=until,
            limit=limit,
        )
        return [
            Event(r.timestamp, EventCategory(r.category), r.actor, r.subject, r.detail)
            for r in rows
        ]


class MetricsRegistry:
    """Monotone counters plus gauge callbacks with a text exposition."""

    def __init__(self):
        self._lock = threading.Lock()
        self._counters: dict[str, float] = {
            "total_launches": 0,
            "failed_deployments": 0,
            "auth_failures": 0,
        }
        self._gauges: dict[str, Callable[[], float]] = {}

    def inc(self, name: str, delta: float = 1) -> None:
        if delta < 0:
            raise ValueError("counters are monotone; negative deltas are not allowed")
        with self._lock:
            self._counters[name] = self._counters.get(name, 0) + delta

    def counter(self, name: str) -> float:
        with self._lock:
            return self._counters.get(name, 0)

    def register_gauge(self, name: str, fn: Callable[[], float]) -> None:
        with self._lock:
            self._gauges[name] = fn

    def unregister_gauge(self, name: str) -> None:
        with self._lock:
            self._gauges.pop(name, None)

    def snapshot(self) -> dict[str, float]:
        """Consistent view: counters under the lock, gauges sampled once."""
        with self._lock:
            values = dict(self._counters)
            gauges = list(self._gauges.items())
        for name, fn in gauges:
            values[name] = max(0, fn())
        return values

    def render_text(self) -> str:
        lines = [f"{name} {value:g}" for name, value in sorted(self.snapshot().items())]
        return "\n".join(lines) + "\n"
