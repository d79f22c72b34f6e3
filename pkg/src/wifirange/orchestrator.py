"""Instance lifecycle control plane: state machine, task queue, quotas, reaping.

Instances move through a fixed transition relation persisted in the store;
deployment and teardown work is queued and executed by any number of worker
threads with at-most-one in-flight task per instance. Every transition emits
exactly one INSTANCE event.
"""

from __future__ import annotations

import secrets
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable

from .access import Forbidden, Role
from .compiler import ArtifactBundle
from .deploy import (
    Executor,
    ResidualResources,
    ResourceLedger,
    RollbackFailure,
    deploy,
    plan_deployment,
    teardown,
    verify,
)
from .store import InstanceRow, NotFound, Store, Visibility
from .telemetry import EventCategory, EventLog, MetricsRegistry


class InstanceState(str, Enum):
    PENDING = "PENDING"
    DEPLOYING = "DEPLOYING"
    VERIFYING = "VERIFYING"
    RUNNING = "RUNNING"
    TEARING_DOWN = "TEARING_DOWN"
    TERMINATED = "TERMINATED"
    FAILED = "FAILED"


LEGAL_TRANSITIONS: dict[InstanceState, frozenset[InstanceState]] = {
    InstanceState.PENDING: frozenset({InstanceState.DEPLOYING}),
    InstanceState.DEPLOYING: frozenset({InstanceState.VERIFYING, InstanceState.FAILED}),
    InstanceState.VERIFYING: frozenset({InstanceState.RUNNING, InstanceState.FAILED}),
    InstanceState.RUNNING: frozenset({InstanceState.TEARING_DOWN, InstanceState.FAILED}),
    InstanceState.FAILED: frozenset({InstanceState.TEARING_DOWN}),
    InstanceState.TEARING_DOWN: frozenset({InstanceState.TERMINATED}),
    InstanceState.TERMINATED: frozenset(),
}

TERMINABLE_STATES = frozenset(
    {InstanceState.RUNNING, InstanceState.FAILED, InstanceState.VERIFYING, InstanceState.DEPLOYING}
)


class InvalidState(Exception):
    code = "INVALID_STATE"


class IllegalTransition(Exception):
    """Internal invariant breach: the transition relation was violated."""


@dataclass(frozen=True)
class Principal:
    username: str
    role: Role


@dataclass
class OrchestratorConfig:
    ttl_seconds: float = 2 * 3600
    per_user_quota: int = 2
    global_capacity: int = 16
    worker_count: int = 2
    reap_interval_seconds: float = 30.0


def make_instance_id(clock: Callable[[], float] = time.time) -> str:
    """Time-ordered random identifier: sortable by creation, unguessable."""
    millis = int(clock() * 1000) & 0xFFFFFFFFFFFF
    return f"{millis:012x}{secrets.token_hex(8)}"


class Orchestrator:
    def __init__(
        self,
        store: Store,
        executor_factory: Callable[[ArtifactBundle], Executor],
        config: OrchestratorConfig | None = None,
        events: EventLog | None = None,
        metrics: MetricsRegistry | None = None,
        clock: Callable[[], float] = time.time,
    ):
        self.store = store
        self.config = config or OrchestratorConfig()
        self.events = events or EventLog(store, clock=clock)
        self.metrics = metrics or MetricsRegistry()
        self._executor_factory = executor_factory
        self._clock = clock
        self._transition_lock = threading.RLock()
        self._live_lock = threading.Lock()
        self._live: dict[str, tuple[Executor, ResourceLedger]] = {}
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self.metrics.register_gauge("active_instances", self.store.active_instance_count)
        self.metrics.register_gauge("namespaces_live", self.live_namespace_count)

    # ------------------------------------------------------------------
    # Introspection
    # ------------------------------------------------------------------

    def live_namespace_count(self) -> int:
        with self._live_lock:
            return sum(len(ledger.live_namespaces) for _, ledger in self._live.values())

    def ledger_for(self, instance_id: str) -> ResourceLedger | None:
        with self._live_lock:
            entry = self._live.get(instance_id)
            return entry[1] if entry else None

    # ------------------------------------------------------------------
    # State machine core
    # ------------------------------------------------------------------

    def _transition(
        self,
        instance_id: str,
        to_state: InstanceState,
        verification: dict | None = None,
    ) -> InstanceState:
        with self._transition_lock:
            row = self.store.get_instance(instance_id)
            current = InstanceState(row.state)
            if to_state not in LEGAL_TRANSITIONS[current]:
                raise IllegalTransition(f"{current.value} -> {to_state.value} is not a legal transition")
            self.store.set_instance_state(instance_id, to_state.value, verification)
        self.events.record(
            EventCategory.INSTANCE,
            f"{current.value}->{to_state.value}",
            subject=instance_id,
        )
        return current

    # ------------------------------------------------------------------
    # Launch / status / terminate / reap
    # ------------------------------------------------------------------

    def launch_scenario(self, user: Principal, scenario_id: str, version: int | None = None) -> str:
        stored = self.store.get_scenario(scenario_id, version)
        if stored.visibility == Visibility.DRAFT and user.role not in (Role.ADMIN, Role.INSTRUCTOR):
            # Drafts are invisible to learners, indistinguishable from absent.
            raise NotFound(f"scenario {scenario_id} not found")

        now = self._clock()
        instance_id = make_instance_id(self._clock)
        row = InstanceRow(
            instance_id=instance_id,
            scenario_id=scenario_id,
            version=stored.version,
            owner=user.username,
            state=InstanceState.PENDING.value,
            created_at=now,
            expires_at=now + self.config.ttl_seconds,
            verification=None,
        )
        self.store.create_instance_guarded(
            row, self.config.per_user_quota, self.config.global_capacity
        )
        self.metrics.inc("total_launches")
        self.events.record(
            EventCategory.SCENARIO,
            f"launch of {scenario_id} v{stored.version} queued",
            actor=user.username,
            subject=instance_id,
        )
        self.store.enqueue_task(instance_id, "deploy", now)
        return instance_id

    def get_instance_status(self, user: Principal, instance_id: str) -> InstanceRow:
        row = self.store.get_instance(instance_id)
        if row.owner != user.username and user.role not in (Role.ADMIN, Role.INSTRUCTOR):
            raise Forbidden("not your instance")
        return row

    def list_instances(self, user: Principal) -> list[InstanceRow]:
        if user.role in (Role.ADMIN, Role.INSTRUCTOR):
            return self.store.list_instances()
        return self.store.list_instances(owner=user.username)

    def terminate_instance(self, user: Principal, instance_id: str) -> None:
        row = self.store.get_instance(instance_id)
        if row.owner != user.username and user.role not in (Role.ADMIN, Role.INSTRUCTOR):
            raise Forbidden("not your instance")
        with self._transition_lock:
            state = InstanceState(self.store.get_instance(instance_id).state)
            if state not in TERMINABLE_STATES:
                raise InvalidState(f"cannot terminate instance in state {state.value}")
            if state in (InstanceState.RUNNING, InstanceState.FAILED):
                self._transition(instance_id, InstanceState.TEARING_DOWN)
            # DEPLOYING/VERIFYING: the in-flight deployment task finishes
            # first; the queued teardown then takes it down from RUNNING/FAILED.
        self.events.record(
            EventCategory.SCENARIO,
            "termination requested",
            actor=user.username,
            subject=instance_id,
        )
        self.store.enqueue_task(instance_id, "teardown", self._clock())

    def reap_expired(self, now: float | None = None) -> list[str]:
        now = self._clock() if now is None else now
        reaped = []
        for row in self.store.expired_running(now):
            with self._transition_lock:
                if self.store.get_instance(row.instance_id).state != InstanceState.RUNNING.value:
                    continue
                self._transition(row.instance_id, InstanceState.TEARING_DOWN)
            self.events.record(
                EventCategory.SCENARIO, "expired; teardown enqueued", subject=row.instance_id
            )
            self.store.enqueue_task(row.instance_id, "teardown", now)
            reaped.append(row.instance_id)
        return reaped

    # ------------------------------------------------------------------
    # Task processing
    # ------------------------------------------------------------------

    def process_next_task(self) -> str | None:
        """Claim and run one task; returns an outcome label or None if idle."""
        task = self.store.claim_next_task()
        if task is None:
            return None
        try:
            if task.kind == "deploy":
                return self._run_deploy_task(task.instance_id)
            if task.kind == "teardown":
                return self._run_teardown_task(task.instance_id)
            return "unknown-task"
        finally:
            self.store.finish_task(task.task_id)

    def _run_deploy_task(self, instance_id: str) -> str:
        row = self.store.get_instance(instance_id)
        if row.state != InstanceState.PENDING.value:
            return "skipped"
        self._transition(instance_id, InstanceState.DEPLOYING)
        stored = self.store.get_scenario(row.scenario_id, row.version)
        try:
            bundle = stored.bundle
            plan = plan_deployment(bundle)
            executor = self._executor_factory(bundle)
            result = deploy(executor, plan)
        except RollbackFailure as exc:
            self.metrics.inc("failed_deployments")
            self.events.record(
                EventCategory.DEPLOYMENT,
                f"deploy failed at step {exc.failed_step} and rollback left residue: {exc.cause}",
                subject=instance_id,
            )
            self._transition(instance_id, InstanceState.FAILED)
            self.store.enqueue_task(instance_id, "teardown", self._clock())
            return "failed"
        except Exception as exc:  # planning/compile faults are deployment failures
            self.metrics.inc("failed_deployments")
            self.events.record(
                EventCategory.DEPLOYMENT, f"deploy error: {exc}", subject=instance_id
            )
            self._transition(instance_id, InstanceState.FAILED)
            self.store.enqueue_task(instance_id, "teardown", self._clock())
            return "failed"

        if not result.success:
            self.metrics.inc("failed_deployments")
            self.events.record(
                EventCategory.DEPLOYMENT,
                f"deploy failed at step {result.failed_step}: {result.cause}",
                subject=instance_id,
            )
            with self._live_lock:
                self._live[instance_id] = (executor, result.ledger)
            self._transition(instance_id, InstanceState.FAILED)
            self.store.enqueue_task(instance_id, "teardown", self._clock())
            return "failed"

        with self._live_lock:
            self._live[instance_id] = (executor, result.ledger)
        # Executors that can report resource usage (the real one) get
        # per-instance gauges; the simulated executor does not expose any.
        usage_fn = getattr(executor, "resource_usage", None)
        if callable(usage_fn):
            for key in ("cpu_seconds", "memory_bytes"):
                self.metrics.register_gauge(
                    f"instance_{instance_id}_{key}",
                    lambda k=key, fn=usage_fn: fn().get(k, 0.0),
                )
        self._transition(instance_id, InstanceState.VERIFYING)
        report = verify(executor, plan.manifest, stored.spec)
        self.events.record(
            EventCategory.DEPLOYMENT,
            f"verification {'passed' if report.overall else 'FAILED'} "
            f"({sum(c.passed for c in report.checks)}/{len(report.checks)} checks)",
            subject=instance_id,
        )
        # Verification failure is recorded, not fatal: a broken testbed may
        # itself be the exercise.
        self._transition(instance_id, InstanceState.RUNNING, verification=report.to_dict())
        return "running"

    def _run_teardown_task(self, instance_id: str) -> str:
        with self._transition_lock:
            state = InstanceState(self.store.get_instance(instance_id).state)
            if state == InstanceState.TERMINATED:
                return "noop"
            if state in (InstanceState.RUNNING, InstanceState.FAILED):
                self._transition(instance_id, InstanceState.TEARING_DOWN)
            elif state != InstanceState.TEARING_DOWN:
                # A teardown task should never outrun the deployment task for
                # its instance; per-instance task serialization prevents it.
                self.events.record(
                    EventCategory.DEPLOYMENT,
                    f"teardown skipped in state {state.value}",
                    subject=instance_id,
                )
                return "skipped"

        with self._live_lock:
            executor, ledger = self._live.pop(instance_id, (None, None))
        for key in ("cpu_seconds", "memory_bytes"):
            self.metrics.unregister_gauge(f"instance_{instance_id}_{key}")
        if executor is not None:
            try:
                teardown(executor, ledger)
            except ResidualResources as exc:
                with self._live_lock:
                    self._live[instance_id] = (executor, ledger)
                self.events.record(
                    EventCategory.DEPLOYMENT,
                    f"teardown left residual resources: {exc}",
                    subject=instance_id,
                )
                return "residual"
        self._transition(instance_id, InstanceState.TERMINATED)
        return "terminated"

    # ------------------------------------------------------------------
    # Boot recovery and worker threads
    # ------------------------------------------------------------------

    def recover_on_boot(self) -> int:
        """Fail-safe recovery: requeue claimed tasks, fail half-deployed instances."""
        requeued = self.store.reset_in_flight_tasks()
        recovered = 0
        for row in self.store.instances_in_states(
            (InstanceState.DEPLOYING.value, InstanceState.VERIFYING.value)
        ):
            self._transition(row.instance_id, InstanceState.FAILED)
            self.events.record(
                EventCategory.DEPLOYMENT,
                "in-flight deployment failed by boot recovery",
                subject=row.instance_id,
            )
            self.store.enqueue_task(row.instance_id, "teardown", self._clock())
            recovered += 1
        return requeued + recovered

    def start(self) -> None:
        self._stop.clear()
        for n in range(self.config.worker_count):
            thread = threading.Thread(target=self._worker_loop, name=f"range-worker-{n}", daemon=True)
            thread.start()
            self._threads.append(thread)
        reaper = threading.Thread(target=self._reaper_loop, name="range-reaper", daemon=True)
        reaper.start()
        self._threads.append(reaper)

    def stop(self) -> None:
        self._stop.set()
        for thread in self._threads:
            thread.join(timeout=5)
        self._threads.clear()

    def _worker_loop(self) -> None:
        while not self._stop.is_set():
            try:
                outcome = self.process_next_task()
            except Exception:
                outcome = None  # never kill the worker; failures are state transitions
            if outcome is None:
                self._stop.wait(0.005)

    def _reaper_loop(self) -> None:
        while not self._stop.wait(self.config.reap_interval_seconds):
            try:
                self.reap_expired()
            except Exception:
                pass
