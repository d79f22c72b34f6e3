"""Deployment engine: typed plans, pluggable executors, rollback and teardown.

A plan is the typed equivalent of the bundle's orchestration script. deploy()
drives an executor through the plan while keeping a resource ledger; a failed
step rolls back everything acquired so far, and teardown() releases whatever
a ledger still holds, from any state, idempotently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Protocol

from .compiler import ArtifactBundle
from .model import (
    NodeRole,
    ScenarioSpec,
    TopologyManifest,
    manifest_from_dict,
)

# Real-executor verification policy; the simulated executor answers instantly.
CHECK_TIMEOUT_SECONDS = 10
REACHABILITY_RETRIES = 3

# Modeled nominal throughput per band (pass/fail is the contract, the rate is
# informational).
NOMINAL_RATE = {"g": 54, "a": 300}


class IncompleteBundle(Exception):
    code = "INCOMPLETE_BUNDLE"


class ExecutorBusy(Exception):
    code = "EXECUTOR_BUSY"


class StepExecutionError(Exception):
    """Raised by executors when a plan step cannot be applied."""


class ExecutorOpError(Exception):
    """Raised by executors when a resource release operation fails."""


class NotDeployed(Exception):
    code = "NOT_DEPLOYED"


class LedgerMismatch(Exception):
    """Internal invariant breach: ledger does not reflect enumerated reality."""


@dataclass(frozen=True)
class ResidualItem:
    kind: str  # "process" | "namespace" | "radio"
    name: str
    reason: str


class ResidualResources(Exception):
    """Teardown could not release everything; never masked."""

    def __init__(self, residual: tuple[ResidualItem, ...]):
        self.residual = residual
        super().__init__(f"{len(residual)} resource(s) not released: " + ", ".join(f"{r.kind} {r.name}" for r in residual))


class RollbackFailure(Exception):
    """Rollback after a failed step left residual resources behind."""

    def __init__(self, failed_step: int, cause: str, residual: tuple[ResidualItem, ...]):
        self.failed_step = failed_step
        self.cause = cause
        self.residual = residual
        super().__init__(f"step {failed_step} failed ({cause}); rollback left {len(residual)} resource(s)")


class StepKind(str, Enum):
    CREATE_RADIO = "CREATE_RADIO"
    CREATE_NAMESPACE = "CREATE_NAMESPACE"
    MOVE_INTERFACE = "MOVE_INTERFACE"
    CONFIGURE_ADDRESS = "CONFIGURE_ADDRESS"
    START_AP_SERVICE = "START_AP_SERVICE"
    START_STA_SERVICE = "START_STA_SERVICE"
    START_DHCP_SERVICE = "START_DHCP_SERVICE"
    START_AUTH_SERVICE = "START_AUTH_SERVICE"
    AWAIT_READY = "AWAIT_READY"


CREATE_STEP_KINDS = {StepKind.CREATE_RADIO, StepKind.CREATE_NAMESPACE}
START_STEP_KINDS = {
    StepKind.START_AP_SERVICE,
    StepKind.START_STA_SERVICE,
    StepKind.START_DHCP_SERVICE,
    StepKind.START_AUTH_SERVICE,
}


@dataclass(frozen=True)
class Step:
    kind: StepKind
    radio_index: int | None = None
    namespace_name: str | None = None
    interface_name: str | None = None
    node_name: str | None = None
    network_name: str | None = None
    address: str | None = None

    def label(self) -> str:
        arg = next(
            (
                v
                for v in (
                    self.node_name,
                    self.network_name,
                    self.namespace_name,
                    self.interface_name,
                    self.radio_index,
                )
                if v is not None
            ),
            "",
        )
        return f"{self.kind.value}({arg})"


@dataclass(frozen=True)
class DeploymentPlan:
    scenario_id: str
    version: int
    steps: tuple[Step, ...]
    manifest: TopologyManifest


@dataclass(frozen=True)
class ProcessRef:
    role: str  # hostapd | wpa_supplicant | dnsmasq | radius
    node_name: str  # node, network, or "auth"
    proc_id: str


@dataclass(frozen=True)
class ResourceSnapshot:
    namespaces: frozenset[str]
    radios: frozenset[int]
    processes: frozenset[ProcessRef]

    def is_empty(self) -> bool:
        return not (self.namespaces or self.radios or self.processes)


@dataclass
class ResourceLedger:
    live_namespaces: set[str] = field(default_factory=set)
    live_radios: set[int] = field(default_factory=set)
    live_processes: set[ProcessRef] = field(default_factory=set)

    def is_empty(self) -> bool:
        return not (self.live_namespaces or self.live_radios or self.live_processes)

    def entry_count(self) -> int:
        return len(self.live_namespaces) + len(self.live_radios) + len(self.live_processes)

    def as_snapshot(self) -> ResourceSnapshot:
        return ResourceSnapshot(
            namespaces=frozenset(self.live_namespaces),
            radios=frozenset(self.live_radios),
            processes=frozenset(self.live_processes),
        )


class Executor(Protocol):
    """One executor instance drives exactly one scenario instance."""

    def acquire(self) -> None: ...

    def release(self) -> None: ...

    def apply(self, step: Step) -> ProcessRef | None: ...

    def stop_process(self, ref: ProcessRef) -> None: ...

    def remove_namespace(self, name: str) -> None: ...

    def remove_radio(self, index: int) -> None: ...

    def enumerate_resources(self) -> ResourceSnapshot: ...

    def is_ready(self) -> bool: ...

    def check_reachability(self, sta_node: str, ap_node: str) -> tuple[bool, str]: ...

    def check_arp(self, sta_node: str, ap_node: str) -> tuple[bool, str]: ...

    def measure_throughput(self, sta_node: str, ap_node: str) -> tuple[bool, str]: ...


# ---------------------------------------------------------------------------
# Planning
# ---------------------------------------------------------------------------

def plan_deployment(bundle: ArtifactBundle) -> DeploymentPlan:
    """Derive the ordered step list from a complete artifact bundle."""
    paths = set(bundle.paths())
    if "manifest.json" not in paths:
        raise IncompleteBundle("bundle has no manifest.json")
    if "orchestration.sh" not in paths:
        raise IncompleteBundle("bundle has no orchestration.sh")
    manifest = manifest_from_dict(json.loads(bundle.get("manifest.json").content))

    entries = sorted(manifest.entries, key=lambda e: e.radio_index)
    for entry in entries:
        if entry.role == NodeRole.AP and f"ap/{entry.node_name}/hostapd.conf" not in paths:
            raise IncompleteBundle(f"missing AP config for {entry.node_name}")
        if entry.role == NodeRole.STA and f"sta/{entry.node_name}/wpa_supplicant.conf" not in paths:
            raise IncompleteBundle(f"missing STA config for {entry.node_name}")

    dhcp_networks = sorted(
        p.split("/")[1] for p in paths if p.startswith("net/") and p.endswith("/dnsmasq.conf")
    )
    has_auth = any(p.startswith("eap/") for p in paths)

    steps: list[Step] = []
    for entry in entries:
        steps.append(Step(StepKind.CREATE_RADIO, radio_index=entry.radio_index))
    for entry in entries:
        steps.append(Step(StepKind.CREATE_NAMESPACE, namespace_name=entry.namespace_name))
    for entry in entries:
        steps.append(
            Step(
                StepKind.MOVE_INTERFACE,
                radio_index=entry.radio_index,
                interface_name=entry.interface_name,
                namespace_name=entry.namespace_name,
            )
        )
    for entry in entries:
        if entry.address is not None:
            steps.append(
                Step(
                    StepKind.CONFIGURE_ADDRESS,
                    namespace_name=entry.namespace_name,
                    interface_name=entry.interface_name,
                    node_name=entry.node_name,
                    address=entry.address,
                )
            )
    if has_auth:
        steps.append(Step(StepKind.START_AUTH_SERVICE))
    for entry in entries:
        if entry.role == NodeRole.AP:
            steps.append(Step(StepKind.START_AP_SERVICE, node_name=entry.node_name))
    for network_name in dhcp_networks:
        steps.append(Step(StepKind.START_DHCP_SERVICE, network_name=network_name))
    for entry in entries:
        if entry.role == NodeRole.STA:
            steps.append(Step(StepKind.START_STA_SERVICE, node_name=entry.node_name))
    steps.append(Step(StepKind.AWAIT_READY))

    return DeploymentPlan(
        scenario_id=bundle.scenario_id,
        version=bundle.version,
        steps=tuple(steps),
        manifest=manifest,
    )


# ---------------------------------------------------------------------------
# Deploy / rollback
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DeployResult:
    outcome: str  # "SUCCESS" | "FAILED"
    ledger: ResourceLedger
    failed_step: int | None = None
    cause: str | None = None

    @property
    def success(self) -> bool:
        return self.outcome == "SUCCESS"


def _ledger_add(ledger: ResourceLedger, step: Step, ref: ProcessRef | None) -> None:
    if step.kind == StepKind.CREATE_RADIO:
        ledger.live_radios.add(step.radio_index)
    elif step.kind == StepKind.CREATE_NAMESPACE:
        ledger.live_namespaces.add(step.namespace_name)
    elif step.kind in START_STEP_KINDS:
        if ref is None:
            raise LedgerMismatch(f"executor returned no process ref for {step.label()}")
        ledger.live_processes.add(ref)


def _release_all(executor: Executor, ledger: ResourceLedger) -> tuple[list[str], list[ResidualItem]]:
    """Release every ledger entry; shared by rollback and teardown."""
    removed: list[str] = []
    residual: list[ResidualItem] = []

    for ref in sorted(ledger.live_processes, key=lambda r: (r.role, r.node_name)):
        try:
            executor.stop_process(ref)
        except ExecutorOpError as exc:
            residual.append(ResidualItem("process", f"{ref.role}/{ref.node_name}", str(exc)))
        else:
            ledger.live_processes.discard(ref)
            removed.append(f"process {ref.role}/{ref.node_name}")

    for name in sorted(ledger.live_namespaces):
        try:
            executor.remove_namespace(name)
        except ExecutorOpError as exc:
            residual.append(ResidualItem("namespace", name, str(exc)))
        else:
            ledger.live_namespaces.discard(name)
            removed.append(f"namespace {name}")

    for index in sorted(ledger.live_radios):
        try:
            executor.remove_radio(index)
        except ExecutorOpError as exc:
            residual.append(ResidualItem("radio", str(index), str(exc)))
        else:
            ledger.live_radios.discard(index)
            removed.append(f"radio {index}")

    return removed, residual


def deploy(executor: Executor, plan: DeploymentPlan) -> DeployResult:
    """Apply the plan; on step failure roll back everything acquired so far.

    On success the executor stays acquired (the deployment is live) and the
    returned ledger holds one entry per Create/Start step. On failure the
    ledger comes back empty unless rollback itself failed, which raises
    RollbackFailure carrying the residual.
    """
    executor.acquire()
    ledger = ResourceLedger()
    for index, step in enumerate(plan.steps):
        try:
            ref = executor.apply(step)
        except StepExecutionError as exc:
            _removed, residual = _release_all(executor, ledger)
            executor.release()
            if residual:
                raise RollbackFailure(index, str(exc), tuple(residual)) from exc
            return DeployResult(outcome="FAILED", ledger=ledger, failed_step=index, cause=str(exc))
        _ledger_add(ledger, step, ref)

    reality = executor.enumerate_resources()
    if reality != ledger.as_snapshot():
        raise LedgerMismatch(
            f"ledger {ledger.as_snapshot()} does not match enumerated resources {reality}"
        )
    return DeployResult(outcome="SUCCESS", ledger=ledger)


# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------

class CheckKind(str, Enum):
    ICMP_REACHABILITY = "ICMP_REACHABILITY"
    ARP_RESOLUTION = "ARP_RESOLUTION"
    THROUGHPUT_PROBE = "THROUGHPUT_PROBE"


@dataclass(frozen=True)
class VerificationCheck:
    kind: CheckKind
    subject: tuple[str, str]  # (sta node, ap node)
    passed: bool
    detail: str


@dataclass(frozen=True)
class VerificationReport:
    checks: tuple[VerificationCheck, ...]

    @property
    def overall(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "overall": self.overall,
            "checks": [
                {
                    "kind": c.kind.value,
                    "subject": list(c.subject),
                    "pass": c.passed,
                    "detail": c.detail,
                }
                for c in self.checks
            ],
        }


def verify(executor: Executor, manifest: TopologyManifest, spec: ScenarioSpec) -> VerificationReport:
    """Run reachability/ARP checks per station and one throughput probe per
    network that has stations."""
    if not executor.is_ready():
        raise NotDeployed("verification requires a successful deployment")

    gateway_ap: dict[str, str] = {}
    for node in spec.nodes:
        if node.role == NodeRole.AP and node.network not in gateway_ap:
            gateway_ap[node.network] = node.node_name

    checks: list[VerificationCheck] = []
    for sta in spec.stas():
        ap_node = gateway_ap[sta.network]
        ok, detail = executor.check_reachability(sta.node_name, ap_node)
        checks.append(VerificationCheck(CheckKind.ICMP_REACHABILITY, (sta.node_name, ap_node), ok, detail))
        ok, detail = executor.check_arp(sta.node_name, ap_node)
        checks.append(VerificationCheck(CheckKind.ARP_RESOLUTION, (sta.node_name, ap_node), ok, detail))

    for network in spec.networks:
        stations = [s for s in spec.stas() if s.network == network.network_name]
        if not stations:
            continue  # a probe needs a node pair
        probe = stations[0]
        ap_node = gateway_ap[network.network_name]
        ok, detail = executor.measure_throughput(probe.node_name, ap_node)
        checks.append(VerificationCheck(CheckKind.THROUGHPUT_PROBE, (probe.node_name, ap_node), ok, detail))

    return VerificationReport(checks=tuple(checks))


# ---------------------------------------------------------------------------
# Teardown
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TeardownReport:
    removed: tuple[str, ...]


def teardown(executor: Executor, ledger: ResourceLedger) -> TeardownReport:
    """Release everything the ledger holds; callable from any state.

    Raises ResidualResources when something cannot be released or when the
    executor still enumerates resources afterwards; the ledger keeps exactly
    the entries that failed, so a later retry can pick them up.
    """
    removed, residual = _release_all(executor, ledger)

    leftovers = executor.enumerate_resources()
    for name in sorted(leftovers.namespaces):
        residual.append(ResidualItem("namespace", name, "still enumerated after teardown"))
    for index in sorted(leftovers.radios):
        residual.append(ResidualItem("radio", str(index), "still enumerated after teardown"))
    for ref in sorted(leftovers.processes, key=lambda r: (r.role, r.node_name)):
        if ref in ledger.live_processes:
            continue  # already reported as a stop failure above
        residual.append(ResidualItem("process", f"{ref.role}/{ref.node_name}", "still enumerated after teardown"))

    if residual:
        # De-duplicate items reported both as op failures and leftovers.
        unique: dict[tuple[str, str], ResidualItem] = {}
        for item in residual:
            unique.setdefault((item.kind, item.name), item)
        raise ResidualResources(tuple(unique.values()))

    executor.release()
    return TeardownReport(removed=tuple(removed))
