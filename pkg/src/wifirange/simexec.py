"""Simulated executor: runs deployment plans against an in-process SimWorld.

Behavior is derived entirely from the artifact bundle (parsed configs), so
the whole lifecycle can be exercised without privileges, kernel modules or
real daemons. Fault injection hooks support rollback and teardown testing.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable

from . import simworld as sim
from .compiler import ArtifactBundle
from .deploy import (
    ExecutorBusy,
    ExecutorOpError,
    ProcessRef,
    ResourceSnapshot,
    Step,
    StepExecutionError,
    StepKind,
)

_ROLE_FOR_KIND = {
    StepKind.START_AP_SERVICE: "hostapd",
    StepKind.START_STA_SERVICE: "wpa_supplicant",
    StepKind.START_DHCP_SERVICE: "dnsmasq",
    StepKind.START_AUTH_SERVICE: "radius",
}


def _proc_ref(role: str, name: str) -> ProcessRef:
    return ProcessRef(role=role, node_name=name, proc_id=f"sim-{role}-{name}")


class SimulatedExecutor:
    """One instance drives one deployment; safe for concurrent probing."""

    def __init__(
        self,
        bundle: ArtifactBundle,
        fail_at_step: int | None = None,
        fail_when: Callable[[int, Step], bool] | None = None,
        unkillable: Iterable[str] = (),
    ):
        self._ctx = sim.BundleContext.parse(bundle)
        self._world = sim.empty_world()
        self._lock = threading.RLock()
        self._busy = False
        self._ready = False
        self._steps_applied = 0
        self._fail_at_step = fail_at_step
        self._fail_when = fail_when
        self._unkillable = frozenset(unkillable)
        self.rejections: list[str] = []  # non-fatal sim outcomes (association/dhcp)

    # -- world access -------------------------------------------------

    @property
    def world(self) -> sim.SimWorld:
        with self._lock:
            return self._world

    def _transition(self, event: object, *, fatal: bool = True) -> bool:
        result = sim.sim_step(self._world, event)
        self._world = result.world
        if not result.ok:
            if fatal:
                raise StepExecutionError(result.reason or "simulation rejected the event")
            self.rejections.append(f"{type(event).__name__}: {result.reason}")
        return result.ok

    # -- executor contract ---------------------------------------------

    def acquire(self) -> None:
        with self._lock:
            if self._busy:
                raise ExecutorBusy("executor already holds a deployment")
            self._busy = True

    def release(self) -> None:
        with self._lock:
            self._busy = False
            self._ready = False

    def is_ready(self) -> bool:
        with self._lock:
            return self._ready

    def apply(self, step: Step) -> ProcessRef | None:
        with self._lock:
            index = self._steps_applied
            self._steps_applied += 1
            if self._fail_at_step is not None and index == self._fail_at_step:
                raise StepExecutionError(f"injected fault at step {index} ({step.label()})")
            if self._fail_when is not None and self._fail_when(index, step):
                raise StepExecutionError(f"injected fault at step {index} ({step.label()})")

            if step.kind == StepKind.CREATE_RADIO:
                self._transition(sim.CreateRadio(step.radio_index))
                return None
            if step.kind == StepKind.CREATE_NAMESPACE:
                self._transition(sim.CreateNamespace(step.namespace_name))
                return None
            if step.kind == StepKind.MOVE_INTERFACE:
                self._transition(sim.AttachInterface(step.namespace_name, step.interface_name))
                return None
            if step.kind == StepKind.CONFIGURE_ADDRESS:
                self._transition(sim.AssignAddress(step.namespace_name, step.interface_name, step.address))
                return None
            if step.kind == StepKind.START_AP_SERVICE:
                self._transition(sim.StartAp(self._ctx.ap_state(step.node_name)))
                return _proc_ref("hostapd", step.node_name)
            if step.kind == StepKind.START_DHCP_SERVICE:
                self._transition(sim.StartDhcp(self._ctx.dhcp_state(step.network_name)))
                return _proc_ref("dnsmasq", step.network_name)
            if step.kind == StepKind.START_AUTH_SERVICE:
                self._transition(sim.StartAuth(self._ctx.eap_identities))
                return _proc_ref("radius", "auth")
            if step.kind == StepKind.START_STA_SERVICE:
                sta = self._ctx.sta_state(step.node_name)
                self._transition(sim.StartSta(sta))
                # Association and addressing happen in the background for the
                # real daemons too: their failure shows up in verification,
                # not as a deployment failure.
                associated = self._transition(sim.AssociationAttempt(step.node_name), fatal=False)
                if associated and sta.dhcp:
                    self._transition(sim.DhcpRequest(step.node_name), fatal=False)
                return _proc_ref("wpa_supplicant", step.node_name)
            if step.kind == StepKind.AWAIT_READY:
                self._check_ready()
                self._ready = True
                return None
            raise StepExecutionError(f"unknown step kind {step.kind}")

    def _check_ready(self) -> None:
        for node in self._ctx.ap_configs:
            if node not in self._world.aps:
                raise StepExecutionError(f"hostapd for {node} is not running")
        for node in self._ctx.sta_configs:
            if node not in self._world.stas:
                raise StepExecutionError(f"wpa_supplicant for {node} is not running")
        for network in self._ctx.dhcp_configs:
            if network not in self._world.dhcp_services:
                raise StepExecutionError(f"dnsmasq for {network} is not running")
        if self._ctx.eap_identities and self._world.auth_service is None:
            raise StepExecutionError("authentication service is not running")

    def stop_process(self, ref: ProcessRef) -> None:
        with self._lock:
            if ref.proc_id in self._unkillable or ref.node_name in self._unkillable:
                raise ExecutorOpError(f"{ref.role}/{ref.node_name} is not responding to signals")
            event: object
            if ref.role == "hostapd":
                event = sim.StopAp(ref.node_name)
            elif ref.role == "wpa_supplicant":
                event = sim.StopSta(ref.node_name)
            elif ref.role == "dnsmasq":
                event = sim.StopDhcp(ref.node_name)
            elif ref.role == "radius":
                event = sim.StopAuth()
            else:
                raise ExecutorOpError(f"unknown process role {ref.role}")
            result = sim.sim_step(self._world, event)
            if not result.ok:
                raise ExecutorOpError(result.reason or "stop rejected")
            self._world = result.world

    def remove_namespace(self, name: str) -> None:
        with self._lock:
            if name in self._unkillable:
                raise ExecutorOpError(f"namespace {name} is busy")
            result = sim.sim_step(self._world, sim.RemoveNamespace(name))
            if not result.ok:
                raise ExecutorOpError(result.reason or "remove rejected")
            self._world = result.world

    def remove_radio(self, index: int) -> None:
        with self._lock:
            result = sim.sim_step(self._world, sim.RemoveRadio(index))
            if not result.ok:
                raise ExecutorOpError(result.reason or "remove rejected")
            self._world = result.world

    def enumerate_resources(self) -> ResourceSnapshot:
        with self._lock:
            processes = set()
            for node in self._world.aps:
                processes.add(_proc_ref("hostapd", node))
            for node in self._world.stas:
                processes.add(_proc_ref("wpa_supplicant", node))
            for network in self._world.dhcp_services:
                processes.add(_proc_ref("dnsmasq", network))
            if self._world.auth_service is not None:
                processes.add(_proc_ref("radius", "auth"))
            return ResourceSnapshot(
                namespaces=frozenset(self._world.namespaces),
                radios=frozenset(self._world.radios),
                processes=frozenset(processes),
            )

    # -- verification primitives ----------------------------------------

    def _sta_status(self, sta_node: str, ap_node: str) -> tuple[bool, str]:
        with self._lock:
            world = self._world
        sta = world.stas.get(sta_node)
        if sta is None:
            return False, f"{sta_node}: station process not running"
        associated_to = world.associations.get(sta_node)
        if associated_to is None:
            return False, f"{sta_node}: not associated"
        address = world.sta_address(sta)
        if address is None:
            return False, f"{sta_node}: associated but no address"
        ap = world.aps.get(associated_to)
        gateway = ap.gateway if ap else None
        return True, f"{address} -> {gateway or ap_node} via {associated_to}"

    def check_reachability(self, sta_node: str, ap_node: str) -> tuple[bool, str]:
        ok, detail = self._sta_status(sta_node, ap_node)
        return ok, f"icmp echo: {detail}"

    def check_arp(self, sta_node: str, ap_node: str) -> tuple[bool, str]:
        ok, detail = self._sta_status(sta_node, ap_node)
        return ok, f"arp who-has: {detail}"

    def measure_throughput(self, sta_node: str, ap_node: str) -> tuple[bool, str]:
        from .deploy import NOMINAL_RATE

        ok, detail = self._sta_status(sta_node, ap_node)
        if not ok:
            return False, f"throughput probe: {detail}"
        with self._lock:
            ap = self._world.aps.get(self._world.associations.get(sta_node, ""))
        rate = NOMINAL_RATE.get(ap.band if ap else "g", NOMINAL_RATE["g"])
        return True, f"throughput probe: {rate} units nominal"
