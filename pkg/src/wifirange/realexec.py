"""Real executor: drives OS namespaces, mac80211_hwsim radios and daemons.

Deployment defers to the bundle's own orchestration.sh (the generated
artifacts stay authoritative); this class materializes the bundle, runs the
script, watches for the readiness marker, and knows how to enumerate and
release the resources the script created. Requires root and the usual
wireless userland; check_privileges() reports what is missing up front.
"""

from __future__ import annotations

import json
import os
import re
import shutil
import signal
import subprocess
import tempfile
import threading
import time
from pathlib import Path

from .compiler import ArtifactBundle, write_bundle
from .deploy import (
    CHECK_TIMEOUT_SECONDS,
    ExecutorBusy,
    ExecutorOpError,
    ProcessRef,
    REACHABILITY_RETRIES,
    ResourceSnapshot,
    Step,
    StepExecutionError,
    StepKind,
)
from .model import NodeRole, manifest_from_dict

REQUIRED_BINARIES = ("ip", "iw", "hostapd", "wpa_supplicant", "dnsmasq")
EAP_BINARIES = ("freeradius", "openssl")
READY_MARKER = "RANGE_READY"
ORCHESTRATION_TIMEOUT_SECONDS = 120


class PrivilegeError(Exception):
    code = "PRIVILEGE_ERROR"


def check_privileges(needs_eap: bool = False) -> None:
    """Verify root and required binaries before any OS mutation."""
    missing = [b for b in REQUIRED_BINARIES if shutil.which(b) is None]
    if needs_eap:
        missing += [b for b in EAP_BINARIES if shutil.which(b) is None]
    problems = []
    if os.geteuid() != 0:
        problems.append("root privileges are required for namespace and radio management")
    if missing:
        problems.append(f"missing binaries: {', '.join(missing)}")
    if not Path("/sys/class/ieee80211").exists() and not _module_available("mac80211_hwsim"):
        problems.append("mac80211_hwsim kernel module is not available")
    if problems:
        raise PrivilegeError("; ".join(problems))


def _module_available(name: str) -> bool:
    try:
        probe = subprocess.run(
            ["modinfo", name], capture_output=True, text=True, check=False
        )
    except OSError:
        return False  # no modinfo at all
    return probe.returncode == 0


class RealExecutor:
    """Deploys by invoking the generated orchestration script.

    Individual plan steps before AWAIT_READY are bookkeeping only; the script
    performs the actual sequence and the readiness marker closes the loop.
    """

    def __init__(self, bundle: ArtifactBundle, workdir: str | Path | None = None):
        self._bundle = bundle
        manifest = manifest_from_dict(
            json.loads(bundle.get("manifest.json").content)
        )
        self._manifest = manifest
        self._needs_eap = any(p.startswith("eap/") for p in bundle.paths())
        check_privileges(needs_eap=self._needs_eap)
        self._workdir = Path(workdir) if workdir else Path(tempfile.mkdtemp(prefix="wifirange-"))
        self._lock = threading.RLock()
        self._busy = False
        self._ready = False
        self._ns_prefix = self._common_namespace_prefix()

    def _common_namespace_prefix(self) -> str:
        names = [e.namespace_name for e in self._manifest.entries]
        # ns-<hash8>- is shared by construction.
        return names[0][: len("ns-") + 8 + 1] if names else "ns-"

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
        if step.kind == StepKind.AWAIT_READY:
            self._run_orchestration()
            with self._lock:
                self._ready = True
            return None
        # The orchestration script performs these; report the ref the script
        # will have created so the ledger still maps one entry per step.
        if step.kind == StepKind.START_AP_SERVICE:
            return ProcessRef("hostapd", step.node_name, self._pidfile("hostapd", step.node_name))
        if step.kind == StepKind.START_STA_SERVICE:
            return ProcessRef("wpa_supplicant", step.node_name, self._pidfile("wpa", step.node_name))
        if step.kind == StepKind.START_DHCP_SERVICE:
            return ProcessRef("dnsmasq", step.network_name, self._pidfile("dnsmasq", step.network_name))
        if step.kind == StepKind.START_AUTH_SERVICE:
            node = self._first_eap_ap()
            return ProcessRef("radius", "auth", self._pidfile("radius", node))
        return None

    @staticmethod
    def _pidfile(role: str, tag: str) -> str:
        return f"/run/range-{tag}-{role}.pid"

    def _first_eap_ap(self) -> str:
        for entry in sorted(self._manifest.entries, key=lambda e: e.radio_index):
            if entry.role == NodeRole.AP:
                return entry.node_name
        return "auth"

    def _run_orchestration(self) -> None:
        root = write_bundle(self._bundle, self._workdir)
        script = root / "orchestration.sh"
        try:
            proc = subprocess.run(
                ["sh", str(script)],
                capture_output=True,
                text=True,
                timeout=ORCHESTRATION_TIMEOUT_SECONDS,
                check=False,
            )
        except subprocess.TimeoutExpired as exc:
            raise StepExecutionError(f"orchestration timed out after {exc.timeout}s") from exc
        if proc.returncode != 0:
            raise StepExecutionError(
                f"orchestration exited {proc.returncode}: {proc.stderr.strip()[:500]}"
            )
        if f"{READY_MARKER} {self._bundle.scenario_id}" not in proc.stdout:
            raise StepExecutionError("orchestration finished without the readiness marker")

    # -- resource management ---------------------------------------------

    def _list_namespaces(self) -> list[str]:
        out = subprocess.run(["ip", "netns", "list"], capture_output=True, text=True, check=False)
        names = [line.split()[0] for line in out.stdout.splitlines() if line.strip()]
        return [n for n in names if n.startswith(self._ns_prefix)]

    def enumerate_resources(self) -> ResourceSnapshot:
        namespaces = frozenset(self._list_namespaces())
        processes = set()
        for entry in self._manifest.entries:
            for role, tag in (
                ("hostapd", entry.node_name),
                ("wpa_supplicant", entry.node_name),
            ):
                pidfile = self._pidfile("hostapd" if role == "hostapd" else "wpa", tag)
                if Path(pidfile).exists():
                    processes.add(ProcessRef(role, tag, pidfile))
        # Radios are module-scoped (mac80211_hwsim allocates them at load
        # time); they are not attributable to one instance, so the real
        # executor never reports them as instance residue.
        return ResourceSnapshot(
            namespaces=namespaces, radios=frozenset(), processes=frozenset(processes)
        )

    def stop_process(self, ref: ProcessRef) -> None:
        pidfile = Path(ref.proc_id)
        if not pidfile.exists():
            return  # already gone
        try:
            pid = int(pidfile.read_text().strip())
            os.kill(pid, signal.SIGTERM)
            for _ in range(20):
                try:
                    os.kill(pid, 0)
                except ProcessLookupError:
                    break
                time.sleep(0.1)
            else:
                os.kill(pid, signal.SIGKILL)
            pidfile.unlink(missing_ok=True)
        except (OSError, ValueError) as exc:
            raise ExecutorOpError(f"cannot stop {ref.role}/{ref.node_name}: {exc}") from exc

    def remove_namespace(self, name: str) -> None:
        proc = subprocess.run(["ip", "netns", "del", name], capture_output=True, text=True, check=False)
        if proc.returncode != 0 and "No such file" not in proc.stderr:
            raise ExecutorOpError(f"ip netns del {name} failed: {proc.stderr.strip()}")

    def remove_radio(self, index: int) -> None:
        # hwsim radios are shared across instances and removed with the
        # module, never per scenario.
        return

    def resource_usage(self) -> dict[str, float]:
        """Aggregate cpu/memory for this instance's tracked daemons (per-
        instance gauges exist only on the real executor)."""
        cpu_seconds = 0.0
        memory_bytes = 0.0
        ticks = os.sysconf("SC_CLK_TCK")
        page = os.sysconf("SC_PAGE_SIZE")
        for ref in self.enumerate_resources().processes:
            pidfile = Path(ref.proc_id)
            try:
                pid = int(pidfile.read_text().strip())
                fields = Path(f"/proc/{pid}/stat").read_text().rsplit(") ", 1)[1].split()
                cpu_seconds += (int(fields[11]) + int(fields[12])) / ticks  # utime+stime
                memory_bytes += int(fields[21]) * page  # rss pages
            except (OSError, ValueError, IndexError):
                continue
        return {"cpu_seconds": cpu_seconds, "memory_bytes": memory_bytes}

    # -- verification primitives ----------------------------------------

    def _entry(self, node: str):
        return self._manifest.entry(node)

    def _ns_exec(self, namespace: str, args: list[str], timeout: float) -> subprocess.CompletedProcess:
        return subprocess.run(
            ["ip", "netns", "exec", namespace, *args],
            capture_output=True,
            text=True,
            timeout=timeout,
            check=False,
        )

    def _gateway_of(self, ap_node: str) -> str:
        address = self._entry(ap_node).address
        if not address:
            raise ExecutorOpError(f"AP {ap_node} has no address")
        return address.split("/")[0]

    def check_reachability(self, sta_node: str, ap_node: str) -> tuple[bool, str]:
        namespace = self._entry(sta_node).namespace_name
        gateway = self._gateway_of(ap_node)
        for attempt in range(1, REACHABILITY_RETRIES + 1):
            try:
                proc = self._ns_exec(
                    namespace,
                    ["ping", "-c", "1", "-W", str(CHECK_TIMEOUT_SECONDS), gateway],
                    timeout=CHECK_TIMEOUT_SECONDS + 2,
                )
            except subprocess.TimeoutExpired:
                continue
            if proc.returncode == 0:
                return True, f"icmp echo to {gateway} ok (attempt {attempt})"
        return False, f"icmp echo to {gateway} failed after {REACHABILITY_RETRIES} attempts"

    def check_arp(self, sta_node: str, ap_node: str) -> tuple[bool, str]:
        namespace = self._entry(sta_node).namespace_name
        gateway = self._gateway_of(ap_node)
        try:
            proc = self._ns_exec(namespace, ["ip", "neigh", "show", gateway], timeout=CHECK_TIMEOUT_SECONDS)
        except subprocess.TimeoutExpired:
            return False, f"arp lookup for {gateway} timed out"
        resolved = bool(re.search(r"lladdr\s+[0-9a-f:]{17}", proc.stdout))
        return resolved, f"arp entry for {gateway}: {'resolved' if resolved else 'missing'}"

    def measure_throughput(self, sta_node: str, ap_node: str) -> tuple[bool, str]:
        sta_entry = self._entry(sta_node)
        ap_entry = self._entry(ap_node)
        gateway = self._gateway_of(ap_node)
        if shutil.which("iperf3") is None:
            return False, "iperf3 not installed"
        server = subprocess.Popen(
            ["ip", "netns", "exec", ap_entry.namespace_name, "iperf3", "-s", "-1"],
            stdout=subprocess.DEVNULL,
            stderr=subprocess.DEVNULL,
        )
        try:
            time.sleep(0.2)
            proc = self._ns_exec(
                sta_entry.namespace_name,
                ["iperf3", "-c", gateway, "-t", "2", "-J"],
                timeout=CHECK_TIMEOUT_SECONDS + 5,
            )
            if proc.returncode != 0:
                return False, f"iperf3 failed: {proc.stderr.strip()[:200]}"
            summary = json.loads(proc.stdout)
            bps = summary["end"]["sum_received"]["bits_per_second"]
            return True, f"throughput {bps / 1e6:.1f} Mbit/s"
        except (subprocess.TimeoutExpired, KeyError, json.JSONDecodeError) as exc:
            return False, f"iperf3 probe failed: {exc}"
        finally:
            server.terminate()
