"""Artifact compiler: renders a validated scenario into its deployable bundle.

A bundle is the complete file set for one scenario version: per-AP hostapd
configs, per-STA wpa_supplicant configs, dnsmasq configs for DHCP networks,
the topology manifest, EAP credential material, and the orchestration shell
scripts. Rendering is deterministic; equal inputs give byte-identical bundles.
"""

from __future__ import annotations

import hashlib
import ipaddress
import os
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from . import credentials as creds
from .model import (
    Band,
    ManifestEntry,
    NetworkSpec,
    NodeRole,
    NodeSpec,
    ScenarioSpec,
    SecurityMode,
    TopologyManifest,
    derive_manifest,
    dhcp_lease_range,
    manifest_to_canonical_json,
    subnet_gateway,
)

RADIUS_PORT = 1812
DHCP_LEASE_TIME = "1h"


class ArtifactKind(str, Enum):
    SERVICE_CONFIG = "SERVICE_CONFIG"
    DHCP_CONFIG = "DHCP_CONFIG"
    MANIFEST = "MANIFEST"
    SCRIPT = "SCRIPT"
    CREDENTIAL = "CREDENTIAL"


class InvalidRole(Exception):
    pass


class DhcpDisabled(Exception):
    pass


class InvalidInput(Exception):
    pass


class InconsistentInput(Exception):
    pass


@dataclass(frozen=True)
class Artifact:
    path: str
    content: bytes
    kind: ArtifactKind
    executable: bool = False

    def __post_init__(self):
        if self.path.startswith("/") or ".." in self.path.split("/"):
            raise ValueError(f"artifact path must be relative and contained: {self.path!r}")
        if self.executable != (self.kind == ArtifactKind.SCRIPT):
            raise ValueError("executable flag is reserved for scripts")

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.content).hexdigest()


@dataclass(frozen=True)
class ArtifactBundle:
    scenario_id: str
    version: int
    artifacts: tuple[Artifact, ...]

    def __post_init__(self):
        paths = [a.path for a in self.artifacts]
        if len(set(paths)) != len(paths):
            raise ValueError("artifact paths must be unique")

    @property
    def bundle_hash(self) -> str:
        digest = hashlib.sha256()
        for a in sorted(self.artifacts, key=lambda a: a.path):
            digest.update(a.path.encode("utf-8"))
            digest.update(b"\x00")
            digest.update(len(a.content).to_bytes(8, "big"))
            digest.update(a.content)
        return digest.hexdigest()

    def get(self, path: str) -> Artifact:
        for a in self.artifacts:
            if a.path == path:
                return a
        raise KeyError(path)

    def paths(self) -> tuple[str, ...]:
        return tuple(a.path for a in self.artifacts)


def radius_shared_secret(scenario_id: str, version: int) -> str:
    """Stable per-scenario RADIUS secret; unique per (scenario, version)."""
    digest = hashlib.sha256(f"radius|{scenario_id}|{version}".encode("utf-8")).hexdigest()
    return digest[:32]


def default_credential_seed(scenario_id: str, version: int) -> bytes:
    return hashlib.sha256(f"eap-seed|{scenario_id}|{version}".encode("utf-8")).digest()


HW_MODE = {Band.GHZ_2_4: "g", Band.GHZ_5: "a"}

EAP_DIR = "eap"
CA_PEM = f"{EAP_DIR}/ca.pem"
SERVER_PEM = f"{EAP_DIR}/server.pem"
SERVER_KEY = f"{EAP_DIR}/server.key"
RADIUS_CLIENTS = f"{EAP_DIR}/radius-clients.conf"


def render_ap_config(node: NodeSpec, network: NetworkSpec, entry: ManifestEntry,
                     radius_secret: str | None = None) -> Artifact:
    """hostapd.conf for one AP; fixed key order keeps output byte-stable."""
    if node.role != NodeRole.AP:
        raise InvalidRole(f"{node.node_name} is not an AP")

    lines = [
        f"interface={entry.interface_name}",
        "driver=nl80211",
        f"ssid={network.ssid}",
        f"hw_mode={HW_MODE[node.band]}",
        f"channel={node.channel}",
    ]
    mode = network.security.mode
    if mode == SecurityMode.WPA2_PSK:
        lines += [
            "wpa=2",
            "wpa_key_mgmt=WPA-PSK",
            "rsn_pairwise=CCMP",
            f"wpa_passphrase={network.security.passphrase}",
        ]
    elif mode == SecurityMode.WPA3_SAE:
        lines += [
            "wpa=2",
            "wpa_key_mgmt=SAE",
            "rsn_pairwise=CCMP",
            "ieee80211w=2",
            f"sae_password={network.security.passphrase}",
        ]
    elif mode == SecurityMode.WPA2_EAP_TLS:
        if radius_secret is None:
            raise InconsistentInput("EAP network needs a RADIUS secret")
        lines += [
            "wpa=2",
            "wpa_key_mgmt=WPA-EAP",
            "rsn_pairwise=CCMP",
            "ieee8021x=1",
            "auth_server_addr=127.0.0.1",
            f"auth_server_port={RADIUS_PORT}",
            f"auth_server_shared_secret={radius_secret}",
        ]
    # OPEN mode emits no security keys at all.

    content = ("\n".join(lines) + "\n").encode("utf-8")
    return Artifact(f"ap/{node.node_name}/hostapd.conf", content, ArtifactKind.SERVICE_CONFIG)


def render_sta_config(node: NodeSpec, network: NetworkSpec, identity: str | None = None) -> Artifact:
    """wpa_supplicant.conf for one STA: a single network block.

    For EAP networks the caller assigns the identity (compile maps the nth STA
    of a network to the nth declared identity); direct calls default to the
    first declared identity.
    """
    if node.role != NodeRole.STA:
        raise InvalidRole(f"{node.node_name} is not a STA")

    block = [f'    ssid="{network.ssid}"']
    mode = network.security.mode
    if mode == SecurityMode.OPEN:
        block.append("    key_mgmt=NONE")
    elif mode == SecurityMode.WPA2_PSK:
        block.append("    key_mgmt=WPA-PSK")
        block.append(f'    psk="{network.security.passphrase}"')
    elif mode == SecurityMode.WPA3_SAE:
        block.append("    key_mgmt=SAE")
        block.append(f'    sae_password="{network.security.passphrase}"')
        block.append("    ieee80211w=2")
    else:  # WPA2_EAP_TLS
        if identity is None:
            identity = network.security.eap.client_identities[0]
        block += [
            "    key_mgmt=WPA-EAP",
            "    eap=TLS",
            f'    identity="{identity}"',
            f'    ca_cert="{CA_PEM}"',
            f'    client_cert="{EAP_DIR}/{identity}.pem"',
            f'    private_key="{EAP_DIR}/{identity}.key"',
        ]

    text = "ctrl_interface=/run/wpa_supplicant\n" + "network={\n" + "\n".join(block) + "\n}\n"
    return Artifact(f"sta/{node.node_name}/wpa_supplicant.conf", text.encode("utf-8"), ArtifactKind.SERVICE_CONFIG)


def render_dhcp_config(network: NetworkSpec, entry: ManifestEntry) -> Artifact:
    """dnsmasq.conf bound to the serving AP's interface."""
    if not network.dhcp:
        raise DhcpDisabled(f"network {network.network_name} has dhcp disabled")
    subnet = ipaddress.ip_network(network.subnet)
    lease = dhcp_lease_range(subnet)
    if lease is None:
        raise InvalidInput(f"subnet {network.subnet} has no usable DHCP range")
    gateway = subnet_gateway(subnet)
    lines = [
        f"interface={entry.interface_name}",
        "bind-interfaces",
        "port=0",
        f"dhcp-range={lease[0]},{lease[1]},{DHCP_LEASE_TIME}",
        f"dhcp-option=option:router,{gateway}",
        "dhcp-authoritative",
    ]
    content = ("\n".join(lines) + "\n").encode("utf-8")
    return Artifact(f"net/{network.network_name}/dnsmasq.conf", content, ArtifactKind.DHCP_CONFIG)


def render_radius_clients(secret: str) -> Artifact:
    text = (
        "client localhost {\n"
        "    ipaddr = 127.0.0.1\n"
        f"    secret = {secret}\n"
        "}\n"
    )
    return Artifact(RADIUS_CLIENTS, text.encode("utf-8"), ArtifactKind.SERVICE_CONFIG)


# ---------------------------------------------------------------------------
# Shell scripts
# ---------------------------------------------------------------------------

_WLAN_TOOLS = """#!/bin/sh
# Shared interface-management helpers for the generated orchestration scripts.
# All functions take explicit names; nothing here is scenario-specific.
set -eu

provision_radios() {
    count="$1"
    modprobe mac80211_hwsim radios="$count"
}

create_namespace() {
    ns="$1"
    ip netns add "$ns"
    ip netns exec "$ns" ip link set lo up
}

move_interface() {
    radio="$1"; ns="$2"; name="$3"; mac="$4"
    phy="phy#$radio"
    iw phy "$phy" set netns name "$ns"
    dev=$(ip netns exec "$ns" iw dev | awk -v p="phy#$radio" '$0 ~ p {found=1} found && /Interface/ {print $2; exit}')
    ip netns exec "$ns" ip link set "$dev" down
    ip netns exec "$ns" ip link set "$dev" name "$name"
    ip netns exec "$ns" ip link set "$name" address "$mac"
}

assign_address() {
    ns="$1"; dev="$2"; addr="$3"
    ip netns exec "$ns" ip addr add "$addr" dev "$dev"
    ip netns exec "$ns" ip link set "$dev" up
}

start_dhcp() {
    ns="$1"; conf="$2"; tag="$3"
    ip netns exec "$ns" dnsmasq --conf-file="$conf" --pid-file="/run/range-$tag-dnsmasq.pid"
}

start_radius() {
    ns="$1"; dir="$2"; tag="$3"
    ip netns exec "$ns" freeradius -d "$dir" > "/run/range-$tag-radius.log" 2>&1 &
    echo $! > "/run/range-$tag-radius.pid"
}

remove_namespace() {
    ns="$1"
    ip netns del "$ns" 2>/dev/null || true
}
"""

_AP_SH = """#!/bin/sh
# Bring up one access point inside its namespace.
# Usage: AP.sh <namespace> <interface> <hostapd.conf> <tag>
set -eu
ns="$1"; dev="$2"; conf="$3"; tag="$4"
ip netns exec "$ns" ip link set "$dev" up
ip netns exec "$ns" hostapd -B -P "/run/range-$tag-hostapd.pid" "$conf"
"""

_STA_SH = """#!/bin/sh
# Bring up one station inside its namespace and acquire addressing.
# Usage: STA.sh <namespace> <interface> <wpa_supplicant.conf> <tag> dhcp|static
set -eu
ns="$1"; dev="$2"; conf="$3"; tag="$4"; addressing="$5"
ip netns exec "$ns" ip link set "$dev" up
ip netns exec "$ns" wpa_supplicant -B -i "$dev" -c "$conf" -P "/run/range-$tag-wpa.pid"
if [ "$addressing" = "dhcp" ]; then
    ip netns exec "$ns" udhcpc -i "$dev" -q -t 10 -T 1
fi
"""


def render_orchestration_scripts(manifest: TopologyManifest, spec: ScenarioSpec) -> list[Artifact]:
    """Emit the role scripts plus the main orchestration script.

    orchestration.sh binds concrete namespace/interface names; the helper
    scripts are fully parameterized so cross-referencing stays in one place.
    """
    if manifest.scenario_id != spec.scenario_id or manifest.version != spec.version:
        raise InconsistentInput("manifest does not belong to this spec")
    by_name = {n.node_name for n in spec.nodes}
    if {e.node_name for e in manifest.entries} != by_name:
        raise InconsistentInput("manifest entries do not match spec nodes")

    nets = {n.network_name: n for n in spec.networks}
    eap = any(n.security.mode == SecurityMode.WPA2_EAP_TLS for n in spec.networks)
    entries = sorted(manifest.entries, key=lambda e: e.radio_index)

    lines = [
        "#!/bin/sh",
        f"# Orchestrates testbed bringup for scenario {spec.scenario_id} v{spec.version}.",
        "set -eu",
        'BUNDLE_DIR=$(CDPATH= cd -- "$(dirname -- "$0")" && pwd)',
        '. "$BUNDLE_DIR/scripts/wlan-tools.sh"',
        "",
        f"provision_radios {len(entries)}",
        "",
    ]
    for e in entries:
        lines.append(f"create_namespace {e.namespace_name}")
    lines.append("")
    for e in entries:
        lines.append(f"move_interface {e.radio_index} {e.namespace_name} {e.interface_name} {e.mac}")
    lines.append("")
    for e in entries:
        if e.address is not None:
            lines.append(f"assign_address {e.namespace_name} {e.interface_name} {e.address}")
    lines.append("")

    node_by_name = {n.node_name: n for n in spec.nodes}
    ap_entries = [e for e in entries if e.role == NodeRole.AP]
    sta_entries = [e for e in entries if e.role == NodeRole.STA]

    if eap:
        # RADIUS lives in the first EAP AP's namespace (hostapd reaches it on loopback).
        eap_ap = next(e for e in ap_entries if nets[node_by_name[e.node_name].network].security.mode == SecurityMode.WPA2_EAP_TLS)
        lines.append(f'start_radius {eap_ap.namespace_name} "$BUNDLE_DIR/{EAP_DIR}" {eap_ap.node_name}')
        lines.append("")

    for e in ap_entries:
        lines.append(f'"$BUNDLE_DIR/scripts/AP.sh" {e.namespace_name} {e.interface_name} "$BUNDLE_DIR/ap/{e.node_name}/hostapd.conf" {e.node_name}')

    dhcp_nets = [n for n in spec.networks if n.dhcp]
    if dhcp_nets:
        lines.append("")
        for net in dhcp_nets:
            serving = next(
                e for e in ap_entries
                if node_by_name[e.node_name].network == net.network_name
            )
            lines.append(f'start_dhcp {serving.namespace_name} "$BUNDLE_DIR/net/{net.network_name}/dnsmasq.conf" {net.network_name}')

    lines.append("")
    for e in sta_entries:
        node = node_by_name[e.node_name]
        addressing = "static" if e.address is not None else "dhcp"
        lines.append(f'"$BUNDLE_DIR/scripts/STA.sh" {e.namespace_name} {e.interface_name} "$BUNDLE_DIR/sta/{e.node_name}/wpa_supplicant.conf" {e.node_name} {addressing}')

    lines.append("")
    lines.append(f'echo "RANGE_READY {spec.scenario_id}"')

    orchestration = ("\n".join(lines) + "\n").encode("utf-8")
    return [
        Artifact("scripts/AP.sh", _AP_SH.encode("utf-8"), ArtifactKind.SCRIPT, executable=True),
        Artifact("scripts/STA.sh", _STA_SH.encode("utf-8"), ArtifactKind.SCRIPT, executable=True),
        Artifact("scripts/wlan-tools.sh", _WLAN_TOOLS.encode("utf-8"), ArtifactKind.SCRIPT, executable=True),
        Artifact("orchestration.sh", orchestration, ArtifactKind.SCRIPT, executable=True),
    ]


# ---------------------------------------------------------------------------
# Bundle compilation
# ---------------------------------------------------------------------------

def compile_bundle(
    spec: ScenarioSpec,
    manifest: TopologyManifest,
    deterministic_seed: bytes | None = None,
) -> ArtifactBundle:
    """Render the full artifact bundle for (spec, manifest).

    The credential seed defaults to a stable hash of (scenario_id, version) so
    the API and CLI paths emit byte-identical bundles; pass an explicit seed to
    override, or generate credentials separately for entropy-backed material.
    """
    if manifest != derive_manifest(spec):
        raise InvalidInput("manifest was not derived from this spec")
    if deterministic_seed is None:
        deterministic_seed = default_credential_seed(spec.scenario_id, spec.version)

    nets = {n.network_name: n for n in spec.networks}
    secret = radius_shared_secret(spec.scenario_id, spec.version)
    eap_nets = [n for n in spec.networks if n.security.mode == SecurityMode.WPA2_EAP_TLS]

    artifacts: list[Artifact] = []
    sta_ordinal: dict[str, int] = {}
    for node in spec.nodes:
        entry = manifest.entry(node.node_name)
        network = nets[node.network]
        if node.role == NodeRole.AP:
            artifacts.append(render_ap_config(node, network, entry, radius_secret=secret))
        else:
            identity = None
            if network.security.mode == SecurityMode.WPA2_EAP_TLS:
                ordinal = sta_ordinal.get(network.network_name, 0)
                sta_ordinal[network.network_name] = ordinal + 1
                idents = network.security.eap.client_identities
                identity = idents[ordinal % len(idents)]
            artifacts.append(render_sta_config(node, network, identity))

    for network in spec.networks:
        if network.dhcp:
            serving = next(
                manifest.entry(n.node_name)
                for n in spec.nodes
                if n.role == NodeRole.AP and n.network == network.network_name
            )
            artifacts.append(render_dhcp_config(network, serving))

    artifacts.append(Artifact("manifest.json", manifest_to_canonical_json(manifest), ArtifactKind.MANIFEST))

    for network in eap_nets:
        credset = creds.generate_eap_credentials(network.security.eap, deterministic_seed)
        if not creds.verify_chain(credset.ca_certificate, credset.server_certificate):
            raise InvalidInput("generated server certificate does not chain to the CA")
        artifacts.append(Artifact(CA_PEM, credset.ca_certificate, ArtifactKind.CREDENTIAL))
        artifacts.append(Artifact(SERVER_PEM, credset.server_certificate, ArtifactKind.CREDENTIAL))
        artifacts.append(Artifact(SERVER_KEY, credset.server_key, ArtifactKind.CREDENTIAL))
        artifacts.append(render_radius_clients(secret))
        for client in credset.client_credentials:
            artifacts.append(Artifact(f"{EAP_DIR}/{client.identity}.pem", client.certificate, ArtifactKind.CREDENTIAL))
            artifacts.append(Artifact(f"{EAP_DIR}/{client.identity}.key", client.key, ArtifactKind.CREDENTIAL))

    artifacts.extend(render_orchestration_scripts(manifest, spec))

    return ArtifactBundle(scenario_id=spec.scenario_id, version=spec.version, artifacts=tuple(artifacts))


def write_bundle(bundle: ArtifactBundle, dest: str | Path) -> Path:
    """Materialize the bundle as a directory tree; scripts become executable."""
    root = Path(dest)
    root.mkdir(parents=True, exist_ok=True)
    for artifact in bundle.artifacts:
        target = root / artifact.path
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(artifact.content)
        if artifact.executable:
            os.chmod(target, os.stat(target).st_mode | 0o755)
    return root


def _kind_for_path(path: str) -> ArtifactKind:
    if path == "manifest.json":
        return ArtifactKind.MANIFEST
    if path == "orchestration.sh" or path.startswith("scripts/"):
        return ArtifactKind.SCRIPT
    if path.endswith("dnsmasq.conf"):
        return ArtifactKind.DHCP_CONFIG
    if path.startswith(f"{EAP_DIR}/") and (path.endswith(".pem") or path.endswith(".key")):
        return ArtifactKind.CREDENTIAL
    return ArtifactKind.SERVICE_CONFIG


def read_bundle(src: str | Path) -> ArtifactBundle:
    """Load a previously written bundle tree (inverse of write_bundle).

    Artifact kinds are recovered from the fixed bundle layout; scenario
    identity comes from manifest.json.
    """
    import json as _json

    root = Path(src)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise InvalidInput(f"{src} does not contain manifest.json")
    manifest_doc = _json.loads(manifest_path.read_bytes())
    artifacts = []
    for file in sorted(p for p in root.rglob("*") if p.is_file()):
        rel = file.relative_to(root).as_posix()
        kind = _kind_for_path(rel)
        artifacts.append(
            Artifact(rel, file.read_bytes(), kind, executable=(kind == ArtifactKind.SCRIPT))
        )
    return ArtifactBundle(
        scenario_id=manifest_doc["scenario_id"],
        version=manifest_doc["version"],
        artifacts=tuple(artifacts),
    )
