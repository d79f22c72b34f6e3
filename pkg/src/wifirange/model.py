"""Scenario domain model: spec types, validation, blueprints, topology manifests.

Everything in this module is pure: specs and manifests are frozen dataclasses,
validation returns findings instead of raising, and manifest derivation is a
deterministic function of the spec so artifact generation stays reproducible.
"""

from __future__ import annotations

import hashlib
import ipaddress
import json
import re
import secrets
import time
from dataclasses import dataclass
from enum import Enum
from typing import Any, Mapping


class NodeRole(str, Enum):
    AP = "AP"
    STA = "STA"


class Band(str, Enum):
    GHZ_2_4 = "2.4GHz"
    GHZ_5 = "5GHz"


class SecurityMode(str, Enum):
    OPEN = "OPEN"
    WPA2_PSK = "WPA2_PSK"
    WPA3_SAE = "WPA3_SAE"
    WPA2_EAP_TLS = "WPA2_EAP_TLS"


PASSPHRASE_MODES = frozenset({SecurityMode.WPA2_PSK, SecurityMode.WPA3_SAE})

VALID_CHANNELS: dict[Band, frozenset[int]] = {
    Band.GHZ_2_4: frozenset(range(1, 14)),
    Band.GHZ_5: frozenset({36, 40, 44, 48, 149, 153, 157, 161}),
}

# DHCP pools start 9 hosts above the gateway and span at most 100 addresses.
DHCP_RANGE_OFFSET = 9
DHCP_RANGE_SIZE = 100

# Radio indices must fit the RR byte of generated MACs (02:00:00:SS:RR:00).
MAX_NODES = 256

_NAME_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_-]{0,31}$")
_MAC_RE = re.compile(r"^([0-9A-Fa-f]{2}:){5}[0-9A-Fa-f]{2}$")


class SpecFormatError(Exception):
    """Raised when a document is structurally not a scenario spec."""


class UnknownBlueprint(Exception):
    """Raised for blueprint ids outside the catalog."""


class InvalidParams(Exception):
    """Raised when blueprint parameters violate their bounds."""


class InvalidSpec(Exception):
    """Raised when an operation requires a spec that validates ok."""

    def __init__(self, report: "ValidationReport"):
        self.report = report
        codes = ", ".join(f.code for f in report.findings if f.severity == Severity.ERROR)
        super().__init__(f"spec does not validate: {codes}")


@dataclass(frozen=True)
class EapParams:
    realm: str
    ca_validity_days: int
    client_identities: tuple[str, ...]


@dataclass(frozen=True)
class SecurityProfile:
    mode: SecurityMode
    passphrase: str | None = None
    eap: EapParams | None = None


@dataclass(frozen=True)
class NodeSpec:
    node_name: str
    role: NodeRole
    network: str
    channel: int | None = None
    band: Band | None = None
    mac_override: str | None = None


@dataclass(frozen=True)
class NetworkSpec:
    network_name: str
    ssid: str
    security: SecurityProfile
    subnet: str
    dhcp: bool = True


@dataclass(frozen=True)
class ScenarioSpec:
    scenario_id: str
    name: str
    description: str
    version: int
    author: str
    nodes: tuple[NodeSpec, ...]
    networks: tuple[NetworkSpec, ...]
    created_at: int

    def node(self, name: str) -> NodeSpec:
        for n in self.nodes:
            if n.node_name == name:
                return n
        raise KeyError(name)

    def network(self, name: str) -> NetworkSpec:
        for n in self.networks:
            if n.network_name == name:
                return n
        raise KeyError(name)

    def aps(self) -> tuple[NodeSpec, ...]:
        return tuple(n for n in self.nodes if n.role == NodeRole.AP)

    def stas(self) -> tuple[NodeSpec, ...]:
        return tuple(n for n in self.nodes if n.role == NodeRole.STA)


class Severity(str, Enum):
    ERROR = "ERROR"
    WARNING = "WARNING"


@dataclass(frozen=True)
class Finding:
    severity: Severity
    code: str
    message: str
    location: str


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple[Finding, ...]

    @property
    def ok(self) -> bool:
        return not any(f.severity == Severity.ERROR for f in self.findings)

    def errors(self) -> tuple[Finding, ...]:
        return tuple(f for f in self.findings if f.severity == Severity.ERROR)

    def to_dict(self) -> dict[str, Any]:
        return {
            "ok": self.ok,
            "findings": [
                {
                    "severity": f.severity.value,
                    "code": f.code,
                    "message": f.message,
                    "location": f.location,
                }
                for f in self.findings
            ],
        }


@dataclass(frozen=True)
class ManifestEntry:
    node_name: str
    namespace_name: str
    interface_name: str
    radio_index: int
    role: NodeRole
    mac: str
    address: str | None = None  # "a.b.c.d/prefix" for statically addressed nodes
    gateway: str | None = None  # default router for statically addressed STAs


@dataclass(frozen=True)
class TopologyManifest:
    scenario_id: str
    version: int
    entries: tuple[ManifestEntry, ...]

    def entry(self, node_name: str) -> ManifestEntry:
        for e in self.entries:
            if e.node_name == node_name:
                return e
        raise KeyError(node_name)


# ---------------------------------------------------------------------------
# Serialization (canonical forms; byte-stable for golden tests)
# ---------------------------------------------------------------------------

def spec_to_dict(spec: ScenarioSpec) -> dict[str, Any]:
    def sec(profile: SecurityProfile) -> dict[str, Any]:
        return {
            "mode": profile.mode.value if isinstance(profile.mode, SecurityMode) else profile.mode,
            "passphrase": profile.passphrase,
            "eap": None
            if profile.eap is None
            else {
                "realm": profile.eap.realm,
                "ca_validity_days": profile.eap.ca_validity_days,
                "client_identities": list(profile.eap.client_identities),
            },
        }

    return {
        "scenario_id": spec.scenario_id,
        "name": spec.name,
        "description": spec.description,
        "version": spec.version,
        "author": spec.author,
        "created_at": spec.created_at,
        "nodes": [
            {
                "node_name": n.node_name,
                "role": n.role.value if isinstance(n.role, NodeRole) else n.role,
                "network": n.network,
                "channel": n.channel,
                "band": n.band.value if isinstance(n.band, Band) else n.band,
                "mac_override": n.mac_override,
            }
            for n in spec.nodes
        ],
        "networks": [
            {
                "network_name": n.network_name,
                "ssid": n.ssid,
                "subnet": n.subnet,
                "dhcp": n.dhcp,
                "security": sec(n.security),
            }
            for n in spec.networks
        ],
    }


def _coerce_enum(cls, value):
    if value is None:
        return None
    try:
        return cls(value)
    except (ValueError, TypeError):
        return value  # left raw; validation reports it


def spec_from_dict(doc: Mapping[str, Any]) -> ScenarioSpec:
    """Parse a spec document leniently.

    Structural problems (wrong container shapes, missing sections) raise
    SpecFormatError; bad field *values* are preserved as-is so that
    validate_scenario can report them as findings instead of crashing.
    """
    if not isinstance(doc, Mapping):
        raise SpecFormatError("spec document must be an object")
    for key in ("scenario_id", "nodes", "networks"):
        if key not in doc:
            raise SpecFormatError(f"missing required key: {key}")
    if not isinstance(doc["nodes"], (list, tuple)):
        raise SpecFormatError("nodes must be an array")
    if not isinstance(doc["networks"], (list, tuple)):
        raise SpecFormatError("networks must be an array")

    nodes = []
    for i, n in enumerate(doc["nodes"]):
        if not isinstance(n, Mapping):
            raise SpecFormatError(f"nodes[{i}] must be an object")
        nodes.append(
            NodeSpec(
                node_name=n.get("node_name"),
                role=_coerce_enum(NodeRole, n.get("role")),
                network=n.get("network"),
                channel=n.get("channel"),
                band=_coerce_enum(Band, n.get("band")),
                mac_override=n.get("mac_override"),
            )
        )

    networks = []
    for i, n in enumerate(doc["networks"]):
        if not isinstance(n, Mapping):
            raise SpecFormatError(f"networks[{i}] must be an object")
        sec_doc = n.get("security")
        if not isinstance(sec_doc, Mapping):
            raise SpecFormatError(f"networks[{i}].security must be an object")
        eap_doc = sec_doc.get("eap")
        eap = None
        if eap_doc is not None:
            if not isinstance(eap_doc, Mapping):
                raise SpecFormatError(f"networks[{i}].security.eap must be an object")
            idents = eap_doc.get("client_identities")
            eap = EapParams(
                realm=eap_doc.get("realm"),
                ca_validity_days=eap_doc.get("ca_validity_days"),
                client_identities=tuple(idents) if isinstance(idents, (list, tuple)) else (idents,),
            )
        networks.append(
            NetworkSpec(
                network_name=n.get("network_name"),
                ssid=n.get("ssid"),
                security=SecurityProfile(
                    mode=_coerce_enum(SecurityMode, sec_doc.get("mode")),
                    passphrase=sec_doc.get("passphrase"),
                    eap=eap,
                ),
                subnet=n.get("subnet"),
                dhcp=n.get("dhcp", True),
            )
        )

    return ScenarioSpec(
        scenario_id=doc["scenario_id"],
        name=doc.get("name", ""),
        description=doc.get("description", ""),
        version=doc.get("version", 1),
        author=doc.get("author", ""),
        nodes=tuple(nodes),
        networks=tuple(networks),
        created_at=doc.get("created_at", 0),
    )


def spec_to_canonical_json(spec: ScenarioSpec) -> bytes:
    """Byte-stable spec serialization used by the store, the CLI and the API."""
    return (json.dumps(spec_to_dict(spec), indent=2, ensure_ascii=False) + "\n").encode("utf-8")


def manifest_to_dict(manifest: TopologyManifest) -> dict[str, Any]:
    return {
        "scenario_id": manifest.scenario_id,
        "version": manifest.version,
        "entries": [
            {
                "node_name": e.node_name,
                "namespace_name": e.namespace_name,
                "interface_name": e.interface_name,
                "radio_index": e.radio_index,
                "role": e.role.value,
                "mac": e.mac,
                "address": e.address,
                "gateway": e.gateway,
            }
            for e in sorted(manifest.entries, key=lambda e: e.radio_index)
        ],
    }


def manifest_to_canonical_json(manifest: TopologyManifest) -> bytes:
    """Canonical manifest.json bytes: fixed key set, entries sorted by radio_index."""
    return (json.dumps(manifest_to_dict(manifest), indent=2, ensure_ascii=False) + "\n").encode("utf-8")


def manifest_from_dict(doc: Mapping[str, Any]) -> TopologyManifest:
    entries = tuple(
        ManifestEntry(
            node_name=e["node_name"],
            namespace_name=e["namespace_name"],
            interface_name=e["interface_name"],
            radio_index=e["radio_index"],
            role=NodeRole(e["role"]),
            mac=e["mac"],
            address=e.get("address"),
            gateway=e.get("gateway"),
        )
        for e in doc["entries"]
    )
    return TopologyManifest(scenario_id=doc["scenario_id"], version=doc["version"], entries=entries)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _err(findings: list[Finding], code: str, message: str, location: str) -> None:
    findings.append(Finding(Severity.ERROR, code, message, location))


def _warn(findings: list[Finding], code: str, message: str, location: str) -> None:
    findings.append(Finding(Severity.WARNING, code, message, location))


def _parse_subnet(value: Any) -> ipaddress.IPv4Network | None:
    if not isinstance(value, str):
        return None
    try:
        net = ipaddress.ip_network(value, strict=True)
    except ValueError:
        return None
    return net if isinstance(net, ipaddress.IPv4Network) else None


def _mac_ok(value: str) -> bool:
    if not _MAC_RE.match(value):
        return False
    first = int(value[0:2], 16)
    return (first & 0x01) == 0 and (first & 0x02) == 0x02


def dhcp_lease_range(subnet: ipaddress.IPv4Network) -> tuple[ipaddress.IPv4Address, ipaddress.IPv4Address] | None:
    """Lease pool [gateway+9, gateway+108] clipped to the host range, or None if empty."""
    hosts_first = subnet.network_address + 1
    hosts_last = subnet.broadcast_address - 1
    start = hosts_first + DHCP_RANGE_OFFSET
    end = hosts_first + DHCP_RANGE_OFFSET + DHCP_RANGE_SIZE - 1
    if end > hosts_last:
        end = hosts_last
    if start > end or start > hosts_last:
        return None
    return start, end


def validate_scenario(spec: ScenarioSpec) -> ValidationReport:
    """Check every spec invariant; always returns a report, never raises."""
    findings: list[Finding] = []

    if not isinstance(spec.version, int) or isinstance(spec.version, bool) or spec.version < 1:
        _err(findings, "BAD_VERSION", f"version must be an integer >= 1, got {spec.version!r}", "version")
    if not isinstance(spec.scenario_id, str) or not spec.scenario_id:
        _err(findings, "BAD_FIELD_TYPE", "scenario_id must be a non-empty string", "scenario_id")

    # Networks: structural field checks first, then cross-network rules.
    net_names: list[Any] = []
    parsed_subnets: dict[str, ipaddress.IPv4Network] = {}
    for i, net in enumerate(spec.networks):
        loc = f"networks[{i}]"
        if not isinstance(net.network_name, str) or not _NAME_RE.match(net.network_name or ""):
            _err(findings, "BAD_NAME", f"network_name {net.network_name!r} is not a valid short name", f"{loc}.network_name")
        net_names.append(net.network_name)

        if not isinstance(net.ssid, str):
            _err(findings, "BAD_FIELD_TYPE", "ssid must be a string", f"{loc}.ssid")
        elif not 1 <= len(net.ssid.encode("utf-8")) <= 32:
            _err(findings, "SSID_LENGTH", f"ssid must be 1-32 bytes, got {len(net.ssid.encode('utf-8'))}", f"{loc}.ssid")

        if not isinstance(net.dhcp, bool):
            _err(findings, "BAD_FIELD_TYPE", "dhcp must be a boolean", f"{loc}.dhcp")

        subnet = _parse_subnet(net.subnet)
        if subnet is None:
            _err(findings, "BAD_SUBNET", f"subnet {net.subnet!r} is not a valid IPv4 CIDR", f"{loc}.subnet")
        elif not 16 <= subnet.prefixlen <= 30:
            _err(findings, "SUBNET_PREFIX", f"subnet prefix /{subnet.prefixlen} outside [16, 30]", f"{loc}.subnet")
        elif isinstance(net.network_name, str):
            parsed_subnets[net.network_name] = subnet

        _validate_security(findings, net.security, loc)

    dup_nets = {n for n in net_names if isinstance(n, str) and net_names.count(n) > 1}
    for name in sorted(dup_nets):
        _err(findings, "DUPLICATE_NETWORK_NAME", f"network name {name!r} used more than once", "networks")

    eap_nets = [n for n in spec.networks if n.security.mode == SecurityMode.WPA2_EAP_TLS]
    if len(eap_nets) > 1:
        # The bundle's flat eap/ directory holds exactly one credential set.
        _err(findings, "MULTIPLE_EAP_NETWORKS", "at most one network may use WPA2_EAP_TLS", "networks")

    nets_by_name = {n.network_name: n for n in spec.networks if isinstance(n.network_name, str)}

    # Pairwise subnet disjointness.
    named = sorted(parsed_subnets.items())
    for a in range(len(named)):
        for b in range(a + 1, len(named)):
            if named[a][1].overlaps(named[b][1]):
                _err(
                    findings,
                    "SUBNET_OVERLAP",
                    f"subnets of networks {named[a][0]!r} and {named[b][0]!r} overlap",
                    "networks",
                )

    # Nodes.
    node_names: list[Any] = []
    ap_count = sta_count = 0
    aps_per_network: dict[str, int] = {}
    stas_per_network: dict[str, int] = {}
    for i, node in enumerate(spec.nodes):
        loc = f"nodes[{i}]"
        if not isinstance(node.node_name, str) or not _NAME_RE.match(node.node_name or ""):
            _err(findings, "BAD_NAME", f"node_name {node.node_name!r} is not a valid short name", f"{loc}.node_name")
        node_names.append(node.node_name)

        net_ref = node.network if isinstance(node.network, str) else None
        if net_ref is None or net_ref not in nets_by_name:
            _err(findings, "UNKNOWN_NETWORK_REF", f"node references unknown network {node.network!r}", f"{loc}.network")

        if node.role == NodeRole.AP:
            ap_count += 1
            if net_ref is not None:
                aps_per_network[net_ref] = aps_per_network.get(net_ref, 0) + 1
            if not isinstance(node.band, Band):
                _err(findings, "BAND_REQUIRED", f"AP band must be one of {[b.value for b in Band]}", f"{loc}.band")
            if not isinstance(node.channel, int) or isinstance(node.channel, bool):
                _err(findings, "CHANNEL_REQUIRED", "AP channel must be an integer", f"{loc}.channel")
            elif isinstance(node.band, Band) and node.channel not in VALID_CHANNELS[node.band]:
                _err(
                    findings,
                    "INVALID_CHANNEL",
                    f"channel {node.channel} not valid for band {node.band.value}",
                    f"{loc}.channel",
                )
        elif node.role == NodeRole.STA:
            sta_count += 1
            if net_ref is not None:
                stas_per_network[net_ref] = stas_per_network.get(net_ref, 0) + 1
            if node.channel is not None or node.band is not None:
                _err(findings, "STA_RADIO_PARAMS", "STA nodes carry no channel/band", loc)
        else:
            _err(findings, "BAD_ROLE", f"role must be AP or STA, got {node.role!r}", f"{loc}.role")

        if node.mac_override is not None:
            if not isinstance(node.mac_override, str) or not _mac_ok(node.mac_override):
                _err(
                    findings,
                    "BAD_MAC_OVERRIDE",
                    f"mac_override {node.mac_override!r} must be a unicast, locally administered MAC",
                    f"{loc}.mac_override",
                )

    dup_nodes = {n for n in node_names if isinstance(n, str) and node_names.count(n) > 1}
    for name in sorted(dup_nodes):
        _err(findings, "DUPLICATE_NODE_NAME", f"node name {name!r} used more than once", "nodes")

    if ap_count == 0:
        _err(findings, "NO_AP", "scenario needs at least one AP node", "nodes")
    if sta_count == 0:
        _err(findings, "NO_STA", "scenario needs at least one STA node", "nodes")
    if len(spec.nodes) > MAX_NODES:
        _err(findings, "TOO_MANY_NODES", f"at most {MAX_NODES} nodes per scenario", "nodes")

    for i, net in enumerate(spec.networks):
        if not isinstance(net.network_name, str):
            continue
        if aps_per_network.get(net.network_name, 0) == 0:
            _err(
                findings,
                "NETWORK_WITHOUT_AP",
                f"network {net.network_name!r} is not served by any AP",
                f"networks[{i}]",
            )
        elif aps_per_network.get(net.network_name, 0) > 1:
            _warn(
                findings,
                "ESS_MULTI_AP",
                f"network {net.network_name!r} is served by multiple APs (ESS); extra APs take successive host addresses",
                f"networks[{i}]",
            )

    # Capacity checks that the allocator relies on.
    for i, net in enumerate(spec.networks):
        if not isinstance(net.network_name, str):
            continue
        subnet = parsed_subnets.get(net.network_name)
        if subnet is None or not isinstance(net.dhcp, bool):
            continue
        loc = f"networks[{i}].subnet"
        n_aps = aps_per_network.get(net.network_name, 0)
        n_stas = stas_per_network.get(net.network_name, 0)
        host_count = subnet.num_addresses - 2
        if net.dhcp:
            if dhcp_lease_range(subnet) is None:
                _err(findings, "DHCP_RANGE_EMPTY", f"subnet {net.subnet} leaves no room for a DHCP lease range", loc)
            elif n_aps > DHCP_RANGE_OFFSET:
                _err(findings, "SUBNET_TOO_SMALL", "static AP addresses would collide with the DHCP range", loc)
        else:
            if n_aps + n_stas > host_count:
                _err(
                    findings,
                    "SUBNET_TOO_SMALL",
                    f"{n_aps + n_stas} static addresses needed but subnet has {host_count} hosts",
                    loc,
                )

    # MAC uniqueness over the would-be manifest (overrides and generated values).
    if not any(f.code in ("BAD_MAC_OVERRIDE", "BAD_FIELD_TYPE") and f.severity == Severity.ERROR for f in findings):
        if isinstance(spec.scenario_id, str) and spec.scenario_id:
            macs: dict[str, str] = {}
            for idx, node in enumerate(spec.nodes):
                mac = node.mac_override if isinstance(node.mac_override, str) and _mac_ok(node.mac_override) else _generated_mac(spec.scenario_id, idx)
                mac = mac.lower()
                if mac in macs:
                    _err(findings, "MAC_CONFLICT", f"nodes {macs[mac]!r} and {node.node_name!r} would share MAC {mac}", "nodes")
                else:
                    macs[mac] = node.node_name if isinstance(node.node_name, str) else f"nodes[{idx}]"

    return ValidationReport(findings=tuple(findings))


def _validate_security(findings: list[Finding], sec: SecurityProfile, loc: str) -> None:
    sloc = f"{loc}.security"
    if not isinstance(sec.mode, SecurityMode):
        _err(findings, "BAD_SECURITY_MODE", f"mode must be one of {[m.value for m in SecurityMode]}, got {sec.mode!r}", f"{sloc}.mode")
        return

    if sec.mode in PASSPHRASE_MODES:
        if sec.passphrase is None:
            _err(findings, "PASSPHRASE_REQUIRED", f"mode {sec.mode.value} requires a passphrase", f"{sloc}.passphrase")
        elif not isinstance(sec.passphrase, str):
            _err(findings, "BAD_FIELD_TYPE", "passphrase must be a string", f"{sloc}.passphrase")
        elif not 8 <= len(sec.passphrase) <= 63:
            _err(findings, "PASSPHRASE_LENGTH", f"passphrase must be 8-63 chars, got {len(sec.passphrase)}", f"{sloc}.passphrase")
    elif sec.passphrase is not None:
        _err(findings, "PASSPHRASE_FORBIDDEN", f"mode {sec.mode.value} does not take a passphrase", f"{sloc}.passphrase")

    if sec.mode == SecurityMode.WPA2_EAP_TLS:
        if sec.eap is None:
            _err(findings, "EAP_PARAMS_REQUIRED", "mode WPA2_EAP_TLS requires eap parameters", f"{sloc}.eap")
        else:
            eap = sec.eap
            if not isinstance(eap.realm, str) or not eap.realm:
                _err(findings, "BAD_FIELD_TYPE", "eap.realm must be a non-empty string", f"{sloc}.eap.realm")
            if not isinstance(eap.ca_validity_days, int) or isinstance(eap.ca_validity_days, bool) or eap.ca_validity_days < 1:
                _err(findings, "EAP_VALIDITY", f"ca_validity_days must be >= 1, got {eap.ca_validity_days!r}", f"{sloc}.eap.ca_validity_days")
            idents = eap.client_identities
            if not idents or not all(isinstance(x, str) and x for x in idents):
                _err(findings, "EAP_IDENTITIES", "client_identities must be a non-empty list of identity strings", f"{sloc}.eap.client_identities")
            elif len(set(idents)) != len(idents):
                _err(findings, "EAP_IDENTITIES", "client_identities must be unique", f"{sloc}.eap.client_identities")
    elif sec.eap is not None:
        _err(findings, "EAP_PARAMS_FORBIDDEN", f"mode {sec.mode.value} does not take eap parameters", f"{sloc}.eap")


# ---------------------------------------------------------------------------
# Blueprints
# ---------------------------------------------------------------------------

class BlueprintId(str, Enum):
    SOHO_PSK = "SOHO_PSK"
    MULTI_BSS = "MULTI_BSS"
    ENTERPRISE_EAP = "ENTERPRISE_EAP"


STA_COUNT_MAX = 32

BLUEPRINT_SUBNETS = {
    BlueprintId.SOHO_PSK: ("10.80.0.0/24",),
    BlueprintId.MULTI_BSS: ("10.81.0.0/24", "10.82.0.0/24"),
    BlueprintId.ENTERPRISE_EAP: ("10.83.0.0/24",),
}

EAP_REALM_DEFAULT = "range.local"
EAP_CA_VALIDITY_DAYS_DEFAULT = 365


def instantiate_blueprint(
    blueprint_id: BlueprintId | str,
    params: Mapping[str, Any],
    *,
    scenario_id: str | None = None,
    author: str = "instructor",
    created_at: int | None = None,
) -> ScenarioSpec:
    """Expand a predefined topology blueprint into a full scenario spec.

    The result always passes validate_scenario. scenario_id defaults to a
    fresh random identifier; pass one explicitly for reproducible specs.
    """
    try:
        bp = BlueprintId(blueprint_id)
    except ValueError:
        raise UnknownBlueprint(f"unknown blueprint {blueprint_id!r}") from None

    sta_count = params.get("sta_count")
    ssid = params.get("ssid")
    passphrase = params.get("passphrase")

    if not isinstance(sta_count, int) or isinstance(sta_count, bool) or not 1 <= sta_count <= STA_COUNT_MAX:
        raise InvalidParams(f"sta_count must be an integer in [1, {STA_COUNT_MAX}], got {sta_count!r}")
    if not isinstance(ssid, str) or not 1 <= len(ssid.encode("utf-8")) <= 32:
        raise InvalidParams("ssid must be 1-32 bytes")
    if bp in (BlueprintId.SOHO_PSK, BlueprintId.MULTI_BSS):
        if not isinstance(passphrase, str):
            raise InvalidParams(f"{bp.value} requires a passphrase")
        if not 8 <= len(passphrase) <= 63:
            raise InvalidParams("passphrase must be 8-63 characters")
    if bp == BlueprintId.MULTI_BSS and len(f"{ssid}-5G".encode("utf-8")) > 32:
        raise InvalidParams("ssid too long for the derived 5GHz SSID (max 29 bytes)")

    if scenario_id is None:
        scenario_id = f"{bp.value.lower().replace('_', '-')}-{secrets.token_hex(4)}"
    if created_at is None:
        created_at = int(time.time())

    subnets = BLUEPRINT_SUBNETS[bp]

    if bp == BlueprintId.SOHO_PSK:
        networks = (
            NetworkSpec(
                network_name="soho",
                ssid=ssid,
                security=SecurityProfile(mode=SecurityMode.WPA2_PSK, passphrase=passphrase),
                subnet=subnets[0],
                dhcp=True,
            ),
        )
        nodes = [NodeSpec("ap0", NodeRole.AP, "soho", channel=6, band=Band.GHZ_2_4)]
        nodes += [NodeSpec(f"sta{i}", NodeRole.STA, "soho") for i in range(sta_count)]
        name = f"SOHO PSK lab ({sta_count} STA)"
        description = "Single WPA2-PSK BSS with DHCP-addressed stations."

    elif bp == BlueprintId.MULTI_BSS:
        networks = (
            NetworkSpec(
                network_name="bss0",
                ssid=ssid,
                security=SecurityProfile(mode=SecurityMode.WPA2_PSK, passphrase=passphrase),
                subnet=subnets[0],
                dhcp=True,
            ),
            NetworkSpec(
                network_name="bss1",
                ssid=f"{ssid}-5G",
                security=SecurityProfile(mode=SecurityMode.WPA2_PSK, passphrase=passphrase),
                subnet=subnets[1],
                dhcp=True,
            ),
        )
        nodes = [
            NodeSpec("ap0", NodeRole.AP, "bss0", channel=6, band=Band.GHZ_2_4),
            NodeSpec("ap1", NodeRole.AP, "bss1", channel=36, band=Band.GHZ_5),
        ]
        # Stations alternate between the two networks in declaration order.
        nodes += [NodeSpec(f"sta{i}", NodeRole.STA, f"bss{i % 2}") for i in range(sta_count)]
        name = f"Dual BSS lab ({sta_count} STA)"
        description = "Two WPA2-PSK BSSs on separate bands and subnets; stations split round-robin."

    else:  # ENTERPRISE_EAP
        identities = tuple(f"sta{i}@{EAP_REALM_DEFAULT}" for i in range(sta_count))
        networks = (
            NetworkSpec(
                network_name="corp",
                ssid=ssid,
                security=SecurityProfile(
                    mode=SecurityMode.WPA2_EAP_TLS,
                    eap=EapParams(
                        realm=EAP_REALM_DEFAULT,
                        ca_validity_days=EAP_CA_VALIDITY_DAYS_DEFAULT,
                        client_identities=identities,
                    ),
                ),
                subnet=subnets[0],
                dhcp=True,
            ),
        )
        nodes = [NodeSpec("ap0", NodeRole.AP, "corp", channel=6, band=Band.GHZ_2_4)]
        nodes += [NodeSpec(f"sta{i}", NodeRole.STA, "corp") for i in range(sta_count)]
        name = f"Enterprise EAP-TLS lab ({sta_count} STA)"
        description = "802.1X BSS with certificate-authenticated stations and a RADIUS backend."

    return ScenarioSpec(
        scenario_id=scenario_id,
        name=name,
        description=description,
        version=1,
        author=author,
        nodes=tuple(nodes),
        networks=networks,
        created_at=created_at,
    )


# ---------------------------------------------------------------------------
# Manifest derivation
# ---------------------------------------------------------------------------

def scenario_digest(scenario_id: str) -> bytes:
    return hashlib.sha256(scenario_id.encode("utf-8")).digest()


def scenario_id_short(scenario_id: str) -> str:
    return scenario_digest(scenario_id)[:4].hex()


def _generated_mac(scenario_id: str, radio_index: int) -> str:
    # 02:00:00:SS:RR:00 — locally administered unicast, SS = low byte of the
    # scenario digest (big-endian integer), RR = radio index.
    ss = scenario_digest(scenario_id)[-1]
    return f"02:00:00:{ss:02x}:{radio_index:02x}:00"


def subnet_gateway(subnet: ipaddress.IPv4Network) -> ipaddress.IPv4Address:
    return subnet.network_address + 1


def derive_manifest(spec: ScenarioSpec) -> TopologyManifest:
    """Allocate namespaces, radios, interfaces, MACs and addresses for a valid spec."""
    report = validate_scenario(spec)
    if not report.ok:
        raise InvalidSpec(report)

    short = scenario_id_short(spec.scenario_id)
    subnets = {n.network_name: ipaddress.ip_network(n.subnet) for n in spec.networks}

    # Per-network host allocator: gateway reserved for the first AP, every
    # further static node takes the next host in node declaration order.
    next_host: dict[str, ipaddress.IPv4Address] = {
        name: subnet_gateway(net) + 1 for name, net in subnets.items()
    }
    gateway_taken: set[str] = set()

    entries = []
    for radio_index, node in enumerate(spec.nodes):
        network = spec.network(node.network)
        subnet = subnets[node.network]
        gateway = subnet_gateway(subnet)
        mac = node.mac_override.lower() if node.mac_override else _generated_mac(spec.scenario_id, radio_index)

        address: str | None = None
        gw_field: str | None = None
        if node.role == NodeRole.AP:
            if node.network not in gateway_taken:
                gateway_taken.add(node.network)
                address = f"{gateway}/{subnet.prefixlen}"
            else:
                host = next_host[node.network]
                next_host[node.network] = host + 1
                address = f"{host}/{subnet.prefixlen}"
        elif not network.dhcp:
            host = next_host[node.network]
            next_host[node.network] = host + 1
            address = f"{host}/{subnet.prefixlen}"
            gw_field = str(gateway)

        entries.append(
            ManifestEntry(
                node_name=node.node_name,
                namespace_name=f"ns-{short}-{node.node_name}",
                interface_name=f"wlan{radio_index}",
                radio_index=radio_index,
                role=node.role,
                mac=mac,
                address=address,
                gateway=gw_field,
            )
        )

    return TopologyManifest(scenario_id=spec.scenario_id, version=spec.version, entries=tuple(entries))
