"""In-process model of the namespace/radio/daemon world.

The simulated executor materializes deployments against a SimWorld instead of
the OS: namespaces and radios are entries in maps, hostapd/wpa_supplicant
semantics reduce to an association predicate over (ssid, security,
credential), and dnsmasq reduces to a lease allocator. State transitions are
pure; illegal events leave the world unchanged and report a reason.

Crucially the executor derives all behavior from the *artifact bundle* (it
parses the generated configs), so a mutated config changes what the simulated
daemons do, exactly like the real ones.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field, replace
from typing import Mapping

from .compiler import ArtifactBundle
import json

from .model import TopologyManifest, manifest_from_dict


# ---------------------------------------------------------------------------
# World state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NamespaceState:
    interfaces: tuple[str, ...] = ()
    addresses: Mapping[str, str] = field(default_factory=dict)  # interface -> ip/prefix


@dataclass(frozen=True)
class RadioState:
    index: int


@dataclass(frozen=True)
class ApState:
    node_name: str
    namespace: str
    interface: str
    ssid: str
    key_mgmt: str  # NONE | WPA-PSK | SAE | WPA-EAP
    passphrase: str | None
    network_name: str
    band: str  # "g" (2.4GHz) or "a" (5GHz), from hw_mode
    gateway: str | None


@dataclass(frozen=True)
class StaState:
    node_name: str
    namespace: str
    interface: str
    ssid: str
    key_mgmt: str
    psk: str | None
    sae_password: str | None
    identity: str | None
    dhcp: bool


@dataclass(frozen=True)
class DhcpServiceState:
    network_name: str
    namespace: str
    interface: str
    range_start: str
    range_end: str
    router: str
    prefixlen: int


@dataclass(frozen=True)
class AuthServiceState:
    identities: frozenset[str]


@dataclass(frozen=True)
class SimWorld:
    namespaces: Mapping[str, NamespaceState] = field(default_factory=dict)
    radios: Mapping[int, RadioState] = field(default_factory=dict)
    aps: Mapping[str, ApState] = field(default_factory=dict)
    stas: Mapping[str, StaState] = field(default_factory=dict)
    dhcp_services: Mapping[str, DhcpServiceState] = field(default_factory=dict)
    auth_service: AuthServiceState | None = None
    associations: Mapping[str, str | None] = field(default_factory=dict)
    dhcp_leases: Mapping[str, str] = field(default_factory=dict)

    def sta_address(self, sta: StaState) -> str | None:
        """Effective address of a station: static assignment or DHCP lease."""
        ns = self.namespaces.get(sta.namespace)
        if ns and sta.interface in ns.addresses:
            return ns.addresses[sta.interface].split("/")[0]
        return self.dhcp_leases.get(sta.node_name)


def empty_world() -> SimWorld:
    return SimWorld()


# ---------------------------------------------------------------------------
# Events
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CreateRadio:
    index: int


@dataclass(frozen=True)
class CreateNamespace:
    name: str


@dataclass(frozen=True)
class AttachInterface:
    namespace: str
    interface: str


@dataclass(frozen=True)
class AssignAddress:
    namespace: str
    interface: str
    address: str


@dataclass(frozen=True)
class StartAp:
    ap: ApState


@dataclass(frozen=True)
class StartSta:
    sta: StaState


@dataclass(frozen=True)
class StartDhcp:
    service: DhcpServiceState


@dataclass(frozen=True)
class StartAuth:
    identities: frozenset[str]


@dataclass(frozen=True)
class AssociationAttempt:
    sta_node: str


@dataclass(frozen=True)
class DhcpRequest:
    sta_node: str


@dataclass(frozen=True)
class StopAp:
    node_name: str


@dataclass(frozen=True)
class StopSta:
    node_name: str


@dataclass(frozen=True)
class StopDhcp:
    network_name: str


@dataclass(frozen=True)
class StopAuth:
    pass


@dataclass(frozen=True)
class RemoveNamespace:
    name: str


@dataclass(frozen=True)
class RemoveRadio:
    index: int


Event = object  # any of the dataclasses above


@dataclass(frozen=True)
class SimStepResult:
    world: SimWorld
    ok: bool
    reason: str | None = None


def _rejected(world: SimWorld, reason: str) -> SimStepResult:
    return SimStepResult(world=world, ok=False, reason=reason)


def security_matches(sta: StaState, ap: ApState, auth: AuthServiceState | None) -> bool:
    """The association predicate: ssid equal and credentials satisfy the AP."""
    if sta.ssid != ap.ssid:
        return False
    if ap.key_mgmt == "NONE":
        return sta.key_mgmt == "NONE"
    if ap.key_mgmt == "WPA-PSK":
        return sta.key_mgmt == "WPA-PSK" and sta.psk is not None and sta.psk == ap.passphrase
    if ap.key_mgmt == "SAE":
        return sta.key_mgmt == "SAE" and sta.sae_password is not None and sta.sae_password == ap.passphrase
    if ap.key_mgmt == "WPA-EAP":
        return (
            sta.key_mgmt == "WPA-EAP"
            and auth is not None
            and sta.identity is not None
            and sta.identity in auth.identities
        )
    return False


def sim_step(world: SimWorld, event: Event) -> SimStepResult:
    """Pure transition; returns the (possibly unchanged) world and an outcome."""
    if isinstance(event, CreateRadio):
        if event.index in world.radios:
            return _rejected(world, f"radio {event.index} already exists")
        return SimStepResult(
            replace(world, radios={**world.radios, event.index: RadioState(event.index)}), True
        )

    if isinstance(event, CreateNamespace):
        if event.name in world.namespaces:
            return _rejected(world, f"namespace {event.name} already exists")
        return SimStepResult(
            replace(world, namespaces={**world.namespaces, event.name: NamespaceState()}), True
        )

    if isinstance(event, AttachInterface):
        ns = world.namespaces.get(event.namespace)
        if ns is None:
            return _rejected(world, f"namespace {event.namespace} does not exist")
        if event.interface in ns.interfaces:
            return _rejected(world, f"interface {event.interface} already attached")
        updated = replace(ns, interfaces=ns.interfaces + (event.interface,))
        return SimStepResult(
            replace(world, namespaces={**world.namespaces, event.namespace: updated}), True
        )

    if isinstance(event, AssignAddress):
        ns = world.namespaces.get(event.namespace)
        if ns is None or event.interface not in ns.interfaces:
            return _rejected(world, f"{event.namespace}/{event.interface} not present")
        updated = replace(ns, addresses={**ns.addresses, event.interface: event.address})
        return SimStepResult(
            replace(world, namespaces={**world.namespaces, event.namespace: updated}), True
        )

    if isinstance(event, StartAp):
        ap = event.ap
        if ap.node_name in world.aps:
            return _rejected(world, f"hostapd already running for {ap.node_name}")
        if ap.namespace not in world.namespaces:
            return _rejected(world, f"namespace {ap.namespace} does not exist")
        return SimStepResult(replace(world, aps={**world.aps, ap.node_name: ap}), True)

    if isinstance(event, StartSta):
        sta = event.sta
        if sta.node_name in world.stas:
            return _rejected(world, f"wpa_supplicant already running for {sta.node_name}")
        if sta.namespace not in world.namespaces:
            return _rejected(world, f"namespace {sta.namespace} does not exist")
        return SimStepResult(replace(world, stas={**world.stas, sta.node_name: sta}), True)

    if isinstance(event, StartDhcp):
        svc = event.service
        if svc.network_name in world.dhcp_services:
            return _rejected(world, f"dnsmasq already running for {svc.network_name}")
        return SimStepResult(
            replace(world, dhcp_services={**world.dhcp_services, svc.network_name: svc}), True
        )

    if isinstance(event, StartAuth):
        if world.auth_service is not None:
            return _rejected(world, "authentication service already running")
        return SimStepResult(replace(world, auth_service=AuthServiceState(event.identities)), True)

    if isinstance(event, AssociationAttempt):
        sta = world.stas.get(event.sta_node)
        if sta is None:
            return _rejected(world, f"station {event.sta_node} is not running")
        candidates = [
            ap for ap in world.aps.values() if security_matches(sta, ap, world.auth_service)
        ]
        if not candidates:
            # The attempt itself is legal; the outcome is "no AP accepted us".
            new_assoc = {**world.associations, event.sta_node: None}
            return SimStepResult(
                replace(world, associations=new_assoc), False, "no AP matched ssid/security"
            )
        chosen = min(candidates, key=lambda ap: ap.node_name)
        new_assoc = {**world.associations, event.sta_node: chosen.node_name}
        return SimStepResult(replace(world, associations=new_assoc), True)

    if isinstance(event, DhcpRequest):
        sta = world.stas.get(event.sta_node)
        if sta is None:
            return _rejected(world, f"station {event.sta_node} is not running")
        if event.sta_node in world.dhcp_leases:
            return SimStepResult(world, True)  # lease renewal, keep address
        ap_name = world.associations.get(event.sta_node)
        if ap_name is None:
            return _rejected(world, "not associated")
        ap = world.aps[ap_name]
        svc = world.dhcp_services.get(ap.network_name)
        if svc is None:
            return _rejected(world, f"no DHCP service on network {ap.network_name}")
        lease = _allocate_lease(world, svc)
        if lease is None:
            return _rejected(world, "lease pool exhausted")
        return SimStepResult(
            replace(world, dhcp_leases={**world.dhcp_leases, event.sta_node: lease}), True
        )

    if isinstance(event, StopAp):
        if event.node_name not in world.aps:
            return _rejected(world, f"no hostapd for {event.node_name}")
        remaining = {k: v for k, v in world.aps.items() if k != event.node_name}
        return SimStepResult(replace(world, aps=remaining), True)

    if isinstance(event, StopSta):
        if event.node_name not in world.stas:
            return _rejected(world, f"no wpa_supplicant for {event.node_name}")
        remaining = {k: v for k, v in world.stas.items() if k != event.node_name}
        assoc = {k: v for k, v in world.associations.items() if k != event.node_name}
        leases = {k: v for k, v in world.dhcp_leases.items() if k != event.node_name}
        return SimStepResult(
            replace(world, stas=remaining, associations=assoc, dhcp_leases=leases), True
        )

    if isinstance(event, StopDhcp):
        if event.network_name not in world.dhcp_services:
            return _rejected(world, f"no dnsmasq for {event.network_name}")
        remaining = {k: v for k, v in world.dhcp_services.items() if k != event.network_name}
        return SimStepResult(replace(world, dhcp_services=remaining), True)

    if isinstance(event, StopAuth):
        if world.auth_service is None:
            return _rejected(world, "authentication service not running")
        return SimStepResult(replace(world, auth_service=None), True)

    if isinstance(event, RemoveNamespace):
        if event.name not in world.namespaces:
            return _rejected(world, f"namespace {event.name} does not exist")
        remaining = {k: v for k, v in world.namespaces.items() if k != event.name}
        return SimStepResult(replace(world, namespaces=remaining), True)

    if isinstance(event, RemoveRadio):
        if event.index not in world.radios:
            return _rejected(world, f"radio {event.index} does not exist")
        remaining = {k: v for k, v in world.radios.items() if k != event.index}
        return SimStepResult(replace(world, radios=remaining), True)

    return _rejected(world, f"unknown event {type(event).__name__}")


def _allocate_lease(world: SimWorld, svc: DhcpServiceState) -> str | None:
    start = ipaddress.ip_address(svc.range_start)
    end = ipaddress.ip_address(svc.range_end)
    taken = set(world.dhcp_leases.values())
    for ns in world.namespaces.values():
        for addr in ns.addresses.values():
            taken.add(addr.split("/")[0])
    current = start
    while current <= end:
        if str(current) not in taken:
            return str(current)
        current += 1
    return None


# ---------------------------------------------------------------------------
# Bundle interpretation (the simulated daemons' view of the artifacts)
# ---------------------------------------------------------------------------

def _parse_keyvalue_config(text: str) -> dict[str, str]:
    options: dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        options[key] = value if sep else ""
    return options


def _parse_supplicant_config(text: str) -> dict[str, str]:
    """Extract the (single) network block's options."""
    options: dict[str, str] = {}
    in_block = False
    for line in text.splitlines():
        line = line.strip()
        if line == "network={":
            in_block = True
            continue
        if line == "}":
            in_block = False
            continue
        if in_block and "=" in line:
            key, _, value = line.partition("=")
            if value.startswith('"') and value.endswith('"') and len(value) >= 2:
                value = value[1:-1]
            options[key] = value
    return options


@dataclass(frozen=True)
class BundleContext:
    """Everything the simulated daemons read from the artifact bundle."""

    manifest: TopologyManifest
    ap_configs: Mapping[str, dict[str, str]]  # node -> hostapd options
    sta_configs: Mapping[str, dict[str, str]]  # node -> network-block options
    dhcp_configs: Mapping[str, dict[str, str]]  # network -> dnsmasq options
    eap_identities: frozenset[str]

    @classmethod
    def parse(cls, bundle: ArtifactBundle) -> "BundleContext":
        manifest = manifest_from_dict(json.loads(bundle.get("manifest.json").content))
        ap_configs: dict[str, dict[str, str]] = {}
        sta_configs: dict[str, dict[str, str]] = {}
        dhcp_configs: dict[str, dict[str, str]] = {}
        identities: set[str] = set()
        for artifact in bundle.artifacts:
            parts = artifact.path.split("/")
            if parts[0] == "ap" and parts[-1] == "hostapd.conf":
                ap_configs[parts[1]] = _parse_keyvalue_config(artifact.content.decode())
            elif parts[0] == "sta" and parts[-1] == "wpa_supplicant.conf":
                sta_configs[parts[1]] = _parse_supplicant_config(artifact.content.decode())
            elif parts[0] == "net" and parts[-1] == "dnsmasq.conf":
                dhcp_configs[parts[1]] = _parse_keyvalue_config(artifact.content.decode())
            elif parts[0] == "eap" and parts[-1].endswith(".pem") and parts[-1] not in ("ca.pem", "server.pem"):
                identities.add(parts[-1][: -len(".pem")])
        return cls(
            manifest=manifest,
            ap_configs=ap_configs,
            sta_configs=sta_configs,
            dhcp_configs=dhcp_configs,
            eap_identities=frozenset(identities),
        )

    def ap_state(self, node_name: str) -> ApState:
        entry = self.manifest.entry(node_name)
        options = self.ap_configs[node_name]
        if "wpa" not in options:
            key_mgmt = "NONE"
            passphrase = None
        else:
            key_mgmt = options.get("wpa_key_mgmt", "WPA-PSK")
            passphrase = options.get("wpa_passphrase") or options.get("sae_password")
        network_name = self._network_for_ap(node_name)
        return ApState(
            node_name=node_name,
            namespace=entry.namespace_name,
            interface=entry.interface_name,
            ssid=options.get("ssid", ""),
            key_mgmt=key_mgmt,
            passphrase=passphrase,
            network_name=network_name,
            band=options.get("hw_mode", "g"),
            gateway=entry.address.split("/")[0] if entry.address else None,
        )

    def sta_state(self, node_name: str) -> StaState:
        entry = self.manifest.entry(node_name)
        options = self.sta_configs[node_name]
        return StaState(
            node_name=node_name,
            namespace=entry.namespace_name,
            interface=entry.interface_name,
            ssid=options.get("ssid", ""),
            key_mgmt=options.get("key_mgmt", "NONE"),
            psk=options.get("psk"),
            sae_password=options.get("sae_password"),
            identity=options.get("identity"),
            dhcp=entry.address is None,
        )

    def dhcp_state(self, network_name: str) -> DhcpServiceState:
        options = self.dhcp_configs[network_name]
        range_spec = options.get("dhcp-range", "")
        pieces = range_spec.split(",")
        router = ""
        for opt in options.get("dhcp-option", "").split(","):
            if "." in opt:
                router = opt
        interface = options.get("interface", "")
        namespace = ""
        prefixlen = 24
        for entry in self.manifest.entries:
            if entry.interface_name == interface and entry.address:
                namespace = entry.namespace_name
                prefixlen = int(entry.address.split("/")[1])
                break
        return DhcpServiceState(
            network_name=network_name,
            namespace=namespace,
            interface=interface,
            range_start=pieces[0] if len(pieces) > 0 else "",
            range_end=pieces[1] if len(pieces) > 1 else "",
            router=router,
            prefixlen=prefixlen,
        )

    def _network_for_ap(self, node_name: str) -> str:
        # Recover the serving network from the dnsmasq configs: the AP's
        # address lies in the subnet whose router option that config names.
        # Only DHCP lookups need this mapping; APs on non-DHCP networks get a
        # synthetic per-node name (never consulted).
        entry = self.manifest.entry(node_name)
        if entry.address:
            subnet = ipaddress.ip_interface(entry.address).network
            for network_name, options in self.dhcp_configs.items():
                for piece in options.get("dhcp-option", "").split(","):
                    try:
                        router = ipaddress.ip_address(piece)
                    except ValueError:
                        continue
                    if router in subnet:
                        return network_name
        return f"_net_of_{node_name}"
