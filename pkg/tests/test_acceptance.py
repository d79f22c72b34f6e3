"""Acceptance criteria.

Each test implements one acceptance criterion at its stated tolerance and
prints one "ACCEPTANCE <name>: PASS|FAIL" line (run with -s or -rA to see
them). The whole module runs against the simulated executor and needs no
privileges.
"""

from __future__ import annotations

import ipaddress
import json
import time
from contextlib import contextmanager
from pathlib import Path

import pytest
from cryptography import x509
from fastapi.testclient import TestClient

from wifirange.access import Action, Role, hash_password
from wifirange.api import create_app
from wifirange.compiler import compile_bundle
from wifirange.deploy import deploy, plan_deployment
from wifirange.model import (
    Band,
    BlueprintId,
    NetworkSpec,
    NodeRole,
    NodeSpec,
    ScenarioSpec,
    SecurityMode,
    SecurityProfile,
    derive_manifest,
    spec_to_canonical_json,
)
from wifirange.simexec import SimulatedExecutor
from wifirange.store import Store, UserRecord

from conftest import FAST_COST, USERS, auth, login, make_api_config, seed_users
from grammars import check_dnsmasq, check_hostapd, parse_supplicant
from test_access import expected_decision
from test_api import poll_instance
from test_orchestrator import run_random_ops

GOLDEN = Path(__file__).parent / "golden"


@contextmanager
def criterion(name: str):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {name}: FAIL")
        raise
    else:
        print(f"ACCEPTANCE {name}: PASS")


def grid_spec(bp: BlueprintId, sta: int) -> ScenarioSpec:
    from wifirange.model import instantiate_blueprint

    params = {"sta_count": sta, "ssid": "Golden", "passphrase": "g0ldenpass"}
    if bp == BlueprintId.ENTERPRISE_EAP:
        params.pop("passphrase")
    return instantiate_blueprint(
        bp,
        params,
        scenario_id=f"golden-{bp.value.lower()}-{sta}",
        author="golden",
        created_at=1_750_000_000,
    )


GRID = [(bp, sta) for bp in BlueprintId for sta in (1, 4, 16)]


def test_compiler_determinism():
    """3 blueprints x sta_count {1,4,16}: two independent compile runs agree,
    hashes match the committed golden corpus, full grid under 5 s."""
    with criterion("compiler-determinism"):
        golden_hashes = json.loads((GOLDEN / "bundle_hashes.json").read_text())
        started = time.monotonic()
        for bp, sta in GRID:
            spec = grid_spec(bp, sta)
            first = compile_bundle(spec, derive_manifest(spec))
            second = compile_bundle(spec, derive_manifest(spec))
            assert first.bundle_hash == second.bundle_hash, (bp, sta)
            assert first.bundle_hash == golden_hashes[f"{bp.value}/{sta}"], (bp, sta)
        elapsed = time.monotonic() - started
        assert elapsed < 5.0, f"grid took {elapsed:.2f}s (budget 5s)"

        # Byte-level golden tree for the smallest SOHO bundle.
        spec = grid_spec(BlueprintId.SOHO_PSK, 1)
        bundle = compile_bundle(spec, derive_manifest(spec))
        tree = GOLDEN / "soho_psk_1"
        on_disk = {p.relative_to(tree).as_posix(): p.read_bytes() for p in tree.rglob("*") if p.is_file()}
        assert on_disk == {a.path: a.content for a in bundle.artifacts}


def test_artifact_parseback():
    """Every generated AP/STA/DHCP config parses under the independent
    grammar checkers with zero unknown keys; EAP chains verify against the CA."""
    with criterion("artifact-parse-back"):
        configs = eap_bundles = 0
        for bp, sta in GRID:
            spec = grid_spec(bp, sta)
            bundle = compile_bundle(spec, derive_manifest(spec))
            for artifact in bundle.artifacts:
                if artifact.path.endswith("hostapd.conf"):
                    check_hostapd(artifact.content.decode())
                    configs += 1
                elif artifact.path.endswith("wpa_supplicant.conf"):
                    parse_supplicant(artifact.content.decode())
                    configs += 1
                elif artifact.path.endswith("dnsmasq.conf"):
                    check_dnsmasq(artifact.content.decode())
                    configs += 1
            if bp == BlueprintId.ENTERPRISE_EAP:
                eap_bundles += 1
                ca = x509.load_pem_x509_certificate(bundle.get("eap/ca.pem").content)
                chained = 0
                for artifact in bundle.artifacts:
                    if artifact.path.startswith("eap/") and artifact.path.endswith(".pem") and artifact.path != "eap/ca.pem":
                        cert = x509.load_pem_x509_certificate(artifact.content)
                        ca.public_key().verify(cert.signature, cert.tbs_certificate_bytes)
                        assert cert.issuer == ca.subject
                        chained += 1
                assert chained == 1 + sta  # server + one per identity
        assert configs >= 60  # the grid exercises a substantial corpus
        assert eap_bundles == 3


def test_end_to_end_lifecycle(tmp_path):
    """Every blueprint reaches RUNNING with verification.overall=true on the
    simulated executor and tears down to an empty ledger; suite under 30 s."""
    with criterion("end-to-end-lifecycle"):
        started = time.monotonic()
        app = create_app(make_api_config(tmp_path))
        with TestClient(app) as client:
            seed_users(app.state.ctx.store)
            ctx = app.state.ctx
            instructor = login(client, "tina")
            for bp in BlueprintId:
                params = {"sta_count": 2, "ssid": "Lifecycle", "passphrase": "lifecyclepass"}
                if bp == BlueprintId.ENTERPRISE_EAP:
                    params.pop("passphrase")
                created = client.post(
                    "/api/v1/scenarios",
                    json={"blueprint_id": bp.value, "params": params},
                    headers=auth(instructor),
                )
                assert created.status_code == 201
                scenario_id = created.json()["scenario_id"]
                assert client.post(f"/api/v1/scenarios/{scenario_id}/publish", headers=auth(instructor)).status_code == 200

                launched = client.post(f"/api/v1/scenarios/{scenario_id}/launch", headers=auth(instructor))
                assert launched.status_code == 202
                instance_id = launched.json()["instance_id"]
                status, _ = poll_instance(client, instructor, instance_id, {"RUNNING", "FAILED"})
                assert status["state"] == "RUNNING", (bp, status)
                assert status["verification"]["overall"] is True, (bp, status["verification"])

                assert client.post(f"/api/v1/instances/{instance_id}/terminate", headers=auth(instructor)).status_code == 202
                poll_instance(client, instructor, instance_id, {"TERMINATED"})
                assert ctx.orchestrator.ledger_for(instance_id) is None
            assert ctx.orchestrator.live_namespace_count() == 0
        elapsed = time.monotonic() - started
        assert elapsed < 30.0, f"lifecycle suite took {elapsed:.2f}s (budget 30s)"


def test_rollback_exhaustiveness():
    """Fault injection at every SOHO plan step index (>= 8 steps) leaves an
    empty ledger and an empty world: 100% of positions, zero residuals."""
    with criterion("rollback-exhaustiveness"):
        spec = grid_spec(BlueprintId.SOHO_PSK, 1)
        bundle = compile_bundle(spec, derive_manifest(spec))
        plan = plan_deployment(bundle)
        assert len(plan.steps) >= 8
        for position in range(len(plan.steps)):
            executor = SimulatedExecutor(bundle, fail_at_step=position)
            result = deploy(executor, plan)
            assert result.outcome == "FAILED" and result.failed_step == position
            assert result.ledger.is_empty(), f"ledger residue at position {position}"
            assert executor.enumerate_resources().is_empty(), f"world residue at position {position}"


def test_rbac_matrix_and_route_hardening(tmp_path):
    """Full role x action x ownership matrix (99 cases) matches the static
    table; every API route rejects missing/expired tokens; every response
    carries the five hardening headers."""
    with criterion("rbac-matrix"):
        from wifirange.access import decide_permission

        cases = 0
        for role in Role:
            for action in Action:
                for ownership, owner in (("own", "me"), ("other", "them"), ("none", None)):
                    got = decide_permission(role, action, username="me", resource_owner=owner)
                    assert got is expected_decision(role, action, ownership), (role, action, ownership)
                    cases += 1
        assert cases == 99 >= 66

        app = create_app(make_api_config(tmp_path))
        with TestClient(app) as client:
            seed_users(app.state.ctx.store)
            ctx = app.state.ctx
            expired = ctx.tokens.issue("bob", Role.LEARNER, now=time.time() - 13 * 3600).token
            fillers = {"scenario_id": "x", "instance_id": "y", "username": "z", "path": "manifest.json"}
            header_set = {
                "Content-Security-Policy": "default-src 'self'",
                "X-Frame-Options": "DENY",
                "X-Content-Type-Options": "nosniff",
                "Referrer-Policy": "no-referrer",
                "Cache-Control": "no-store",
            }
            responses = []
            routes_checked = 0
            for route in client.app.routes:
                path = getattr(route, "path", "")
                methods = getattr(route, "methods", None) or set()
                if not (path.startswith("/api/v1") or path == "/metrics") or path.endswith("/login"):
                    continue
                concrete = path
                for key, value in fillers.items():
                    concrete = concrete.replace("{" + key + "}", value).replace("{" + key + ":path}", value)
                for method in methods - {"HEAD", "OPTIONS"}:
                    for headers in ({}, auth(expired)):
                        response = client.request(method, concrete, headers=headers)
                        assert response.status_code == 401, f"{method} {concrete}"
                        responses.append(response)
                    routes_checked += 1
            assert routes_checked >= 13

            # Mixed-status sample including success paths.
            instructor = login(client, "tina")
            learner = login(client, "bob")
            responses += [
                client.post("/api/v1/login", json={"username": "bob", "password": USERS["bob"][0]}),
                client.post("/api/v1/login", json={"username": "bob", "password": "wrong-wrong"}),
                client.get("/api/v1/scenarios", headers=auth(learner)),
                client.post(
                    "/api/v1/scenarios",
                    json={"blueprint_id": "SOHO_PSK", "params": {"sta_count": 1, "ssid": "L", "passphrase": "p4ssphrase"}},
                    headers=auth(learner),
                ),  # 403
                client.get("/api/v1/scenarios/ghost", headers=auth(instructor)),  # 404
                client.get("/definitely/not/there"),  # 404 unknown route
            ]
            for response in responses:
                for name, value in header_set.items():
                    assert response.headers.get(name) == value, (response.request.url, name)
            assert len(responses) >= 30  # 100% of what this criterion exercised


def _isolation_spec(i: int) -> ScenarioSpec:
    return ScenarioSpec(
        scenario_id=f"iso-{i:02d}",
        name=f"Isolation lab {i:02d}",
        description="concurrency isolation exercise",
        version=1,
        author="tina",
        nodes=(
            NodeSpec("ap0", NodeRole.AP, "lan", channel=6, band=Band.GHZ_2_4),
            NodeSpec("sta0", NodeRole.STA, "lan"),
        ),
        networks=(
            NetworkSpec(
                network_name="lan",
                ssid=f"Iso{i:02d}",
                security=SecurityProfile(mode=SecurityMode.WPA2_PSK, passphrase="isolationpass"),
                subnet=f"10.{120 + i}.0.0/24",
            ),
        ),
        created_at=1_750_000_000,
    )


def test_isolation_under_concurrency(tmp_path):
    """16 concurrent launches by 8 users (quota 2) all reach RUNNING with
    pairwise-disjoint namespaces and subnets; cross-learner reads fail; <60 s."""
    with criterion("isolation-under-concurrency"):
        started = time.monotonic()
        from wifirange.orchestrator import OrchestratorConfig

        config = make_api_config(
            tmp_path,
            orchestrator=OrchestratorConfig(
                worker_count=4, per_user_quota=2, global_capacity=16, reap_interval_seconds=3600.0
            ),
        )
        app = create_app(config)
        with TestClient(app) as client:
            ctx = app.state.ctx
            ctx.store.create_user(UserRecord("tina", hash_password("teachpass123", FAST_COST), "INSTRUCTOR", True))
            for i in range(8):
                ctx.store.create_user(
                    UserRecord(f"learner{i}", hash_password("learnerpass", FAST_COST), "LEARNER", True)
                )
            # Two instructor sessions: 16 creates + 16 publishes would trip
            # the per-token mutating-rate limit (30/min) on a single token.
            author_token = client.post(
                "/api/v1/login", json={"username": "tina", "password": "teachpass123"}
            ).json()["token"]
            publisher_token = client.post(
                "/api/v1/login", json={"username": "tina", "password": "teachpass123"}
            ).json()["token"]

            from wifirange.model import spec_to_dict

            for i in range(16):
                doc = spec_to_dict(_isolation_spec(i))
                created = client.post("/api/v1/scenarios", json=doc, headers=auth(author_token))
                assert created.status_code == 201, created.text
                assert (
                    client.post(f"/api/v1/scenarios/iso-{i:02d}/publish", headers=auth(publisher_token)).status_code
                    == 200
                )

            tokens = {}
            for i in range(8):
                tokens[f"learner{i}"] = client.post(
                    "/api/v1/login", json={"username": f"learner{i}", "password": "learnerpass"}
                ).json()["token"]

            owners: dict[str, str] = {}  # instance_id -> username
            for i in range(16):
                username = f"learner{i // 2}"  # two launches per user = quota
                response = client.post(
                    f"/api/v1/scenarios/iso-{i:02d}/launch", headers=auth(tokens[username])
                )
                assert response.status_code == 202, response.text
                owners[response.json()["instance_id"]] = username

            assert len(owners) == 16
            manifests = {}
            for instance_id, username in owners.items():
                status, _ = poll_instance(client, tokens[username], instance_id, {"RUNNING", "FAILED"}, timeout=30)
                assert status["state"] == "RUNNING", status
                stored = ctx.store.get_scenario(status["scenario_id"], status["version"])
                manifests[instance_id] = derive_manifest(stored.spec)

            # Pairwise-disjoint namespace names.
            all_namespaces = [
                e.namespace_name for manifest in manifests.values() for e in manifest.entries
            ]
            assert len(all_namespaces) == len(set(all_namespaces)) == 32

            # Pairwise-disjoint subnets (independent interval oracle).
            subnets = []
            for manifest in manifests.values():
                stored = ctx.store.get_scenario(manifest.scenario_id, manifest.version)
                subnets.extend(ipaddress.ip_network(n.subnet) for n in stored.spec.networks)
            for a in range(len(subnets)):
                for b in range(a + 1, len(subnets)):
                    lo = max(int(subnets[a].network_address), int(subnets[b].network_address))
                    hi = min(int(subnets[a].broadcast_address), int(subnets[b].broadcast_address))
                    assert lo > hi, f"subnets overlap: {subnets[a]} vs {subnets[b]}"

            # No cross-learner status read succeeds.
            denied = 0
            for instance_id, owner in owners.items():
                for username, token in tokens.items():
                    if username == owner:
                        continue
                    response = client.get(f"/api/v1/instances/{instance_id}", headers=auth(token))
                    assert response.status_code == 403, (instance_id, username)
                    denied += 1
            assert denied == 16 * 7

        elapsed = time.monotonic() - started
        assert elapsed < 60.0, f"isolation run took {elapsed:.2f}s (budget 60s)"


def test_persistence(tmp_path):
    """Round-trip byte equality, crash-safe partial saves, and no plaintext
    secrets in the raw store bytes."""
    with criterion("persistence"):
        from unittest import mock

        db_path = tmp_path / "acceptance.db"
        store = Store(db_path)
        spec = grid_spec(BlueprintId.SOHO_PSK, 2)
        bundle = compile_bundle(spec, derive_manifest(spec))
        store.save_scenario(spec, bundle, owner="tina")
        user_password = "tr0ub4dor&3-unique"
        store.create_user(UserRecord("tina", hash_password(user_password, FAST_COST), "INSTRUCTOR", True))
        store.close()

        # Restart: byte-identical round trip.
        reopened = Store(db_path)
        stored = reopened.get_scenario(spec.scenario_id)
        assert stored.spec_bytes == spec_to_canonical_json(spec)
        assert stored.bundle.bundle_hash == bundle.bundle_hash
        assert {a.path: a.content for a in stored.bundle.artifacts} == {
            a.path: a.content for a in bundle.artifacts
        }

        # Crash injection mid-save: no partial version appears.
        crash_spec = grid_spec(BlueprintId.MULTI_BSS, 1)
        crash_bundle = compile_bundle(crash_spec, derive_manifest(crash_spec))
        calls = {"n": 0}
        real = Store._insert_artifact

        def exploding(self, conn, scenario_id, version, artifact):
            calls["n"] += 1
            if calls["n"] == 4:
                raise RuntimeError("injected crash")
            return real(self, conn, scenario_id, version, artifact)

        with mock.patch.object(Store, "_insert_artifact", exploding):
            with pytest.raises(RuntimeError):
                reopened.save_scenario(crash_spec, crash_bundle, owner="tina")
        reopened.close()

        after_crash = Store(db_path)
        from wifirange.store import NotFound

        with pytest.raises(NotFound):
            after_crash.get_scenario(crash_spec.scenario_id)
        assert len(after_crash.list_scenarios("ADMIN")) == 1
        after_crash.close()

        # Plaintext secrets absent from the raw database bytes.
        raw = db_path.read_bytes()
        assert user_password.encode() not in raw
        assert b"tr0ub4dor" not in raw


def test_state_machine_soundness():
    """10,000 randomized operation interleavings produce zero illegal
    transitions (checked live by the orchestrator and replayed from the
    audit trail)."""
    with criterion("state-machine-soundness"):
        store = Store(":memory:")
        from test_orchestrator import publish_blueprint

        publish_blueprint(store, scenario_id="orch-soho")
        executed = run_random_ops(store, ops=10_000, seed=20_250_809, quota=3, capacity=10)
        assert executed == 10_000
        store.close()
