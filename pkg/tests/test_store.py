"""Store: versioned history, round trips, durability, atomicity, concurrency."""

from __future__ import annotations

import dataclasses
import threading
from unittest import mock

import pytest

from wifirange import store as store_mod
from wifirange.compiler import compile_bundle
from wifirange.model import (
    BlueprintId,
    derive_manifest,
    instantiate_blueprint,
    spec_to_canonical_json,
)
from wifirange.store import (
    DuplicateUser,
    InstanceRow,
    InUse,
    NotFound,
    Store,
    UserRecord,
    VersionConflict,
    VersionNotFound,
    Visibility,
)


@pytest.fixture
def db(tmp_path):
    s = Store(tmp_path / "range.db")
    yield s
    s.close()


def soho_spec(scenario_id="store-soho", version=1, sta_count=1):
    spec = instantiate_blueprint(
        BlueprintId.SOHO_PSK,
        {"sta_count": sta_count, "ssid": "Lab", "passphrase": "p4ssphrase"},
        scenario_id=scenario_id,
        created_at=1_700_000_000,
    )
    return dataclasses.replace(spec, version=version)


def compiled(scenario_id="store-soho", version=1, sta_count=1):
    spec = soho_spec(scenario_id, version, sta_count)
    return spec, compile_bundle(spec, derive_manifest(spec))


class TestScenarioHistory:
    def test_first_save_is_version_one(self, db):
        spec, bundle = compiled()
        assert db.save_scenario(spec, bundle, owner="alice") == ("store-soho", 1)

    def test_second_save_extends_history(self, db):
        spec1, bundle1 = compiled(version=1)
        db.save_scenario(spec1, bundle1, owner="alice")
        spec2, bundle2 = compiled(version=2, sta_count=2)
        assert db.save_scenario(spec2, bundle2, owner="alice")[1] == 2
        v1 = db.get_scenario("store-soho", version=1)
        assert v1.spec == spec1
        assert v1.latest_version == 2

    def test_round_trip_byte_equality(self, db):
        spec, bundle = compiled()
        db.save_scenario(spec, bundle, owner="alice")
        stored = db.get_scenario("store-soho")
        assert stored.spec_bytes == spec_to_canonical_json(spec)
        assert stored.bundle.bundle_hash == bundle.bundle_hash
        assert {a.path: a.content for a in stored.bundle.artifacts} == {
            a.path: a.content for a in bundle.artifacts
        }

    def test_version_slot_conflict(self, db):
        spec, bundle = compiled(version=1)
        db.save_scenario(spec, bundle, owner="alice")
        again, bundle_again = compiled(version=1)
        with pytest.raises(VersionConflict):
            db.save_scenario(again, bundle_again, owner="alice")
        gap, bundle_gap = compiled(version=5)
        with pytest.raises(VersionConflict):
            db.save_scenario(gap, bundle_gap, owner="alice")

    def test_get_unknown(self, db):
        with pytest.raises(NotFound):
            db.get_scenario("missing")
        spec, bundle = compiled()
        db.save_scenario(spec, bundle, owner="alice")
        with pytest.raises(VersionNotFound):
            db.get_scenario("store-soho", version=9)

    def test_concurrent_writers_fill_contiguous_versions(self, tmp_path):
        path = tmp_path / "conc.db"
        seed = Store(path)
        n_writers = 6
        barrier = threading.Barrier(n_writers)
        failures: list[Exception] = []

        def writer(idx: int):
            handle = Store(path)
            try:
                barrier.wait()
                while True:
                    version = handle.next_version("conc")
                    spec, bundle = compiled("conc", version=version)
                    try:
                        handle.save_scenario(spec, bundle, owner=f"w{idx}")
                        return
                    except VersionConflict:
                        continue
            except Exception as exc:  # pragma: no cover - surfaced by assertion
                failures.append(exc)
            finally:
                handle.close()

        threads = [threading.Thread(target=writer, args=(i,)) for i in range(n_writers)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not failures
        # Oracle: after N successful writers the version set is exactly 1..N.
        stored = seed.get_scenario("conc")
        assert stored.latest_version == n_writers
        for v in range(1, n_writers + 1):
            assert seed.get_scenario("conc", version=v).version == v
        seed.close()

    def test_visibility_filtering(self, db):
        for i, vis in enumerate([Visibility.PUBLISHED, Visibility.PUBLISHED, Visibility.DRAFT]):
            spec, bundle = compiled(f"s{i}")
            db.save_scenario(spec, bundle, owner="alice", visibility=vis)
        assert len(db.list_scenarios("LEARNER")) == 2
        assert len(db.list_scenarios("INSTRUCTOR")) == 3
        assert len(db.list_scenarios("ADMIN")) == 3
        assert db.list_scenarios("LEARNER") == sorted(
            db.list_scenarios("LEARNER"), key=lambda s: s.name
        )

    def test_empty_store_lists_nothing(self, db):
        assert db.list_scenarios("ADMIN") == []

    def test_delete_scenario(self, db):
        spec, bundle = compiled()
        db.save_scenario(spec, bundle, owner="alice")
        db.delete_scenario("store-soho")
        with pytest.raises(NotFound):
            db.get_scenario("store-soho")
        assert db.list_scenarios("ADMIN") == []
        with pytest.raises(NotFound):
            db.delete_scenario("store-soho")

    def test_delete_blocked_by_active_instance(self, db):
        spec, bundle = compiled()
        db.save_scenario(spec, bundle, owner="alice")
        db.create_instance_guarded(
            InstanceRow("i1", "store-soho", 1, "bob", "RUNNING", 0.0, 100.0, None),
            per_user_quota=2,
            global_capacity=16,
        )
        with pytest.raises(InUse):
            db.delete_scenario("store-soho")
        db.set_instance_state("i1", "TERMINATED")
        db.delete_scenario("store-soho")


class TestDurabilityAtomicity:
    def test_reopen_round_trip(self, tmp_path):
        path = tmp_path / "durable.db"
        spec, bundle = compiled()
        first = Store(path)
        first.save_scenario(spec, bundle, owner="alice")
        first.close()

        reopened = Store(path)
        stored = reopened.get_scenario("store-soho")
        assert stored.spec_bytes == spec_to_canonical_json(spec)
        assert stored.bundle.bundle_hash == bundle.bundle_hash
        reopened.close()

    def test_crash_mid_save_leaves_no_partial_version(self, tmp_path):
        path = tmp_path / "crash.db"
        db = Store(path)
        spec, bundle = compiled()
        calls = {"n": 0}
        real = Store._insert_artifact

        def exploding(self, conn, scenario_id, version, artifact):
            calls["n"] += 1
            if calls["n"] == 3:
                raise RuntimeError("injected crash mid-transaction")
            return real(self, conn, scenario_id, version, artifact)

        with mock.patch.object(Store, "_insert_artifact", exploding):
            with pytest.raises(RuntimeError):
                db.save_scenario(spec, bundle, owner="alice")
        db.close()

        reopened = Store(path)
        with pytest.raises(NotFound):
            reopened.get_scenario("store-soho")
        assert reopened.list_scenarios("ADMIN") == []
        # The slot is still free: a clean save succeeds at version 1.
        assert reopened.save_scenario(spec, bundle, owner="alice")[1] == 1
        reopened.close()

    def test_history_append_only(self, db):
        spec1, bundle1 = compiled(version=1)
        db.save_scenario(spec1, bundle1, owner="alice")
        before = db.get_scenario("store-soho", version=1).spec_bytes
        spec2, bundle2 = compiled(version=2, sta_count=3)
        db.save_scenario(spec2, bundle2, owner="alice")
        assert db.get_scenario("store-soho", version=1).spec_bytes == before

    def test_schema_version_guard(self, tmp_path):
        path = tmp_path / "future.db"
        s = Store(path)
        with s._tx() as conn:
            conn.execute("UPDATE meta SET value='99' WHERE key='schema_version'")
        s.close()
        with pytest.raises(store_mod.SchemaMismatch):
            Store(path)


class TestUsers:
    def test_crud_round_trip(self, db):
        db.create_user(UserRecord("alice", "hash-a", "INSTRUCTOR", True))
        user = db.get_user("alice")
        assert (user.username, user.role, user.active) == ("alice", "INSTRUCTOR", True)
        with pytest.raises(DuplicateUser):
            db.create_user(UserRecord("alice", "other", "LEARNER", True))
        db.upsert_user(UserRecord("alice", "hash-b", "INSTRUCTOR", False))
        assert db.get_user("alice").password_hash == "hash-b"
        db.delete_user("alice")
        with pytest.raises(NotFound):
            db.get_user("alice")
        with pytest.raises(NotFound):
            db.delete_user("alice")

    def test_no_plaintext_password_in_file(self, tmp_path):
        from wifirange.access import hash_password

        path = tmp_path / "secret.db"
        db = Store(path)
        password = "hunter2-сила-9981"
        db.create_user(
            UserRecord("alice", hash_password(password, cost=(2**8, 8, 1)), "ADMIN", True)
        )
        db.close()
        raw = path.read_bytes()
        assert password.encode("utf-8") not in raw
        assert b"hunter2" not in raw


class TestInstancesTasksEvents:
    def test_quota_guard(self, db):
        for i in range(2):
            db.create_instance_guarded(
                InstanceRow(f"i{i}", "s", 1, "bob", "RUNNING", 0.0, 10.0, None), 2, 16
            )
        with pytest.raises(store_mod.QuotaExceeded):
            db.create_instance_guarded(
                InstanceRow("i2", "s", 1, "bob", "PENDING", 0.0, 10.0, None), 2, 16
            )
        # Terminated instances free the slot.
        db.set_instance_state("i0", "TERMINATED")
        db.create_instance_guarded(
            InstanceRow("i2", "s", 1, "bob", "PENDING", 0.0, 10.0, None), 2, 16
        )

    def test_capacity_guard(self, db):
        for i in range(3):
            db.create_instance_guarded(
                InstanceRow(f"i{i}", "s", 1, f"u{i}", "RUNNING", 0.0, 10.0, None), 2, 3
            )
        with pytest.raises(store_mod.CapacityExceeded):
            db.create_instance_guarded(
                InstanceRow("i9", "s", 1, "u9", "PENDING", 0.0, 10.0, None), 2, 3
            )

    def test_task_claim_serializes_per_instance(self, db):
        db.create_instance_guarded(InstanceRow("a", "s", 1, "u", "PENDING", 0.0, 10.0, None), 9, 99)
        db.enqueue_task("a", "deploy", 1.0)
        db.enqueue_task("a", "teardown", 2.0)
        first = db.claim_next_task()
        assert first.kind == "deploy"
        # Second task for the same instance stays blocked while one is in flight.
        assert db.claim_next_task() is None
        db.finish_task(first.task_id)
        second = db.claim_next_task()
        assert second.kind == "teardown"

    def test_claim_is_exclusive_across_threads(self, db):
        db.create_instance_guarded(InstanceRow("a", "s", 1, "u", "PENDING", 0.0, 10.0, None), 9, 99)
        db.enqueue_task("a", "deploy", 1.0)
        claims = []
        barrier = threading.Barrier(4)

        def worker():
            barrier.wait()
            task = db.claim_next_task()
            if task is not None:
                claims.append(task.task_id)

        threads = [threading.Thread(target=worker) for _ in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(claims) == 1

    def test_expired_running_query(self, db):
        db.create_instance_guarded(InstanceRow("a", "s", 1, "u", "RUNNING", 0.0, 5.0, None), 9, 99)
        db.create_instance_guarded(InstanceRow("b", "s", 1, "u", "RUNNING", 0.0, 50.0, None), 9, 99)
        db.create_instance_guarded(InstanceRow("c", "s", 1, "u", "PENDING", 0.0, 1.0, None), 9, 99)
        expired = db.expired_running(now=10.0)
        assert [r.instance_id for r in expired] == ["a"]

    def test_event_retention_fifo(self, tmp_path):
        db = Store(tmp_path / "ev.db", event_retention=10)
        for i in range(25):
            db.append_event(float(i), "AUTH", None, None, f"event {i}")
        rows = db.query_events(limit=100)
        assert len(rows) == 10
        assert [r.detail for r in rows] == [f"event {i}" for i in range(15, 25)]
        db.close()

    def test_event_filters(self, db):
        db.append_event(1.0, "AUTH", "alice", None, "login ok")
        db.append_event(2.0, "INSTANCE", "bob", "i1", "PENDING->DEPLOYING")
        db.append_event(3.0, "AUTH", "bob", None, "login failed")
        assert [e.detail for e in db.query_events(category="AUTH")] == ["login ok", "login failed"]
        assert [e.detail for e in db.query_events(actor="bob", category="AUTH")] == ["login failed"]
        assert db.query_events(since=10.0) == []
        assert len(db.query_events(limit=2)) == 2
