"""Embedded relational store for scenarios, users, instances, tasks and events.

One sqlite database file holds everything. A Store is a handle: its methods
are serialized by an internal lock and each mutating method runs in a single
transaction, so acknowledged writes are atomic and durable. Several handles
may point at the same database file concurrently.
"""

from __future__ import annotations

import json
import sqlite3
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Iterator

from .compiler import Artifact, ArtifactBundle, ArtifactKind
from .model import ScenarioSpec, spec_from_dict, spec_to_canonical_json, validate_scenario

SCHEMA_VERSION = 1
EVENT_RETENTION_DEFAULT = 100_000


class StoreError(Exception):
    code = "STORAGE_FAILURE"


class StorageFailure(StoreError):
    code = "STORAGE_FAILURE"


class SchemaMismatch(StoreError):
    code = "SCHEMA_MISMATCH"


class NotFound(StoreError):
    code = "NOT_FOUND"


class VersionNotFound(StoreError):
    code = "VERSION_NOT_FOUND"


class VersionConflict(StoreError):
    code = "VERSION_CONFLICT"


class InUse(StoreError):
    code = "IN_USE"


class DuplicateUser(StoreError):
    code = "DUPLICATE_USER"


class QuotaExceeded(StoreError):
    code = "QUOTA_EXCEEDED"


class CapacityExceeded(StoreError):
    code = "CAPACITY_EXCEEDED"


class Visibility(str, Enum):
    DRAFT = "DRAFT"
    PUBLISHED = "PUBLISHED"


# Instance states an instance can hold while it still owns (or may own)
# resources; used for quota accounting and delete protection.
ACTIVE_STATES = ("PENDING", "DEPLOYING", "VERIFYING", "RUNNING", "TEARING_DOWN", "FAILED")


@dataclass(frozen=True)
class ScenarioListing:
    scenario_id: str
    name: str
    description: str
    latest_version: int
    visibility: Visibility
    owner: str


@dataclass(frozen=True)
class StoredVersion:
    scenario_id: str
    version: int
    latest_version: int
    visibility: Visibility
    owner: str
    spec: ScenarioSpec
    spec_bytes: bytes
    bundle: ArtifactBundle


@dataclass(frozen=True)
class UserRecord:
    username: str
    password_hash: str
    role: str
    active: bool


@dataclass(frozen=True)
class InstanceRow:
    instance_id: str
    scenario_id: str
    version: int
    owner: str
    state: str
    created_at: float
    expires_at: float
    verification: dict[str, Any] | None


@dataclass(frozen=True)
class TaskRow:
    task_id: int
    instance_id: str
    kind: str
    status: str
    created_at: float


@dataclass(frozen=True)
class EventRow:
    event_id: int
    timestamp: float
    category: str
    actor: str | None
    subject: str | None
    detail: str


_SCHEMA = """
CREATE TABLE IF NOT EXISTS meta (
    key TEXT PRIMARY KEY,
    value TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS scenarios (
    scenario_id TEXT PRIMARY KEY,
    owner TEXT NOT NULL,
    visibility TEXT NOT NULL,
    name TEXT NOT NULL,
    description TEXT NOT NULL,
    latest_version INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS scenario_versions (
    scenario_id TEXT NOT NULL,
    version INTEGER NOT NULL,
    spec_json BLOB NOT NULL,
    bundle_hash TEXT NOT NULL,
    PRIMARY KEY (scenario_id, version)
);
CREATE TABLE IF NOT EXISTS artifacts (
    scenario_id TEXT NOT NULL,
    version INTEGER NOT NULL,
    path TEXT NOT NULL,
    content BLOB NOT NULL,
    kind TEXT NOT NULL,
    executable INTEGER NOT NULL,
    PRIMARY KEY (scenario_id, version, path)
);
CREATE TABLE IF NOT EXISTS users (
    username TEXT PRIMARY KEY,
    password_hash TEXT NOT NULL,
    role TEXT NOT NULL,
    active INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS instances (
    instance_id TEXT PRIMARY KEY,
    scenario_id TEXT NOT NULL,
    version INTEGER NOT NULL,
    owner TEXT NOT NULL,
    state TEXT NOT NULL,
    created_at REAL NOT NULL,
    expires_at REAL NOT NULL,
    verification_json TEXT
);
CREATE TABLE IF NOT EXISTS tasks (
    task_id INTEGER PRIMARY KEY AUTOINCREMENT,
    instance_id TEXT NOT NULL,
    kind TEXT NOT NULL,
    status TEXT NOT NULL,
    created_at REAL NOT NULL
);
CREATE TABLE IF NOT EXISTS events (
    event_id INTEGER PRIMARY KEY AUTOINCREMENT,
    ts REAL NOT NULL,
    category TEXT NOT NULL,
    actor TEXT,
    subject TEXT,
    detail TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS idx_events_ts ON events (ts);
CREATE INDEX IF NOT EXISTS idx_tasks_status ON tasks (status, task_id);
CREATE INDEX IF NOT EXISTS idx_instances_owner ON instances (owner, state);
"""


class Store:
    """Transactional handle over one embedded database."""

    def __init__(self, path: str | Path, event_retention: int = EVENT_RETENTION_DEFAULT):
        self._path = str(path)
        self._lock = threading.RLock()
        self._event_retention = event_retention
        try:
            self._conn = sqlite3.connect(self._path, check_same_thread=False, timeout=30.0)
        except sqlite3.Error as exc:
            raise StorageFailure(f"cannot open database at {self._path}: {exc}") from exc
        self._conn.row_factory = sqlite3.Row
        self._conn.isolation_level = None  # explicit transaction control
        if self._path != ":memory:":
            self._conn.execute("PRAGMA journal_mode=WAL")
        self._conn.execute("PRAGMA foreign_keys=ON")
        self._init_schema()

    def close(self) -> None:
        with self._lock:
            self._conn.close()

    @contextmanager
    def _tx(self) -> Iterator[sqlite3.Connection]:
        with self._lock:
            self._conn.execute("BEGIN IMMEDIATE")
            try:
                yield self._conn
            except BaseException:
                self._conn.execute("ROLLBACK")
                raise
            else:
                self._conn.execute("COMMIT")

    def _read(self, sql: str, params: tuple = ()) -> list[sqlite3.Row]:
        with self._lock:
            return self._conn.execute(sql, params).fetchall()

    def _init_schema(self) -> None:
        with self._lock:
            self._conn.executescript(_SCHEMA)  # runs in its own implicit transaction
        with self._tx() as conn:
            row = conn.execute("SELECT value FROM meta WHERE key='schema_version'").fetchone()
            if row is None:
                conn.execute(
                    "INSERT INTO meta (key, value) VALUES ('schema_version', ?)",
                    (str(SCHEMA_VERSION),),
                )
            elif int(row["value"]) > SCHEMA_VERSION:
                raise SchemaMismatch(
                    f"database schema v{row['value']} is newer than supported v{SCHEMA_VERSION}"
                )

    # ------------------------------------------------------------------
    # Scenarios
    # ------------------------------------------------------------------

    def save_scenario(
        self,
        spec: ScenarioSpec,
        bundle: ArtifactBundle,
        owner: str,
        visibility: Visibility = Visibility.DRAFT,
    ) -> tuple[str, int]:
        """Store a new scenario version.

        spec.version must be exactly latest_version + 1 (or 1 for a new
        scenario); a concurrent writer that claimed the slot first wins and
        this call raises VersionConflict.
        """
        report = validate_scenario(spec)
        if not report.ok:
            raise StorageFailure(f"refusing to store invalid spec: {[f.code for f in report.errors()]}")
        if bundle.scenario_id != spec.scenario_id or bundle.version != spec.version:
            raise StorageFailure("bundle does not match the spec")

        spec_bytes = spec_to_canonical_json(spec)
        with self._tx() as conn:
            row = conn.execute(
                "SELECT latest_version, owner FROM scenarios WHERE scenario_id=?",
                (spec.scenario_id,),
            ).fetchone()
            if row is None:
                if spec.version != 1:
                    raise VersionConflict(f"new scenario must start at version 1, got {spec.version}")
                conn.execute(
                    "INSERT INTO scenarios (scenario_id, owner, visibility, name, description, latest_version)"
                    " VALUES (?, ?, ?, ?, ?, ?)",
                    (spec.scenario_id, owner, visibility.value, spec.name, spec.description, 1),
                )
            else:
                expected = row["latest_version"] + 1
                if spec.version != expected:
                    raise VersionConflict(
                        f"version {spec.version} already assigned; next slot is {expected}"
                    )
                conn.execute(
                    "UPDATE scenarios SET latest_version=?, name=?, description=? WHERE scenario_id=?",
                    (spec.version, spec.name, spec.description, spec.scenario_id),
                )
            conn.execute(
                "INSERT INTO scenario_versions (scenario_id, version, spec_json, bundle_hash)"
                " VALUES (?, ?, ?, ?)",
                (spec.scenario_id, spec.version, spec_bytes, bundle.bundle_hash),
            )
            for artifact in bundle.artifacts:
                self._insert_artifact(conn, spec.scenario_id, spec.version, artifact)
        return spec.scenario_id, spec.version

    def _insert_artifact(self, conn: sqlite3.Connection, scenario_id: str, version: int, artifact: Artifact) -> None:
        conn.execute(
            "INSERT INTO artifacts (scenario_id, version, path, content, kind, executable)"
            " VALUES (?, ?, ?, ?, ?, ?)",
            (scenario_id, version, artifact.path, artifact.content, artifact.kind.value, int(artifact.executable)),
        )

    def next_version(self, scenario_id: str) -> int:
        rows = self._read("SELECT latest_version FROM scenarios WHERE scenario_id=?", (scenario_id,))
        return rows[0]["latest_version"] + 1 if rows else 1

    def get_scenario(self, scenario_id: str, version: int | None = None) -> StoredVersion:
        head = self._read(
            "SELECT owner, visibility, latest_version FROM scenarios WHERE scenario_id=?",
            (scenario_id,),
        )
        if not head:
            raise NotFound(f"scenario {scenario_id} not found")
        latest = head[0]["latest_version"]
        version = latest if version is None else version
        rows = self._read(
            "SELECT spec_json FROM scenario_versions WHERE scenario_id=? AND version=?",
            (scenario_id, version),
        )
        if not rows:
            raise VersionNotFound(f"scenario {scenario_id} has no version {version}")
        spec_bytes = rows[0]["spec_json"]
        spec = spec_from_dict(json.loads(spec_bytes))
        artifacts = tuple(
            Artifact(
                path=r["path"],
                content=r["content"],
                kind=ArtifactKind(r["kind"]),
                executable=bool(r["executable"]),
            )
            for r in self._read(
                "SELECT path, content, kind, executable FROM artifacts"
                " WHERE scenario_id=? AND version=? ORDER BY path",
                (scenario_id, version),
            )
        )
        return StoredVersion(
            scenario_id=scenario_id,
            version=version,
            latest_version=latest,
            visibility=Visibility(head[0]["visibility"]),
            owner=head[0]["owner"],
            spec=spec,
            spec_bytes=bytes(spec_bytes),
            bundle=ArtifactBundle(scenario_id=scenario_id, version=version, artifacts=artifacts),
        )

    def get_artifact(self, scenario_id: str, version: int, path: str) -> Artifact:
        rows = self._read(
            "SELECT path, content, kind, executable FROM artifacts"
            " WHERE scenario_id=? AND version=? AND path=?",
            (scenario_id, version, path),
        )
        if not rows:
            raise NotFound(f"artifact {path} not found")
        r = rows[0]
        return Artifact(r["path"], r["content"], ArtifactKind(r["kind"]), bool(r["executable"]))

    def list_scenarios(self, viewer_role: str) -> list[ScenarioListing]:
        """Learners see only PUBLISHED scenarios; instructors and admins see all."""
        include_drafts = viewer_role in ("ADMIN", "INSTRUCTOR")
        sql = "SELECT scenario_id, name, description, latest_version, visibility, owner FROM scenarios"
        if not include_drafts:
            sql += " WHERE visibility='PUBLISHED'"
        sql += " ORDER BY name"
        return [
            ScenarioListing(
                scenario_id=r["scenario_id"],
                name=r["name"],
                description=r["description"],
                latest_version=r["latest_version"],
                visibility=Visibility(r["visibility"]),
                owner=r["owner"],
            )
            for r in self._read(sql)
        ]

    def set_visibility(self, scenario_id: str, visibility: Visibility) -> None:
        with self._tx() as conn:
            cur = conn.execute(
                "UPDATE scenarios SET visibility=? WHERE scenario_id=?",
                (visibility.value, scenario_id),
            )
            if cur.rowcount == 0:
                raise NotFound(f"scenario {scenario_id} not found")

    def delete_scenario(self, scenario_id: str) -> None:
        with self._tx() as conn:
            row = conn.execute(
                "SELECT 1 FROM scenarios WHERE scenario_id=?", (scenario_id,)
            ).fetchone()
            if row is None:
                raise NotFound(f"scenario {scenario_id} not found")
            active = conn.execute(
                f"SELECT COUNT(*) AS n FROM instances WHERE scenario_id=? AND state IN ({','.join('?' * len(ACTIVE_STATES))})",
                (scenario_id, *ACTIVE_STATES),
            ).fetchone()
            if active["n"] > 0:
                raise InUse(f"scenario {scenario_id} has active instances")
            conn.execute("DELETE FROM artifacts WHERE scenario_id=?", (scenario_id,))
            conn.execute("DELETE FROM scenario_versions WHERE scenario_id=?", (scenario_id,))
            conn.execute("DELETE FROM scenarios WHERE scenario_id=?", (scenario_id,))

    # ------------------------------------------------------------------
    # Users
    # ------------------------------------------------------------------

    def create_user(self, user: UserRecord) -> None:
        with self._tx() as conn:
            try:
                conn.execute(
                    "INSERT INTO users (username, password_hash, role, active) VALUES (?, ?, ?, ?)",
                    (user.username, user.password_hash, user.role, int(user.active)),
                )
            except sqlite3.IntegrityError:
                raise DuplicateUser(f"user {user.username} already exists") from None

    def upsert_user(self, user: UserRecord) -> None:
        with self._tx() as conn:
            conn.execute(
                "INSERT INTO users (username, password_hash, role, active) VALUES (?, ?, ?, ?)"
                " ON CONFLICT(username) DO UPDATE SET password_hash=excluded.password_hash,"
                " role=excluded.role, active=excluded.active",
                (user.username, user.password_hash, user.role, int(user.active)),
            )

    def get_user(self, username: str) -> UserRecord:
        rows = self._read("SELECT * FROM users WHERE username=?", (username,))
        if not rows:
            raise NotFound(f"user {username} not found")
        r = rows[0]
        return UserRecord(r["username"], r["password_hash"], r["role"], bool(r["active"]))

    def delete_user(self, username: str) -> None:
        with self._tx() as conn:
            cur = conn.execute("DELETE FROM users WHERE username=?", (username,))
            if cur.rowcount == 0:
                raise NotFound(f"user {username} not found")

    def list_users(self) -> list[UserRecord]:
        return [
            UserRecord(r["username"], r["password_hash"], r["role"], bool(r["active"]))
            for r in self._read("SELECT * FROM users ORDER BY username")
        ]

    def user_count(self) -> int:
        return self._read("SELECT COUNT(*) AS n FROM users")[0]["n"]

    # ------------------------------------------------------------------
    # Instances
    # ------------------------------------------------------------------

    def create_instance_guarded(
        self,
        row: InstanceRow,
        per_user_quota: int,
        global_capacity: int,
    ) -> None:
        """Insert a new instance iff quota and capacity allow, atomically."""
        placeholders = ",".join("?" * len(ACTIVE_STATES))
        with self._tx() as conn:
            mine = conn.execute(
                f"SELECT COUNT(*) AS n FROM instances WHERE owner=? AND state IN ({placeholders})",
                (row.owner, *ACTIVE_STATES),
            ).fetchone()["n"]
            if mine >= per_user_quota:
                raise QuotaExceeded(f"user {row.owner} already has {mine} active instances")
            total = conn.execute(
                f"SELECT COUNT(*) AS n FROM instances WHERE state IN ({placeholders})",
                ACTIVE_STATES,
            ).fetchone()["n"]
            if total >= global_capacity:
                raise CapacityExceeded(f"{total} active instances at global capacity")
            conn.execute(
                "INSERT INTO instances (instance_id, scenario_id, version, owner, state, created_at, expires_at, verification_json)"
                " VALUES (?, ?, ?, ?, ?, ?, ?, ?)",
                (
                    row.instance_id,
                    row.scenario_id,
                    row.version,
                    row.owner,
                    row.state,
                    row.created_at,
                    row.expires_at,
                    json.dumps(row.verification) if row.verification is not None else None,
                ),
            )

    def get_instance(self, instance_id: str) -> InstanceRow:
        rows = self._read("SELECT * FROM instances WHERE instance_id=?", (instance_id,))
        if not rows:
            raise NotFound(f"instance {instance_id} not found")
        return self._instance_row(rows[0])

    @staticmethod
    def _instance_row(r: sqlite3.Row) -> InstanceRow:
        return InstanceRow(
            instance_id=r["instance_id"],
            scenario_id=r["scenario_id"],
            version=r["version"],
            owner=r["owner"],
            state=r["state"],
            created_at=r["created_at"],
            expires_at=r["expires_at"],
            verification=json.loads(r["verification_json"]) if r["verification_json"] else None,
        )

    def set_instance_state(
        self, instance_id: str, state: str, verification: dict[str, Any] | None = None
    ) -> None:
        with self._tx() as conn:
            if verification is None:
                cur = conn.execute(
                    "UPDATE instances SET state=? WHERE instance_id=?", (state, instance_id)
                )
            else:
                cur = conn.execute(
                    "UPDATE instances SET state=?, verification_json=? WHERE instance_id=?",
                    (state, json.dumps(verification), instance_id),
                )
            if cur.rowcount == 0:
                raise NotFound(f"instance {instance_id} not found")

    def list_instances(self, owner: str | None = None) -> list[InstanceRow]:
        if owner is None:
            rows = self._read("SELECT * FROM instances ORDER BY created_at, instance_id")
        else:
            rows = self._read(
                "SELECT * FROM instances WHERE owner=? ORDER BY created_at, instance_id", (owner,)
            )
        return [self._instance_row(r) for r in rows]

    def instances_in_states(self, states: tuple[str, ...]) -> list[InstanceRow]:
        placeholders = ",".join("?" * len(states))
        rows = self._read(
            f"SELECT * FROM instances WHERE state IN ({placeholders}) ORDER BY created_at", states
        )
        return [self._instance_row(r) for r in rows]

    def expired_running(self, now: float) -> list[InstanceRow]:
        rows = self._read(
            "SELECT * FROM instances WHERE state='RUNNING' AND expires_at<=? ORDER BY expires_at",
            (now,),
        )
        return [self._instance_row(r) for r in rows]

    def active_instance_count(self) -> int:
        placeholders = ",".join("?" * len(ACTIVE_STATES))
        return self._read(
            f"SELECT COUNT(*) AS n FROM instances WHERE state IN ({placeholders})", ACTIVE_STATES
        )[0]["n"]

    def running_instance_count(self) -> int:
        return self._read("SELECT COUNT(*) AS n FROM instances WHERE state='RUNNING'")[0]["n"]

    # ------------------------------------------------------------------
    # Task queue
    # ------------------------------------------------------------------

    def enqueue_task(self, instance_id: str, kind: str, created_at: float) -> int:
        with self._tx() as conn:
            cur = conn.execute(
                "INSERT INTO tasks (instance_id, kind, status, created_at) VALUES (?, ?, 'PENDING', ?)",
                (instance_id, kind, created_at),
            )
            return int(cur.lastrowid)

    def claim_next_task(self) -> TaskRow | None:
        """Atomically claim the oldest runnable task.

        A task is runnable when its instance has no other task in flight,
        which gives the at-most-one-in-flight-per-instance guarantee.
        """
        with self._tx() as conn:
            row = conn.execute(
                "SELECT * FROM tasks WHERE status='PENDING' AND instance_id NOT IN"
                " (SELECT instance_id FROM tasks WHERE status='IN_FLIGHT')"
                " ORDER BY task_id LIMIT 1"
            ).fetchone()
            if row is None:
                return None
            conn.execute("UPDATE tasks SET status='IN_FLIGHT' WHERE task_id=?", (row["task_id"],))
            return TaskRow(row["task_id"], row["instance_id"], row["kind"], "IN_FLIGHT", row["created_at"])

    def finish_task(self, task_id: int) -> None:
        with self._tx() as conn:
            conn.execute("UPDATE tasks SET status='DONE' WHERE task_id=?", (task_id,))

    def reset_in_flight_tasks(self) -> int:
        """Boot recovery: requeue tasks that were claimed by a dead process."""
        with self._tx() as conn:
            cur = conn.execute("UPDATE tasks SET status='PENDING' WHERE status='IN_FLIGHT'")
            return cur.rowcount

    def pending_task_count(self) -> int:
        return self._read("SELECT COUNT(*) AS n FROM tasks WHERE status='PENDING'")[0]["n"]

    # ------------------------------------------------------------------
    # Events
    # ------------------------------------------------------------------

    def append_event(
        self, ts: float, category: str, actor: str | None, subject: str | None, detail: str
    ) -> int:
        with self._tx() as conn:
            cur = conn.execute(
                "INSERT INTO events (ts, category, actor, subject, detail) VALUES (?, ?, ?, ?, ?)",
                (ts, category, actor, subject, detail),
            )
            event_id = int(cur.lastrowid)
            # FIFO retention: drop oldest rows beyond the cap.
            conn.execute(
                "DELETE FROM events WHERE event_id <= ?",
                (event_id - self._event_retention,),
            )
            return event_id

    def query_events(
        self,
        category: str | None = None,
        actor: str | None = None,
        since: float | None = None,
        until: float | None = None,
        limit: int = 1000,
    ) -> list[EventRow]:
        clauses, params = [], []
        if category is not None:
            clauses.append("category=?")
            params.append(category)
        if actor is not None:
            clauses.append("actor=?")
            params.append(actor)
        if since is not None:
            clauses.append("ts>=?")
            params.append(since)
        if until is not None:
            clauses.append("ts<=?")
            params.append(until)
        where = f" WHERE {' AND '.join(clauses)}" if clauses else ""
        rows = self._read(
            f"SELECT * FROM events{where} ORDER BY ts, event_id LIMIT ?", (*params, limit)
        )
        return [
            EventRow(r["event_id"], r["ts"], r["category"], r["actor"], r["subject"], r["detail"])
            for r in rows
        ]
