from __future__ import annotations

import pytest
from fastapi.testclient import TestClient

from wifirange.access import hash_password
from wifirange.api import ApiConfig, create_app
from wifirange.orchestrator import OrchestratorConfig
from wifirange.store import UserRecord

# Cheap scrypt profile for tests that are not about hashing cost; the hash
# string records its own parameters so verification stays correct.
FAST_COST = (2**8, 8, 1)

USERS = {
    "admin": ("adminpass123", "ADMIN"),
    "tina": ("teachpass123", "INSTRUCTOR"),
    "bob": ("learnpass123", "LEARNER"),
    "eve": ("learnpass123", "LEARNER"),
}


def seed_users(store):
    for username, (password, role) in USERS.items():
        store.create_user(UserRecord(username, hash_password(password, FAST_COST), role, True))


def make_api_config(tmp_path, **overrides) -> ApiConfig:
    orch = overrides.pop("orchestrator", None) or OrchestratorConfig(
        worker_count=2, reap_interval_seconds=3600.0
    )
    defaults = dict(
        db_path=str(tmp_path / "api.db"),
        hash_cost=FAST_COST,
        bootstrap=False,
        orchestrator=orch,
    )
    defaults.update(overrides)
    return ApiConfig(**defaults)


@pytest.fixture
def api(tmp_path):
    app = create_app(make_api_config(tmp_path))
    with TestClient(app) as client:
        seed_users(app.state.ctx.store)
        yield client, app.state.ctx


def login(client, username) -> str:
    password = USERS[username][0]
    response = client.post("/api/v1/login", json={"username": username, "password": password})
    assert response.status_code == 200, response.text
    return response.json()["token"]


def auth(token) -> dict[str, str]:
    return {"Authorization": f"Bearer {token}"}
