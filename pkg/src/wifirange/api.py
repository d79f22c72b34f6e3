"""HTTP control plane: versioned JSON API over the store, compiler and orchestrator.

Every response (success, error, static) carries the hardening header set.
State-changing requests authenticate via the Authorization header (token in a
custom header, not a cookie, is the CSRF control), are size-capped and
rate-limited. All lifecycle work runs through the orchestrator's task queue;
202 responses signal asynchronous completion observed by polling.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from fastapi import Body, Depends, FastAPI, Query, Request, Response
from fastapi.responses import JSONResponse, PlainTextResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import access, model, orchestrator as orch_mod, realexec, store as store_mod
from .access import Action, Role, SECURITY_HEADERS, TokenTable, decide_permission
from .compiler import compile_bundle
from .deploy import IncompleteBundle
from .model import derive_manifest, instantiate_blueprint, spec_from_dict, spec_to_dict, validate_scenario
from .orchestrator import Orchestrator, OrchestratorConfig, Principal
from .simexec import SimulatedExecutor
from .store import Store, Visibility
from .telemetry import EventCategory, EventLog, MetricsRegistry

API_PREFIX = "/api/v1"
BODY_LIMIT_BYTES = 1 * 1024 * 1024
RATE_LIMIT_PER_MINUTE = 30
MUTATING_METHODS = ("POST", "PUT", "PATCH", "DELETE")


@dataclass
class ApiConfig:
    db_path: str = "wifirange.db"
    executor_mode: str = "simulated"  # "simulated" | "real"
    static_dir: str | None = None
    orchestrator: OrchestratorConfig = field(default_factory=OrchestratorConfig)
    hash_cost: tuple[int, int, int] = access.DEFAULT_COST
    body_limit_bytes: int = BODY_LIMIT_BYTES
    rate_limit_per_minute: int = RATE_LIMIT_PER_MINUTE
    start_workers: bool = True
    bootstrap: bool = True


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, extra: dict[str, Any] | None = None):
        self.status = status
        self.code = code
        self.message = message
        self.extra = extra or {}
        super().__init__(message)


class AppContext:
    def __init__(self, config: ApiConfig):
        self.config = config
        self.store = Store(config.db_path)
        self.tokens = TokenTable()
        self.events = EventLog(self.store)
        self.metrics = MetricsRegistry()
        self.orchestrator = Orchestrator(
            self.store,
            self._executor_factory(),
            config.orchestrator,
            events=self.events,
            metrics=self.metrics,
        )
        self._rate: dict[str, deque[float]] = {}

    def _executor_factory(self):
        if self.config.executor_mode == "real":
            return lambda bundle: realexec.RealExecutor(bundle)
        return lambda bundle: SimulatedExecutor(bundle)

    def startup(self) -> None:
        if self.config.bootstrap:
            created = access.bootstrap_admin(self.store, cost=self.config.hash_cost)
            if created:
                username, password = created
                print(f"wifirange: created bootstrap user {username!r} with one-time password: {password}", flush=True)
        self.orchestrator.recover_on_boot()
        if self.config.start_workers:
            self.orchestrator.start()

    def shutdown(self) -> None:
        if self.config.start_workers:
            self.orchestrator.stop()
        self.store.close()

    def rate_limit_exceeded(self, token: str, now: float | None = None) -> bool:
        now = time.time() if now is None else now
        window = self._rate.setdefault(token, deque())
        while window and window[0] <= now - 60.0:
            window.popleft()
        if len(window) >= self.config.rate_limit_per_minute:
            return True
        window.append(now)
        return False


# ---------------------------------------------------------------------------
# Middleware (pure ASGI so every response, including errors, is covered)
# ---------------------------------------------------------------------------

class SecurityHeadersMiddleware:
    def __init__(self, app):
        self.app = app

    async def __call__(self, scope, receive, send):
        if scope["type"] != "http":
            await self.app(scope, receive, send)
            return

        async def send_with_headers(message):
            if message["type"] == "http.response.start":
                headers = list(message.get("headers", []))
                present = {name.lower() for name, _ in headers}
                for name, value in SECURITY_HEADERS:
                    if name.lower().encode() not in present:
                        headers.append((name.lower().encode(), value.encode()))
                message = {**message, "headers": headers}
            await send(message)

        await self.app(scope, receive, send_with_headers)


class RequestGuardMiddleware:
    """Body size cap plus per-token rate limit for mutating requests."""

    def __init__(self, app, ctx: AppContext):
        self.app = app
        self.ctx = ctx

    async def __call__(self, scope, receive, send):
        if scope["type"] != "http":
            await self.app(scope, receive, send)
            return
        headers = {k.decode().lower(): v.decode() for k, v in scope.get("headers", [])}
        length = headers.get("content-length")
        if length and length.isdigit() and int(length) > self.ctx.config.body_limit_bytes:
            await JSONResponse(
                {"code": "BODY_TOO_LARGE", "message": f"request body exceeds {self.ctx.config.body_limit_bytes} bytes"},
                status_code=413,
            )(scope, receive, send)
            return
        if scope["method"] in MUTATING_METHODS:
            auth = headers.get("authorization", "")
            if auth.startswith("Bearer "):
                token = auth[len("Bearer "):]
                if self.ctx.rate_limit_exceeded(token):
                    self.ctx.events.record(EventCategory.SECURITY, "rate limit exceeded", subject=scope.get("path"))
                    await JSONResponse(
                        {"code": "RATE_LIMITED", "message": "too many mutating requests; retry later"},
                        status_code=429,
                    )(scope, receive, send)
                    return
        await self.app(scope, receive, send)


# ---------------------------------------------------------------------------
# Request bodies
# ---------------------------------------------------------------------------

class LoginRequest(BaseModel):
    username: str
    password: str


class CreateUserRequest(BaseModel):
    username: str
    password: str
    role: str
    active: bool = True


class LaunchRequest(BaseModel):
    version: int | None = None


# ---------------------------------------------------------------------------
# App factory
# ---------------------------------------------------------------------------

_DOMAIN_ERRORS: tuple[tuple[type[Exception], int, str], ...] = (
    (store_mod.VersionNotFound, 404, "VERSION_NOT_FOUND"),
    (store_mod.NotFound, 404, "NOT_FOUND"),
    (store_mod.VersionConflict, 409, "VERSION_CONFLICT"),
    (store_mod.InUse, 409, "IN_USE"),
    (store_mod.DuplicateUser, 409, "DUPLICATE_USER"),
    (store_mod.QuotaExceeded, 429, "QUOTA_EXCEEDED"),
    (store_mod.CapacityExceeded, 429, "CAPACITY_EXCEEDED"),
    (access.Forbidden, 403, "FORBIDDEN"),
    (access.WeakPassword, 422, "WEAK_PASSWORD"),
    (access.InvalidCredentials, 401, "INVALID_CREDENTIALS"),
    (access.AccountDisabled, 403, "ACCOUNT_DISABLED"),
    (orch_mod.InvalidState, 409, "INVALID_STATE"),
    (model.UnknownBlueprint, 422, "UNKNOWN_BLUEPRINT"),
    (model.InvalidParams, 422, "INVALID_PARAMS"),
    (model.SpecFormatError, 422, "SPEC_FORMAT"),
    (IncompleteBundle, 422, "INCOMPLETE_BUNDLE"),
    (realexec.PrivilegeError, 503, "PRIVILEGE_ERROR"),
    (store_mod.StorageFailure, 500, "STORAGE_FAILURE"),
)


def create_app(config: ApiConfig | None = None) -> FastAPI:
    config = config or ApiConfig()
    ctx = AppContext(config)

    from contextlib import asynccontextmanager

    @asynccontextmanager
    async def lifespan(_: FastAPI):
        ctx.startup()
        yield
        ctx.shutdown()

    app = FastAPI(title="wifirange", lifespan=lifespan, docs_url=None, redoc_url=None, openapi_url=None)
    app.state.ctx = ctx

    # ------------------------------------------------------------------
    # Errors
    # ------------------------------------------------------------------

    def error_response(status: int, code: str, message: str, extra: dict | None = None) -> JSONResponse:
        body = {"code": code, "message": message}
        if extra:
            body.update(extra)
        return JSONResponse(body, status_code=status)

    @app.exception_handler(ApiError)
    async def handle_api_error(_req, exc: ApiError):
        return error_response(exc.status, exc.code, exc.message, exc.extra)

    @app.exception_handler(model.InvalidSpec)
    async def handle_invalid_spec(_req, exc: model.InvalidSpec):
        return error_response(
            422, "INVALID_SPEC", "scenario failed validation",
            {"findings": exc.report.to_dict()["findings"]},
        )

    def _domain_handler(status: int, code: str):
        async def handler(_req, exc: Exception):
            return error_response(status, code, str(exc))

        return handler

    for exc_type, status, code in _DOMAIN_ERRORS:
        app.add_exception_handler(exc_type, _domain_handler(status, code))

    from fastapi.exceptions import RequestValidationError
    from starlette.exceptions import HTTPException as StarletteHTTPException

    @app.exception_handler(StarletteHTTPException)
    async def handle_http_error(_req, exc: StarletteHTTPException):
        code = {404: "NOT_FOUND", 405: "METHOD_NOT_ALLOWED"}.get(exc.status_code, "HTTP_ERROR")
        return error_response(exc.status_code, code, str(exc.detail))

    @app.exception_handler(RequestValidationError)
    async def handle_validation_error(_req, exc: RequestValidationError):
        return error_response(422, "INVALID_BODY", "request body failed validation")

    # ------------------------------------------------------------------
    # Auth plumbing
    # ------------------------------------------------------------------

    def current_token(request: Request) -> access.SessionToken:
        header = request.headers.get("authorization", "")
        if not header.startswith("Bearer "):
            raise ApiError(401, "UNAUTHENTICATED", "authentication required")
        try:
            return ctx.tokens.resolve(header[len("Bearer "):])
        except (access.UnknownToken, access.ExpiredToken):
            raise ApiError(401, "UNAUTHENTICATED", "authentication required") from None

    def require(token: access.SessionToken, action: Action, resource_owner: str | None = None) -> None:
        if not decide_permission(token.role, action, token.username, resource_owner):
            ctx.events.record(
                EventCategory.SECURITY,
                f"denied {action.value}",
                actor=token.username,
            )
            raise ApiError(403, "FORBIDDEN", "insufficient permissions")

    def principal(token: access.SessionToken) -> Principal:
        return Principal(username=token.username, role=token.role)

    # ------------------------------------------------------------------
    # Session
    # ------------------------------------------------------------------

    @app.post(f"{API_PREFIX}/login")
    def login(body: LoginRequest):
        try:
            record = access.authenticate(
                ctx.store, ctx.tokens, body.username, body.password, dummy_cost=config.hash_cost
            )
        except access.InvalidCredentials:
            ctx.metrics.inc("auth_failures")
            ctx.events.record(EventCategory.AUTH, "login failed", actor=body.username)
            raise
        except access.AccountDisabled:
            ctx.metrics.inc("auth_failures")
            ctx.events.record(EventCategory.AUTH, "login rejected: account disabled", actor=body.username)
            raise
        ctx.events.record(EventCategory.AUTH, "login ok", actor=record.username)
        return {
            "token": record.token,
            "username": record.username,
            "role": record.role.value,
            "expires_at": record.expires_at,
        }

    # ------------------------------------------------------------------
    # Scenarios
    # ------------------------------------------------------------------

    @app.post(f"{API_PREFIX}/scenarios", status_code=201)
    def create_scenario(body: dict = Body(...), token: access.SessionToken = Depends(current_token)):
        if "blueprint_id" in body:
            require(token, Action.SCENARIO_CREATE)
            spec = instantiate_blueprint(
                body["blueprint_id"], body.get("params") or {}, author=token.username
            )
        else:
            doc = body.get("spec", body)
            spec = spec_from_dict(doc)
            exists = True
            try:
                ctx.store.get_scenario(spec.scenario_id)
            except store_mod.NotFound:
                exists = False
            require(token, Action.SCENARIO_MODIFY if exists else Action.SCENARIO_CREATE)
            report = validate_scenario(spec)
            if not report.ok:
                raise model.InvalidSpec(report)
        manifest = derive_manifest(spec)
        bundle = compile_bundle(spec, manifest)
        scenario_id, version = ctx.store.save_scenario(spec, bundle, owner=token.username)
        ctx.events.record(
            EventCategory.SCENARIO,
            f"stored {scenario_id} v{version}",
            actor=token.username,
            subject=scenario_id,
        )
        return {"scenario_id": scenario_id, "version": version}

    @app.get(f"{API_PREFIX}/scenarios")
    def list_scenarios(token: access.SessionToken = Depends(current_token)):
        require(token, Action.SCENARIO_READ)
        rows = ctx.store.list_scenarios(token.role.value)
        return {
            "scenarios": [
                {
                    "scenario_id": r.scenario_id,
                    "name": r.name,
                    "description": r.description,
                    "latest_version": r.latest_version,
                    "visibility": r.visibility.value,
                }
                for r in rows
            ]
        }

    def _visible_scenario(token: access.SessionToken, scenario_id: str, version: int | None):
        stored = ctx.store.get_scenario(scenario_id, version)
        if stored.visibility == Visibility.DRAFT and token.role == Role.LEARNER:
            raise store_mod.NotFound(f"scenario {scenario_id} not found")
        return stored

    @app.get(f"{API_PREFIX}/scenarios/{{scenario_id}}")
    def scenario_detail(scenario_id: str, version: int | None = Query(default=None), token: access.SessionToken = Depends(current_token)):
        require(token, Action.SCENARIO_READ)
        stored = _visible_scenario(token, scenario_id, version)
        return {
            "scenario_id": stored.scenario_id,
            "version": stored.version,
            "latest_version": stored.latest_version,
            "visibility": stored.visibility.value,
            "owner": stored.owner,
            "spec": spec_to_dict(stored.spec),
            "bundle_hash": stored.bundle.bundle_hash,
            "artifacts": [
                {
                    "path": a.path,
                    "kind": a.kind.value,
                    "executable": a.executable,
                    "size": len(a.content),
                    "sha256": a.sha256,
                }
                for a in stored.bundle.artifacts
            ],
        }

    @app.get(f"{API_PREFIX}/scenarios/{{scenario_id}}/artifacts/{{path:path}}")
    def download_artifact(scenario_id: str, path: str, version: int | None = Query(default=None), token: access.SessionToken = Depends(current_token)):
        # Download is restricted to instructors/admins: learner-visible
        # configs could leak exercise answers such as passphrases.
        require(token, Action.SCENARIO_MODIFY)
        stored = _visible_scenario(token, scenario_id, version)
        artifact = ctx.store.get_artifact(scenario_id, stored.version, path)
        return Response(content=artifact.content, media_type="application/octet-stream")

    @app.post(f"{API_PREFIX}/scenarios/{{scenario_id}}/publish")
    def publish_scenario(scenario_id: str, token: access.SessionToken = Depends(current_token)):
        require(token, Action.SCENARIO_MODIFY)
        ctx.store.set_visibility(scenario_id, Visibility.PUBLISHED)
        ctx.events.record(EventCategory.SCENARIO, "published", actor=token.username, subject=scenario_id)
        return {"scenario_id": scenario_id, "visibility": Visibility.PUBLISHED.value}

    @app.delete(f"{API_PREFIX}/scenarios/{{scenario_id}}", status_code=204)
    def delete_scenario(scenario_id: str, token: access.SessionToken = Depends(current_token)):
        require(token, Action.SCENARIO_DELETE)
        ctx.store.delete_scenario(scenario_id)
        ctx.events.record(EventCategory.SCENARIO, "deleted", actor=token.username, subject=scenario_id)
        return Response(status_code=204)

    @app.post(f"{API_PREFIX}/scenarios/{{scenario_id}}/launch", status_code=202)
    def launch_scenario(scenario_id: str, body: LaunchRequest | None = None, token: access.SessionToken = Depends(current_token)):
        require(token, Action.SCENARIO_LAUNCH)
        version = body.version if body else None
        instance_id = ctx.orchestrator.launch_scenario(principal(token), scenario_id, version)
        return {"instance_id": instance_id}

    # ------------------------------------------------------------------
    # Instances
    # ------------------------------------------------------------------

    def _instance_body(row: store_mod.InstanceRow) -> dict:
        return {
            "instance_id": row.instance_id,
            "scenario_id": row.scenario_id,
            "version": row.version,
            "owner": row.owner,
            "state": row.state,
            "verification": row.verification,
            "created_at": row.created_at,
            "expires_at": row.expires_at,
        }

    @app.get(f"{API_PREFIX}/instances")
    def list_instances(token: access.SessionToken = Depends(current_token)):
        if decide_permission(token.role, Action.INSTANCE_READ_ANY):
            rows = ctx.store.list_instances()
        else:
            require(token, Action.INSTANCE_READ_OWN, resource_owner=token.username)
            rows = ctx.store.list_instances(owner=token.username)
        return {"instances": [_instance_body(r) for r in rows]}

    @app.get(f"{API_PREFIX}/instances/{{instance_id}}")
    def instance_status(instance_id: str, token: access.SessionToken = Depends(current_token)):
        row = ctx.store.get_instance(instance_id)
        if not decide_permission(token.role, Action.INSTANCE_READ_ANY):
            require(token, Action.INSTANCE_READ_OWN, resource_owner=row.owner)
        return _instance_body(row)

    @app.post(f"{API_PREFIX}/instances/{{instance_id}}/terminate", status_code=202)
    def terminate_instance(instance_id: str, token: access.SessionToken = Depends(current_token)):
        row = ctx.store.get_instance(instance_id)
        if not decide_permission(token.role, Action.INSTANCE_TERMINATE_ANY):
            require(token, Action.INSTANCE_TERMINATE_OWN, resource_owner=row.owner)
        ctx.orchestrator.terminate_instance(principal(token), instance_id)
        return {"instance_id": instance_id, "state": ctx.store.get_instance(instance_id).state}

    # ------------------------------------------------------------------
    # Users
    # ------------------------------------------------------------------

    @app.post(f"{API_PREFIX}/users", status_code=201)
    def create_user(body: CreateUserRequest, token: access.SessionToken = Depends(current_token)):
        require(token, Action.USER_MANAGE)
        try:
            role = Role(body.role)
        except ValueError:
            raise ApiError(422, "INVALID_ROLE", f"role must be one of {[r.value for r in Role]}") from None
        password_hash = access.hash_password(body.password, config.hash_cost)
        ctx.store.create_user(
            store_mod.UserRecord(body.username, password_hash, role.value, body.active)
        )
        ctx.events.record(EventCategory.AUTH, f"user created ({role.value})", actor=token.username, subject=body.username)
        return {"username": body.username, "role": role.value, "active": body.active}

    @app.get(f"{API_PREFIX}/users")
    def list_users(token: access.SessionToken = Depends(current_token)):
        require(token, Action.USER_MANAGE)
        return {
            "users": [
                {"username": u.username, "role": u.role, "active": u.active}
                for u in ctx.store.list_users()
            ]
        }

    @app.delete(f"{API_PREFIX}/users/{{username}}", status_code=204)
    def delete_user(username: str, token: access.SessionToken = Depends(current_token)):
        require(token, Action.USER_MANAGE)
        ctx.store.delete_user(username)
        ctx.tokens.revoke_user(username)
        ctx.events.record(EventCategory.AUTH, "user deleted", actor=token.username, subject=username)
        return Response(status_code=204)

    # ------------------------------------------------------------------
    # Telemetry
    # ------------------------------------------------------------------

    @app.get(f"{API_PREFIX}/events")
    def query_events(
        category: str | None = None,
        actor: str | None = None,
        since: float | None = None,
        until: float | None = None,
        limit: int = Query(default=200, le=10_000),
        token: access.SessionToken = Depends(current_token),
    ):
        require(token, Action.METRICS_READ)
        try:
            events = ctx.events.query(category=category, actor=actor, since=since, until=until, limit=limit)
        except ValueError:
            raise ApiError(422, "INVALID_CATEGORY", "unknown event category") from None
        return {"events": [e.to_dict() for e in events]}

    @app.get("/metrics")
    def metrics(token: access.SessionToken = Depends(current_token)):
        require(token, Action.METRICS_READ)
        return PlainTextResponse(ctx.metrics.render_text())

    # ------------------------------------------------------------------
    # Static console + middleware
    # ------------------------------------------------------------------

    if config.static_dir and Path(config.static_dir).is_dir():
        app.mount("/", StaticFiles(directory=config.static_dir, html=True), name="console")

    app.add_middleware(RequestGuardMiddleware, ctx=ctx)
    app.add_middleware(SecurityHeadersMiddleware)
    return app
