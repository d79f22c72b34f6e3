"""Authentication, session tokens, role-based authorization, HTTP hardening headers.

Passwords are hashed with scrypt (memory-hard; default cost 64 MiB, 3 lanes)
and the cost parameters travel inside the hash string so they can be raised
later without invalidating stored credentials. Authorization is a pure
decision over a static role/permission matrix plus resource ownership.
"""

from __future__ import annotations

import hashlib
import hmac
import secrets
import threading
import time
from dataclasses import dataclass
from enum import Enum

from .store import NotFound, Store, UserRecord

TOKEN_TTL_SECONDS = 12 * 3600
TOKEN_ENTROPY_BYTES = 32  # 256 bits

# scrypt cost (n, r, p): 128 * r * n = 64 MiB working memory, 3 lanes.
DEFAULT_COST = (2**16, 8, 3)


class Role(str, Enum):
    ADMIN = "ADMIN"
    INSTRUCTOR = "INSTRUCTOR"
    LEARNER = "LEARNER"


class Action(str, Enum):
    SCENARIO_CREATE = "SCENARIO_CREATE"
    SCENARIO_MODIFY = "SCENARIO_MODIFY"
    SCENARIO_DELETE = "SCENARIO_DELETE"
    SCENARIO_READ = "SCENARIO_READ"
    SCENARIO_LAUNCH = "SCENARIO_LAUNCH"
    INSTANCE_READ_OWN = "INSTANCE_READ_OWN"
    INSTANCE_READ_ANY = "INSTANCE_READ_ANY"
    INSTANCE_TERMINATE_OWN = "INSTANCE_TERMINATE_OWN"
    INSTANCE_TERMINATE_ANY = "INSTANCE_TERMINATE_ANY"
    USER_MANAGE = "USER_MANAGE"
    METRICS_READ = "METRICS_READ"


ROLE_PERMISSIONS: dict[Role, frozenset[Action]] = {
    Role.ADMIN: frozenset(Action),
    Role.INSTRUCTOR: frozenset(Action) - {Action.USER_MANAGE},
    Role.LEARNER: frozenset(
        {
            Action.SCENARIO_READ,
            Action.SCENARIO_LAUNCH,
            Action.INSTANCE_READ_OWN,
            Action.INSTANCE_TERMINATE_OWN,
        }
    ),
}

OWNERSHIP_ACTIONS = frozenset(
    {Action.INSTANCE_READ_OWN, Action.INSTANCE_TERMINATE_OWN}
)

# Bit-exact response header contract; every API response carries all five.
SECURITY_HEADERS: tuple[tuple[str, str], ...] = (
    ("Content-Security-Policy", "default-src 'self'"),
    ("X-Frame-Options", "DENY"),
    ("X-Content-Type-Options", "nosniff"),
    ("Referrer-Policy", "no-referrer"),
    ("Cache-Control", "no-store"),
)


class WeakPassword(Exception):
    code = "WEAK_PASSWORD"


class InvalidCredentials(Exception):
    code = "INVALID_CREDENTIALS"

    def __init__(self):
        # Identical payload for unknown user and wrong password.
        super().__init__("invalid credentials")


class AccountDisabled(Exception):
    code = "ACCOUNT_DISABLED"


class Forbidden(Exception):
    code = "FORBIDDEN"


class UnknownToken(Exception):
    code = "UNKNOWN_TOKEN"


class ExpiredToken(Exception):
    code = "EXPIRED_TOKEN"


@dataclass(frozen=True)
class User:
    username: str
    password_hash: str
    role: Role
    active: bool = True


@dataclass(frozen=True)
class SessionToken:
    token: str
    username: str
    role: Role
    issued_at: float
    expires_at: float


def hash_password(password: str, cost: tuple[int, int, int] = DEFAULT_COST) -> str:
    """scrypt hash with per-user random salt; format scrypt$n$r$p$salt$key."""
    if len(password) < 8:
        raise WeakPassword("password must be at least 8 characters")
    n, r, p = cost
    salt = secrets.token_bytes(16)
    key = _scrypt(password, salt, n, r, p)
    return f"scrypt${n}${r}${p}${salt.hex()}${key.hex()}"


def verify_password(password: str, stored: str) -> bool:
    try:
        scheme, n, r, p, salt_hex, key_hex = stored.split("$")
        if scheme != "scrypt":
            return False
        key = _scrypt(password, bytes.fromhex(salt_hex), int(n), int(r), int(p))
        return hmac.compare_digest(key, bytes.fromhex(key_hex))
    except (ValueError, AttributeError):
        return False


def _scrypt(password: str, salt: bytes, n: int, r: int, p: int) -> bytes:
    maxmem = 128 * r * n * p + (1 << 20)
    return hashlib.scrypt(password.encode("utf-8"), salt=salt, n=n, r=r, p=p, maxmem=maxmem, dklen=32)


class TokenTable:
    """In-memory session tokens; issuance and revocation are atomic."""

    def __init__(self, ttl_seconds: float = TOKEN_TTL_SECONDS):
        self._ttl = ttl_seconds
        self._lock = threading.RLock()
        self._tokens: dict[str, SessionToken] = {}

    def issue(self, username: str, role: Role, now: float | None = None) -> SessionToken:
        now = time.time() if now is None else now
        record = SessionToken(
            token=secrets.token_urlsafe(TOKEN_ENTROPY_BYTES),
            username=username,
            role=role,
            issued_at=now,
            expires_at=now + self._ttl,
        )
        with self._lock:
            self._tokens[record.token] = record
        return record

    def resolve(self, token: str, now: float | None = None) -> SessionToken:
        now = time.time() if now is None else now
        with self._lock:
            record = self._tokens.get(token)
            if record is None:
                raise UnknownToken("token not recognized")
            if record.expires_at <= now:
                del self._tokens[token]
                raise ExpiredToken("token expired")
        return record

    def revoke(self, token: str) -> None:
        with self._lock:
            self._tokens.pop(token, None)

    def revoke_user(self, username: str) -> None:
        with self._lock:
            for key in [k for k, v in self._tokens.items() if v.username == username]:
                del self._tokens[key]


_dummy_hash_cache: dict[tuple[int, int, int], str] = {}
_dummy_lock = threading.Lock()


def _dummy_hash(cost: tuple[int, int, int]) -> str:
    with _dummy_lock:
        if cost not in _dummy_hash_cache:
            _dummy_hash_cache[cost] = hash_password("wifirange-dummy-credential", cost)
        return _dummy_hash_cache[cost]


def authenticate(
    store: Store,
    tokens: TokenTable,
    username: str,
    password: str,
    now: float | None = None,
    dummy_cost: tuple[int, int, int] = DEFAULT_COST,
) -> SessionToken:
    """Issue a session token for valid, active credentials.

    Unknown-user and wrong-password failures are indistinguishable; the
    unknown-user path burns a verification against a throwaway hash so the
    two paths cost the same.
    """
    try:
        record = store.get_user(username)
    except NotFound:
        verify_password(password, _dummy_hash(dummy_cost))
        raise InvalidCredentials() from None
    if not verify_password(password, record.password_hash):
        raise InvalidCredentials()
    if not record.active:
        raise AccountDisabled(f"account {username} is disabled")
    return tokens.issue(record.username, Role(record.role), now=now)


def decide_permission(
    role: Role,
    action: Action,
    username: str | None = None,
    resource_owner: str | None = None,
) -> bool:
    """Pure RBAC decision: static matrix plus ownership for *_OWN actions."""
    if action not in ROLE_PERMISSIONS[role]:
        return False
    if action in OWNERSHIP_ACTIONS:
        return resource_owner is not None and username == resource_owner
    return True


def authorize(
    tokens: TokenTable,
    token: str,
    action: Action,
    resource_owner: str | None = None,
    now: float | None = None,
) -> str:
    """Resolve the token and decide; returns "ALLOW" or "DENY".

    Raises UnknownToken/ExpiredToken for tokens that authorize nothing.
    """
    record = tokens.resolve(token, now=now)
    allowed = decide_permission(record.role, action, record.username, resource_owner)
    return "ALLOW" if allowed else "DENY"


def security_headers() -> list[tuple[str, str]]:
    return list(SECURITY_HEADERS)


def bootstrap_admin(store: Store, cost: tuple[int, int, int] = DEFAULT_COST) -> tuple[str, str] | None:
    """On an empty user table, create the initial admin with a one-time password.

    Returns (username, password) so the caller can print it once; never stores
    or logs the plaintext itself.
    """
    if store.user_count() > 0:
        return None
    password = secrets.token_urlsafe(12)
    store.create_user(
        UserRecord(username="admin", password_hash=hash_password(password, cost), role=Role.ADMIN.value, active=True)
    )
    return "admin", password
