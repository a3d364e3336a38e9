"""Login service: credential checks and session tokens.

User file format, one user per line::

    username:salt_hex:hash_hex

where ``hash`` is scrypt(password, salt) with the parameters below.  Blank
lines and lines starting with ``#`` are skipped.

Timestamps are always passed in by the caller; nothing here reads the clock.
"""

from __future__ import annotations

import hashlib
import hmac
import logging
import os
import secrets
import threading
from dataclasses import dataclass, field
from pathlib import Path

from unilearn.errors import AuthError

logger = logging.getLogger(__name__)

DEFAULT_TTL_SECONDS = 3600

SCRYPT_N = 2**14
SCRYPT_R = 8
SCRYPT_P = 1
HASH_BYTES = 32
SALT_BYTES = 16

_FAILED = "invalid username or password"


@dataclass(frozen=True)
class Credential:
    username: str
    password: str = field(repr=False)

    def __post_init__(self) -> None:
        if not self.username:
            raise AuthError("AUTH_FAILED", _FAILED)


@dataclass(frozen=True)
class Session:
    token: str
    username: str
    expires_at: float


@dataclass(frozen=True)
class _UserRecord:
    salt: bytes = field(repr=False)
    digest: bytes = field(repr=False)


def hash_password(password: str, salt: bytes) -> bytes:
    return hashlib.scrypt(
        password.encode("utf-8"), salt=salt, n=SCRYPT_N, r=SCRYPT_R, p=SCRYPT_P, dklen=HASH_BYTES
    )


def format_user_line(username: str, password: str, salt: bytes | None = None) -> str:
    """Produce one user-file line for ``username``."""
    if not username or ":" in username or "\n" in username:
        raise ValueError(f"illegal username {username!r}")
    salt = os.urandom(SALT_BYTES) if salt is None else salt
    return f"{username}:{salt.hex()}:{hash_password(password, salt).hex()}"


def write_user_file(path: str | os.PathLike[str], users: dict[str, str]) -> None:
    """Write a user file from a ``{username: password}`` mapping."""
    lines = [format_user_line(name, pw) for name, pw in users.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_user_file(path: str | os.PathLike[str]) -> dict[str, _UserRecord]:
    users: dict[str, _UserRecord] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(":")
        if len(parts) != 3 or not parts[0]:
            # Never echo the line; it holds hash material.
            raise ValueError(f"{path}:{lineno}: expected username:salt_hex:hash_hex")
        name, salt_hex, hash_hex = parts
        try:
            record = _UserRecord(bytes.fromhex(salt_hex), bytes.fromhex(hash_hex))
        except ValueError:
            raise ValueError(f"{path}:{lineno}: salt and hash must be hex") from None
        if name in users:
            raise ValueError(f"{path}:{lineno}: duplicate user {name!r}")
        users[name] = record
    return users


def new_token() -> str:
    """128 random bits from the OS CSPRNG, as 32 lowercase hex characters."""
    return secrets.token_hex(16)


class SessionTable:
    """Live sessions keyed by token.

    Lookups are plain dict reads and need no lock; minting and revocation
    mutate under one.  Expired entries are swept every ``_SWEEP_EVERY`` mints.
    """

    _SWEEP_EVERY = 256

    def __init__(self, ttl_seconds: int = DEFAULT_TTL_SECONDS) -> None:
        if ttl_seconds <= 0:
            raise ValueError("session ttl must be positive")
        self.ttl_seconds = ttl_seconds
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()
        self._mints = 0

    def __len__(self) -> int:
        return len(self._sessions)

    def mint(self, username: str, now: float) -> Session:
        with self._lock:
            self._mints += 1
            if self._mints % self._SWEEP_EVERY == 0:
                self._sweep(now)
            token = new_token()
            while token in self._sessions:
                token = new_token()
            session = Session(token, username, now + self.ttl_seconds)
            self._sessions[token] = session
        return session

    def lookup(self, token: str | None, now: float) -> Session | None:
        session = self._sessions.get(token) if token else None
        if session is None or not now < session.expires_at:
            return None
        return session

    def revoke(self, token: str | None) -> bool:
        with self._lock:
            return bool(token) and self._sessions.pop(token, None) is not None  # type: ignore[arg-type]

    def _sweep(self, now: float) -> None:
        expired = [t for t, s in self._sessions.items() if not now < s.expires_at]
        for token in expired:
            del self._sessions[token]


class LoginService:
    """Authenticates users against the user file and issues sessions."""

    def __init__(self, users: dict[str, _UserRecord], ttl_seconds: int = DEFAULT_TTL_SECONDS) -> None:
        self._users = users
        self.sessions = SessionTable(ttl_seconds)
        # Unknown users still pay for one hash, so both failures look alike.
        self._decoy = _UserRecord(os.urandom(SALT_BYTES), os.urandom(HASH_BYTES))

    @property
    def ttl_seconds(self) -> int:
        return self.sessions.ttl_seconds

    @classmethod
    def from_file(cls, path: str | os.PathLike[str], ttl_seconds: int = DEFAULT_TTL_SECONDS) -> LoginService:
        return cls(load_user_file(path), ttl_seconds)

    def login(self, credential: Credential, now: float) -> Session:
        record = self._users.get(credential.username)
        candidate = hash_password(credential.password, (record or self._decoy).salt)
        if record is None or not hmac.compare_digest(candidate, record.digest):
            logger.info("login failed for %r", credential.username)
            raise AuthError("AUTH_FAILED", _FAILED)
        return self.sessions.mint(credential.username, now)

    def verify(self, token: str | None, now: float) -> str:
        """Return the username bound to ``token`` if it is live at ``now``."""
        session = self.sessions.lookup(token, now)
        if session is None:
            raise AuthError("AUTH_REQUIRED", "session missing, unknown or expired")
        return session.username

    def logout(self, token: str | None) -> None:
        if not self.sessions.revoke(token):
            raise AuthError("AUTH_REQUIRED", "unknown session")
