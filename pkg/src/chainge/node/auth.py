"""Session and identity plumbing for the node's HTTP surface.

Users arrive through an external single-sign-on provider; the node trusts
signed assertions from registered providers. Holding a session is not
enough to read wallet state: the user must additionally prove possession
of their registered signing key by answering a fresh challenge.
"""

from __future__ import annotations

import secrets
import time
from dataclasses import dataclass
from typing import Callable

from ..canonical import canonical_bytes
from ..crypto import KeyPair, generate_keypair, sign, verify

SESSION_TTL_SECONDS = 30 * 60
CHALLENGE_TTL_SECONDS = 120
ASSERTION_TTL_SECONDS = 300

Clock = Callable[[], float]


class AuthError(Exception):
    code = "AuthError"
    http_status = 401

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class BadAssertion(AuthError):
    code = "BadAssertion"


class ExpiredAssertion(AuthError):
    code = "ExpiredAssertion"


class UnknownSession(AuthError):
    code = "UnknownSession"


class SessionExpired(AuthError):
    code = "SessionExpired"


class AlreadyRegistered(AuthError):
    code = "AlreadyRegistered"
    http_status = 409


class BadKeyEncoding(AuthError):
    code = "BadKeyEncoding"
    http_status = 400


class NoRegisteredKey(AuthError):
    code = "NoRegisteredKey"
    http_status = 400


class BadSignature(AuthError):
    code = "BadSignature"
    http_status = 403


class ChallengeExpired(AuthError):
    code = "ChallengeExpired"
    http_status = 403


class ChallengeReused(AuthError):
    code = "ChallengeReused"
    http_status = 403


class KeyNotProven(AuthError):
    code = "KeyNotProven"
    http_status = 403


# --------------------------------------------------------------------------
# single sign-on


class MockIdentityProvider:
    """Stand-in for an enterprise SSO endpoint: signs subject assertions."""

    def __init__(self, name: str, keys: KeyPair | None = None):
        self.name = name
        self.keys = keys or generate_keypair()

    @property
    def public_key(self) -> str:
        return self.keys.public_key

    def issue(self, subject: str, ttl: int = ASSERTION_TTL_SECONDS, now: float | None = None) -> dict:
        issued = time.time() if now is None else now
        claims = {
            "subject": subject,
            "provider": self.name,
            "issuedAt": int(issued),
            "expiresAt": int(issued) + ttl,
        }
        return dict(claims, signature=sign(self.keys.private_key, canonical_bytes(claims)))


def verify_assertion(assertion: dict, providers: dict[str, str], now: float) -> str:
    """Validate a signed SSO assertion; returns the subject."""
    if not isinstance(assertion, dict):
        raise BadAssertion("assertion must be an object")
    try:
        claims = {
            "subject": assertion["subject"],
            "provider": assertion["provider"],
            "issuedAt": assertion["issuedAt"],
            "expiresAt": assertion["expiresAt"],
        }
        signature = assertion["signature"]
    except (KeyError, TypeError) as exc:
        raise BadAssertion(f"assertion is missing {exc}") from exc
    if not isinstance(claims["subject"], str) or not claims["subject"]:
        raise BadAssertion("subject must be a non-empty string")
    provider_key = providers.get(claims["provider"])
    if provider_key is None:
        raise BadAssertion(f"unknown provider {claims['provider']!r}")
    if not isinstance(signature, str) or not verify(
        provider_key, canonical_bytes(claims), signature
    ):
        raise BadAssertion("assertion signature does not verify")
    if not isinstance(claims["expiresAt"], int) or claims["expiresAt"] <= now:
        raise ExpiredAssertion("assertion has expired")
    return claims["subject"]


# --------------------------------------------------------------------------
# users and sessions


class UserStore:
    """One record per SSO subject; the signing key is set exactly once."""

    def __init__(self):
        self._users: dict[str, dict] = {}

    def ensure(self, subject: str) -> dict:
        return self._users.setdefault(subject, {"subject": subject, "publicKey": None})

    def register_key(self, subject: str, public_key: str) -> None:
        record = self.ensure(subject)
        if record["publicKey"] is not None:
            raise AlreadyRegistered(f"{subject} already has a registered key")
        if not isinstance(public_key, str):
            raise BadKeyEncoding("public key must be a hex string")
        try:
            raw = bytes.fromhex(public_key)
        except ValueError as exc:
            raise BadKeyEncoding("public key is not valid hex") from exc
        if len(raw) != 32:
            raise BadKeyEncoding(f"public key must be 32 bytes, got {len(raw)}")
        record["publicKey"] = public_key.lower()

    def key_of(self, subject: str) -> str | None:
        record = self._users.get(subject)
        return record["publicKey"] if record else None


@dataclass
class Session:
    token: str
    subject: str
    expires_at: float
    key_proven: bool = False


class SessionManager:
    def __init__(self, clock: Clock = time.time, ttl: int = SESSION_TTL_SECONDS):
        self._clock = clock
        self._ttl = ttl
        self._sessions: dict[str, Session] = {}

    def create(self, subject: str) -> Session:
        token = secrets.token_hex(32)
        session = Session(token=token, subject=subject, expires_at=self._clock() + self._ttl)
        self._sessions[token] = session
        return session

    def get(self, token: str | None) -> Session:
        if not token or token not in self._sessions:
            raise UnknownSession("missing or unknown bearer token")
        session = self._sessions[token]
        if session.expires_at <= self._clock():
            del self._sessions[token]
            raise SessionExpired("session has expired")
        return session


# --------------------------------------------------------------------------
# key-possession challenges


@dataclass
class _Challenge:
    subject: str
    issued_at: float


class ChallengeStore:
    """Single-use random nonces; answering one proves key possession."""

    def __init__(self, clock: Clock = time.time, ttl: int = CHALLENGE_TTL_SECONDS):
        self._clock = clock
        self._ttl = ttl
        self._open: dict[str, _Challenge] = {}
        self._used: set[str] = set()

    def issue(self, subject: str) -> str:
        nonce = secrets.token_bytes(32).hex()
        self._open[nonce] = _Challenge(subject=subject, issued_at=self._clock())
        return nonce

    def answer(self, subject: str, challenge: str, signature: str, public_key: str) -> None:
        if challenge in self._used:
            raise ChallengeReused("challenge was already answered")
        record = self._open.get(challenge)
        if record is None or record.subject != subject:
            raise ChallengeExpired("challenge is unknown for this session")
        if self._clock() - record.issued_at > self._ttl:
            del self._open[challenge]
            raise ChallengeExpired("challenge has expired")
        if not isinstance(signature, str) or not verify(
            public_key, bytes.fromhex(challenge), signature
        ):
            raise BadSignature("challenge signature does not verify")
        del self._open[challenge]
        self._used.add(challenge)
