"""Node-side application logic shared by the HTTP layer and tests.

A NodeService fronts one validator inside an in-process cluster. Batch
submissions pump the cluster synchronously, so the caller sees a
terminal (or at least honest) status when the call returns. Reads gate
on session state: wallet-namespace addresses require a session that has
proven possession of the registered signing key; settings require only
a valid session.
"""

from __future__ import annotations

import threading
import time
from typing import Iterable

from ..addressing import PREFIX_LENGTH, WALLET_PREFIX, is_address
from ..ledger import Batch, EventRecord, LedgerError
from .auth import (
    AuthError,
    BadKeyEncoding,
    ChallengeStore,
    Clock,
    KeyNotProven,
    NoRegisteredKey,
    Session,
    SessionManager,
    UserStore,
    verify_assertion,
)


class NotFound(Exception):
    code = "NotFound"
    http_status = 404

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class NodeService:
    def __init__(
        self,
        cluster,
        node_name: str,
        providers: dict[str, str],
        clock: Clock = time.time,
        lock: threading.Lock | None = None,
        heartbeat_seconds: float = 15.0,
    ):
        self.cluster = cluster
        self.node_name = node_name
        self.providers = dict(providers)
        self.clock = clock
        self.lock = lock or threading.Lock()
        self.heartbeat_seconds = heartbeat_seconds
        self.users = UserStore()
        self.sessions = SessionManager(clock)
        self.challenges = ChallengeStore(clock)

    @property
    def node(self):
        return self.cluster.node(self.node_name)

    @property
    def chain(self):
        return self.node.chain

    # ----------------------------------------------------------------- auth

    def login(self, assertion: dict) -> dict:
        subject = verify_assertion(assertion, self.providers, self.clock())
        self.users.ensure(subject)
        session = self.sessions.create(subject)
        return {
            "token": session.token,
            "subject": subject,
            "keyRegistered": self.users.key_of(subject) is not None,
            "keyProven": False,
        }

    def authenticate(self, token: str | None) -> Session:
        return self.sessions.get(token)

    def register_key(self, session: Session, public_key: str) -> dict:
        self.users.register_key(session.subject, public_key)
        return {"subject": session.subject, "publicKey": self.users.key_of(session.subject)}

    def issue_challenge(self, session: Session) -> dict:
        if self.users.key_of(session.subject) is None:
            raise NoRegisteredKey(f"{session.subject} has no registered key")
        return {"challenge": self.challenges.issue(session.subject)}

    def answer_challenge(self, session: Session, challenge: str, signature: str) -> dict:
        public_key = self.users.key_of(session.subject)
        if public_key is None:
            raise NoRegisteredKey(f"{session.subject} has no registered key")
        self.challenges.answer(session.subject, challenge, signature, public_key)
        session.key_proven = True
        return {"subject": session.subject, "keyProven": True}

    # -------------------------------------------------------------- batches

    def submit_batch(self, raw: dict) -> dict:
        batch = Batch.from_dict(raw)  # MalformedStructure maps to 400
        with self.lock:
            return self.cluster.submit_batch(self.node_name, batch)

    def batch_status(self, batch_id: str) -> dict:
        status = self.node.batch_status(batch_id)
        if status is None:
            raise NotFound(f"no batch {batch_id[:16]} on this node")
        return dict(status, batchId=batch_id)

    # ---------------------------------------------------------------- reads

    def _gate(self, session: Session, span: str) -> None:
        """Wallet-namespace reads need a key-proven session. A short or
        empty prefix covers the wallet namespace too."""
        overlap = min(len(span), PREFIX_LENGTH)
        if span[:overlap] == WALLET_PREFIX[:overlap] and not session.key_proven:
            raise KeyNotProven("wallet reads require answering a key challenge")

    def read_state(self, session: Session, address: str) -> dict:
        if not is_address(address):
            raise NotFound(f"{address!r} is not a state address")
        self._gate(session, address)
        with self.lock:
            value = self.chain.state.get(address)
        if value is None:
            raise NotFound(f"nothing stored at {address[:16]}")
        return {"address": address, "value": value.hex()}

    def read_prefix(self, session: Session, prefix: str) -> dict:
        self._gate(session, prefix)
        with self.lock:
            pairs = [
                {"address": address, "value": value.hex()}
                for address, value in self.chain.state.entries().items()
                if address.startswith(prefix)
            ]
        pairs.sort(key=lambda item: item["address"])
        return {"prefix": prefix, "entries": pairs}

    def blocks(self, from_height: int = 0) -> list[dict]:
        with self.lock:
            return [b.to_dict() for b in self.chain.blocks if b.height >= from_height]

    def events_since(self, height: int) -> list[EventRecord]:
        with self.lock:
            return self.chain.events_since(height)

    def head_height(self) -> int:
        with self.lock:
            return self.chain.height


def event_matches(
    record: EventRecord, kinds: set[str] | None, prefix: str | None
) -> bool:
    """SSE filter: by event kind, and by address prefix. For state deltas
    the prefix tests touched addresses; otherwise attribute values."""
    if kinds and record.kind not in kinds:
        return False
    if prefix:
        if record.kind == "state-delta":
            entries: Iterable[dict] = (record.data or {}).get("entries", ())
            return any(e["address"].startswith(prefix) for e in entries)
        return any(
            isinstance(value, str) and value.startswith(prefix)
            for _, value in record.attributes
        )
    return True


__all__ = ["NodeService", "NotFound", "event_matches", "AuthError", "LedgerError", "BadKeyEncoding"]
