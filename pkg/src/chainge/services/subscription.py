"""Simulated subscription services.

A service holds customer accounts, follows one node's committed-event
feed, opens the card blobs sealed to it, and keeps a journaled record
store of the latest plaintext per customer. Two feed modes exist:

- "deltas": parse raw wallet state deltas (every committed wallet doc)
- "events": consume card-updated application events only

Both modes must land identical record stores; the events mode streams
strictly fewer bytes, which the counters here make measurable.
"""

from __future__ import annotations

import hashlib
import logging
import secrets
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from ..addressing import WALLET_PREFIX
from ..canonical import canonical_dumps, canonical_loads
from ..cards import CardData, card_record_parse
from ..crypto import AuthenticationFailure, EncBlob, KeyPair, open_blob
from ..ledger import EventRecord, STATE_DELTA_EVENT
from ..families.wallet import CARD_UPDATED_EVENT

log = logging.getLogger(__name__)

MODE_DELTAS = "deltas"
MODE_EVENTS = "events"
TOKEN_TTL_SECONDS = 10 * 60
PBKDF2_ITERATIONS = 20_000

Clock = Callable[[], float]


class ServiceError(Exception):
    code = "ServiceError"
    http_status = 400

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class UsernameTaken(ServiceError):
    code = "UsernameTaken"
    http_status = 409


class BadCredentials(ServiceError):
    code = "BadCredentials"
    http_status = 403


class TokenExpired(ServiceError):
    code = "TokenExpired"
    http_status = 403


class NoRecord(ServiceError):
    code = "NotFound"
    http_status = 404


@dataclass(frozen=True)
class ServiceDescriptor:
    subscription_type: str
    public_key: str
    plan_cost: int
    endpoint: str

    def to_dict(self) -> dict:
        return {
            "subscriptionType": self.subscription_type,
            "publicKey": self.public_key,
            "planCost": self.plan_cost,
            "endpoint": self.endpoint,
        }


@dataclass
class ServiceRecord:
    service_user_id: str
    card_number: str
    expiry: str
    cvv: str
    updated_at_height: int

    def to_dict(self) -> dict:
        return {
            "serviceUserId": self.service_user_id,
            "cardNumber": self.card_number,
            "expiry": self.expiry,
            "cvv": self.cvv,
            "updatedAtHeight": self.updated_at_height,
        }

    def matches(self, card: CardData) -> bool:
        return (
            self.card_number == card.card_number
            and self.expiry == card.expiry
            and self.cvv == card.cvv
        )


def _hash_password(password: str, salt: bytes) -> str:
    return hashlib.pbkdf2_hmac(
        "sha256", password.encode("utf-8"), salt, PBKDF2_ITERATIONS
    ).hex()


def _user_id(subscription_type: str, username: str) -> str:
    # stable per (service, username) so journal replay and re-registration agree
    digest = hashlib.sha512(f"{subscription_type}:{username}".encode("utf-8")).hexdigest()
    return digest[:16]


class SubscriptionService:
    def __init__(
        self,
        subscription_type: str,
        keys: KeyPair,
        plan_cost: int = 999,
        mode: str = MODE_EVENTS,
        journal_path: str | Path | None = None,
        clock: Clock = time.time,
    ):
        if mode not in (MODE_DELTAS, MODE_EVENTS):
            raise ValueError(f"unknown feed mode {mode!r}")
        self.subscription_type = subscription_type
        self.keys = keys
        self.plan_cost = plan_cost
        self.mode = mode
        self.clock = clock
        self.journal_path = Path(journal_path) if journal_path else None

        self.accounts: dict[str, dict] = {}  # username -> salt/hash/serviceUserId
        self.user_ids: dict[str, str] = {}  # service_user_id -> username
        self.records: dict[str, ServiceRecord] = {}
        self.tokens: dict[str, tuple[str, float]] = {}

        self.cursor = 0  # highest fully consumed block height
        self.bytes_processed = 0
        self.blobs_opened = 0
        self.foreign_blobs_skipped = 0
        self.malformed_skipped = 0

        if self.journal_path and self.journal_path.exists():
            self._replay_journal()

    # ------------------------------------------------------------- accounts

    def descriptor(self, endpoint: str = "") -> ServiceDescriptor:
        return ServiceDescriptor(
            subscription_type=self.subscription_type,
            public_key=self.keys.public_key,
            plan_cost=self.plan_cost,
            endpoint=endpoint,
        )

    def create_account(self, username: str, password: str) -> str:
        if not username or not isinstance(username, str):
            raise ServiceError("username must be a non-empty string")
        if username in self.accounts:
            raise UsernameTaken(f"username {username!r} is taken")
        salt = secrets.token_bytes(16)
        entry = {
            "username": username,
            "salt": salt.hex(),
            "hash": _hash_password(password, salt),
            "serviceUserId": _user_id(self.subscription_type, username),
        }
        self._apply_account(entry)
        self._journal({"op": "account", **entry})
        return entry["serviceUserId"]

    def authenticate(self, username: str, password: str) -> dict:
        account = self.accounts.get(username)
        if account is None:
            raise BadCredentials("unknown username or wrong password")
        if _hash_password(password, bytes.fromhex(account["salt"])) != account["hash"]:
            raise BadCredentials("unknown username or wrong password")
        token = secrets.token_hex(16)
        expires_at = self.clock() + TOKEN_TTL_SECONDS
        self.tokens[token] = (account["serviceUserId"], expires_at)
        return {
            "token": token,
            "serviceUserId": account["serviceUserId"],
            "expiresAt": expires_at,
        }

    def check_token(self, token: str) -> str:
        """Link-flow revalidation; expired or unknown tokens fail closed."""
        entry = self.tokens.get(token)
        if entry is None:
            raise TokenExpired("token is unknown")
        service_user_id, expires_at = entry
        if self.clock() >= expires_at:
            del self.tokens[token]
            raise TokenExpired("token has expired")
        return service_user_id

    def get_record(self, service_user_id: str) -> ServiceRecord:
        record = self.records.get(service_user_id)
        if record is None:
            raise NoRecord(f"no card on file for {service_user_id}")
        return record

    # ---------------------------------------------------------------- feed

    @property
    def subscription_filter(self) -> dict:
        """Query parameters for the node's /events stream."""
        if self.mode == MODE_DELTAS:
            return {"kinds": STATE_DELTA_EVENT, "prefix": WALLET_PREFIX}
        return {"kinds": CARD_UPDATED_EVENT}

    def consume(self, record: EventRecord) -> bool:
        """Apply one streamed event; returns True when the store changed."""
        self.bytes_processed += len(record.encoded().encode("utf-8"))
        if self.mode == MODE_DELTAS:
            changed = self._consume_delta(record)
        else:
            changed = self._consume_card_updated(record)
        self.cursor = max(self.cursor, record.height)
        return changed

    def _consume_card_updated(self, record: EventRecord) -> bool:
        if record.kind != CARD_UPDATED_EVENT:
            return False
        changed = False
        links = (record.data or {}).get("links", [])
        for link in links:
            if link.get("subscriptionType") != self.subscription_type:
                continue
            changed |= self._open_and_store(
                link.get("encService"), link.get("userID"), record.height
            )
        return changed

    def _consume_delta(self, record: EventRecord) -> bool:
        if record.kind != STATE_DELTA_EVENT:
            return False
        changed = False
        for entry in (record.data or {}).get("entries", []):
            address, value = entry.get("address", ""), entry.get("value")
            if not address.startswith(WALLET_PREFIX) or value is None:
                continue
            try:
                wallet = canonical_loads(bytes.fromhex(value))
                cards = wallet["cards"]
            except (ValueError, KeyError, TypeError):
                self.malformed_skipped += 1
                log.warning("skipping malformed wallet entry at %s", address[:16])
                continue
            for card in cards:
                for sub in card.get("subscriptions", []):
                    if sub.get("subscriptionType") != self.subscription_type:
                        continue
                    changed |= self._open_and_store(
                        sub.get("encService"), sub.get("userID"), record.height
                    )
        return changed

    def _open_and_store(self, blob: dict | None, service_user_id: str, height: int) -> bool:
        if not isinstance(blob, dict) or not isinstance(service_user_id, str):
            self.malformed_skipped += 1
            return False
        try:
            plaintext = open_blob(self.keys.private_key, EncBlob.from_dict(blob))
        except AuthenticationFailure:
            # sealed for someone else; normal in a shared feed
            self.foreign_blobs_skipped += 1
            return False
        except (ValueError, KeyError):
            self.malformed_skipped += 1
            return False
        try:
            card = card_record_parse(plaintext)
        except ValueError:
            self.malformed_skipped += 1
            return False
        self.blobs_opened += 1

        current = self.records.get(service_user_id)
        if current is not None and current.matches(card):
            return False  # replayed or unchanged; keep the original height
        record = ServiceRecord(
            service_user_id=service_user_id,
            card_number=card.card_number,
            expiry=card.expiry,
            cvv=card.cvv,
            updated_at_height=height,
        )
        self.records[service_user_id] = record
        self._journal({"op": "record", **record.to_dict()})
        return True

    def drain_chain(self, chain) -> int:
        """Consume every new matching event straight from a chain store."""
        from ..node.service import event_matches

        wanted = self.subscription_filter
        kinds = {wanted["kinds"]}
        prefix = wanted.get("prefix")
        applied = 0
        for record in chain.events_since(self.cursor):
            if event_matches(record, kinds, prefix):
                applied += self.consume(record)
            self.cursor = max(self.cursor, record.height)
        return applied

    # -------------------------------------------------------------- journal

    def _apply_account(self, entry: dict) -> None:
        self.accounts[entry["username"]] = {
            "salt": entry["salt"],
            "hash": entry["hash"],
            "serviceUserId": entry["serviceUserId"],
        }
        self.user_ids[entry["serviceUserId"]] = entry["username"]

    def _journal(self, entry: dict) -> None:
        if self.journal_path is None:
            return
        with self.journal_path.open("a", encoding="utf-8") as fh:
            fh.write(canonical_dumps(entry) + "\n")

    def _replay_journal(self) -> None:
        for line in self.journal_path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            entry = canonical_loads(line)
            if entry["op"] == "account":
                self._apply_account(entry)
            elif entry["op"] == "record":
                record = ServiceRecord(
                    service_user_id=entry["serviceUserId"],
                    card_number=entry["cardNumber"],
                    expiry=entry["expiry"],
                    cvv=entry["cvv"],
                    updated_at_height=entry["updatedAtHeight"],
                )
                self.records[record.service_user_id] = record
                self.cursor = max(self.cursor, record.updated_at_height)
