"""Deterministic ledger substrate: transactions, batches, blocks, and state.

Everything that is hashed or signed goes through the canonical encoding, so
two nodes that commit the same block sequence hold bit-identical state and
compute bit-identical roots. The state root is a SHA-512 over the sorted
canonical entry map (flat map, not a radix tree) which keeps the determinism
and order-independence guarantees without tree machinery.

A block commit is all-or-nothing: one bad batch rejects the whole block,
and honest proposers drop invalid batches before inclusion.
"""

from __future__ import annotations

import hashlib
import secrets
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

from .canonical import canonical_bytes, canonical_dumps, canonical_loads, is_hex, sha512_hex
from .crypto import KeyPair, sign, verify
from .families.base import InvalidTransaction, TransactionFamily

# SHA-512 of the canonical empty entry map ("{}"); the root of an empty state.
EMPTY_STATE_ROOT = (
    "27c74670adb75075fad058d5ceaf7b20c4e7786c83bae8a32f626f9782af34c9"
    "a33c2046ef60fd2a7878d378e29fec851806bbd9a67878f3a9f1cda4830763fd"
)

GENESIS_PREVIOUS_ID = "0" * 128

BLOCK_COMMIT_EVENT = "block-commit"
STATE_DELTA_EVENT = "state-delta"


class LedgerError(Exception):
    """Base for structural and commit-time ledger failures."""

    code = "LedgerError"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class BadDigest(LedgerError):
    code = "BadDigest"


class BadSignature(LedgerError):
    code = "BadSignature"


class UnknownFamily(LedgerError):
    code = "UnknownFamily"


class MalformedStructure(LedgerError):
    code = "MalformedStructure"


class BrokenChainLink(LedgerError):
    code = "BrokenChainLink"


class StateRootMismatch(LedgerError):
    code = "StateRootMismatch"


class InvalidBatch(LedgerError):
    code = "InvalidBatch"

    def __init__(self, batch_id: str, reason: str):
        super().__init__(f"batch {batch_id[:16]}: {reason}")
        self.batch_id = batch_id
        self.reason = reason


# --------------------------------------------------------------------------
# primitives


@dataclass(frozen=True)
class Transaction:
    family_name: str
    family_version: str
    signer_public_key: str
    nonce: str
    payload: bytes
    payload_digest: str
    signature: str

    @property
    def id(self) -> str:
        return self.signature

    def header(self) -> dict:
        return {
            "familyName": self.family_name,
            "familyVersion": self.family_version,
            "signerPublicKey": self.signer_public_key,
            "nonce": self.nonce,
            "payloadDigest": self.payload_digest,
        }

    def header_bytes(self) -> bytes:
        return canonical_bytes(self.header())

    def to_dict(self) -> dict:
        return dict(self.header(), payload=self.payload.hex(), signature=self.signature)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Transaction":
        try:
            return cls(
                family_name=data["familyName"],
                family_version=data["familyVersion"],
                signer_public_key=data["signerPublicKey"],
                nonce=data["nonce"],
                payload=bytes.fromhex(data["payload"]),
                payload_digest=data["payloadDigest"],
                signature=data["signature"],
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise MalformedStructure(f"malformed transaction: {exc}") from exc


def make_transaction(
    family_name: str,
    family_version: str,
    payload: bytes,
    signer: KeyPair,
    nonce: bytes | None = None,
) -> Transaction:
    """Build and sign a transaction. A fixed nonce makes it deterministic."""
    if nonce is None:
        nonce = secrets.token_bytes(16)
    if len(nonce) != 16:
        raise MalformedStructure(f"nonce must be 16 bytes, got {len(nonce)}")
    digest = sha512_hex(payload)
    header = {
        "familyName": family_name,
        "familyVersion": family_version,
        "signerPublicKey": signer.public_key,
        "nonce": nonce.hex(),
        "payloadDigest": digest,
    }
    signature = sign(signer.private_key, canonical_bytes(header))
    return Transaction(
        family_name=family_name,
        family_version=family_version,
        signer_public_key=signer.public_key,
        nonce=nonce.hex(),
        payload=payload,
        payload_digest=digest,
        signature=signature,
    )


@dataclass(frozen=True)
class Batch:
    transactions: tuple[Transaction, ...]
    signer_public_key: str
    signature: str

    @property
    def id(self) -> str:
        return self.signature

    def header(self) -> dict:
        return {
            "signerPublicKey": self.signer_public_key,
            "transactionSignatures": [t.signature for t in self.transactions],
        }

    def header_bytes(self) -> bytes:
        return canonical_bytes(self.header())

    def to_dict(self) -> dict:
        return {
            "signerPublicKey": self.signer_public_key,
            "signature": self.signature,
            "transactions": [t.to_dict() for t in self.transactions],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Batch":
        try:
            return cls(
                transactions=tuple(Transaction.from_dict(t) for t in data["transactions"]),
                signer_public_key=data["signerPublicKey"],
                signature=data["signature"],
            )
        except (KeyError, TypeError) as exc:
            raise MalformedStructure(f"malformed batch: {exc}") from exc


def make_batch(transactions: Iterable[Transaction], signer: KeyPair) -> Batch:
    txns = tuple(transactions)
    if not txns:
        raise MalformedStructure("a batch must contain at least one transaction")
    header = {
        "signerPublicKey": signer.public_key,
        "transactionSignatures": [t.signature for t in txns],
    }
    signature = sign(signer.private_key, canonical_bytes(header))
    return Batch(transactions=txns, signer_public_key=signer.public_key, signature=signature)


@dataclass(frozen=True)
class Block:
    height: int
    previous_block_id: str
    batches: tuple[Batch, ...]
    state_root: str
    consensus_payload: bytes
    validator_public_key: str
    signature: str
    block_id: str

    def header(self) -> dict:
        return block_header_dict(
            height=self.height,
            previous_block_id=self.previous_block_id,
            batch_ids=[b.id for b in self.batches],
            state_root=self.state_root,
            consensus_payload=self.consensus_payload,
            validator_public_key=self.validator_public_key,
        )

    def header_bytes(self) -> bytes:
        return canonical_bytes(self.header())

    def to_dict(self) -> dict:
        return {
            "height": self.height,
            "previousBlockId": self.previous_block_id,
            "stateRoot": self.state_root,
            "consensusPayload": self.consensus_payload.hex(),
            "validatorPublicKey": self.validator_public_key,
            "signature": self.signature,
            "blockId": self.block_id,
            "batches": [b.to_dict() for b in self.batches],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Block":
        try:
            return cls(
                height=data["height"],
                previous_block_id=data["previousBlockId"],
                batches=tuple(Batch.from_dict(b) for b in data["batches"]),
                state_root=data["stateRoot"],
                consensus_payload=bytes.fromhex(data["consensusPayload"]),
                validator_public_key=data["validatorPublicKey"],
                signature=data["signature"],
                block_id=data["blockId"],
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise MalformedStructure(f"malformed block: {exc}") from exc


def block_header_dict(
    *,
    height: int,
    previous_block_id: str,
    batch_ids: list[str],
    state_root: str,
    consensus_payload: bytes,
    validator_public_key: str,
) -> dict:
    return {
        "height": height,
        "previousBlockId": previous_block_id,
        "batchIds": batch_ids,
        "stateRoot": state_root,
        "consensusPayload": consensus_payload.hex(),
        "validatorPublicKey": validator_public_key,
    }


def make_block(
    *,
    height: int,
    previous_block_id: str,
    batches: Iterable[Batch],
    state_root: str,
    validator: KeyPair,
    consensus_payload: bytes = b"",
) -> Block:
    batches = tuple(batches)
    header = block_header_dict(
        height=height,
        previous_block_id=previous_block_id,
        batch_ids=[b.id for b in batches],
        state_root=state_root,
        consensus_payload=consensus_payload,
        validator_public_key=validator.public_key,
    )
    header_bytes = canonical_bytes(header)
    return Block(
        height=height,
        previous_block_id=previous_block_id,
        batches=batches,
        state_root=state_root,
        consensus_payload=consensus_payload,
        validator_public_key=validator.public_key,
        signature=sign(validator.private_key, header_bytes),
        block_id=sha512_hex(header_bytes),
    )


# --------------------------------------------------------------------------
# state


class GlobalState:
    """Authoritative address -> bytes map with a deterministic root hash."""

    def __init__(self, entries: Mapping[str, bytes] | None = None):
        self._entries: dict[str, bytes] = dict(entries or {})

    def get(self, address: str) -> bytes | None:
        return self._entries.get(address)

    def set(self, address: str, value: bytes) -> None:
        self._entries[address] = value

    def delete(self, address: str) -> None:
        self._entries.pop(address, None)

    def copy(self) -> "GlobalState":
        return GlobalState(self._entries)

    def entries(self) -> dict[str, bytes]:
        return dict(self._entries)

    def addresses_with_prefix(self, prefix: str) -> list[str]:
        return sorted(a for a in self._entries if a.startswith(prefix))

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, GlobalState) and self._entries == other._entries


def compute_state_root(state: GlobalState) -> str:
    """SHA-512 over the canonical serialization of entries sorted by address.

    Insertion order never matters: equal entry maps hash to equal roots.
    """
    serialized = {addr: value.hex() for addr, value in state.entries().items()}
    return sha512_hex(canonical_bytes(serialized))


@dataclass(frozen=True)
class DeltaEntry:
    address: str
    value: bytes | None  # None means the address was deleted

    def to_dict(self) -> dict:
        return {"address": self.address, "value": None if self.value is None else self.value.hex()}


StateDelta = tuple[DeltaEntry, ...]


def apply_delta(state: GlobalState, delta: StateDelta) -> None:
    for entry in delta:
        if entry.value is None:
            state.delete(entry.address)
        else:
            state.set(entry.address, entry.value)


# --------------------------------------------------------------------------
# events


@dataclass(frozen=True)
class Event:
    kind: str
    attributes: tuple[tuple[str, str], ...]
    data: Any = None

    def attribute_values(self, key: str) -> list[str]:
        return [v for k, v in self.attributes if k == key]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "attributes": [[k, v] for k, v in self.attributes],
            "data": self.data,
        }


@dataclass(frozen=True)
class EventRecord:
    """An event as stored in the node journal: commit-ordered and replayable."""

    height: int
    index: int
    kind: str
    attributes: tuple[tuple[str, str], ...]
    data: Any

    def to_dict(self) -> dict:
        return {
            "height": self.height,
            "index": self.index,
            "kind": self.kind,
            "attributes": [[k, v] for k, v in self.attributes],
            "data": self.data,
        }

    def encoded(self) -> str:
        return canonical_dumps(self.to_dict())

    def attribute_values(self, key: str) -> list[str]:
        return [v for k, v in self.attributes if k == key]


# --------------------------------------------------------------------------
# validation

FamilyRegistry = Mapping[str, TransactionFamily]


def validate_transaction_structure(txn: Transaction, families: FamilyRegistry) -> None:
    """Structural checks only; never touches state.

    Raises BadDigest, BadSignature or UnknownFamily naming the failing field.
    """
    if sha512_hex(txn.payload) != txn.payload_digest:
        raise BadDigest("payload_digest does not match payload")
    if not verify(txn.signer_public_key, txn.header_bytes(), txn.signature):
        raise BadSignature("signature does not verify under signer_public_key")
    family = families.get(txn.family_name)
    if family is None or family.family_version != txn.family_version:
        raise UnknownFamily(
            f"family_name/family_version unknown: {txn.family_name}/{txn.family_version}"
        )


def validate_batch_structure(batch: Batch, families: FamilyRegistry) -> None:
    if not batch.transactions:
        raise MalformedStructure("batch is empty")
    if not verify(batch.signer_public_key, batch.header_bytes(), batch.signature):
        raise BadSignature("batch signature does not verify under signer_public_key")
    for txn in batch.transactions:
        validate_transaction_structure(txn, families)


def validate_block_structure(block: Block, families: FamilyRegistry) -> None:
    if block.height < 0:
        raise MalformedStructure("height must be non-negative")
    if not is_hex(block.previous_block_id, 128):
        raise MalformedStructure("previous_block_id must be 128 hex chars")
    if sha512_hex(block.header_bytes()) != block.block_id:
        raise BadDigest("block_id does not match header")
    if not verify(block.validator_public_key, block.header_bytes(), block.signature):
        raise BadSignature("block signature does not verify under validator_public_key")
    for batch in block.batches:
        validate_batch_structure(batch, families)


# --------------------------------------------------------------------------
# applying batches


class _ScratchView:
    """Read view over in-progress writes layered on the committed snapshot."""

    def __init__(self, base: GlobalState):
        self._base = base
        self._writes: dict[str, bytes | None] = {}

    def get(self, address: str) -> bytes | None:
        if address in self._writes:
            return self._writes[address]
        return self._base.get(address)

    def record(self, address: str, value: bytes | None) -> None:
        self._writes[address] = value

    def merge(self, other_writes: dict[str, bytes | None]) -> None:
        self._writes.update(other_writes)

    @property
    def writes(self) -> dict[str, bytes | None]:
        return self._writes


def apply_batches(
    state: GlobalState, batches: Iterable[Batch], families: FamilyRegistry
) -> tuple[GlobalState, StateDelta, list[Event]]:
    """Apply batches in order; atomic per batch.

    Raises InvalidBatch if any transaction in a batch is rejected by its
    family; in that case no writes from that batch survive.
    """
    view = _ScratchView(state)
    write_order: list[str] = []
    events: list[Event] = []
    for batch in batches:
        batch_view = _ScratchView(state)
        batch_view.merge(dict(view.writes))
        batch_events: list[Event] = []
        try:
            for txn in batch.transactions:
                family = families[txn.family_name]
                writes, txn_events = family.apply(
                    txn.payload, txn.signer_public_key, batch_view
                )
                for address, value in writes:
                    batch_view.record(address, value)
                batch_events.extend(txn_events)
        except InvalidTransaction as exc:
            raise InvalidBatch(batch.id, f"{exc.code}: {exc.message}") from exc
        for address in batch_view.writes:
            if address not in write_order:
                write_order.append(address)
        view.merge(batch_view.writes)
        events.extend(batch_events)

    new_state = state.copy()
    delta_entries = []
    seen: set[str] = set()
    for address in write_order:
        if address in seen:
            continue
        seen.add(address)
        value = view.writes[address]
        delta_entries.append(DeltaEntry(address=address, value=value))
        if value is None:
            new_state.delete(address)
        else:
            new_state.set(address, value)
    return new_state, tuple(delta_entries), events


# --------------------------------------------------------------------------
# chain store


class ChainStore:
    """Append-only committed chain plus the committed state snapshot.

    Commits are serialized by the owning node; readers always see the last
    committed snapshot, never mid-block state.
    """

    def __init__(self, families: FamilyRegistry, journal_path: str | Path | None = None):
        self.families = dict(families)
        self.blocks: list[Block] = []
        self.state = GlobalState()
        self.deltas: list[StateDelta] = []
        self.event_log: list[EventRecord] = []
        self._journal_path = Path(journal_path) if journal_path else None

    @property
    def height(self) -> int:
        return len(self.blocks) - 1

    @property
    def head_id(self) -> str:
        return self.blocks[-1].block_id if self.blocks else GENESIS_PREVIOUS_ID

    def block_at(self, height: int) -> Block:
        return self.blocks[height]

    def commit(self, block: Block) -> tuple[StateDelta, list[EventRecord]]:
        """Validate and commit a block; on any failure nothing changes.

        Event order per commit: block-commit, state-delta, then application
        events emitted by the families.
        """
        validate_block_structure(block, self.families)
        expected_height = len(self.blocks)
        if block.height != expected_height or block.previous_block_id != self.head_id:
            raise BrokenChainLink(
                f"block {block.height}/{block.previous_block_id[:16]} does not extend "
                f"head {self.height}/{self.head_id[:16]}"
            )
        new_state, delta, app_events = apply_batches(self.state, block.batches, self.families)
        recomputed = compute_state_root(new_state)
        if recomputed != block.state_root:
            raise StateRootMismatch(
                f"declared root {block.state_root[:16]} != recomputed {recomputed[:16]}"
            )

        records = []
        base_attrs = (("block_id", block.block_id), ("height", str(block.height)))
        ordered = [Event(kind=BLOCK_COMMIT_EVENT, attributes=base_attrs, data={})]
        ordered.append(
            Event(
                kind=STATE_DELTA_EVENT,
                attributes=base_attrs,
                data={"entries": [e.to_dict() for e in delta]},
            )
        )
        ordered.extend(app_events)
        for index, event in enumerate(ordered):
            records.append(
                EventRecord(
                    height=block.height,
                    index=index,
                    kind=event.kind,
                    attributes=event.attributes,
                    data=event.data,
                )
            )

        self.blocks.append(block)
        self.state = new_state
        self.deltas.append(delta)
        self.event_log.extend(records)
        if self._journal_path is not None:
            with self._journal_path.open("a", encoding="utf-8") as fh:
                fh.write(canonical_dumps(block.to_dict()) + "\n")
        return delta, records

    def events_since(self, height: int) -> list[EventRecord]:
        """Events for blocks strictly after the given height, commit order."""
        return [r for r in self.event_log if r.height > height]

    def setting_at(self, key: str, height: int) -> str | None:
        """Value of an on-chain setting as of the committed block at height.

        Scans forward over committed blocks; returns None if never set up to
        and including that height.
        """
        from .addressing import settings_address

        address = settings_address(key)
        if height < 0 or not self.blocks:
            return None
        height = min(height, self.height)
        value: str | None = None
        for h in range(height + 1):
            for entry in self.deltas[h]:
                if entry.address == address and entry.value is not None:
                    value = entry.value.decode("utf-8")
        return value


def verify_chain(blocks: list[Block], families: FamilyRegistry) -> None:
    """Revalidate a block sequence from genesis: links, signatures, roots.

    Raises on the first inconsistency; any single-byte mutation of a
    committed block's header or payload surfaces here.
    """
    replay = ChainStore(families)
    for block in blocks:
        replay.commit(block)


def load_journal(path: str | Path, families: FamilyRegistry) -> ChainStore:
    """Rebuild a chain store by replaying an append-only block journal."""
    store = ChainStore(families)
    journal = Path(path)
    if journal.exists():
        with journal.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    store.commit(Block.from_dict(canonical_loads(line)))
    return store


# --------------------------------------------------------------------------
# proposal building


@dataclass(frozen=True)
class RejectedBatch:
    batch: Batch
    reason: str


def build_block(
    chain: ChainStore,
    batches: Iterable[Batch],
    validator: KeyPair,
    consensus_payload: bytes = b"",
) -> tuple[Block | None, list[Batch], list[RejectedBatch]]:
    """Assemble the next block from candidate batches.

    Batches that fail structural checks or whose transactions are rejected
    against the running state are excluded (never proposed); the returned
    rejects carry the reason for status reporting.
    """
    included: list[Batch] = []
    rejected: list[RejectedBatch] = []
    working = chain.state
    for batch in batches:
        try:
            validate_batch_structure(batch, chain.families)
            working, _, _ = apply_batches(working, [batch], chain.families)
        except (LedgerError, InvalidTransaction) as exc:
            reason = getattr(exc, "reason", None) or getattr(exc, "message", str(exc))
            rejected.append(RejectedBatch(batch=batch, reason=reason))
            continue
        included.append(batch)
    if not included:
        return None, [], rejected
    block = make_block(
        height=len(chain.blocks),
        previous_block_id=chain.head_id,
        batches=included,
        state_root=compute_state_root(working),
        validator=validator,
        consensus_payload=consensus_payload,
    )
    return block, included, rejected


# --------------------------------------------------------------------------
# genesis


@dataclass(frozen=True)
class GenesisConfig:
    validators: tuple[str, ...]
    admin_public_key: str
    settings: Mapping[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "validators": list(self.validators),
            "adminPublicKey": self.admin_public_key,
            "settings": dict(self.settings),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "GenesisConfig":
        return cls(
            validators=tuple(data["validators"]),
            admin_public_key=data["adminPublicKey"],
            settings=dict(data.get("settings", {})),
        )


def build_genesis_block(
    config: GenesisConfig, admin: KeyPair, families: FamilyRegistry
) -> Block:
    """Deterministically derive the height-0 block from a genesis config.

    The initial settings ride in an admin-signed batch; nonces are derived
    from the setting content so every bootstrap of the same config yields
    the same block id.
    """
    if admin.public_key != config.admin_public_key:
        raise MalformedStructure("admin key pair does not match genesis adminPublicKey")
    txns = []
    for key in sorted(config.settings):
        payload = canonical_bytes({"key": key, "value": config.settings[key]})
        nonce = hashlib.sha512(b"genesis:" + payload).digest()[:16]
        txns.append(
            make_transaction("chainge-settings", "1.0", payload, admin, nonce=nonce)
        )
    if not txns:
        raise MalformedStructure("genesis requires at least one initial setting")
    batch = make_batch(txns, admin)
    scratch = ChainStore(families)
    state, _, _ = apply_batches(scratch.state, [batch], families)
    return make_block(
        height=0,
        previous_block_id=GENESIS_PREVIOUS_ID,
        batches=[batch],
        state_root=compute_state_root(state),
        validator=admin,
        consensus_payload=b"genesis",
    )
