"""Signed consensus messages and the transport envelopes that carry them.

Consensus traffic uses exactly four kinds. PRE_PREPARE and PROPOSAL may
carry block payloads (and, for catch-up, commit certificates); the
signature covers a digest of that payload so nothing rides along
unauthenticated. Batch gossip and anti-entropy sync are transport-level
envelopes, not consensus messages.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping

from ..canonical import canonical_bytes, sha512_hex
from ..crypto import KeyPair, sign, verify

PRE_PREPARE = "PRE_PREPARE"
PREPARE = "PREPARE"
COMMIT = "COMMIT"
PROPOSAL = "PROPOSAL"

KINDS = (PRE_PREPARE, PREPARE, COMMIT, PROPOSAL)


@dataclass(frozen=True)
class ConsensusMessage:
    kind: str
    height: int
    view: int
    block_id: str
    sender: str  # validator public key
    signature: str
    # blocks: [{"block": <block dict>, "cert": [<commit msg dict>, ...] | None}]
    # used by PRE_PREPARE (single proposal) and PROPOSAL (devmode / catch-up)
    blocks: tuple[Mapping[str, Any], ...] = field(default_factory=tuple)

    def payload_digest(self) -> str:
        return sha512_hex(canonical_bytes(list(self.blocks)))

    def signed_bytes(self) -> bytes:
        return canonical_bytes(
            {
                "kind": self.kind,
                "height": self.height,
                "view": self.view,
                "blockId": self.block_id,
                "payloadDigest": self.payload_digest(),
            }
        )

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "height": self.height,
            "view": self.view,
            "blockId": self.block_id,
            "sender": self.sender,
            "signature": self.signature,
            "blocks": list(self.blocks),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ConsensusMessage":
        return cls(
            kind=data["kind"],
            height=data["height"],
            view=data["view"],
            block_id=data["blockId"],
            sender=data["sender"],
            signature=data["signature"],
            blocks=tuple(data.get("blocks", ())),
        )


def make_message(
    kind: str,
    height: int,
    view: int,
    block_id: str,
    signer: KeyPair,
    blocks: list[dict] | None = None,
) -> ConsensusMessage:
    if kind not in KINDS:
        raise ValueError(f"unknown consensus message kind {kind!r}")
    msg = ConsensusMessage(
        kind=kind,
        height=height,
        view=view,
        block_id=block_id,
        sender=signer.public_key,
        signature="",
        blocks=tuple(blocks or ()),
    )
    return ConsensusMessage(
        **{**msg.__dict__, "signature": sign(signer.private_key, msg.signed_bytes())}
    )


def verify_message(msg: ConsensusMessage) -> bool:
    if msg.kind not in KINDS or msg.height < 0 or msg.view < 0:
        return False
    return verify(msg.sender, msg.signed_bytes(), msg.signature)
