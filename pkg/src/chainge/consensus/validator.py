"""A validator node: batch pool, consensus participation, and catch-up.

Nodes are pure reactors: every entry point consumes one input (a batch
submission, a network envelope, a timer) and returns the outbound actions
it wants performed. No wall clock, no randomness, no IO. The discrete
event simulator and the HTTP layer both drive the same object.

Anti-entropy keeps a faulty network honest: nodes periodically announce
their height and pending batch ids; better-informed peers respond with
certified blocks and missing batches. A PBFT block travels with its
commit certificate (2f+1 signed COMMITs), a devmode block is
self-certifying through its leader's signature.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from ..canonical import canonical_bytes
from ..crypto import KeyPair
from ..ledger import (
    Batch,
    Block,
    ChainStore,
    LedgerError,
    apply_batches,
    build_block,
    validate_batch_structure,
)
from .engines import (
    EngineKind,
    PbftInstance,
    engine_for_height,
    leader_for_height,
    pbft_primary,
    verify_commit_certificate,
)
from .messages import (
    COMMIT,
    PRE_PREPARE,
    PREPARE,
    PROPOSAL,
    ConsensusMessage,
    make_message,
    verify_message,
)

PENDING = "PENDING"
COMMITTED = "COMMITTED"
INVALID = "INVALID"

# timer payload kinds
ROUND_TIMER = "round"
VIEW_TIMER = "view"


@dataclass(frozen=True)
class Broadcast:
    payload: dict


@dataclass(frozen=True)
class Unicast:
    dest: str
    payload: dict


@dataclass(frozen=True)
class ArmTimer:
    delay: int
    payload: dict


@dataclass(frozen=True)
class Note:
    kind: str
    payload: dict


Outbound = Broadcast | Unicast | ArmTimer | Note


class ValidatorNode:
    def __init__(
        self,
        name: str,
        keys: KeyPair,
        chain: ChainStore,
        roster: tuple[str, ...],
        names: dict[str, str],
        round_interval: int = 10,
        view_timeout: int = 60,
        sync_chunk: int = 4,
    ):
        self.name = name
        self.keys = keys
        self.chain = chain
        self.roster = roster
        self.names = names  # validator public key -> node name
        self.round_interval = round_interval
        self.view_timeout = view_timeout
        self.sync_chunk = sync_chunk

        self.pool: dict[str, Batch] = {}
        self.statuses: dict[str, dict] = {}
        self.instance: PbftInstance | None = None
        self.pending_decide: str | None = None
        self.future: dict[int, list[dict]] = {}
        self.certs: dict[int, list[dict]] = {}
        self._round_armed = False
        self._proposed_views: set[tuple[int, int]] = set()

    # ------------------------------------------------------------- helpers

    @property
    def work_height(self) -> int:
        return self.chain.height + 1

    def engine(self, height: int) -> EngineKind:
        return engine_for_height(self.chain, height)

    def batch_status(self, batch_id: str) -> dict | None:
        return self.statuses.get(batch_id)

    def _arm_round(self) -> list[Outbound]:
        if self._round_armed:
            return []
        self._round_armed = True
        return [ArmTimer(self.round_interval, {"kind": ROUND_TIMER})]

    def _arm_view(self, height: int, view: int) -> list[Outbound]:
        return [ArmTimer(self.view_timeout, {"kind": VIEW_TIMER, "height": height, "view": view})]

    def _consensus_payload(self, engine: EngineKind) -> bytes:
        # view-independent: a proposal carried across views keeps its id
        doc: dict[str, Any] = {"engine": engine.value}
        return canonical_bytes(doc)

    def _pool_batches(self) -> list[Batch]:
        return [self.pool[batch_id] for batch_id in sorted(self.pool)]

    # ------------------------------------------------------------ batches

    def submit_batch(self, batch: Batch) -> tuple[dict, list[Outbound]]:
        """Synchronous structural check; accepted batches enter the pool
        and gossip to peers."""
        try:
            validate_batch_structure(batch, self.chain.families)
        except LedgerError as exc:
            return {"status": "REJECTED", "code": exc.code, "message": exc.message}, []
        existing = self.statuses.get(batch.id)
        if existing is not None:
            return dict(existing, batchId=batch.id), []
        self.statuses[batch.id] = {"status": PENDING}
        self.pool[batch.id] = batch
        out: list[Outbound] = [
            Broadcast({"type": "batches", "batches": [batch.to_dict()]}),
            Note("submit", {"batch_id": batch.id}),
        ]
        out += self._arm_round()
        return {"status": PENDING, "batchId": batch.id}, out

    def _ingest_batches(self, raw_batches: list[dict]) -> list[Outbound]:
        out: list[Outbound] = []
        for raw in raw_batches:
            try:
                batch = Batch.from_dict(raw)
                validate_batch_structure(batch, self.chain.families)
            except LedgerError:
                continue
            if batch.id in self.statuses:
                continue
            self.statuses[batch.id] = {"status": PENDING}
            self.pool[batch.id] = batch
        if self.pool:
            out += self._arm_round()
        return out

    def _sweep_pool(self) -> None:
        """Drop pool batches that can never commit.

        Greedy fixed point: apply whatever applies, in id order, until a
        full pass makes no progress. A batch still failing then conflicts
        with committed state or with a pool batch that will commit first;
        a batch whose prerequisite is merely uncommitted survives the
        sweep because the prerequisite applies in an earlier pass.
        """
        state = self.chain.state
        remaining = self._pool_batches()
        failures: dict[str, LedgerError] = {}
        progressed = True
        while progressed and remaining:
            progressed = False
            still: list[Batch] = []
            for batch in remaining:
                try:
                    state, _, _ = apply_batches(state, [batch], self.chain.families)
                except LedgerError as exc:
                    failures[batch.id] = exc
                    still.append(batch)
                else:
                    progressed = True
                    failures.pop(batch.id, None)
            remaining = still
        for batch in remaining:
            exc = failures[batch.id]
            self.statuses[batch.id] = {
                "status": INVALID,
                "code": getattr(exc.__cause__, "code", None) or exc.code,
                "message": getattr(exc, "reason", None) or exc.message,
            }
            del self.pool[batch.id]

    # -------------------------------------------------------------- timers

    def on_timer(self, payload: dict) -> list[Outbound]:
        kind = payload.get("kind")
        if kind == ROUND_TIMER:
            return self._on_round_timer()
        if kind == VIEW_TIMER:
            return self._on_view_timer(payload["height"], payload["view"])
        return []

    def _on_round_timer(self) -> list[Outbound]:
        self._round_armed = False
        self._sweep_pool()
        if not self.pool and self.instance is None:
            return []
        out: list[Outbound] = []
        height = self.work_height
        engine = self.engine(height)
        if engine is EngineKind.DEVMODE:
            out += self._devmode_round(height)
        else:
            out += self._pbft_round(height)
        if self.pool or self.instance is not None:
            out += self._arm_round()
        return out

    def _devmode_round(self, height: int) -> list[Outbound]:
        if leader_for_height(self.roster, height) != self.keys.public_key:
            return []
        block, _, _ = build_block(
            self.chain,
            self._pool_batches(),
            self.keys,
            consensus_payload=self._consensus_payload(EngineKind.DEVMODE),
        )
        if block is None:
            return []
        out = self._commit_block(block, cert=None)
        out.append(
            Broadcast(
                {
                    "type": "consensus",
                    "message": make_message(
                        PROPOSAL,
                        height,
                        0,
                        block.block_id,
                        self.keys,
                        blocks=[{"block": block.to_dict(), "cert": None}],
                    ).to_dict(),
                }
            )
        )
        return out

    def _pbft_round(self, height: int) -> list[Outbound]:
        out: list[Outbound] = []
        if self.instance is None or self.instance.height != height:
            self.instance = PbftInstance(height=height, roster=self.roster)
            out += self._arm_view(height, 0)
        inst = self.instance
        if pbft_primary(self.roster, height, inst.view) == self.keys.public_key:
            out += self._pbft_propose(inst)
        return out

    def _pbft_propose(self, inst: PbftInstance) -> list[Outbound]:
        key = (inst.height, inst.view)
        if key in self._proposed_views:
            return []
        block = None
        if inst.locked_id is not None:
            block_dict = inst.proposals.get(inst.locked_id)
            if block_dict is None:
                return []  # locked but missing content; sync will supply it
            block = Block.from_dict(block_dict)
        else:
            block, _, _ = build_block(
                self.chain,
                self._pool_batches(),
                self.keys,
                consensus_payload=self._consensus_payload(EngineKind.PBFT),
            )
            if block is None:
                return []
        self._proposed_views.add(key)
        msg = make_message(
            PRE_PREPARE,
            inst.height,
            inst.view,
            block.block_id,
            self.keys,
            blocks=[{"block": block.to_dict(), "cert": None}],
        )
        out = [Broadcast({"type": "consensus", "message": msg.to_dict()})]
        out += self._handle_pbft_message(msg)  # count our own proposal
        return out

    def _on_view_timer(self, height: int, view: int) -> list[Outbound]:
        inst = self.instance
        if inst is None or inst.height != height or height != self.work_height:
            return []
        if inst.view != view:
            return []
        inst.view = view + 1
        out: list[Outbound] = [
            Note("view_change", {"height": height, "view": inst.view}),
        ]
        if pbft_primary(self.roster, height, inst.view) == self.keys.public_key:
            out += self._pbft_propose(inst)
        out += self._arm_view(height, inst.view)
        return out

    def on_recover(self) -> list[Outbound]:
        """Re-arm timers that fired (and were lost) while the node was down."""
        self._round_armed = False
        out: list[Outbound] = []
        if self.pool or self.instance is not None:
            out += self._arm_round()
        if self.instance is not None:
            out += self._arm_view(self.instance.height, self.instance.view)
        return out

    # ------------------------------------------------------------ receive

    def receive(self, envelope: dict, from_name: str | None = None) -> list[Outbound]:
        etype = envelope.get("type")
        if etype == "consensus":
            try:
                msg = ConsensusMessage.from_dict(envelope["message"])
            except (KeyError, TypeError):
                return []
            if not verify_message(msg) or msg.sender not in self.roster:
                return []
            return self._dispatch_consensus(msg)
        if etype == "batches":
            return self._ingest_batches(envelope.get("batches", []))
        if etype == "sync_ping":
            return self._on_sync_ping(envelope, from_name)
        if etype == "sync_blocks":
            return self._on_sync_blocks(envelope)
        return []

    def _dispatch_consensus(self, msg: ConsensusMessage) -> list[Outbound]:
        height = msg.height
        if height <= self.chain.height:
            return []  # already decided locally; sender catches up via sync
        if height > self.work_height:
            bucket = self.future.setdefault(height, [])
            if len(bucket) < 256:
                bucket.append(msg.to_dict())
            return []
        engine = self.engine(height)
        if engine is EngineKind.DEVMODE:
            return self._handle_devmode_message(msg)
        return self._handle_pbft_message(msg)

    def _handle_devmode_message(self, msg: ConsensusMessage) -> list[Outbound]:
        if msg.kind != PROPOSAL or not msg.blocks:
            return []
        if msg.sender != leader_for_height(self.roster, msg.height):
            return []
        try:
            block = Block.from_dict(msg.blocks[0]["block"])
        except (LedgerError, KeyError, TypeError):
            return []
        if block.height != msg.height or block.block_id != msg.block_id:
            return []
        if block.validator_public_key != msg.sender:
            return []
        try:
            return self._commit_block(block, cert=None)
        except LedgerError as exc:
            return [Note("reject", {"height": block.height, "reason": exc.message})]

    def _handle_pbft_message(self, msg: ConsensusMessage) -> list[Outbound]:
        height = msg.height
        if self.instance is None or self.instance.height != height:
            self.instance = PbftInstance(height=height, roster=self.roster)
            pre = self._arm_view(height, self.instance.view)
        else:
            pre = []
        inst = self.instance
        out: list[Outbound] = pre

        if msg.kind == PRE_PREPARE:
            if msg.sender != pbft_primary(self.roster, height, msg.view):
                return out
            if msg.view < inst.view:
                return out
            if not msg.blocks:
                return out
            try:
                block = Block.from_dict(msg.blocks[0]["block"])
            except (LedgerError, KeyError, TypeError):
                return out
            if block.block_id != msg.block_id or block.height != height:
                return out
            accepted = inst.record_preprepare(msg)
            if accepted is None:
                return out + [Note("flagged", {"sender": self.names.get(msg.sender, "?")})]
            if msg.view > inst.view:
                inst.view = msg.view  # the network has moved on; follow it
                out.append(Note("view_change", {"height": height, "view": inst.view}))
                out += self._arm_view(height, inst.view)
            inst.proposals[block.block_id] = msg.blocks[0]["block"]
            if inst.may_prepare(block.block_id) and msg.view not in inst.prepared_sent:
                inst.prepared_sent.add(msg.view)
                prepare = make_message(PREPARE, height, msg.view, block.block_id, self.keys)
                out.append(Broadcast({"type": "consensus", "message": prepare.to_dict()}))
                out += self._handle_pbft_message(prepare)
            out += self._maybe_finish_decide()
            return out

        if msg.kind == PREPARE:
            if msg.view < inst.view:
                # quorums from views this node abandoned must not lock it:
                # otherwise two camps can lock different ids and wedge forever
                return out
            reached = inst.record_prepare(msg)
            if reached and inst.may_prepare(msg.block_id):
                inst.lock(msg.block_id)
                if msg.view not in inst.commit_sent_views:
                    inst.commit_sent_views.add(msg.view)
                    commit = make_message(COMMIT, height, msg.view, msg.block_id, self.keys)
                    out.append(Broadcast({"type": "consensus", "message": commit.to_dict()}))
                    out += self._handle_pbft_message(commit)
            return out

        if msg.kind == COMMIT:
            if inst.record_commit(msg):
                out += self._decide(msg.block_id)
            return out

        if msg.kind == PROPOSAL:
            # a decided peer shares its block with the commit certificate;
            # that proof overrides any local lock
            if not msg.blocks:
                return out
            item = msg.blocks[0]
            cert = item.get("cert") or []
            if not verify_commit_certificate(cert, height, msg.block_id, self.roster):
                return out
            try:
                block = Block.from_dict(item["block"])
            except (LedgerError, KeyError, TypeError):
                return out
            if block.block_id != msg.block_id or block.height != height:
                return out
            try:
                return out + self._commit_block(block, cert=cert)
            except LedgerError as exc:
                return out + [Note("reject", {"height": height, "reason": exc.message})]

        return out

    def _decide(self, block_id: str) -> list[Outbound]:
        inst = self.instance
        if inst is None:
            return []
        block_dict = inst.proposals.get(block_id)
        if block_dict is None:
            # quorum observed but content never arrived; sync fills the gap
            self.pending_decide = block_id
            return []
        cert = inst.certificate(block_id)
        view = inst.view
        try:
            block = Block.from_dict(block_dict)
            out = self._commit_block(block, cert=cert)
        except LedgerError as exc:
            return [Note("reject", {"height": inst.height, "reason": exc.message})]
        # share the decision proof: peers stuck on a losing lock commit from it
        share = make_message(
            PROPOSAL,
            block.height,
            view,
            block.block_id,
            self.keys,
            blocks=[{"block": block_dict, "cert": cert}],
        )
        out.append(Broadcast({"type": "consensus", "message": share.to_dict()}))
        return out

    def _maybe_finish_decide(self) -> list[Outbound]:
        if self.pending_decide is None or self.instance is None:
            return []
        inst = self.instance
        if len(inst.commits.get(self.pending_decide, {})) >= inst.need():
            target = self.pending_decide
            self.pending_decide = None
            return self._decide(target)
        return []

    # ---------------------------------------------------------- anti-entropy

    def make_sync_ping(self) -> Broadcast:
        return Broadcast(
            {
                "type": "sync_ping",
                "height": self.chain.height,
                "batchIds": sorted(self.pool),
            }
        )

    def _on_sync_ping(self, envelope: dict, from_name: str | None) -> list[Outbound]:
        if from_name is None:
            return []
        out: list[Outbound] = []
        peer_height = envelope.get("height", -1)
        if isinstance(peer_height, int) and peer_height < self.chain.height:
            blocks = []
            top = min(peer_height + self.sync_chunk, self.chain.height)
            for h in range(peer_height + 1, top + 1):
                blocks.append(
                    {"block": self.chain.block_at(h).to_dict(), "cert": self.certs.get(h)}
                )
            out.append(Unicast(from_name, {"type": "sync_blocks", "blocks": blocks}))
        peer_ids = set(envelope.get("batchIds", ()))
        missing = [
            self.pool[batch_id].to_dict()
            for batch_id in sorted(self.pool)
            if batch_id not in peer_ids
        ]
        if missing:
            out.append(Unicast(from_name, {"type": "batches", "batches": missing}))
        return out

    def _on_sync_blocks(self, envelope: dict) -> list[Outbound]:
        out: list[Outbound] = []
        for item in envelope.get("blocks", ()):
            try:
                block = Block.from_dict(item["block"])
            except (LedgerError, KeyError, TypeError):
                continue
            if block.height != self.work_height:
                continue
            engine = self.engine(block.height)
            if engine is EngineKind.DEVMODE:
                if block.validator_public_key != leader_for_height(self.roster, block.height):
                    continue
                cert = None
            else:
                cert = item.get("cert") or []
                if not verify_commit_certificate(cert, block.height, block.block_id, self.roster):
                    continue
            try:
                out += self._commit_block(block, cert=cert)
            except LedgerError as exc:
                out.append(Note("reject", {"height": block.height, "reason": exc.message}))
        return out

    # -------------------------------------------------------------- commit

    def _commit_block(self, block: Block, cert: list[dict] | None) -> list[Outbound]:
        """Commit and do the bookkeeping every new head requires."""
        engine = self.engine(block.height)
        delta, records = self.chain.commit(block)
        if cert:
            self.certs[block.height] = cert
        batch_ids = [b.id for b in block.batches]
        for batch_id in batch_ids:
            self.statuses[batch_id] = {"status": COMMITTED, "height": block.height}
            self.pool.pop(batch_id, None)
        self._sweep_pool()
        self.instance = None
        self.pending_decide = None
        self._proposed_views = {k for k in self._proposed_views if k[0] > block.height}

        out: list[Outbound] = [
            Note(
                "commit",
                {
                    "height": block.height,
                    "block_id": block.block_id,
                    "batch_ids": batch_ids,
                    "engine": engine.value,
                    "state_root": block.state_root,
                },
            )
        ]
        for record in records:
            out.append(
                Note(
                    "event",
                    {"height": record.height, "index": record.index, "kind": record.kind},
                )
            )
        # messages for the next height may have arrived early
        for raw in self.future.pop(self.work_height, []):
            out += self._dispatch_consensus(ConsensusMessage.from_dict(raw))
        if self.pool:
            out += self._arm_round()
        return out
