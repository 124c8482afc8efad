"""Leader selection, vote messages, pbft bookkeeping, and the validator node."""

import dataclasses
import hashlib

import pytest

from chainge.consensus.engines import (
    EngineKind,
    PbftInstance,
    engine_for_height,
    leader_for_height,
    pbft_primary,
    quorum,
    verify_commit_certificate,
)
from chainge.consensus.messages import (
    COMMIT,
    PRE_PREPARE,
    PREPARE,
    PROPOSAL,
    ConsensusMessage,
    make_message,
    verify_message,
)
from chainge.consensus.sim import build_cluster
from chainge.consensus.validator import ArmTimer, Broadcast, Note, ValidatorNode
from chainge.crypto import EncBlob, generate_keypair
from chainge.families.settings import CONSENSUS_SETTING, SettingsFamily, build_set_setting
from chainge.families.wallet import WalletFamily, add_card_payload, link_payload
from chainge.ledger import build_block, make_batch, make_transaction

from oracles import engine_schedule_oracle

KEYS = [generate_keypair(bytes([i + 1]) * 32) for i in range(4)]
ROSTER = tuple(k.public_key for k in KEYS)


def shaped_blob(label: str) -> EncBlob:
    digest = hashlib.sha512(label.encode()).hexdigest()
    return EncBlob(
        ephemeral_public_key=digest[:64], nonce=digest[64:88], ciphertext=digest[:96]
    )


def card_batch(owner, card_id: str):
    payload = add_card_payload(card_id, f"alias-{card_id}", shaped_blob(card_id))
    txn = make_transaction(
        WalletFamily.family_name, WalletFamily.family_version, payload, owner
    )
    return make_batch([txn], owner)


# --------------------------------------------------------------------------
# leader selection


def test_leader_rotation_is_round_robin():
    picks = [leader_for_height(ROSTER, h) for h in range(8)]
    assert picks == [ROSTER[i % 4] for i in range(8)]


def test_four_validator_roster_height_five_picks_second():
    assert leader_for_height(ROSTER, 5) == ROSTER[1]


def test_pbft_primary_shifts_with_view():
    assert [pbft_primary(ROSTER, 1, v) for v in range(6)] == [
        ROSTER[(1 + v) % 4] for v in range(6)
    ]


def test_quorum_thresholds():
    assert quorum(4) == 3
    assert quorum(7) == 5
    assert quorum(10) == 7
    assert quorum(1) == 1


def test_engine_schedule_matches_hand_model(chain, admin_keys):
    changes = []
    for value in ("pbft", "pbft", "devmode"):
        payload = build_set_setting(CONSENSUS_SETTING, value)
        txn = make_transaction(
            SettingsFamily.family_name, SettingsFamily.family_version, payload, admin_keys
        )
        block, _, _ = build_block(chain, [make_batch([txn], admin_keys)], admin_keys)
        chain.commit(block)
        changes.append((block.height, value))
    got = [engine_for_height(chain, h).value for h in range(1, 7)]
    assert got == engine_schedule_oracle("devmode", changes, 6)


def test_engine_defaults_to_devmode_without_setting(admin_keys):
    from chainge.families import default_families
    from chainge.ledger import ChainStore, GenesisConfig, build_genesis_block

    families = default_families(admin_keys.public_key)
    chain = ChainStore(families)
    config = GenesisConfig(
        validators=(admin_keys.public_key,),
        admin_public_key=admin_keys.public_key,
        settings={"chainge.consensus.algorithm": "pbft"},
    )
    chain.commit(build_genesis_block(config, admin_keys, families))
    # genesis setting governs from the first real block onward
    assert engine_for_height(chain, 1) is EngineKind.PBFT


# --------------------------------------------------------------------------
# vote messages


def test_message_round_trip_and_verify():
    msg = make_message(PREPARE, 3, 1, "ab" * 64, KEYS[0])
    again = ConsensusMessage.from_dict(msg.to_dict())
    assert again == msg
    assert verify_message(again)


def test_message_tamper_fails_verification():
    msg = make_message(COMMIT, 3, 0, "ab" * 64, KEYS[0])
    assert not verify_message(dataclasses.replace(msg, height=4))
    assert not verify_message(dataclasses.replace(msg, view=1))
    assert not verify_message(dataclasses.replace(msg, block_id="cd" * 64))
    assert not verify_message(dataclasses.replace(msg, sender=KEYS[1].public_key))


def test_message_kind_whitelist():
    msg = make_message(PREPARE, 1, 0, "ab" * 64, KEYS[0])
    assert not verify_message(dataclasses.replace(msg, kind="VIEW_CHANGE"))
    assert not verify_message(dataclasses.replace(msg, height=-1))


def test_carried_blocks_are_covered_by_the_signature():
    blocks = [{"block": {"height": 1}, "cert": None}]
    msg = make_message(PRE_PREPARE, 1, 0, "ab" * 64, KEYS[0], blocks=blocks)
    assert verify_message(msg)
    swapped = dataclasses.replace(
        msg, blocks=({"block": {"height": 2}, "cert": None},)
    )
    assert not verify_message(swapped)


# --------------------------------------------------------------------------
# pbft bookkeeping


def make_instance() -> PbftInstance:
    return PbftInstance(height=1, roster=ROSTER)


def test_equivocating_preprepare_is_discarded_and_flagged():
    inst = make_instance()
    first = make_message(PRE_PREPARE, 1, 0, "aa" * 64, KEYS[1])
    second = make_message(PRE_PREPARE, 1, 0, "bb" * 64, KEYS[1])
    assert inst.record_preprepare(first) == "aa" * 64
    assert inst.record_preprepare(second) is None
    assert KEYS[1].public_key in inst.flagged
    # a flagged sender stays ignored
    assert inst.record_preprepare(first) is None


def test_repeated_identical_preprepare_is_idempotent():
    inst = make_instance()
    msg = make_message(PRE_PREPARE, 1, 0, "aa" * 64, KEYS[1])
    assert inst.record_preprepare(msg) == "aa" * 64
    assert inst.record_preprepare(msg) == "aa" * 64
    assert not inst.flagged


def test_prepare_quorum_needs_distinct_senders():
    inst = make_instance()
    block_id = "aa" * 64
    same = make_message(PREPARE, 1, 0, block_id, KEYS[0])
    assert not inst.record_prepare(same)
    assert not inst.record_prepare(same)
    assert not inst.record_prepare(make_message(PREPARE, 1, 0, block_id, KEYS[1]))
    assert inst.record_prepare(make_message(PREPARE, 1, 0, block_id, KEYS[2]))


def test_prepare_quorum_is_per_view():
    inst = make_instance()
    block_id = "aa" * 64
    inst.record_prepare(make_message(PREPARE, 1, 0, block_id, KEYS[0]))
    inst.record_prepare(make_message(PREPARE, 1, 0, block_id, KEYS[1]))
    # third vote arrives in a different view: no quorum at either view
    assert not inst.record_prepare(make_message(PREPARE, 1, 1, block_id, KEYS[2]))


def test_commit_quorum_counts_across_views():
    inst = make_instance()
    block_id = "aa" * 64
    assert not inst.record_commit(make_message(COMMIT, 1, 0, block_id, KEYS[0]))
    assert not inst.record_commit(make_message(COMMIT, 1, 1, block_id, KEYS[1]))
    assert inst.record_commit(make_message(COMMIT, 1, 2, block_id, KEYS[2]))
    cert = inst.certificate(block_id)
    assert len(cert) == 3
    assert verify_commit_certificate(cert, 1, block_id, ROSTER)


def test_commit_lock_is_first_and_final():
    inst = make_instance()
    inst.lock("aa" * 64)
    inst.lock("bb" * 64)
    assert inst.locked_id == "aa" * 64
    assert inst.may_prepare("aa" * 64)
    assert not inst.may_prepare("bb" * 64)


def test_certificate_rejects_duplicates_shortfalls_and_strangers():
    block_id = "aa" * 64
    votes = [make_message(COMMIT, 1, 0, block_id, k).to_dict() for k in KEYS[:3]]
    assert verify_commit_certificate(votes, 1, block_id, ROSTER)
    assert not verify_commit_certificate(votes[:2], 1, block_id, ROSTER)
    assert not verify_commit_certificate([votes[0]] * 3, 1, block_id, ROSTER)
    assert not verify_commit_certificate(votes, 2, block_id, ROSTER)
    assert not verify_commit_certificate(votes, 1, "bb" * 64, ROSTER)
    stranger = generate_keypair(b"x" * 32)
    mixed = votes[:2] + [make_message(COMMIT, 1, 0, block_id, stranger).to_dict()]
    assert not verify_commit_certificate(mixed, 1, block_id, ROSTER)
    assert not verify_commit_certificate([{"kind": COMMIT}], 1, block_id, ROSTER)


# --------------------------------------------------------------------------
# validator node, driven directly


@pytest.fixture()
def cluster():
    nodes, _, _ = build_cluster(4, algorithm="devmode")
    return nodes


def owner_keys():
    return generate_keypair(b"consensus-test-owner-seed-pad-00"[:32])


def test_submission_gossips_pools_and_arms_the_round_timer(cluster):
    node = cluster["n0"]
    batch = card_batch(owner_keys(), "c1")
    status, outs = node.submit_batch(batch)
    assert status == {"status": "PENDING", "batchId": batch.id}
    assert node.batch_status(batch.id) == {"status": "PENDING"}
    kinds = [type(o).__name__ for o in outs]
    assert "Broadcast" in kinds and "ArmTimer" in kinds
    # resubmission reports the tracked status instead of pooling twice
    again, extra = node.submit_batch(batch)
    assert again["status"] == "PENDING"
    assert extra == []
    assert len(node.pool) == 1


def test_structurally_broken_batch_is_rejected_synchronously(cluster):
    node = cluster["n0"]
    bad = dataclasses.replace(card_batch(owner_keys(), "c1"), signature="ab" * 64)
    status, outs = node.submit_batch(bad)
    assert status["status"] == "REJECTED"
    assert status["code"] == "BadSignature"
    assert outs == []
    assert node.batch_status(bad.id) is None


def test_devmode_leader_commits_on_its_round(cluster):
    # height 1 leader is the second roster entry
    leader, follower = cluster["n1"], cluster["n0"]
    batch = card_batch(owner_keys(), "c1")
    _, _ = leader.submit_batch(batch)
    outs = leader.on_timer({"kind": "round"})
    assert leader.chain.height == 1
    assert leader.batch_status(batch.id) == {"status": "COMMITTED", "height": 1}
    proposals = [
        o.payload
        for o in outs
        if isinstance(o, Broadcast) and o.payload.get("type") == "consensus"
    ]
    assert len(proposals) == 1
    follower.receive(proposals[0], from_name="n1")
    assert follower.chain.height == 1
    assert follower.chain.head_id == leader.chain.head_id


def test_devmode_non_leader_waits(cluster):
    node = cluster["n0"]  # not the leader for height 1
    node.submit_batch(card_batch(owner_keys(), "c1"))
    node.on_timer({"kind": "round"})
    assert node.chain.height == 0
    assert len(node.pool) == 1


def test_devmode_proposal_from_wrong_validator_is_ignored(cluster):
    impostor, victim = cluster["n2"], cluster["n0"]
    batch = card_batch(owner_keys(), "c1")
    impostor.submit_batch(batch)
    block, _, _ = build_block(impostor.chain, [batch], impostor.keys)
    msg = make_message(
        PROPOSAL,
        1,
        0,
        block.block_id,
        impostor.keys,
        blocks=[{"block": block.to_dict(), "cert": None}],
    )
    victim.receive({"type": "consensus", "message": msg.to_dict()}, from_name="n2")
    assert victim.chain.height == 0


def test_conflicting_pool_batch_goes_invalid_after_commit(cluster):
    leader = cluster["n1"]
    owner = owner_keys()
    first = card_batch(owner, "c1")
    duplicate = card_batch(owner, "c1")  # same card id, fresh nonce
    leader.submit_batch(first)
    leader.submit_batch(duplicate)
    leader.on_timer({"kind": "round"})
    statuses = {leader.batch_status(b.id)["status"] for b in (first, duplicate)}
    assert statuses == {"COMMITTED", "INVALID"}
    assert leader.pool == {}


def test_dependent_pool_batch_survives_the_sweep(cluster):
    # a link gossiped before its card's add commits must not be swept
    leader = cluster["n1"]
    owner = owner_keys()
    add = card_batch(owner, "c1")
    link = make_batch(
        [
            make_transaction(
                WalletFamily.family_name,
                WalletFamily.family_version,
                link_payload("c1", "music", "user-m", shaped_blob("svc"), 999),
                owner,
            )
        ],
        owner,
    )
    for node in cluster.values():
        node.submit_batch(link)
        node.submit_batch(add)

    # drive the rotating devmode leaders; the link must never be swept
    # while it waits for the add, whatever the batch id order
    for height in (1, 2):
        proposer = cluster[f"n{height % 4}"]
        outs = proposer.on_timer({"kind": "round"})
        for out in outs:
            if isinstance(out, Broadcast) and out.payload.get("type") == "consensus":
                for name, node in cluster.items():
                    if node is not proposer:
                        node.receive(out.payload, from_name=proposer.name)
        assert all(
            node.batch_status(b.id)["status"] != "INVALID"
            for node in cluster.values()
            for b in (add, link)
        )

    for node in cluster.values():
        assert node.batch_status(add.id)["status"] == "COMMITTED"
        assert node.batch_status(link.id)["status"] == "COMMITTED"


def test_followers_sweep_dead_batches_on_their_own_rounds(cluster):
    leader, follower = cluster["n1"], cluster["n0"]
    owner = owner_keys()
    first = card_batch(owner, "c1")
    leader.submit_batch(first)
    outs = leader.on_timer({"kind": "round"})
    proposal = next(
        o.payload
        for o in outs
        if isinstance(o, Broadcast) and o.payload.get("type") == "consensus"
    )
    follower.receive(proposal, from_name="n1")

    # a late duplicate lands on a node that will never lead its height
    duplicate = card_batch(owner, "c1")
    follower.submit_batch(duplicate)
    follower.on_timer({"kind": "round"})
    status = follower.batch_status(duplicate.id)
    assert status["status"] == "INVALID"
    assert status["code"] == "DuplicateCard"
    assert follower.pool == {}


def test_sync_fills_a_lagging_node(cluster):
    leader, laggard = cluster["n1"], cluster["n3"]
    batch = card_batch(owner_keys(), "c1")
    leader.submit_batch(batch)
    leader.on_timer({"kind": "round"})
    assert laggard.chain.height == 0
    ping = laggard.make_sync_ping()
    replies = leader.receive(ping.payload, from_name="n3")
    bundles = [r.payload for r in replies if r.payload.get("type") == "sync_blocks"]
    assert len(bundles) == 1
    laggard.receive(bundles[0], from_name="n1")
    assert laggard.chain.height == 1
    assert laggard.batch_status(batch.id)["status"] == "COMMITTED"


def test_recovery_rearms_the_round_timer(cluster):
    node = cluster["n1"]
    node.submit_batch(card_batch(owner_keys(), "c1"))
    node._round_armed = True  # the armed timer fired while the node was down
    outs = node.on_recover()
    rounds = [o for o in outs if isinstance(o, ArmTimer) and o.payload == {"kind": "round"}]
    assert len(rounds) == 1
    node.on_timer({"kind": "round"})
    assert node.chain.height == 1


def test_pbft_cluster_commits_through_vote_exchange():
    nodes, _, _ = build_cluster(4, algorithm="pbft")
    batch = card_batch(owner_keys(), "c1")
    inboxes: list[tuple[str, str, dict]] = []

    def fanout(source: str, outs):
        for out in outs:
            if isinstance(out, Broadcast):
                for dest in sorted(nodes):
                    if dest != source:
                        inboxes.append((dest, source, out.payload))

    _, outs = nodes["n0"].submit_batch(batch)
    fanout("n0", outs)
    while inboxes:
        dest, source, envelope = inboxes.pop(0)
        fanout(dest, nodes[dest].receive(envelope, from_name=source))
    # primary for height 1 view 0 is n1
    fanout("n1", nodes["n1"].on_timer({"kind": "round"}))
    while inboxes:
        dest, source, envelope = inboxes.pop(0)
        fanout(dest, nodes[dest].receive(envelope, from_name=source))
    heights = {nodes[n].chain.height for n in nodes}
    assert heights == {1}
    heads = {nodes[n].chain.head_id for n in nodes}
    assert len(heads) == 1
    assert all(nodes[n].batch_status(batch.id)["status"] == "COMMITTED" for n in nodes)
