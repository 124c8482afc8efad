from __future__ import annotations

import random

import pytest

from chainge.addressing import wallet_address
from chainge.canonical import canonical_bytes, canonical_loads
from chainge.cards import CardData, CardValidationError, card_record_parse
from chainge.crypto import AuthenticationFailure, generate_keypair, open_blob, seal, EncBlob
from chainge.families.base import InvalidTransaction
from chainge.families.wallet import (
    CARD_UPDATED_EVENT,
    WalletFamily,
    add_card_payload,
    build_add_card,
    build_link_subscription,
    build_remove_card,
    build_update_card,
    compute_outgoings,
    link_payload,
    parse_wallet,
    remove_payload,
    update_payload,
)

from conftest import FROZEN_TODAY, VALID_CARD_NUMBERS
from oracles import WalletOracle


class DictState:
    def __init__(self):
        self.entries = {}

    def get(self, address):
        return self.entries.get(address)

    def apply(self, writes):
        for address, value in writes:
            if value is None:
                self.entries.pop(address, None)
            else:
                self.entries[address] = value


@pytest.fixture
def family():
    return WalletFamily()


@pytest.fixture
def owner():
    return generate_keypair(b"wallet-family-owner-seed-00000000"[:32])


@pytest.fixture
def state():
    return DictState()


def blob_for(keys, payload=b"record"):
    return seal(keys.public_key, payload)


def run(family, state, payload, signer):
    writes, events = family.apply(payload, signer.public_key, state)
    state.apply(writes)
    return events


def wallet_of(state, signer):
    raw = state.get(wallet_address(signer.public_key))
    return parse_wallet(raw) if raw is not None else None


# ------------------------------------------------------------------ actions


def test_add_card_from_empty(family, state, owner):
    events = run(family, state, add_card_payload("c1", "main", blob_for(owner)), owner)
    assert events == []
    wallet = wallet_of(state, owner)
    assert wallet["ownerPublicKey"] == owner.public_key
    assert len(wallet["cards"]) == 1
    assert wallet["cards"][0]["subscriptions"] == []


def test_add_card_duplicate(family, state, owner):
    payload = add_card_payload("c1", "main", blob_for(owner))
    run(family, state, payload, owner)
    before = dict(state.entries)
    with pytest.raises(InvalidTransaction) as exc:
        family.apply(add_card_payload("c1", "other", blob_for(owner)), owner.public_key, state)
    assert exc.value.code == "DuplicateCard"
    assert state.entries == before


def test_link_unknown_card(family, state, owner):
    with pytest.raises(InvalidTransaction) as exc:
        family.apply(link_payload("ghost", "s1", "u1", blob_for(owner), 999), owner.public_key, state)
    assert exc.value.code == "UnknownCard"


def test_link_and_duplicate_link(family, state, owner):
    run(family, state, add_card_payload("c1", "main", blob_for(owner)), owner)
    events = run(family, state, link_payload("c1", "s1", "u1", blob_for(owner), 999), owner)
    assert [e.kind for e in events] == [CARD_UPDATED_EVENT]
    with pytest.raises(InvalidTransaction) as exc:
        family.apply(link_payload("c1", "s1", "u1", blob_for(owner), 999), owner.public_key, state)
    assert exc.value.code == "DuplicateLink"
    # same service, different account id is a different link
    run(family, state, link_payload("c1", "s1", "u2", blob_for(owner), 500), owner)
    assert len(wallet_of(state, owner)["cards"][0]["subscriptions"]) == 2


def test_update_replaces_every_blob(family, state, owner):
    s1 = generate_keypair(b"service-one-seed-0000000000000000"[:32])
    s2 = generate_keypair(b"service-two-seed-0000000000000000"[:32])
    run(family, state, add_card_payload("c1", "main", blob_for(owner, b"old")), owner)
    run(family, state, link_payload("c1", "s1", "u1", blob_for(s1, b"old"), 999), owner)
    run(family, state, link_payload("c1", "s2", "u2", blob_for(s2, b"old"), 1299), owner)

    new_links = [
        {"subscriptionType": "s1", "userID": "u1", "encService": blob_for(s1, b"new")},
        {"subscriptionType": "s2", "userID": "u2", "encService": blob_for(s2, b"new")},
    ]
    events = run(family, state, update_payload("c1", blob_for(owner, b"new"), new_links), owner)
    assert [e.kind for e in events] == [CARD_UPDATED_EVENT]
    event = events[0]
    assert sorted(event.attribute_values("subscription_type")) == ["s1", "s2"]
    assert event.attribute_values("card_id") == ["c1"]
    assert event.attribute_values("owner") == [wallet_address(owner.public_key)]
    assert len(event.data["links"]) == 2

    card = wallet_of(state, owner)["cards"][0]
    assert open_blob(owner.private_key, EncBlob.from_dict(card["encUser"])) == b"new"
    for sub, keys in zip(card["subscriptions"], [s1, s2]):
        assert open_blob(keys.private_key, EncBlob.from_dict(sub["encService"])) == b"new"
    # costs survive an update untouched
    assert [s["monthlyCost"] for s in card["subscriptions"]] == [999, 1299]


def test_update_coverage_mismatch(family, state, owner):
    s1 = generate_keypair(b"service-one-seed-0000000000000000"[:32])
    s2 = generate_keypair(b"service-two-seed-0000000000000000"[:32])
    run(family, state, add_card_payload("c1", "main", blob_for(owner)), owner)
    run(family, state, link_payload("c1", "s1", "u1", blob_for(s1), 999), owner)
    run(family, state, link_payload("c1", "s2", "u2", blob_for(s2), 1299), owner)
    short = [{"subscriptionType": "s1", "userID": "u1", "encService": blob_for(s1)}]
    with pytest.raises(InvalidTransaction) as exc:
        family.apply(update_payload("c1", blob_for(owner), short), owner.public_key, state)
    assert exc.value.code == "LinkCoverageMismatch"
    extra = short + [
        {"subscriptionType": "s2", "userID": "u2", "encService": blob_for(s2)},
        {"subscriptionType": "s3", "userID": "u3", "encService": blob_for(s2)},
    ]
    with pytest.raises(InvalidTransaction) as exc:
        family.apply(update_payload("c1", blob_for(owner), extra), owner.public_key, state)
    assert exc.value.code == "LinkCoverageMismatch"


def test_update_card_with_no_links(family, state, owner):
    run(family, state, add_card_payload("c1", "main", blob_for(owner, b"old")), owner)
    events = run(family, state, update_payload("c1", blob_for(owner, b"new"), []), owner)
    assert [e.kind for e in events] == [CARD_UPDATED_EVENT]
    assert events[0].data["links"] == []


def test_remove_card(family, state, owner):
    run(family, state, add_card_payload("c1", "main", blob_for(owner)), owner)
    run(family, state, link_payload("c1", "s1", "u1", blob_for(owner), 999), owner)
    events = run(family, state, remove_payload("c1"), owner)
    assert events == []  # services are never told to cancel
    wallet = wallet_of(state, owner)
    assert wallet["cards"] == []
    assert "c1" not in canonical_bytes(wallet).decode()
    with pytest.raises(InvalidTransaction) as exc:
        family.apply(remove_payload("c1"), owner.public_key, state)
    assert exc.value.code == "UnknownCard"


def test_owner_isolation(family, state, owner):
    other = generate_keypair(b"other-owner-seed-0000000000000000"[:32])
    run(family, state, add_card_payload("c1", "main", blob_for(owner)), owner)
    snapshot = state.get(wallet_address(owner.public_key))
    # same card id signed by someone else lands in their own wallet
    run(family, state, add_card_payload("c1", "theirs", blob_for(other)), other)
    assert state.get(wallet_address(owner.public_key)) == snapshot
    assert wallet_of(state, other)["ownerPublicKey"] == other.public_key


@pytest.mark.parametrize(
    "payload",
    [
        b"not json",
        b"[1,2]",
        b'{"action":"SET_FIRE"}',
        b'{"action":"ADD_CARD","cardId":"","cardAlias":"a","encUser":{}}',
        b'{"action":"ADD_CARD","cardId":"c1","cardAlias":"a","encUser":{"nope":1}}',
        b'{"action":"LINK_SUBSCRIPTION","cardId":"c1"}',
        b'{"action":"UPDATE_CARD","cardId":"c1","encUser":{},"links":"zzz"}',
        b'{"action":"REMOVE_CARD"}',
    ],
)
def test_malformed_payloads(family, state, owner, payload):
    with pytest.raises(InvalidTransaction) as exc:
        family.apply(payload, owner.public_key, state)
    assert exc.value.code in ("MalformedPayload", "UnknownCard")


def test_costs_must_be_integer_minor_units(family, state, owner):
    run(family, state, add_card_payload("c1", "main", blob_for(owner)), owner)
    for bad_cost in ("9.99", 9.99, -1, True, None):
        doc = canonical_loads(link_payload("c1", "s1", "u1", blob_for(owner), 0))
        doc["monthlyCost"] = bad_cost
        with pytest.raises(InvalidTransaction) as exc:
            family.apply(canonical_bytes(doc), owner.public_key, state)
        assert exc.value.code == "MalformedPayload"


def test_duplicate_links_in_update_rejected(family, state, owner):
    run(family, state, add_card_payload("c1", "main", blob_for(owner)), owner)
    run(family, state, link_payload("c1", "s1", "u1", blob_for(owner), 1), owner)
    twice = [
        {"subscriptionType": "s1", "userID": "u1", "encService": blob_for(owner)},
        {"subscriptionType": "s1", "userID": "u1", "encService": blob_for(owner)},
    ]
    with pytest.raises(InvalidTransaction) as exc:
        family.apply(update_payload("c1", blob_for(owner), twice), owner.public_key, state)
    assert exc.value.code == "MalformedPayload"


# ----------------------------------------------------------------- builders


def good_card(i=0):
    return CardData(VALID_CARD_NUMBERS[i], "12/29", "123")


def test_build_add_card_round_trip(owner):
    payload = build_add_card(good_card(), "main", "c1", owner.public_key, now=FROZEN_TODAY)
    doc = canonical_loads(payload)
    assert doc["action"] == "ADD_CARD"
    opened = open_blob(owner.private_key, EncBlob.from_dict(doc["encUser"]))
    assert card_record_parse(opened) == good_card()


def test_build_add_card_rejects_invalid(owner):
    bad = CardData("1234567890123456", "12/29", "123")
    with pytest.raises(CardValidationError):
        build_add_card(bad, "main", "c1", owner.public_key, now=FROZEN_TODAY)


def test_build_add_card_randomized_seal(owner):
    p1 = build_add_card(good_card(), "main", "c1", owner.public_key, now=FROZEN_TODAY)
    p2 = build_add_card(good_card(), "main", "c1", owner.public_key, now=FROZEN_TODAY)
    assert p1 != p2
    opened = [
        card_record_parse(open_blob(owner.private_key, EncBlob.from_dict(canonical_loads(p)["encUser"])))
        for p in (p1, p2)
    ]
    assert opened[0] == opened[1] == good_card()


def test_build_link_cost_verbatim(owner):
    service = generate_keypair(b"builder-service-seed-000000000000"[:32])
    payload = build_link_subscription(
        "c1", good_card(), "music-sim", "user-7", service.public_key, 999, now=FROZEN_TODAY
    )
    doc = canonical_loads(payload)
    assert doc["monthlyCost"] == 999
    opened = open_blob(service.private_key, EncBlob.from_dict(doc["encService"]))
    assert card_record_parse(opened) == good_card()


def test_build_update_card_blob_matrix(owner):
    services = [
        generate_keypair(bytes([i]) * 32) for i in range(3)
    ]
    new_card = good_card(2)
    payload = build_update_card(
        "c1",
        new_card,
        owner.public_key,
        [(f"svc-{i}", f"user-{i}", s.public_key) for i, s in enumerate(services)],
        now=FROZEN_TODAY,
    )
    doc = canonical_loads(payload)
    assert len(doc["links"]) == 3
    blobs = [EncBlob.from_dict(l["encService"]) for l in doc["links"]]
    keys = [s.private_key for s in services]
    # only the diagonal of the (blob, key) matrix opens
    for i, blob in enumerate(blobs):
        for j, key in enumerate(keys):
            if i == j:
                assert card_record_parse(open_blob(key, blob)) == new_card
            else:
                with pytest.raises(AuthenticationFailure):
                    open_blob(key, blob)
    user_blob = EncBlob.from_dict(doc["encUser"])
    assert card_record_parse(open_blob(owner.private_key, user_blob)) == new_card


def test_build_update_card_no_links(owner):
    payload = build_update_card("c1", good_card(), owner.public_key, [], now=FROZEN_TODAY)
    doc = canonical_loads(payload)
    assert doc["links"] == []
    assert "encUser" in doc


# ---------------------------------------------------------------- outgoings


def test_outgoings_sum(family, state, owner):
    run(family, state, add_card_payload("c1", "main", blob_for(owner)), owner)
    run(family, state, link_payload("c1", "s1", "u1", blob_for(owner), 999), owner)
    run(family, state, link_payload("c1", "s2", "u2", blob_for(owner), 1299), owner)
    run(family, state, add_card_payload("c2", "spare", blob_for(owner)), owner)
    wallet = wallet_of(state, owner)
    assert compute_outgoings(wallet) == {"c1": 2298, "c2": 0}


def test_outgoings_matches_bruteforce(family, state, owner):
    rng = random.Random(7)
    oracle = WalletOracle()
    for c in range(3):
        payload = add_card_payload(f"c{c}", "card", blob_for(owner))
        run(family, state, payload, owner)
        oracle.add_card(owner.public_key, f"c{c}", "card", canonical_loads(payload)["encUser"])
        for l in range(rng.randint(0, 4)):
            cost = rng.randint(0, 5000)
            p = link_payload(f"c{c}", f"s{l}", f"u{l}", blob_for(owner), cost)
            run(family, state, p, owner)
            oracle.link(owner.public_key, f"c{c}", f"s{l}", f"u{l}", canonical_loads(p)["encService"], cost)
    wallet = wallet_of(state, owner)
    assert compute_outgoings(wallet) == oracle.outgoings(owner.public_key)
    assert len(compute_outgoings(wallet)) == 3


# ------------------------------------------------------------ replay oracle


def test_scripted_sequence_matches_oracle(family, state, owner):
    s1 = generate_keypair(b"service-one-seed-0000000000000000"[:32])
    s2 = generate_keypair(b"service-two-seed-0000000000000000"[:32])
    oracle = WalletOracle()
    ok = owner.public_key

    def check():
        expected = oracle.wallet_value(ok)
        actual = wallet_of(state, owner)
        assert actual == expected or (actual == {"ownerPublicKey": ok, "cards": []} and expected is None)

    p = add_card_payload("c1", "main", blob_for(owner, b"v1"))
    run(family, state, p, owner)
    oracle.add_card(ok, "c1", "main", canonical_loads(p)["encUser"])
    check()

    p = link_payload("c1", "s1", "u1", blob_for(s1, b"v1"), 999)
    run(family, state, p, owner)
    oracle.link(ok, "c1", "s1", "u1", canonical_loads(p)["encService"], 999)
    check()

    p = link_payload("c1", "s2", "u2", blob_for(s2, b"v1"), 1299)
    run(family, state, p, owner)
    oracle.link(ok, "c1", "s2", "u2", canonical_loads(p)["encService"], 1299)
    check()

    links = [
        {"subscriptionType": "s1", "userID": "u1", "encService": blob_for(s1, b"v2")},
        {"subscriptionType": "s2", "userID": "u2", "encService": blob_for(s2, b"v2")},
    ]
    p = update_payload("c1", blob_for(owner, b"v2"), links)
    run(family, state, p, owner)
    doc = canonical_loads(p)
    oracle.update(ok, "c1", doc["encUser"], doc["links"])
    check()

    p = remove_payload("c1")
    run(family, state, p, owner)
    oracle.remove(ok, "c1")
    wallet = wallet_of(state, owner)
    assert wallet["cards"] == []
    assert oracle.wallet_value(ok) == {"ownerPublicKey": ok, "cards": []}


def test_randomized_sequences_match_oracle(family, owner):
    # small-scale version; the full 1000-sequence sweep runs in acceptance
    from drivers import run_action_sequence

    rng = random.Random(99)
    for _ in range(50):
        run_action_sequence(rng, family, owner)
