from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from chainge.addressing import (
    SETTINGS_PREFIX,
    WALLET_PREFIX,
    AddressError,
    is_address,
    make_address,
    namespace_prefix,
    settings_address,
    wallet_address,
)
from chainge.canonical import canonical_bytes, canonical_dumps, canonical_loads, is_hex, sha512_hex

from oracles import address_oracle

# computed once with a reference SHA-512 tool and frozen
GOLDEN_WALLET_PREFIX = "18842c"
GOLDEN_SETTINGS_PREFIX = "05ace4"
GOLDEN_U1_ADDRESS = "18842cad1be5a635e658136256b4fb609135397bf8f858b276e28b51492415bc173e5b"
GOLDEN_A64_ADDRESS = "18842c01d35c10c6c38c2dcf48f7eebb3235fb5ad74a65ec4cd016e2354c637a8fb49b"
SHA512_EMPTY = (
    "cf83e1357eefb8bdf1542850d66d8007d620e4050b5715dc83f4a921d36ce9ce"
    "47d0d13c5d85f2b0ff8318d2877eec2f63b931bd47417a81a538327af927da3e"
)


def test_canonical_dumps_sorts_and_strips():
    assert canonical_dumps({"b": 1, "a": [2, 1]}) == '{"a":[2,1],"b":1}'


def test_canonical_dumps_keeps_unicode():
    # non-ascii stays literal so byte output matches other languages
    assert canonical_dumps({"k": "café"}) == '{"k":"café"}'


def test_canonical_round_trip():
    doc = {"z": [1, {"y": None}], "a": "x", "n": 3}
    assert canonical_loads(canonical_dumps(doc)) == doc


def test_canonical_bytes_is_utf8():
    assert canonical_bytes({"k": "€"}) == '{"k":"€"}'.encode("utf-8")


def test_sha512_hex_empty_vector():
    assert sha512_hex(b"") == SHA512_EMPTY


def test_is_hex():
    assert is_hex("00ff", 4)
    assert is_hex("abc123")
    assert not is_hex("xyz")
    assert not is_hex("00ff", 6)
    assert not is_hex("ABCD", 4)  # lowercase only on the wire


def test_namespace_prefix_golden():
    assert namespace_prefix("chainge-wallet") == GOLDEN_WALLET_PREFIX
    assert namespace_prefix("chainge-settings") == GOLDEN_SETTINGS_PREFIX
    assert WALLET_PREFIX == GOLDEN_WALLET_PREFIX
    assert SETTINGS_PREFIX == GOLDEN_SETTINGS_PREFIX


def test_make_address_golden_values():
    assert make_address("chainge-wallet", "u1") == GOLDEN_U1_ADDRESS
    assert make_address("chainge-wallet", "a" * 64) == GOLDEN_A64_ADDRESS


def test_make_address_deterministic():
    first = make_address("chainge-wallet", "u1")
    second = make_address("chainge-wallet", "u1")
    assert first == second
    assert len(first) == 70


def test_make_address_distinct_entities_share_prefix():
    a1 = make_address("chainge-wallet", "u1")
    a2 = make_address("chainge-wallet", "u2")
    assert a1[:6] == a2[:6]
    assert a1[6:] != a2[6:]
    assert len(a1[6:]) == len(a2[6:]) == 64


def test_make_address_rejects_empty():
    with pytest.raises(AddressError):
        make_address("", "u1")
    with pytest.raises(AddressError):
        make_address("chainge-wallet", "")


def test_wallet_and_settings_helpers_match_generic():
    assert wallet_address("pk") == make_address("chainge-wallet", "pk")
    assert settings_address("k") == make_address("chainge-settings", "k")


def test_is_address():
    assert is_address(GOLDEN_U1_ADDRESS)
    assert not is_address(GOLDEN_U1_ADDRESS[:-1])
    assert not is_address(GOLDEN_U1_ADDRESS + "0")
    assert not is_address("g" * 70)


@given(st.text(min_size=1, max_size=40), st.text(min_size=1, max_size=80))
def test_make_address_matches_reference_construction(namespace, entity):
    assert make_address(namespace, entity) == address_oracle(namespace, entity)
