from __future__ import annotations

from datetime import date

import pytest

from chainge.crypto import generate_keypair
from chainge.families import default_families
from chainge.families.settings import CONSENSUS_SETTING
from chainge.ledger import ChainStore, GenesisConfig, build_genesis_block

# fixed clock for expiry checks; every fixture card must be valid against it
FROZEN_TODAY = date(2026, 3, 15)

# spec'd sample numbers plus a spread of Luhn-valid ones for fixtures
VALID_CARD_NUMBERS = [
    "4539578763621486",
    "0000000000000000",
    "4716108999716531",
    "5425233430109903",
    "374245455400126",
    "6011000991300009",
]
INVALID_CARD_NUMBER = "1234567890123456"


@pytest.fixture(scope="session")
def admin_keys():
    return generate_keypair(b"admin-seed-0000000000000000000000"[:32])


@pytest.fixture(scope="session")
def alice_keys():
    return generate_keypair(b"alice-seed-0000000000000000000000"[:32])


@pytest.fixture(scope="session")
def bob_keys():
    return generate_keypair(b"bob-seed-000000000000000000000000"[:32])


@pytest.fixture(scope="session")
def service_keys():
    return {
        "music-sim": generate_keypair(b"music-seed-0000000000000000000000"[:32]),
        "video-sim": generate_keypair(b"video-seed-0000000000000000000000"[:32]),
        "news-sim": generate_keypair(b"news-seed-00000000000000000000000"[:32]),
    }


@pytest.fixture
def families(admin_keys):
    return default_families(admin_keys.public_key)


@pytest.fixture
def genesis_config(admin_keys):
    return GenesisConfig(
        validators=(admin_keys.public_key,),
        admin_public_key=admin_keys.public_key,
        settings={CONSENSUS_SETTING: "devmode"},
    )


@pytest.fixture
def chain(families, genesis_config, admin_keys):
    store = ChainStore(families)
    store.commit(build_genesis_block(genesis_config, admin_keys, families))
    return store
