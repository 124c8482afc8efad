"""Namespaced 70-hex state addresses.

An address is a 6-hex-char namespace prefix (first 6 hex chars of the
SHA-512 of the namespace name) followed by the first 64 hex chars of the
SHA-512 of the entity id. Prefix filtering is what event subscribers key on.
"""

from __future__ import annotations

import hashlib

ADDRESS_LENGTH = 70
PREFIX_LENGTH = 6

WALLET_NAMESPACE = "chainge-wallet"
SETTINGS_NAMESPACE = "chainge-settings"


class AddressError(ValueError):
    pass


def namespace_prefix(namespace_name: str) -> str:
    """First 6 hex chars of SHA-512 of the namespace name."""
    if not namespace_name:
        raise AddressError("namespace name must be non-empty")
    return hashlib.sha512(namespace_name.encode("utf-8")).hexdigest()[:PREFIX_LENGTH]


def make_address(namespace_name: str, entity_id: str) -> str:
    """Derive the 70-hex address for an entity within a namespace.

    Pure and deterministic; same inputs always give the same address.
    """
    if not namespace_name:
        raise AddressError("namespace name must be non-empty")
    if not entity_id:
        raise AddressError("entity id must be non-empty")
    entity = hashlib.sha512(entity_id.encode("utf-8")).hexdigest()[:64]
    return namespace_prefix(namespace_name) + entity


def is_address(value: str) -> bool:
    return len(value) == ADDRESS_LENGTH and all(c in "0123456789abcdef" for c in value)


WALLET_PREFIX = namespace_prefix(WALLET_NAMESPACE)
SETTINGS_PREFIX = namespace_prefix(SETTINGS_NAMESPACE)


def wallet_address(owner_public_key: str) -> str:
    """Wallet addresses are a pure function of the owner's signing key."""
    return make_address(WALLET_NAMESPACE, owner_public_key)


def settings_address(key: str) -> str:
    return make_address(SETTINGS_NAMESPACE, key)
