"""Settings family: admin-gated on-chain configuration.

Only whitelisted keys can be written, and only by the administrator key
named in genesis. Values land in state as bare UTF-8 bytes so other
components (consensus in particular) can read them without a schema.
"""

from __future__ import annotations

from typing import Any

from ..addressing import settings_address
from ..canonical import canonical_bytes, canonical_loads
from .base import InvalidTransaction, StateView, WriteOp

CONSENSUS_SETTING = "chainge.consensus.algorithm"

ALLOWED_SETTINGS: dict[str, tuple[str, ...]] = {
    CONSENSUS_SETTING: ("devmode", "pbft"),
}


def build_set_setting(key: str, value: str) -> bytes:
    return canonical_bytes({"key": key, "value": value})


class SettingsFamily:
    family_name = "chainge-settings"
    family_version = "1.0"

    def __init__(self, admin_public_key: str):
        self.admin_public_key = admin_public_key

    def apply(
        self, payload: bytes, signer_public_key: str, state: StateView
    ) -> tuple[list[WriteOp], list[Any]]:
        try:
            doc = canonical_loads(payload.decode("utf-8"))
        except (ValueError, UnicodeDecodeError) as exc:
            raise InvalidTransaction("MalformedPayload", f"not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise InvalidTransaction("MalformedPayload", "payload must be a JSON object")
        key = doc.get("key")
        value = doc.get("value")
        if not isinstance(key, str) or not isinstance(value, str):
            raise InvalidTransaction("MalformedPayload", "key and value must be strings")
        if signer_public_key != self.admin_public_key:
            raise InvalidTransaction("Unauthorized", "only the admin key may change settings")
        allowed = ALLOWED_SETTINGS.get(key)
        if allowed is None:
            raise InvalidTransaction("UnknownSettingKey", f"{key} is not a settable key")
        if value not in allowed:
            raise InvalidTransaction(
                "BadValue", f"{key} must be one of {', '.join(allowed)}; got {value!r}"
            )
        return [(settings_address(key), value.encode("utf-8"))], []
