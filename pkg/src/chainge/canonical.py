"""Canonical text encoding shared by every hashed or signed structure.

One encoding everywhere: UTF-8 JSON maps with lexicographically sorted keys,
no insignificant whitespace, and all binary material as lowercase hex. Two
parties that build the same logical value must produce the same bytes.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any


def canonical_dumps(value: Any) -> str:
    """Serialize to the canonical text form (sorted keys, compact separators)."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def canonical_bytes(value: Any) -> bytes:
    return canonical_dumps(value).encode("utf-8")


def canonical_loads(text: str | bytes) -> Any:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    return json.loads(text)


def sha512_hex(data: bytes) -> str:
    return hashlib.sha512(data).hexdigest()


def is_hex(value: str, length: int | None = None) -> bool:
    """True if value is lowercase hex, optionally of an exact character length."""
    if length is not None and len(value) != length:
        return False
    if len(value) % 2 != 0:
        return False
    return all(c in "0123456789abcdef" for c in value)
