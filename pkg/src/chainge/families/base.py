"""Shared contract between the ledger and its transaction families."""

from __future__ import annotations

from typing import Any, Protocol

# An apply() returns ordered write operations: (address, value) pairs where
# value None deletes the address.
WriteOp = tuple[str, "bytes | None"]


class InvalidTransaction(Exception):
    """Semantic rejection. The code is stable and machine-checkable."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message


class StateView(Protocol):
    """Read access to state as of the transaction, prior writes included."""

    def get(self, address: str) -> bytes | None: ...


class TransactionFamily(Protocol):
    family_name: str
    family_version: str

    def apply(
        self, payload: bytes, signer_public_key: str, state: StateView
    ) -> tuple[list[WriteOp], list[Any]]:
        """Validate the payload against state and produce writes and events.

        Raises InvalidTransaction to reject; a rejection must leave no
        writes behind (the ledger discards the whole batch).
        """
        ...
