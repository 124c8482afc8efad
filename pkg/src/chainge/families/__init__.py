"""Transaction families: the state transition rules the ledger enforces."""

from .base import InvalidTransaction, StateView, TransactionFamily
from .settings import SettingsFamily
from .wallet import WalletFamily

__all__ = [
    "InvalidTransaction",
    "StateView",
    "TransactionFamily",
    "SettingsFamily",
    "WalletFamily",
    "default_families",
]


def default_families(admin_public_key: str) -> dict[str, TransactionFamily]:
    wallet = WalletFamily()
    settings = SettingsFamily(admin_public_key)
    return {wallet.family_name: wallet, settings.family_name: settings}
