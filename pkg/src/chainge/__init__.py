"""Permissioned ledger for encrypted payment-card wallets.

Card data lives on chain only in sealed form; when a card changes, the
chain fans the update out to every linked subscription service so nobody
keys in the new number by hand.
"""

__version__ = "0.1.0"
