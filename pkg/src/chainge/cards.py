"""Client-side payment card validation and the sealed plaintext record.

Card plaintext only ever exists on the client. The chain sees the sealed
record produced by :func:`card_record_bytes`, never these fields.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date

from .canonical import canonical_bytes, canonical_loads


class CardValidationError(ValueError):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


@dataclass(frozen=True)
class CardData:
    card_number: str  # 12-19 digits, Luhn-valid
    expiry: str       # "MM/YY"
    cvv: str          # 3-4 digits


def luhn_valid(number: str) -> bool:
    """Luhn mod-10 check over a digit string."""
    if not number.isdigit():
        return False
    total = 0
    for idx, ch in enumerate(reversed(number)):
        digit = int(ch)
        if idx % 2 == 1:
            digit *= 2
            if digit > 9:
                digit -= 9
        total += digit
    return total % 10 == 0


def parse_expiry(expiry: str) -> tuple[int, int]:
    """Parse "MM/YY" into (year, month). Raises CardValidationError."""
    parts = expiry.split("/")
    if len(parts) != 2 or len(parts[0]) != 2 or len(parts[1]) != 2:
        raise CardValidationError("BadExpiry", f"expiry must be MM/YY, got {expiry!r}")
    if not (parts[0].isdigit() and parts[1].isdigit()):
        raise CardValidationError("BadExpiry", f"expiry must be MM/YY, got {expiry!r}")
    month = int(parts[0])
    year = 2000 + int(parts[1])
    if not 1 <= month <= 12:
        raise CardValidationError("BadExpiry", f"expiry month out of range: {expiry!r}")
    return year, month


def validate_card_plaintext(card: CardData, now: date) -> None:
    """Enforce Luhn, length, cvv shape, and future-dated expiry.

    The clock is injected; a card is valid through the last day of its
    expiry month.
    """
    if not card.card_number.isdigit() or not 12 <= len(card.card_number) <= 19:
        raise CardValidationError(
            "BadLength", "card number must be 12-19 digits"
        )
    if not luhn_valid(card.card_number):
        raise CardValidationError("LuhnFailure", "card number fails the Luhn check")
    year, month = parse_expiry(card.expiry)
    if (year, month) < (now.year, now.month):
        raise CardValidationError("BadExpiry", f"card expired {card.expiry}")
    if not card.cvv.isdigit() or not 3 <= len(card.cvv) <= 4:
        raise CardValidationError("BadCvv", "cvv must be 3-4 digits")


def card_record_bytes(card: CardData) -> bytes:
    """Canonical plaintext record sealed per recipient.

    All three sensitive fields travel as one record so an update replaces
    them atomically.
    """
    return canonical_bytes(
        {
            "cardNumber": card.card_number,
            "expiryDate": card.expiry,
            "cvv": card.cvv,
        }
    )


def card_record_parse(data: bytes) -> CardData:
    try:
        record = canonical_loads(data)
        card = CardData(
            card_number=record["cardNumber"],
            expiry=record["expiryDate"],
            cvv=record["cvv"],
        )
    except (KeyError, TypeError, UnicodeDecodeError, ValueError) as exc:
        raise ValueError(f"not a card record: {exc}") from exc
    if not all(isinstance(v, str) for v in (card.card_number, card.expiry, card.cvv)):
        raise ValueError("card record fields must be strings")
    return card
