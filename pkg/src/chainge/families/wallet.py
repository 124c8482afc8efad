"""Wallet family: encrypted card custody and subscription links.

One wallet per owner key, addressed by the owner's public key. Card data
is stored only as sealed blobs: one copy the owner can open, plus one copy
per linked service sealed to that service's key. The chain never sees
plaintext and cannot, by construction, since validation happens against
the sealed representation only.

Updating a card re-seals it for the owner and for every linked service in
the same transaction, and announces the change with a card-updated event
so services can refresh their copy without polling. Removing a card drops
it and its links from the wallet but deliberately does not touch the
services: existing subscriptions stay live on whatever card data the
service last stored.

Builders run client-side. They are the only place plaintext card data is
handled, so they validate it (Luhn, expiry against an injected clock) and
seal it before anything leaves the process.
"""

from __future__ import annotations

from datetime import date
from typing import Any, Iterable

from ..addressing import wallet_address
from ..canonical import canonical_bytes, canonical_loads
from ..cards import CardData, card_record_bytes, validate_card_plaintext
from ..crypto import CryptoError, EncBlob, seal
from .base import InvalidTransaction, StateView, WriteOp

CARD_UPDATED_EVENT = "chainge/card-updated"

ADD_CARD = "ADD_CARD"
LINK_SUBSCRIPTION = "LINK_SUBSCRIPTION"
UPDATE_CARD = "UPDATE_CARD"
REMOVE_CARD = "REMOVE_CARD"

_MAX_ID = 128
_MAX_ALIAS = 128
_MAX_TYPE = 64


def _malformed(message: str) -> InvalidTransaction:
    return InvalidTransaction("MalformedPayload", message)


def _require_str(doc: dict, key: str, max_len: int) -> str:
    value = doc.get(key)
    if not isinstance(value, str) or not value or len(value) > max_len:
        raise _malformed(f"{key} must be a non-empty string of at most {max_len} chars")
    return value


def _require_blob(doc: dict, key: str) -> dict:
    value = doc.get(key)
    if not isinstance(value, dict):
        raise _malformed(f"{key} must be a sealed blob object")
    try:
        return EncBlob.from_dict(value).to_dict()
    except CryptoError as exc:
        raise _malformed(f"{key}: {exc}") from exc


def _require_cost(doc: dict, key: str = "monthlyCost") -> int:
    # minor currency units; bool is an int subtype and must not slip through
    value = doc.get(key)
    if isinstance(value, bool) or not isinstance(value, int):
        raise _malformed(f"{key} must be an integer amount of minor currency units")
    if value < 0:
        raise _malformed(f"{key} must be non-negative")
    return value


# --------------------------------------------------------------------------
# raw payload encoders (no validation or crypto; tests also build bad ones)


def add_card_payload(card_id: str, alias: str, enc_user: EncBlob | dict) -> bytes:
    return canonical_bytes(
        {
            "action": ADD_CARD,
            "cardId": card_id,
            "cardAlias": alias,
            "encUser": enc_user.to_dict() if isinstance(enc_user, EncBlob) else enc_user,
        }
    )


def link_payload(
    card_id: str,
    subscription_type: str,
    service_user_id: str,
    enc_service: EncBlob | dict,
    monthly_cost: int,
) -> bytes:
    return canonical_bytes(
        {
            "action": LINK_SUBSCRIPTION,
            "cardId": card_id,
            "subscriptionType": subscription_type,
            "userID": service_user_id,
            "encService": enc_service.to_dict() if isinstance(enc_service, EncBlob) else enc_service,
            "monthlyCost": monthly_cost,
        }
    )


def update_payload(card_id: str, enc_user: EncBlob | dict, links: list[dict]) -> bytes:
    encoded = []
    for link in links:
        enc = link["encService"]
        encoded.append(
            {
                "subscriptionType": link["subscriptionType"],
                "userID": link["userID"],
                "encService": enc.to_dict() if isinstance(enc, EncBlob) else enc,
            }
        )
    return canonical_bytes(
        {
            "action": UPDATE_CARD,
            "cardId": card_id,
            "encUser": enc_user.to_dict() if isinstance(enc_user, EncBlob) else enc_user,
            "links": encoded,
        }
    )


def remove_payload(card_id: str) -> bytes:
    return canonical_bytes({"action": REMOVE_CARD, "cardId": card_id})


# --------------------------------------------------------------------------
# client-side builders: validate plaintext, seal, encode


def build_add_card(
    card: CardData, alias: str, card_id: str, owner_pub: str, *, now: date
) -> bytes:
    validate_card_plaintext(card, now)
    return add_card_payload(card_id, alias, seal(owner_pub, card_record_bytes(card)))


def build_link_subscription(
    card_id: str,
    card: CardData,
    subscription_type: str,
    service_user_id: str,
    service_pub: str,
    monthly_cost: int,
    *,
    now: date,
) -> bytes:
    validate_card_plaintext(card, now)
    return link_payload(
        card_id,
        subscription_type,
        service_user_id,
        seal(service_pub, card_record_bytes(card)),
        monthly_cost,
    )


def build_update_card(
    card_id: str,
    new_card: CardData,
    owner_pub: str,
    linked_services: Iterable[tuple[str, str, str]],
    *,
    now: date,
) -> bytes:
    """linked_services: (subscription_type, service_user_id, service_pub),
    one entry per link the card currently has. All re-encryption happens
    here because only the client holds the plaintext.
    """
    validate_card_plaintext(new_card, now)
    record = card_record_bytes(new_card)
    links = [
        {
            "subscriptionType": sub_type,
            "userID": service_user_id,
            "encService": seal(service_pub, record),
        }
        for sub_type, service_user_id, service_pub in linked_services
    ]
    return update_payload(card_id, seal(owner_pub, record), links)


def build_remove_card(card_id: str) -> bytes:
    return remove_payload(card_id)


# --------------------------------------------------------------------------
# wallet value helpers


def empty_wallet(owner_public_key: str) -> dict:
    return {"ownerPublicKey": owner_public_key, "cards": []}


def parse_wallet(value: bytes) -> dict:
    wallet = canonical_loads(value.decode("utf-8"))
    if not isinstance(wallet, dict) or "cards" not in wallet:
        raise ValueError("not a wallet value")
    return wallet


def find_card(wallet: dict, card_id: str) -> dict | None:
    for card in wallet["cards"]:
        if card["id"] == card_id:
            return card
    return None


def compute_outgoings(wallet: dict) -> dict[str, int]:
    """Per-card total of linked monthly costs, in minor units."""
    return {
        card["id"]: sum(sub["monthlyCost"] for sub in card["subscriptions"])
        for card in wallet["cards"]
    }


# --------------------------------------------------------------------------
# the family


class WalletFamily:
    family_name = "chainge-wallet"
    family_version = "1.0"

    def apply(
        self, payload: bytes, signer_public_key: str, state: StateView
    ) -> tuple[list[WriteOp], list[Any]]:
        try:
            doc = canonical_loads(payload.decode("utf-8"))
        except (ValueError, UnicodeDecodeError) as exc:
            raise _malformed(f"payload is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise _malformed("payload must be a JSON object")
        action = doc.get("action")
        if action == ADD_CARD:
            return self._add_card(doc, signer_public_key, state)
        if action == LINK_SUBSCRIPTION:
            return self._link_subscription(doc, signer_public_key, state)
        if action == UPDATE_CARD:
            return self._update_card(doc, signer_public_key, state)
        if action == REMOVE_CARD:
            return self._remove_card(doc, signer_public_key, state)
        raise _malformed(f"unknown action {action!r}")

    # wallets are keyed by the signer, so a signer can only ever touch
    # their own wallet; no further ownership check is needed
    def _load_wallet(self, signer: str, state: StateView) -> tuple[str, dict | None]:
        address = wallet_address(signer)
        raw = state.get(address)
        if raw is None:
            return address, None
        return address, parse_wallet(raw)

    def _add_card(
        self, doc: dict, signer: str, state: StateView
    ) -> tuple[list[WriteOp], list[Any]]:
        card_id = _require_str(doc, "cardId", _MAX_ID)
        alias = _require_str(doc, "cardAlias", _MAX_ALIAS)
        enc_user = _require_blob(doc, "encUser")
        address, wallet = self._load_wallet(signer, state)
        if wallet is None:
            wallet = empty_wallet(signer)
        if find_card(wallet, card_id) is not None:
            raise InvalidTransaction("DuplicateCard", f"card {card_id} already exists")
        wallet["cards"].append(
            {"id": card_id, "cardAlias": alias, "encUser": enc_user, "subscriptions": []}
        )
        return [(address, canonical_bytes(wallet))], []

    def _link_subscription(
        self, doc: dict, signer: str, state: StateView
    ) -> tuple[list[WriteOp], list[Any]]:
        card_id = _require_str(doc, "cardId", _MAX_ID)
        sub_type = _require_str(doc, "subscriptionType", _MAX_TYPE)
        service_user_id = _require_str(doc, "userID", _MAX_ID)
        enc_service = _require_blob(doc, "encService")
        cost = _require_cost(doc)
        address, wallet = self._load_wallet(signer, state)
        card = find_card(wallet, card_id) if wallet else None
        if card is None:
            raise InvalidTransaction("UnknownCard", f"card {card_id} does not exist")
        for sub in card["subscriptions"]:
            if sub["subscriptionType"] == sub_type and sub["userID"] == service_user_id:
                raise InvalidTransaction(
                    "DuplicateLink",
                    f"{sub_type}/{service_user_id} already linked to card {card_id}",
                )
        card["subscriptions"].append(
            {
                "subscriptionType": sub_type,
                "userID": service_user_id,
                "encService": enc_service,
                "monthlyCost": cost,
            }
        )
        # announce the fresh blob so event-mode subscribers learn of the
        # link without parsing raw deltas; covers only the new link
        event = _card_updated_event(
            address,
            card_id,
            [
                {
                    "subscriptionType": sub_type,
                    "userID": service_user_id,
                    "encService": enc_service,
                }
            ],
        )
        return [(address, canonical_bytes(wallet))], [event]

    def _update_card(
        self, doc: dict, signer: str, state: StateView
    ) -> tuple[list[WriteOp], list[Any]]:
        card_id = _require_str(doc, "cardId", _MAX_ID)
        enc_user = _require_blob(doc, "encUser")
        links = doc.get("links")
        if not isinstance(links, list):
            raise _malformed("links must be a list")
        parsed_links = []
        for item in links:
            if not isinstance(item, dict):
                raise _malformed("each link must be an object")
            parsed_links.append(
                {
                    "subscriptionType": _require_str(item, "subscriptionType", _MAX_TYPE),
                    "userID": _require_str(item, "userID", _MAX_ID),
                    "encService": _require_blob(item, "encService"),
                }
            )
        address, wallet = self._load_wallet(signer, state)
        card = find_card(wallet, card_id) if wallet else None
        if card is None:
            raise InvalidTransaction("UnknownCard", f"card {card_id} does not exist")

        existing = {(s["subscriptionType"], s["userID"]) for s in card["subscriptions"]}
        provided = {(l["subscriptionType"], l["userID"]) for l in parsed_links}
        if len(provided) != len(parsed_links):
            raise _malformed("links contain duplicates")
        if provided != existing:
            # every live link must receive a re-sealed copy, or the services
            # would silently keep charging the old card
            missing = sorted(existing - provided)
            extra = sorted(provided - existing)
            raise InvalidTransaction(
                "LinkCoverageMismatch",
                f"links must cover the card's subscriptions exactly "
                f"(missing={missing}, unexpected={extra})",
            )

        card["encUser"] = enc_user
        by_key = {(l["subscriptionType"], l["userID"]): l for l in parsed_links}
        for sub in card["subscriptions"]:
            sub["encService"] = by_key[(sub["subscriptionType"], sub["userID"])]["encService"]
        event = _card_updated_event(
            address,
            card_id,
            [
                {
                    "subscriptionType": s["subscriptionType"],
                    "userID": s["userID"],
                    "encService": s["encService"],
                }
                for s in card["subscriptions"]
            ],
        )
        return [(address, canonical_bytes(wallet))], [event]

    def _remove_card(
        self, doc: dict, signer: str, state: StateView
    ) -> tuple[list[WriteOp], list[Any]]:
        card_id = _require_str(doc, "cardId", _MAX_ID)
        address, wallet = self._load_wallet(signer, state)
        card = find_card(wallet, card_id) if wallet else None
        if card is None:
            raise InvalidTransaction("UnknownCard", f"card {card_id} does not exist")
        # drops the card and its links from the wallet only; services are
        # not notified and keep whatever record they last stored
        wallet["cards"] = [c for c in wallet["cards"] if c["id"] != card_id]
        return [(address, canonical_bytes(wallet))], []


def _card_updated_event(owner_address: str, card_id: str, links: list[dict]):
    from ..ledger import Event

    attributes = [("card_id", card_id), ("owner", owner_address)]
    for sub_type in sorted({l["subscriptionType"] for l in links}):
        attributes.append(("subscription_type", sub_type))
    return Event(
        kind=CARD_UPDATED_EVENT,
        attributes=tuple(attributes),
        data={"cardId": card_id, "owner": owner_address, "links": links},
    )
