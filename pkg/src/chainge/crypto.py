"""Key pairs, signatures, and sealed-box encryption.

One Ed25519 key pair per party covers both duties: signing uses the key
directly, encryption converts it to its X25519 (Montgomery) form and runs
an ephemeral key agreement feeding an AEAD. Sealing is anonymous-sender:
only the recipient's private key can open a blob, and nothing identifies
who produced it.

Wire format is lowercase hex throughout. AEAD is AES-256-GCM with an
HKDF-SHA512 key schedule so the same blobs can be produced and opened by a
browser's WebCrypto stack.
"""

from __future__ import annotations

import hashlib
import secrets
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

SEAL_INFO = b"chainge-sealed-box-v1"
NONCE_BYTES = 12

# field prime of Curve25519
_P = 2**255 - 19


class CryptoError(Exception):
    pass


class BadKeyError(CryptoError):
    """Key material has the wrong length or is not valid hex."""


class AuthenticationFailure(CryptoError):
    """Blob failed to open: wrong key or tampered ciphertext.

    The two causes are deliberately indistinguishable to the caller.
    """


@dataclass(frozen=True)
class KeyPair:
    public_key: str   # 32-byte Ed25519 public key, hex
    private_key: str  # 32-byte seed, hex


@dataclass(frozen=True)
class EncBlob:
    ephemeral_public_key: str
    nonce: str
    ciphertext: str

    def to_dict(self) -> dict:
        return {
            "ephemeralPublicKey": self.ephemeral_public_key,
            "nonce": self.nonce,
            "ciphertext": self.ciphertext,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EncBlob":
        try:
            blob = cls(
                ephemeral_public_key=data["ephemeralPublicKey"],
                nonce=data["nonce"],
                ciphertext=data["ciphertext"],
            )
        except (KeyError, TypeError) as exc:
            raise BadKeyError(f"malformed encrypted blob: {exc}") from exc
        _decode_hex(blob.ephemeral_public_key, 32, "ephemeral public key")
        _decode_hex(blob.nonce, NONCE_BYTES, "nonce")
        try:
            ciphertext = bytes.fromhex(blob.ciphertext)
        except (ValueError, TypeError) as exc:
            raise BadKeyError("ciphertext is not valid hex") from exc
        # AEAD output is never shorter than its 16-byte tag
        if len(ciphertext) < 16:
            raise BadKeyError("ciphertext too short to carry an authentication tag")
        return blob


def _decode_hex(value: str, expected_len: int, what: str) -> bytes:
    try:
        raw = bytes.fromhex(value)
    except (ValueError, TypeError) as exc:
        raise BadKeyError(f"{what} is not valid hex") from exc
    if len(raw) != expected_len:
        raise BadKeyError(f"{what} must be {expected_len} bytes, got {len(raw)}")
    return raw


def generate_keypair(seed: bytes | None = None) -> KeyPair:
    """Create an Ed25519 key pair; a 32-byte seed makes it deterministic."""
    if seed is None:
        seed = secrets.token_bytes(32)
    elif len(seed) != 32:
        raise BadKeyError(f"seed must be 32 bytes, got {len(seed)}")
    private = Ed25519PrivateKey.from_private_bytes(seed)
    public = private.public_key().public_bytes_raw()
    return KeyPair(public_key=public.hex(), private_key=seed.hex())


def sign(private_key: str, message: bytes) -> str:
    seed = _decode_hex(private_key, 32, "private key")
    return Ed25519PrivateKey.from_private_bytes(seed).sign(message).hex()


def verify(public_key: str, message: bytes, signature: str) -> bool:
    """True only for a signature by the matching private key over message."""
    try:
        pub = _decode_hex(public_key, 32, "public key")
        sig = _decode_hex(signature, 64, "signature")
        Ed25519PublicKey.from_public_bytes(pub).verify(sig, message)
        return True
    except (CryptoError, Exception):
        return False


def _ed25519_pub_to_x25519(public_key: bytes) -> bytes:
    # birational map: montgomery u = (1 + y) / (1 - y) mod p
    if len(public_key) != 32:
        raise BadKeyError(f"public key must be 32 bytes, got {len(public_key)}")
    y = int.from_bytes(public_key, "little") & ((1 << 255) - 1)
    if y >= _P:
        raise BadKeyError("public key does not encode a field element")
    denom = (1 - y) % _P
    if denom == 0:
        raise BadKeyError("public key has no Montgomery form")
    u = (1 + y) * pow(denom, _P - 2, _P) % _P
    return u.to_bytes(32, "little")


def _ed25519_seed_to_x25519(seed: bytes) -> bytes:
    # the signing scalar doubles as the X25519 private scalar (clamped on use)
    return hashlib.sha512(seed).digest()[:32]


def _session_key(shared: bytes, ephemeral_pub: bytes, recipient_x_pub: bytes) -> bytes:
    return HKDF(
        algorithm=hashes.SHA512(),
        length=32,
        salt=None,
        info=SEAL_INFO + ephemeral_pub + recipient_x_pub,
    ).derive(shared)


def seal(recipient_public_key: str, plaintext: bytes) -> EncBlob:
    """Encrypt so only the holder of the matching private key can read.

    Randomized: two seals of the same plaintext differ in every field.
    """
    recipient = _decode_hex(recipient_public_key, 32, "recipient public key")
    recipient_x = _ed25519_pub_to_x25519(recipient)

    ephemeral = X25519PrivateKey.generate()
    ephemeral_pub = ephemeral.public_key().public_bytes_raw()
    shared = ephemeral.exchange(X25519PublicKey.from_public_bytes(recipient_x))
    key = _session_key(shared, ephemeral_pub, recipient_x)

    nonce = secrets.token_bytes(NONCE_BYTES)
    ciphertext = AESGCM(key).encrypt(nonce, plaintext, ephemeral_pub)
    return EncBlob(
        ephemeral_public_key=ephemeral_pub.hex(),
        nonce=nonce.hex(),
        ciphertext=ciphertext.hex(),
    )


def open_blob(recipient_private_key: str, blob: EncBlob) -> bytes:
    """Open a sealed blob. Raises AuthenticationFailure on any mismatch."""
    seed = _decode_hex(recipient_private_key, 32, "private key")
    try:
        ephemeral_pub = bytes.fromhex(blob.ephemeral_public_key)
        nonce = bytes.fromhex(blob.nonce)
        ciphertext = bytes.fromhex(blob.ciphertext)
        if len(ephemeral_pub) != 32 or len(nonce) != NONCE_BYTES:
            raise AuthenticationFailure("blob failed to open")
    except ValueError as exc:
        raise AuthenticationFailure("blob failed to open") from exc

    x_private = X25519PrivateKey.from_private_bytes(_ed25519_seed_to_x25519(seed))
    recipient_x = x_private.public_key().public_bytes_raw()
    try:
        shared = x_private.exchange(X25519PublicKey.from_public_bytes(ephemeral_pub))
        key = _session_key(shared, ephemeral_pub, recipient_x)
        return AESGCM(key).decrypt(nonce, ciphertext, ephemeral_pub)
    except (InvalidTag, ValueError) as exc:
        raise AuthenticationFailure("blob failed to open") from exc
