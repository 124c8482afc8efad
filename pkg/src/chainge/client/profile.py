"""Local client profile: session, service directory, and the signing key.

The private key never leaves this file unencrypted; at rest it sits under
a passphrase-derived AES-256-GCM envelope. The passphrase comes from the
CHAINGE_PROFILE_PASSPHRASE environment variable so scripted runs stay
non-interactive.
"""

from __future__ import annotations

import json
import os
import secrets
from dataclasses import dataclass, field
from pathlib import Path

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.scrypt import Scrypt

PASSPHRASE_ENV = "CHAINGE_PROFILE_PASSPHRASE"
SCRYPT_N = 2**14


class ProfileError(Exception):
    pass


def _passphrase() -> bytes:
    secret = os.environ.get(PASSPHRASE_ENV)
    if not secret:
        raise ProfileError(
            f"set {PASSPHRASE_ENV} to the profile passphrase before running"
        )
    return secret.encode("utf-8")


def _derive(passphrase: bytes, salt: bytes) -> bytes:
    return Scrypt(salt=salt, length=32, n=SCRYPT_N, r=8, p=1).derive(passphrase)


def _encrypt_key(private_key: str, passphrase: bytes) -> dict:
    salt = secrets.token_bytes(16)
    nonce = secrets.token_bytes(12)
    sealed = AESGCM(_derive(passphrase, salt)).encrypt(
        nonce, private_key.encode("utf-8"), b""
    )
    return {"salt": salt.hex(), "nonce": nonce.hex(), "ciphertext": sealed.hex()}


def _decrypt_key(envelope: dict, passphrase: bytes) -> str:
    try:
        key = _derive(passphrase, bytes.fromhex(envelope["salt"]))
        opened = AESGCM(key).decrypt(
            bytes.fromhex(envelope["nonce"]), bytes.fromhex(envelope["ciphertext"]), b""
        )
    except (InvalidTag, KeyError, ValueError) as exc:
        raise ProfileError(
            "profile key cannot be decrypted; wrong passphrase or corrupted profile"
        ) from exc
    return opened.decode("utf-8")


@dataclass
class Profile:
    path: Path
    node: str = ""
    provider: str = ""
    subject: str = ""
    token: str = ""
    public_key: str = ""
    encrypted_key: dict = field(default_factory=dict)
    services: dict = field(default_factory=dict)  # subscription_type -> descriptor

    @classmethod
    def load(cls, path: str | Path) -> "Profile":
        path = Path(path)
        if not path.exists():
            return cls(path=path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ProfileError(f"profile {path} is unreadable: {exc}") from exc
        return cls(
            path=path,
            node=doc.get("node", ""),
            provider=doc.get("provider", ""),
            subject=doc.get("subject", ""),
            token=doc.get("token", ""),
            public_key=doc.get("publicKey", ""),
            encrypted_key=doc.get("encryptedKey", {}),
            services=doc.get("services", {}),
        )

    def save(self) -> None:
        doc = {
            "node": self.node,
            "provider": self.provider,
            "subject": self.subject,
            "token": self.token,
            "publicKey": self.public_key,
            "encryptedKey": self.encrypted_key,
            "services": self.services,
        }
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        os.chmod(self.path, 0o600)

    @property
    def has_key(self) -> bool:
        return bool(self.encrypted_key)

    def store_key(self, private_key: str) -> None:
        self.encrypted_key = _encrypt_key(private_key, _passphrase())

    def private_key(self) -> str:
        if not self.has_key:
            raise ProfileError("profile has no key; run login first")
        return _decrypt_key(self.encrypted_key, _passphrase())

    def remember_service(self, descriptor: dict) -> None:
        self.services[descriptor["subscriptionType"]] = descriptor
