"""Identity keys, hybrid envelope encryption and detached image signatures.

Encryption keys are X25519; signing keys are Ed25519. An envelope wraps a
fresh AES-256 content key under an ephemeral-static X25519 agreement
(HKDF-SHA256 key-encryption key, RFC 3394 key wrap) and encrypts the payload
with AES-256-GCM.
"""

from __future__ import annotations

import enum
import hashlib
import os
import random
import struct
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature as _CryptoInvalidSignature
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.keywrap import InvalidUnwrap, aes_key_unwrap, aes_key_wrap
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .encoding import Reader
from .errors import AuthFailure, MalformedEnvelope, WrongKeyKind

KEY_VERSION = 0x01
ENVELOPE_VERSION = 0x01
NONCE_SIZE = 12
TAG_SIZE = 16
HINT_SIZE = 8
_RAW = serialization.Encoding.Raw


class KeyKind(enum.Enum):
    ENCRYPTION = 1
    SIGNING = 2


def fingerprint(public: bytes) -> bytes:
    return hashlib.sha256(public).digest()[:HINT_SIZE]


def _public_from_private(kind: KeyKind, private: bytes) -> bytes:
    if kind is KeyKind.ENCRYPTION:
        key = X25519PrivateKey.from_private_bytes(private)
    else:
        key = Ed25519PrivateKey.from_private_bytes(private)
    return key.public_key().public_bytes(_RAW, serialization.PublicFormat.Raw)


@dataclass(frozen=True)
class KeyPair:
    """An asymmetric key pair; ``private`` is None for public-only handles."""

    kind: KeyKind
    public: bytes
    private: bytes | None = field(default=None, repr=False)

    @property
    def fingerprint(self) -> bytes:
        return fingerprint(self.public)

    def public_only(self) -> KeyPair:
        return KeyPair(self.kind, self.public)

    def export_public(self) -> bytes:
        """Versioned public key bytes; the private half is never included."""
        return bytes([KEY_VERSION, self.kind.value]) + self.public

    @classmethod
    def from_public(cls, blob: bytes) -> KeyPair:
        if len(blob) != 34 or blob[0] != KEY_VERSION:
            raise ValueError("malformed public key blob")
        try:
            kind = KeyKind(blob[1])
        except ValueError:
            raise ValueError(f"unknown key kind {blob[1]}") from None
        return cls(kind, bytes(blob[2:]))

    @classmethod
    def from_private(cls, kind: KeyKind, private: bytes) -> KeyPair:
        return cls(kind, _public_from_private(kind, private), bytes(private))


def generate_keypair(kind: KeyKind, seed: int | bytes | str | None = None) -> KeyPair:
    """Make a new key pair, reproducibly when ``seed`` is given."""
    if seed is None:
        private = os.urandom(32)
    else:
        if isinstance(seed, int):
            seed = seed.to_bytes(16, "big", signed=True)
        elif isinstance(seed, str):
            seed = seed.encode()
        private = hashlib.sha256(b"pcim-key" + bytes([kind.value]) + seed).digest()
    return KeyPair.from_private(kind, private)


def _require(kp: KeyPair, kind: KeyKind, private: bool = False) -> None:
    if kp.kind is not kind:
        raise WrongKeyKind(f"expected a {kind.name.lower()} key, got {kp.kind.name.lower()}")
    if private and kp.private is None:
        raise WrongKeyKind("operation needs the private half of the key")


@dataclass(frozen=True)
class Envelope:
    wrapped_key: bytes
    nonce: bytes
    ciphertext: bytes
    recipient_hint: bytes

    def to_bytes(self) -> bytes:
        return b"".join([
            bytes([ENVELOPE_VERSION]),
            struct.pack(">H", len(self.wrapped_key)), self.wrapped_key,
            bytes([len(self.nonce)]), self.nonce,
            struct.pack(">Q", len(self.ciphertext)), self.ciphertext,
            self.recipient_hint,
        ])

    @classmethod
    def from_bytes(cls, blob: bytes) -> Envelope:
        try:
            r = Reader(blob)
            if r.u8() != ENVELOPE_VERSION:
                raise ValueError("unsupported envelope version")
            wrapped = r.take(r.u16())
            nonce = r.take(r.u8())
            ct = r.take(r.u64())
            hint = r.take(HINT_SIZE)
            r.expect_end()
        except ValueError as exc:
            raise MalformedEnvelope(str(exc)) from None
        return cls(wrapped, nonce, ct, hint)


def _kek(shared: bytes, eph_pub: bytes, recipient_pub: bytes) -> bytes:
    return HKDF(
        algorithm=hashes.SHA256(),
        length=32,
        salt=eph_pub + recipient_pub,
        info=b"pcim envelope v1",
    ).derive(shared)


def _aad(hint: bytes) -> bytes:
    return bytes([ENVELOPE_VERSION]) + hint


def encrypt_for(recipient: KeyPair, plaintext: bytes, rng: random.Random | None = None) -> Envelope:
    """Encrypt ``plaintext`` so only the holder of ``recipient``'s private key can read it.

    A fresh content key, nonce and ephemeral key are drawn per call, from
    ``rng`` when supplied (deterministic replays) or the OS otherwise.
    """
    _require(recipient, KeyKind.ENCRYPTION)
    draw = rng.randbytes if rng is not None else os.urandom
    content_key = draw(32)
    nonce = draw(NONCE_SIZE)
    eph = X25519PrivateKey.from_private_bytes(draw(32))
    eph_pub = eph.public_key().public_bytes(_RAW, serialization.PublicFormat.Raw)
    shared = eph.exchange(X25519PublicKey.from_public_bytes(recipient.public))
    wrapped = eph_pub + aes_key_wrap(_kek(shared, eph_pub, recipient.public), content_key)
    hint = recipient.fingerprint
    ct = AESGCM(content_key).encrypt(nonce, plaintext, _aad(hint))
    return Envelope(wrapped, nonce, ct, hint)


def decrypt_with(private: KeyPair, envelope: Envelope | bytes) -> bytes:
    _require(private, KeyKind.ENCRYPTION, private=True)
    if isinstance(envelope, (bytes, bytearray, memoryview)):
        envelope = Envelope.from_bytes(bytes(envelope))
    if envelope.recipient_hint != private.fingerprint:
        raise AuthFailure("envelope is addressed to a different key")
    if len(envelope.wrapped_key) != 32 + 40 or len(envelope.nonce) != NONCE_SIZE:
        raise AuthFailure("malformed key wrap")
    eph_pub, blob = envelope.wrapped_key[:32], envelope.wrapped_key[32:]
    try:
        shared = X25519PrivateKey.from_private_bytes(private.private).exchange(
            X25519PublicKey.from_public_bytes(eph_pub))
        content_key = aes_key_unwrap(_kek(shared, eph_pub, private.public), blob)
        return AESGCM(content_key).decrypt(envelope.nonce, envelope.ciphertext,
                                           _aad(envelope.recipient_hint))
    except (InvalidUnwrap, InvalidTag, ValueError) as exc:
        raise AuthFailure(f"envelope failed authentication ({type(exc).__name__})") from None


@dataclass(frozen=True)
class ImageSignature:
    signer_public: bytes
    signature: bytes

    @property
    def signer_fingerprint(self) -> bytes:
        return fingerprint(self.signer_public)

    def to_bytes(self) -> bytes:
        return bytes([KEY_VERSION]) + self.signer_public + self.signature

    @classmethod
    def from_bytes(cls, blob: bytes) -> ImageSignature:
        if len(blob) != 97 or blob[0] != KEY_VERSION:
            raise ValueError("malformed image signature")
        return cls(bytes(blob[1:33]), bytes(blob[33:]))


def sign_image(signing: KeyPair, image: bytes) -> ImageSignature:
    _require(signing, KeyKind.SIGNING, private=True)
    key = Ed25519PrivateKey.from_private_bytes(signing.private)
    return ImageSignature(signing.public, key.sign(hashlib.sha256(image).digest()))


def verify_image(signing_public: KeyPair, image: bytes, sig: ImageSignature) -> bool:
    _require(signing_public, KeyKind.SIGNING)
    if sig.signer_public != signing_public.public:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(signing_public.public).verify(
            sig.signature, hashlib.sha256(image).digest())
    except _CryptoInvalidSignature:
        return False
    return True


def sign_bytes(signing: KeyPair, message: bytes) -> bytes:
    _require(signing, KeyKind.SIGNING, private=True)
    return Ed25519PrivateKey.from_private_bytes(signing.private).sign(message)


def verify_bytes(public: bytes, message: bytes, signature: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public).verify(signature, message)
    except (_CryptoInvalidSignature, ValueError):
        return False
    return True


def conceal(image: bytes) -> bytes:
    """Hook for stripping patient-identifying data before encryption (identity)."""
    return image
