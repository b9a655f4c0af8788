from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .encoding import checksum_hex
from .errors import InvalidKey


@dataclass(frozen=True, order=True)
class Address:
    """A 20-byte account identifier.

    Displayed as ``0x`` plus 40 hex digits in EIP-55 checksum casing so that
    addresses copied from Ethereum tooling print back exactly as given.
    """

    raw: bytes

    def __post_init__(self):
        if len(self.raw) != 20:
            raise ValueError("an address is exactly 20 bytes")

    @classmethod
    def parse(cls, text: str) -> Address:
        if not (isinstance(text, str) and len(text) == 42 and text[:2] in ("0x", "0X")):
            raise ValueError(f"not an address: {text!r}")
        body = text[2:]
        try:
            addr = cls(bytes.fromhex(body))
        except ValueError:
            raise ValueError(f"not an address: {text!r}") from None
        mixed = body != body.lower() and body != body.upper()
        if mixed and addr.display != "0x" + body:
            raise ValueError(f"bad address checksum: {text!r}")
        return addr

    @property
    def display(self) -> str:
        return checksum_hex(self.raw)

    @property
    def hex(self) -> str:
        return "0x" + self.raw.hex()

    def __str__(self) -> str:
        return self.display

    def __repr__(self) -> str:
        return f"Address({self.display})"


ZERO_ADDRESS = Address(bytes(20))


def derive_address(pubkey: bytes) -> Address:
    """Last 20 bytes of sha256(pubkey)."""
    if not pubkey:
        raise InvalidKey("cannot derive an address from an empty key")
    return Address(hashlib.sha256(pubkey).digest()[-20:])
