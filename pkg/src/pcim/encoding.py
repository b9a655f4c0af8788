"""Byte-level helpers: base58btc, keccak-256 (checksum casing only) and
tag-length-value fields."""

from __future__ import annotations

import functools
import struct

B58_ALPHABET = "123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz"
_B58_INDEX = {c: i for i, c in enumerate(B58_ALPHABET)}


def b58encode(data: bytes) -> str:
    pad = len(data) - len(data.lstrip(b"\0"))
    acc = int.from_bytes(data, "big")
    out = []
    while acc:
        acc, rem = divmod(acc, 58)
        out.append(B58_ALPHABET[rem])
    return "1" * pad + "".join(reversed(out))


def b58decode(text: str) -> bytes:
    pad = len(text) - len(text.lstrip("1"))
    acc = 0
    for ch in text:
        try:
            acc = acc * 58 + _B58_INDEX[ch]
        except KeyError:
            raise ValueError(f"invalid base58 character {ch!r}") from None
    body = acc.to_bytes((acc.bit_length() + 7) // 8, "big") if acc else b""
    return b"\0" * pad + body


# Keccak-f[1600]. Only used to pick the letter casing of displayed addresses,
# which must match checksummed addresses produced by Ethereum tooling.
_RC = [
    0x0000000000000001, 0x0000000000008082, 0x800000000000808A, 0x8000000080008000,
    0x000000000000808B, 0x0000000080000001, 0x8000000080008081, 0x8000000000008009,
    0x000000000000008A, 0x0000000000000088, 0x0000000080008009, 0x000000008000000A,
    0x000000008000808B, 0x800000000000008B, 0x8000000000008089, 0x8000000000008003,
    0x8000000000008002, 0x8000000000000080, 0x000000000000800A, 0x800000008000000A,
    0x8000000080008081, 0x8000000000008080, 0x0000000080000001, 0x8000000080008008,
]
_ROT = [
    [0, 36, 3, 41, 18],
    [1, 44, 10, 45, 2],
    [62, 6, 43, 15, 61],
    [28, 55, 25, 21, 56],
    [27, 20, 39, 8, 14],
]
_MASK = (1 << 64) - 1


def _rol(x: int, n: int) -> int:
    return ((x << n) | (x >> (64 - n))) & _MASK if n else x


def _keccak_f(a: list[list[int]]) -> list[list[int]]:
    for rc in _RC:
        c = [a[x][0] ^ a[x][1] ^ a[x][2] ^ a[x][3] ^ a[x][4] for x in range(5)]
        d = [c[(x - 1) % 5] ^ _rol(c[(x + 1) % 5], 1) for x in range(5)]
        a = [[a[x][y] ^ d[x] for y in range(5)] for x in range(5)]
        b = [[0] * 5 for _ in range(5)]
        for x in range(5):
            for y in range(5):
                b[y][(2 * x + 3 * y) % 5] = _rol(a[x][y], _ROT[x][y])
        a = [[b[x][y] ^ (~b[(x + 1) % 5][y] & b[(x + 2) % 5][y]) for y in range(5)]
             for x in range(5)]
        a[0][0] ^= rc
    return a


def keccak256(data: bytes) -> bytes:
    rate = 136
    buf = bytearray(data) + b"\x01"
    buf += b"\0" * (-len(buf) % rate)
    buf[-1] |= 0x80
    state = [[0] * 5 for _ in range(5)]
    for off in range(0, len(buf), rate):
        for i in range(rate // 8):
            word = int.from_bytes(buf[off + 8 * i: off + 8 * i + 8], "little")
            state[i % 5][i // 5] ^= word
        state = _keccak_f(state)
    return b"".join(state[i % 5][i // 5].to_bytes(8, "little") for i in range(4))


@functools.lru_cache(maxsize=4096)
def checksum_hex(raw: bytes) -> str:
    """Mixed-case hex of a 20-byte address (EIP-55 casing)."""
    lower = raw.hex()
    digest = keccak256(lower.encode("ascii")).hex()
    return "0x" + "".join(
        ch.upper() if int(digest[i], 16) >= 8 else ch for i, ch in enumerate(lower)
    )


def tlv(tag: int, value: bytes) -> bytes:
    return struct.pack(">BI", tag, len(value)) + value


class Reader:
    """Cursor over a byte string that fails loudly on short reads."""

    def __init__(self, data: bytes, offset: int = 0):
        self.data = data
        self.pos = offset

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise ValueError("truncated input")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def u128(self) -> int:
        return int.from_bytes(self.take(16), "big")

    def tlv(self, expected_tag: int) -> bytes:
        tag = self.u8()
        if tag != expected_tag:
            raise ValueError(f"expected field tag {expected_tag}, got {tag}")
        return self.take(self.u32())

    def done(self) -> bool:
        return self.pos == len(self.data)

    def expect_end(self) -> None:
        if not self.done():
            raise ValueError(f"{len(self.data) - self.pos} trailing bytes")
