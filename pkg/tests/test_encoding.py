import hashlib

import pytest
from hypothesis import given
from hypothesis import strategies as st

from pcim.address import Address, derive_address
from pcim.encoding import B58_ALPHABET, b58decode, b58encode, keccak256
from pcim.errors import InvalidKey


def b58_schoolbook(data: bytes) -> str:
    digits = [0]
    for byte in data:
        carry = byte
        for i in range(len(digits)):
            carry += digits[i] << 8
            digits[i] = carry % 58
            carry //= 58
        while carry:
            digits.append(carry % 58)
            carry //= 58
    body = "".join(B58_ALPHABET[d] for d in reversed(digits)).lstrip("1")
    return "1" * (len(data) - len(data.lstrip(b"\0"))) + body


@given(st.binary(max_size=64))
def test_b58_matches_schoolbook_and_roundtrips(data):
    assert b58encode(data) == b58_schoolbook(data)
    assert b58decode(b58encode(data)) == data


def test_b58_rejects_bad_chars():
    with pytest.raises(ValueError):
        b58decode("0OIl")


def test_keccak_known_vectors():
    assert keccak256(b"").hex() == "c5d2460186f7233c927e7db2dcc703c0e500b653ca82273b7bfad8045d85a470"
    assert keccak256(b"abc").hex() == "4e03657aea45a94fc7d47ba826c8d667c0d1e6e33a64a036ec44f58fa12d6c45"
    # crosses the 136-byte rate boundary
    assert keccak256(b"a" * 200) != keccak256(b"a" * 199)


@pytest.mark.parametrize("text", [
    "0x5575805E19b4807974Be0B77Fd9d385D4A0e6d1E",
    "0xdD870fA1b7C4700F2BD7f44238821C26f7392148",
    "0x583031D1113aD414F02576BD6afaBfb302140225",
])
def test_fixture_addresses_roundtrip_exactly(text):
    addr = Address.parse(text)
    assert addr.display == text
    assert Address.parse(text.lower()) == addr


def test_bad_checksum_rejected():
    with pytest.raises(ValueError):
        Address.parse("0x5575805e19B4807974Be0B77Fd9d385D4A0e6d1E")


def test_derive_address():
    a = derive_address(b"\x01")
    assert a.hex == "0x8cd2b7e3d1600ad631c385a5d7cce23c7785459a"
    assert a == derive_address(b"\x01")
    assert len(a.display) == 42
    with pytest.raises(InvalidKey):
        derive_address(b"")


@given(st.binary(min_size=1, max_size=64))
def test_address_display_roundtrip(key):
    a = derive_address(key)
    assert a.raw == hashlib.sha256(key).digest()[-20:]
    assert Address.parse(a.display) == a
    assert len(a.display) == 42
