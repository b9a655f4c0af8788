import os
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcim.envelope import (
    Envelope,
    KeyKind,
    KeyPair,
    decrypt_with,
    encrypt_for,
    generate_keypair,
    sign_image,
    verify_image,
)
from pcim.errors import AuthFailure, WrongKeyKind

ALICE = generate_keypair(KeyKind.ENCRYPTION, 1)
BOB = generate_keypair(KeyKind.ENCRYPTION, 2)
SIGNER = generate_keypair(KeyKind.SIGNING, 3)


def test_seeded_keys_are_deterministic():
    assert generate_keypair(KeyKind.ENCRYPTION, 1) == ALICE
    assert generate_keypair(KeyKind.ENCRYPTION) != generate_keypair(KeyKind.ENCRYPTION)
    assert KeyPair.from_private(ALICE.kind, ALICE.private).public == ALICE.public


def test_export_never_includes_private():
    blob = ALICE.export_public()
    assert ALICE.private not in blob
    assert KeyPair.from_public(blob) == ALICE.public_only()
    assert ALICE.private.hex() not in repr(ALICE)


@pytest.mark.parametrize("size", [0, 1, 1000, 1 << 20])
def test_roundtrip(size):
    data = os.urandom(size)
    env = encrypt_for(ALICE.public_only(), data)
    assert decrypt_with(ALICE, env) == data
    assert decrypt_with(ALICE, env.to_bytes()) == data
    assert len(env.ciphertext) == size + 16


def test_wrong_key_fails():
    env = encrypt_for(ALICE, b"image")
    with pytest.raises(AuthFailure):
        decrypt_with(BOB, env)


def test_fresh_randomness_per_call():
    a = encrypt_for(ALICE, b"same")
    b = encrypt_for(ALICE, b"same")
    assert a.ciphertext != b.ciphertext and a.wrapped_key != b.wrapped_key


def test_seeded_rng_reproduces_envelope():
    a = encrypt_for(ALICE, b"same", random.Random(5))
    b = encrypt_for(ALICE, b"same", random.Random(5))
    assert a == b


def test_key_kinds_are_enforced():
    with pytest.raises(WrongKeyKind):
        encrypt_for(SIGNER, b"x")
    with pytest.raises(WrongKeyKind):
        sign_image(ALICE, b"x")
    with pytest.raises(WrongKeyKind):
        decrypt_with(ALICE.public_only(), encrypt_for(ALICE, b"x"))


def test_flip_one_ciphertext_byte():
    env = encrypt_for(ALICE, b"medical image bytes")
    ct = bytearray(env.ciphertext)
    ct[3] ^= 1
    with pytest.raises(AuthFailure):
        decrypt_with(ALICE, Envelope(env.wrapped_key, env.nonce, bytes(ct), env.recipient_hint))


ENV_BYTES = encrypt_for(ALICE, b"x" * 300, random.Random(9)).to_bytes()


@settings(max_examples=100)
@given(st.integers(0, len(ENV_BYTES) - 1), st.integers(1, 255))
def test_any_single_byte_mutation_is_rejected(pos, delta):
    mutated = bytearray(ENV_BYTES)
    mutated[pos] = (mutated[pos] + delta) % 256
    with pytest.raises(AuthFailure):
        decrypt_with(ALICE, bytes(mutated))


def test_envelope_layout():
    env = Envelope.from_bytes(ENV_BYTES)
    assert ENV_BYTES[0] == 1
    assert int.from_bytes(ENV_BYTES[1:3], "big") == len(env.wrapped_key)
    assert ENV_BYTES[-8:] == ALICE.fingerprint == env.recipient_hint


def test_signature_truth_table():
    other = generate_keypair(KeyKind.SIGNING, 4)
    sig = sign_image(SIGNER, b"image")
    assert verify_image(SIGNER.public_only(), b"image", sig)
    assert not verify_image(other.public_only(), b"image", sig)
    assert not verify_image(SIGNER, b"imagE", sig)
