import random
from dataclasses import replace
from decimal import Decimal

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcim import pcac
from pcim.address import derive_address
from pcim.cas import Cid
from pcim.errors import BadNonce, InsufficientFunds, InvalidSignature, UnknownFunction
from pcim.ledger import (
    BASE_GAS,
    WEI_PER_GWEI,
    Block,
    Chain,
    ContractCall,
    GasSchedule,
    PcimData,
    Transaction,
    Wallet,
    chain_violation,
    compute_tx_cost,
    decode_blocks,
    encode_blocks,
    gas_for_call,
    sign_transaction,
    validate_chain,
    wei_to_ether,
    wei_to_usd,
)

GWEI2 = 2 * WEI_PER_GWEI
CID = Cid.parse("QmNaS5gQzoPxr3S2n6T6BsFuVRmMFwpohLVFfAFrU8gyTq")


def funded_chain(*wallets, amount=10**18, **kw):
    chain = Chain(**kw)
    for w in wallets:
        chain.fund(w.address, amount, w.keypair.public)
    return chain


def create_tx(wallet, nonce=0, gas_limit=300_000, cid=CID, patient=None, notes=""):
    pcim = PcimData(ContractCall(pcac.CREATE_CONTRACT, notes=notes), cid,
                    patient or wallet.address, 1, b"", "Liver image")
    return sign_transaction(wallet, pcim=pcim, nonce=nonce, gas_limit=gas_limit)


def test_function_cost_arithmetic():
    assert compute_tx_cost(67394, GWEI2) == 134788 * WEI_PER_GWEI
    assert wei_to_ether(compute_tx_cost(67394, GWEI2)) == Decimal("0.000134788")
    assert round(wei_to_usd(compute_tx_cost(67394, GWEI2)), 3) == Decimal("0.025")
    assert wei_to_ether(compute_tx_cost(34266, GWEI2)) == Decimal("0.000068532")
    assert round(wei_to_usd(compute_tx_cost(34266, GWEI2)), 3) == Decimal("0.013")
    assert compute_tx_cost(0, 12345) == 0
    # no silent overflow on huge values
    assert compute_tx_cost(2**64, 2**128) == 2**192


def test_gas_for_call():
    sched = GasSchedule()
    req = PcimData(ContractCall(pcac.REQUESTING_ACCESS, notes="x" * 100))
    assert gas_for_call(pcac.REQUESTING_ACCESS, req, sched) == 246908
    assert gas_for_call(pcac.REMOVE_IRS, None, sched) == 59358
    assert gas_for_call(pcac.REQUESTING_ACCESS, req, GasSchedule(per_note_byte=68)) == 246908 + 6800
    with pytest.raises(UnknownFunction):
        gas_for_call("selfdestruct", None, sched)


def test_signing():
    w = Wallet.create(1)
    tx = create_tx(w)
    assert tx.signature_valid()
    assert create_tx(w).signature == tx.signature  # Ed25519 is deterministic
    tampered = replace(tx, gas_price=tx.gas_price + 1)
    assert not tampered.signature_valid()
    assert Transaction.from_bytes(tx.to_bytes()) == tx


def test_canonical_tx_layout():
    w = Wallet.create(1)
    raw = create_tx(w).canonical_bytes()
    assert raw[0] == 1
    assert int.from_bytes(raw[1:9], "big") == 0
    assert int.from_bytes(raw[9:25], "big") == GWEI2
    assert int.from_bytes(raw[25:33], "big") == 300_000


def test_apply_create_contract():
    w = Wallet.create(1)
    chain = funded_chain(w)
    receipt = chain.apply_transaction(create_tx(w))
    assert receipt.ok and receipt.gas_used == 67394
    assert receipt.cost_wei == 134788 * WEI_PER_GWEI
    assert chain.account(w.address).nonce == 1
    assert CID in chain.registry.contracts


def test_out_of_gas_at_30000_limit():
    w = Wallet.create(1)
    chain = funded_chain(w)
    receipt = chain.apply_transaction(create_tx(w, gas_limit=30_000))
    assert receipt.status == "out-of-gas" and receipt.error == "OutOfGas"
    assert receipt.cost_wei == 30_000 * GWEI2
    assert CID not in chain.registry.contracts


def test_replay_nonce_rejected():
    w = Wallet.create(1)
    chain = funded_chain(w)
    tx = create_tx(w)
    chain.apply_transaction(tx)
    with pytest.raises(BadNonce):
        chain.apply_transaction(tx)


def test_insufficient_funds_and_bad_signature():
    w = Wallet.create(1)
    chain = funded_chain(w, amount=1000)
    with pytest.raises(InsufficientFunds):
        chain.apply_transaction(create_tx(w))
    impostor = Wallet.create(2)
    forged = replace(create_tx(impostor), sender=w.address)
    with pytest.raises(InvalidSignature):
        funded_chain(w).apply_transaction(forged)


def test_bound_fixture_address_can_sign():
    from pcim.address import Address
    fixture = Address.parse("0x5575805E19b4807974Be0B77Fd9d385D4A0e6d1E")
    w = Wallet.create(7, fixture)
    chain = funded_chain(w)
    assert chain.apply_transaction(create_tx(w)).ok
    # an unbound key claiming the same address is refused
    other = Wallet.create(8, fixture)
    with pytest.raises(InvalidSignature):
        chain.apply_transaction(create_tx(other, nonce=1))


def test_revert_charges_gas_and_keeps_state():
    w, mallory = Wallet.create(1), Wallet.create(2)
    chain = funded_chain(w, mallory)
    before = chain.registry.snapshot()
    receipt = chain.apply_transaction(create_tx(mallory, patient=w.address))
    assert receipt.status == "reverted" and receipt.error == "Unauthorized"
    assert receipt.cost_wei == 67394 * GWEI2
    assert chain.registry.snapshot() == before
    assert chain.account(mallory.address).nonce == 1


def test_seal_and_chain_links():
    w = Wallet.create(1)
    chain = funded_chain(w)
    empty = chain.seal_block(5)
    assert empty.gas_used == 0
    import hashlib
    assert empty.tx_root == hashlib.sha256(b"").digest()
    chain.apply_transaction(create_tx(w))
    b2 = chain.seal_block(6)
    assert b2.parent_hash == empty.block_hash
    assert b2.gas_used == 67394
    assert validate_chain(chain)


def test_block_size_grows_with_notes():
    sizes = []
    for n in (0, 100, 1000):
        w = Wallet.create(1)
        chain = funded_chain(w)
        chain.apply_transaction(create_tx(w, notes="n" * n))
        sizes.append(chain.seal_block(1).size_bytes)
    assert sizes[0] < sizes[1] < sizes[2]
    assert sizes[2] - sizes[1] == 900


def _two_block_chain():
    w, v = Wallet.create(1), Wallet.create(2)
    chain = funded_chain(w, v)
    chain.apply_transaction(create_tx(w))
    chain.apply_transaction(create_tx(v, cid=Cid.from_digest(bytes(32))))
    chain.seal_block(1)
    return chain


def test_reordered_transactions_detected():
    chain = _two_block_chain()
    b = chain.blocks[1]
    swapped = Block(b.height, b.parent_hash, b.timestamp, b.tx_root,
                    list(reversed(b.transactions)), b.gas_used, b.block_hash)
    assert not validate_chain(chain.blocks[:1] + [swapped])
    assert "tx_root" in chain_violation(chain.blocks[:1] + [swapped])


def test_block_file_roundtrip_and_byte_flip():
    chain = _two_block_chain()
    raw = encode_blocks(chain.blocks)
    assert [b.block_hash for b in decode_blocks(raw)] == [b.block_hash for b in chain.blocks]
    assert validate_chain(raw)
    rng = random.Random(3)
    for _ in range(25):
        pos = rng.randrange(len(raw))
        mutated = bytearray(raw)
        mutated[pos] ^= 1 << rng.randrange(8)
        assert not validate_chain(bytes(mutated))


def test_query_events():
    w = Wallet.create(1)
    chain = funded_chain(w)
    chain.apply_transaction(create_tx(w))
    assert chain.query_events() == []  # pending events are not visible yet
    chain.seal_block(1)
    evs = chain.query_events(w.address)
    assert [e.name for e in evs] == ["ContractCreated"]
    assert evs[0].block_height == 1 and evs[0].tx_hash is not None
    assert chain.query_events(derive_address(b"nobody")) == []


def test_save_and_replay(tmp_path):
    chain = _two_block_chain()
    chain.save(tmp_path)
    loaded = Chain.load(tmp_path)
    assert loaded.head.block_hash == chain.head.block_hash
    assert loaded.registry.snapshot() == chain.registry.snapshot()
    assert [e.to_line() for e in loaded.events] == [e.to_line() for e in chain.events]


FUNCS = st.sampled_from(pcac.FUNCTIONS)


@settings(max_examples=30)
@given(st.lists(st.tuples(st.integers(0, 2), FUNCS, st.integers(0, 2), st.booleans(),
                          st.integers(0, 2), st.booleans()), max_size=25))
def test_conservation_and_cost_identity(ops):
    wallets = [Wallet.create(i) for i in range(3)]
    chain = funded_chain(*wallets, amount=10**16)
    supply = chain.total_supply()
    for who, fn, other, grant, cid_i, tight in ops:
        w = wallets[who]
        call = ContractCall(fn, requester=wallets[other].address,
                            decision=pcac.Decision.GRANT if grant else pcac.Decision.DENY)
        pcim = PcimData(call, Cid.from_digest(bytes([cid_i]) * 32), wallets[other].address
                        if fn != pcac.CREATE_CONTRACT else w.address, 0)
        tx = sign_transaction(w, pcim=pcim, nonce=chain.next_nonce(w.address),
                              gas_limit=30_000 if tight else 300_000)
        try:
            r = chain.apply_transaction(tx)
        except InsufficientFunds:
            continue
        assert r.cost_wei == r.gas_used * r.gas_price
        assert chain.total_supply() == supply
    chain.seal_block(1)
    assert validate_chain(chain)
