"""A gas-metered, single-writer ledger hosting the access-control contract.

Transactions carry a PCIM payload (image Cid, patient address, timestamp,
encryption key, description) plus the contract call. Applying a transaction
charges ``gas_used * gas_price`` wei from the sender, bumps its nonce and
routes the call to :class:`pcim.pcac.Registry`; reverted calls still pay.
Blocks are produced explicitly by :meth:`Chain.seal_block`.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
from dataclasses import dataclass, field, replace
from decimal import Decimal
from pathlib import Path
from typing import Callable, Iterable, Sequence

from . import pcac
from .address import ZERO_ADDRESS, Address, derive_address
from .cas import Cid
from .encoding import Reader, tlv
from .envelope import KeyKind, KeyPair, generate_keypair, sign_bytes, verify_bytes
from .errors import (
    BadNonce,
    ContractError,
    CorruptChain,
    InsufficientFunds,
    InvalidSignature,
    OutOfGas,
    PcimError,
    UnknownAccount,
    UnknownFunction,
    by_name,
)

log = logging.getLogger(__name__)

WEI_PER_GWEI = 10**9
WEI_PER_ETHER = 10**18
TX_VERSION = 0x01
BLOCK_VERSION = 0x01
ZERO_HASH = bytes(32)
DEFAULT_GAS_LIMIT = 300_000
DEFAULT_GAS_PRICE = 2 * WEI_PER_GWEI

# Gas per contract function, as measured on the reference deployment.
BASE_GAS = {
    pcac.CREATE_CONTRACT: 67394,
    pcac.REQUESTING_ACCESS: 246908,
    pcac.APPROVE_IRS: 170412,
    pcac.TRACE_AUTHORIZATION: 34266,
    pcac.REMOVE_IRS: 59358,
}

# Fixed account that receives contract calls.
CONTRACT_ADDRESS = derive_address(b"pcim access-control contract")


@dataclass
class GasSchedule:
    base_gas: dict[str, int] = field(default_factory=lambda: dict(BASE_GAS))
    per_note_byte: int = 0
    gas_price_default: int = DEFAULT_GAS_PRICE
    usd_per_ether: Decimal = Decimal("187")

    def to_json(self) -> dict:
        return {"base_gas": self.base_gas, "per_note_byte": self.per_note_byte,
                "gas_price_default": self.gas_price_default,
                "usd_per_ether": str(self.usd_per_ether)}

    @classmethod
    def from_json(cls, d: dict) -> GasSchedule:
        base = dict(BASE_GAS)
        base.update(d.get("base_gas", {}))
        return cls(base, int(d.get("per_note_byte", 0)),
                   int(d.get("gas_price_default", DEFAULT_GAS_PRICE)),
                   Decimal(str(d.get("usd_per_ether", "187"))))


def compute_tx_cost(gas_used: int, gas_price: int) -> int:
    if gas_used < 0 or gas_price < 0:
        raise ValueError("gas and price are nonnegative")
    return gas_used * gas_price


def wei_to_ether(wei: int) -> Decimal:
    return Decimal(wei) / Decimal(WEI_PER_ETHER)


def wei_to_usd(wei: int, usd_per_ether: Decimal = Decimal("187")) -> Decimal:
    return wei_to_ether(wei) * Decimal(usd_per_ether)


@dataclass(frozen=True)
class ContractCall:
    function: str
    requester: Address | None = None
    notes: str = ""
    decision: pcac.Decision | None = None
    share_cid: Cid | None = None
    image_signature: bytes = b""

    def to_bytes(self) -> bytes:
        try:
            fid = pcac.FUNCTION_IDS[self.function]
        except KeyError:
            raise UnknownFunction(self.function) from None
        decision = {None: b"", pcac.Decision.GRANT: b"\x01", pcac.Decision.DENY: b"\x02"}
        return bytes([fid]) + b"".join([
            tlv(1, self.requester.raw if self.requester else b""),
            tlv(2, self.notes.encode()),
            tlv(3, decision[self.decision]),
            tlv(4, self.share_cid.multihash if self.share_cid else b""),
            tlv(5, self.image_signature),
        ])

    @classmethod
    def from_bytes(cls, raw: bytes) -> ContractCall:
        r = Reader(raw)
        fid = r.u8()
        if not 1 <= fid <= len(pcac.FUNCTIONS):
            raise ValueError(f"unknown function id {fid}")
        requester = r.tlv(1)
        notes = r.tlv(2).decode()
        decision = {b"": None, b"\x01": pcac.Decision.GRANT,
                    b"\x02": pcac.Decision.DENY}[r.tlv(3)]
        share = r.tlv(4)
        sig = r.tlv(5)
        r.expect_end()
        return cls(pcac.FUNCTIONS[fid - 1], Address(requester) if requester else None, notes,
                   decision, Cid(share) if share else None, sig)


@dataclass(frozen=True)
class PcimData:
    call: ContractCall
    image_cid: Cid | None = None
    patient_address: Address | None = None
    timestamp: int = 0
    encryption_pubkey: bytes = b""
    description: str = ""

    def to_bytes(self) -> bytes:
        return b"".join([
            tlv(1, self.image_cid.multihash if self.image_cid else b""),
            tlv(2, self.patient_address.raw if self.patient_address else b""),
            tlv(3, struct.pack(">Q", self.timestamp)),
            tlv(4, self.encryption_pubkey),
            tlv(5, self.description.encode()),
            tlv(6, self.call.to_bytes()),
        ])

    @classmethod
    def from_bytes(cls, raw: bytes) -> PcimData:
        r = Reader(raw)
        cid = r.tlv(1)
        patient = r.tlv(2)
        (ts,) = struct.unpack(">Q", r.tlv(3))
        pub = r.tlv(4)
        desc = r.tlv(5).decode()
        call = ContractCall.from_bytes(r.tlv(6))
        r.expect_end()
        return cls(call, Cid(cid) if cid else None, Address(patient) if patient else None,
                   ts, pub, desc)


def gas_for_call(function_id: str, pcim: PcimData | None, schedule: GasSchedule) -> int:
    try:
        base = schedule.base_gas[function_id]
    except KeyError:
        raise UnknownFunction(function_id) from None
    notes = pcim.call.notes.encode() if pcim is not None else b""
    return base + schedule.per_note_byte * len(notes)


@dataclass(frozen=True)
class Transaction:
    nonce: int
    gas_price: int
    gas_limit: int
    value: int
    recipient: Address
    pcim: PcimData | None
    sender: Address
    sender_pubkey: bytes
    signature: bytes = b""

    def canonical_bytes(self) -> bytes:
        payload = self.pcim.to_bytes() if self.pcim is not None else b""
        return b"".join([
            bytes([TX_VERSION]),
            struct.pack(">Q", self.nonce),
            self.gas_price.to_bytes(16, "big"),
            struct.pack(">Q", self.gas_limit),
            self.value.to_bytes(16, "big"),
            self.recipient.raw,
            struct.pack(">I", len(payload)), payload,
        ])

    def signing_digest(self) -> bytes:
        return hashlib.sha256(self.canonical_bytes()).digest()

    def to_bytes(self) -> bytes:
        return (self.canonical_bytes() + self.sender.raw
                + bytes([len(self.sender_pubkey)]) + self.sender_pubkey
                + bytes([len(self.signature)]) + self.signature)

    @property
    def hash(self) -> bytes:
        return hashlib.sha256(self.to_bytes()).digest()

    def signature_valid(self) -> bool:
        return verify_bytes(self.sender_pubkey, self.signing_digest(), self.signature)

    @classmethod
    def from_bytes(cls, raw: bytes) -> Transaction:
        r = Reader(raw)
        if r.u8() != TX_VERSION:
            raise ValueError("unsupported transaction version")
        nonce = r.u64()
        gas_price = r.u128()
        gas_limit = r.u64()
        value = r.u128()
        recipient = Address(r.take(20))
        payload = r.take(r.u32())
        sender = Address(r.take(20))
        pub = r.take(r.u8())
        sig = r.take(r.u8())
        r.expect_end()
        pcim = PcimData.from_bytes(payload) if payload else None
        return cls(nonce, gas_price, gas_limit, value, recipient, pcim, sender, pub, sig)


@dataclass
class Wallet:
    """Client-side view of an externally owned account."""

    keypair: KeyPair
    address: Address
    nonce: int = 0
    balance: int = 0

    @classmethod
    def create(cls, seed=None, address: Address | None = None) -> Wallet:
        kp = generate_keypair(KeyKind.SIGNING, seed)
        return cls(kp, address or derive_address(kp.public))


def sign_transaction(wallet: Wallet, *, pcim: PcimData | None = None, nonce: int | None = None,
                     gas_price: int = DEFAULT_GAS_PRICE, gas_limit: int = DEFAULT_GAS_LIMIT,
                     value: int = 0, recipient: Address = CONTRACT_ADDRESS) -> Transaction:
    tx = Transaction(wallet.nonce if nonce is None else nonce, gas_price, gas_limit, value,
                     recipient, pcim, wallet.address, wallet.keypair.public)
    return replace(tx, signature=sign_bytes(wallet.keypair, tx.signing_digest()))


@dataclass
class Receipt:
    tx_hash: bytes
    status: str  # success | reverted | out-of-gas
    gas_used: int
    gas_price: int
    cost_wei: int
    events: list[pcac.Event] = field(default_factory=list)
    error: str | None = None
    message: str = ""
    return_value: bool | None = None
    block_height: int | None = None

    @property
    def ok(self) -> bool:
        return self.status == "success"

    def raise_for_status(self) -> Receipt:
        if not self.ok:
            raise by_name(self.error or "PcimError")(self.message or self.status)
        return self


@dataclass
class Block:
    height: int
    parent_hash: bytes
    timestamp: int
    tx_root: bytes
    transactions: list[Transaction]
    gas_used: int
    block_hash: bytes = b""

    def header_bytes(self) -> bytes:
        return (bytes([BLOCK_VERSION]) + struct.pack(">Q", self.height) + self.parent_hash
                + struct.pack(">Q", self.timestamp) + self.tx_root
                + struct.pack(">Q", self.gas_used))

    def compute_hash(self) -> bytes:
        return hashlib.sha256(self.header_bytes()).digest()

    def to_bytes(self) -> bytes:
        parts = [self.header_bytes(), self.block_hash, struct.pack(">I", len(self.transactions))]
        for tx in self.transactions:
            raw = tx.to_bytes()
            parts.append(struct.pack(">I", len(raw)))
            parts.append(raw)
        return b"".join(parts)

    @property
    def size_bytes(self) -> int:
        return len(self.to_bytes())

    @classmethod
    def from_bytes(cls, raw: bytes) -> Block:
        r = Reader(raw)
        if r.u8() != BLOCK_VERSION:
            raise ValueError("unsupported block version")
        height = r.u64()
        parent = r.take(32)
        ts = r.u64()
        tx_root = r.take(32)
        gas = r.u64()
        bhash = r.take(32)
        txs = [Transaction.from_bytes(r.take(r.u32())) for _ in range(r.u32())]
        r.expect_end()
        return cls(height, parent, ts, tx_root, txs, gas, bhash)


def tx_root_of(txs: Sequence[Transaction]) -> bytes:
    return hashlib.sha256(b"".join(tx.hash for tx in txs)).digest()


def encode_blocks(blocks: Iterable[Block]) -> bytes:
    out = []
    for b in blocks:
        raw = b.to_bytes()
        out.append(struct.pack(">I", len(raw)))
        out.append(raw)
    return b"".join(out)


def decode_blocks(raw: bytes) -> list[Block]:
    r = Reader(raw)
    blocks = []
    while not r.done():
        blocks.append(Block.from_bytes(r.take(r.u32())))
    return blocks


def chain_violation(blocks: Sequence[Block] | bytes) -> str | None:
    """First structural problem in a block sequence, or None if it verifies."""
    if isinstance(blocks, (bytes, bytearray)):
        try:
            blocks = decode_blocks(bytes(blocks))
        except (ValueError, UnicodeDecodeError, KeyError) as exc:
            return f"block file does not parse: {exc}"
    if not blocks:
        return "no genesis block"
    prev = ZERO_HASH
    for i, b in enumerate(blocks):
        if b.height != i:
            return f"block {i}: height {b.height}"
        if b.parent_hash != prev:
            return f"block {i}: parent hash mismatch"
        if tx_root_of(b.transactions) != b.tx_root:
            return f"block {i}: tx_root mismatch"
        if b.compute_hash() != b.block_hash:
            return f"block {i}: block hash mismatch"
        for j, tx in enumerate(b.transactions):
            if not tx.signature_valid():
                return f"block {i} tx {j}: bad signature"
        prev = b.block_hash
    return None


def validate_chain(chain: Chain | Sequence[Block] | bytes) -> bool:
    blocks = chain.blocks if isinstance(chain, Chain) else chain
    problem = chain_violation(blocks)
    if problem:
        log.info("chain invalid: %s", problem)
    return problem is None


@dataclass
class Account:
    pubkey: bytes | None
    balance: int = 0
    nonce: int = 0


@dataclass(frozen=True)
class Allocation:
    height: int
    address: Address
    pubkey: bytes | None
    amount: int


class Chain:
    """In-memory chain state with optional on-disk persistence."""

    def __init__(self, schedule: GasSchedule | None = None,
                 rate_limit: pcac.RateLimitPolicy | None = None,
                 clock: Callable[[], int] | None = None, genesis_timestamp: int = 0):
        self.schedule = schedule or GasSchedule()
        self.registry = pcac.Registry(rate_limit)
        self.clock = clock or (lambda: 0)
        self.accounts: dict[Address, Account] = {}
        self.allocations: list[Allocation] = []
        self.fees_collected = 0
        self.blocks: list[Block] = []
        self.pending: list[tuple[Transaction, Receipt]] = []
        self.receipts: dict[bytes, Receipt] = {}
        self.events: list[pcac.Event] = []
        self.genesis_timestamp = genesis_timestamp
        self._append_block([], genesis_timestamp)

    # accounts

    def fund(self, address: Address, amount: int, pubkey: bytes | None = None) -> Account:
        """Credit ``amount`` wei (a genesis-style allocation) and optionally bind a key.

        Binding lets an account whose address was not derived from its key
        (e.g. an imported fixture address) sign transactions.
        """
        if self.pending:
            raise PcimError("cannot allocate funds while transactions are pending")
        if amount < 0:
            raise ValueError("allocation must be nonnegative")
        acct = self.accounts.setdefault(address, Account(None))
        if pubkey is not None:
            if acct.pubkey is not None and acct.pubkey != pubkey:
                raise PcimError(f"{address} is already bound to another key")
            acct.pubkey = pubkey
        acct.balance += amount
        self.allocations.append(Allocation(len(self.blocks), address, pubkey, amount))
        return acct

    def account(self, address: Address) -> Account:
        try:
            return self.accounts[address]
        except KeyError:
            raise UnknownAccount(str(address)) from None

    def next_nonce(self, address: Address) -> int:
        acct = self.accounts.get(address)
        return acct.nonce if acct else 0

    def total_supply(self) -> int:
        return sum(a.balance for a in self.accounts.values()) + self.fees_collected

    def _key_matches(self, tx: Transaction) -> bool:
        acct = self.accounts.get(tx.sender)
        if acct is not None and acct.pubkey is not None:
            return acct.pubkey == tx.sender_pubkey
        return bool(tx.sender_pubkey) and derive_address(tx.sender_pubkey) == tx.sender

    # transactions

    def apply_transaction(self, tx: Transaction) -> Receipt:
        """Validate, charge and execute one transaction, queueing it for the next block.

        Raises for transactions that cannot be included at all (signature,
        nonce, funds). Contract reverts and out-of-gas are reported through
        the receipt status; their gas is still charged.
        """
        if not tx.signature_valid() or not self._key_matches(tx):
            raise InvalidSignature(f"transaction from {tx.sender} is not validly signed")
        acct = self.accounts.get(tx.sender)
        if acct is None:
            raise InsufficientFunds(f"{tx.sender} has no funds")
        if tx.nonce != acct.nonce:
            raise BadNonce(f"expected nonce {acct.nonce}, got {tx.nonce}")
        upfront = tx.gas_limit * tx.gas_price + tx.value
        if acct.balance < upfront:
            raise InsufficientFunds(f"{tx.sender} holds {acct.balance} wei, needs {upfront}")
        if acct.pubkey is None:
            acct.pubkey = tx.sender_pubkey

        height = len(self.blocks)
        tx_hash = tx.hash
        if tx.pcim is not None:
            needed = gas_for_call(tx.pcim.call.function, tx.pcim, self.schedule)
        else:
            needed = 21000
        receipt = Receipt(tx_hash, "success", needed, tx.gas_price, 0, block_height=height)
        acct.nonce += 1
        if needed > tx.gas_limit:
            receipt.status, receipt.error = "out-of-gas", OutOfGas.__name__
            receipt.message = f"needs {needed} gas, limit {tx.gas_limit}"
            receipt.gas_used = tx.gas_limit
        else:
            try:
                if tx.pcim is not None:
                    result, events = self._execute(tx)
                    receipt.return_value = result
                    receipt.events = [e.located(height, tx_hash) for e in events]
                if tx.value:
                    acct.balance -= tx.value
                    self.accounts.setdefault(tx.recipient, Account(None)).balance += tx.value
            except ContractError as exc:
                receipt.status, receipt.error, receipt.message = "reverted", type(exc).__name__, str(exc)
        receipt.cost_wei = compute_tx_cost(receipt.gas_used, tx.gas_price)
        acct.balance -= receipt.cost_wei
        self.fees_collected += receipt.cost_wei
        self.pending.append((tx, receipt))
        self.receipts[tx_hash] = receipt
        return receipt

    def _execute(self, tx: Transaction) -> tuple[bool | None, list[pcac.Event]]:
        p = tx.pcim
        call = p.call
        reg = self.registry
        if call.function == pcac.CREATE_CONTRACT:
            if p.image_cid is None or p.patient_address is None:
                raise ContractError("create_contract needs an image Cid and patient address")
            _, events = reg.create_contract(tx.sender, p.patient_address, p.image_cid,
                                            p.description, p.timestamp, p.encryption_pubkey,
                                            call.image_signature)
            return True, events
        if call.requester is None:
            raise ContractError(f"{call.function} needs a requester address")
        if call.function == pcac.REQUESTING_ACCESS:
            if p.patient_address is None:
                raise ContractError("requesting_access needs the patient address")
            events = reg.requesting_access(tx.sender, call.requester, p.patient_address,
                                           p.encryption_pubkey, call.notes, p.timestamp,
                                           p.image_cid)
            return None, events
        if call.function == pcac.APPROVE_IRS:
            return reg.approve_IRs(tx.sender, call.requester, call.decision or pcac.Decision.GRANT,
                                   call.notes, p.timestamp, p.image_cid, call.share_cid)
        if call.function == pcac.TRACE_AUTHORIZATION:
            patient = p.patient_address or tx.sender
            return reg.trace_authorization(tx.sender, patient, call.requester, p.image_cid)
        if call.function == pcac.REMOVE_IRS:
            return reg.remove_IRs(tx.sender, call.requester, p.image_cid)
        raise UnknownFunction(call.function)

    # blocks

    def _append_block(self, txs: list[Transaction], timestamp: int, gas: int = 0) -> Block:
        parent = self.blocks[-1].block_hash if self.blocks else ZERO_HASH
        block = Block(len(self.blocks), parent, timestamp, tx_root_of(txs), txs, gas)
        block.block_hash = block.compute_hash()
        self.blocks.append(block)
        return block

    def seal_block(self, timestamp: int | None = None) -> Block:
        ts = self.clock() if timestamp is None else timestamp
        txs = [tx for tx, _ in self.pending]
        gas = sum(r.gas_used for _, r in self.pending)
        block = self._append_block(txs, ts, gas)
        for _, receipt in self.pending:
            self.events.extend(receipt.events)
        self.pending = []
        return block

    @property
    def head(self) -> Block:
        return self.blocks[-1]

    @property
    def height(self) -> int:
        return self.head.height

    def query_events(self, address: Address | None = None,
                     name: str | Iterable[str] | None = None) -> list[pcac.Event]:
        names = {name} if isinstance(name, str) else set(name) if name is not None else None
        return [e for e in self.events
                if (address is None or e.involves(address))
                and (names is None or e.name in names)]

    # persistence

    def genesis_json(self) -> dict:
        rl = self.registry.rate_limit
        return {
            "version": 1,
            "genesis_timestamp": self.genesis_timestamp,
            "schedule": self.schedule.to_json(),
            "rate_limit": None if rl is None else {"max_approvals": rl.max_approvals,
                                                   "window": rl.window},
            "allocations": [
                {"height": a.height, "address": a.address.display,
                 "pubkey": a.pubkey.hex() if a.pubkey is not None else None,
                 "amount": str(a.amount)}
                for a in self.allocations],
        }

    def save(self, directory: str | os.PathLike) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "genesis.json").write_text(json.dumps(self.genesis_json(), indent=1))
        (d / "blocks.bin").write_bytes(encode_blocks(self.blocks))
        with open(d / "events.jsonl", "w") as fh:
            for ev in self.events:
                fh.write(json.dumps(ev.to_json()) + "\n")

    @classmethod
    def replay(cls, genesis: dict, blocks: Sequence[Block]) -> Chain:
        """Rebuild state by re-executing every block; raises CorruptChain on divergence."""
        rl = genesis.get("rate_limit")
        chain = cls(GasSchedule.from_json(genesis.get("schedule", {})),
                    pcac.RateLimitPolicy(rl["max_approvals"], rl["window"]) if rl else None,
                    genesis_timestamp=genesis.get("genesis_timestamp", 0))
        allocs = [Allocation(a["height"], Address.parse(a["address"]),
                             bytes.fromhex(a["pubkey"]) if a["pubkey"] else None, int(a["amount"]))
                  for a in genesis.get("allocations", [])]
        if not blocks or blocks[0].block_hash != chain.blocks[0].block_hash:
            raise CorruptChain("genesis block mismatch")

        def allocate(height):
            for a in allocs:
                if a.height == height:
                    chain.fund(a.address, a.amount, a.pubkey)

        allocate(0)
        allocate(1)
        for stored in blocks[1:]:
            try:
                for tx in stored.transactions:
                    chain.apply_transaction(tx)
            except PcimError as exc:
                raise CorruptChain(f"block {stored.height}: {exc}") from None
            sealed = chain.seal_block(stored.timestamp)
            if sealed.block_hash != stored.block_hash:
                raise CorruptChain(f"block {stored.height}: replay diverged")
            allocate(sealed.height + 1)
        return chain

    @classmethod
    def load(cls, directory: str | os.PathLike) -> Chain:
        d = Path(directory)
        try:
            genesis = json.loads((d / "genesis.json").read_text())
        except (OSError, ValueError) as exc:
            raise CorruptChain(f"unreadable genesis: {exc}") from None
        raw = (d / "blocks.bin").read_bytes()
        problem = chain_violation(raw)
        if problem:
            raise CorruptChain(problem)
        return cls.replay(genesis, decode_blocks(raw))
