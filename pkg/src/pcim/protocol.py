"""Actor-level storage and sharing flows, and the scripted scenario runner.

Actors talk to each other over an in-memory message channel (their
``inbox``); only public keys, Cids and text ever cross it. All randomness
(keys, envelope nonces, generated images) comes from seeded generators and
all timestamps from a simulated clock, so a script replays bit-for-bit.
"""

from __future__ import annotations

import random
import shlex
from dataclasses import dataclass, field
from typing import Any

from . import pcac
from .address import Address
from .cas import Cid, Store
from .envelope import (
    ImageSignature,
    KeyKind,
    KeyPair,
    conceal,
    decrypt_with,
    encrypt_for,
    generate_keypair,
    sign_image,
    verify_image,
)
from .errors import (
    AuthFailure,
    DuplicateImage,
    NoPendingRequest,
    NotFound,
    PcimError,
    RateLimited,
    ScenarioError,
    Unauthorized,
)
from .ledger import (
    DEFAULT_GAS_LIMIT,
    DEFAULT_GAS_PRICE,
    WEI_PER_ETHER,
    Chain,
    ContractCall,
    GasSchedule,
    PcimData,
    Receipt,
    Wallet,
    sign_transaction,
)
from .pcac import Decision, RateLimitPolicy

PATIENT = "patient"
RADIOLOGIST = "radiologist"
IMAGE_REQUESTOR = "image_requestor"
ROLES = (PATIENT, RADIOLOGIST, IMAGE_REQUESTOR)
DEFAULT_BALANCE = 100 * WEI_PER_ETHER


class SimClock:
    """Integer simulated time in seconds."""

    def __init__(self, now: int = 0):
        self.now = now

    def __call__(self) -> int:
        return self.now

    def advance(self, seconds: int) -> int:
        self.now += seconds
        return self.now

    def set(self, t: int) -> None:
        if t < self.now:
            raise ValueError(f"time cannot go backwards ({t} < {self.now})")
        self.now = t


@dataclass(frozen=True)
class Message:
    sender: str
    kind: str
    payload: Any


@dataclass
class Actor:
    name: str
    role: str
    wallet: Wallet
    enc_keys: KeyPair
    sign_keys: KeyPair
    inbox: list[Message] = field(default_factory=list)

    @property
    def address(self) -> Address:
        return self.wallet.address

    def take(self, kind: str) -> Message:
        """Pop the oldest message of ``kind``."""
        for i, msg in enumerate(self.inbox):
            if msg.kind == kind:
                return self.inbox.pop(i)
        raise LookupError(f"{self.name} has no {kind!r} message")


@dataclass
class World:
    chain: Chain
    cas: Store
    clock: SimClock
    rng: random.Random
    seed: int = 0
    actors: dict[str, Actor] = field(default_factory=dict)
    gas_price: int = DEFAULT_GAS_PRICE
    gas_limit: int = DEFAULT_GAS_LIMIT
    auto_seal: bool = True
    key_material: dict[str, str] = field(default_factory=dict, repr=False)

    @classmethod
    def create(cls, seed: int = 0, schedule: GasSchedule | None = None,
               rate_limit: RateLimitPolicy | None = RateLimitPolicy(),
               backend=None, gas_price: int = DEFAULT_GAS_PRICE,
               gas_limit: int = DEFAULT_GAS_LIMIT, start: int = 0) -> World:
        clock = SimClock(start)
        chain = Chain(schedule, rate_limit, clock=clock, genesis_timestamp=start)
        return cls(chain, Store(backend, clock=clock), clock, random.Random(seed), seed,
                   gas_price=gas_price, gas_limit=gas_limit)

    def add_actor(self, name: str, role: str, address: Address | None = None,
                  balance: int = DEFAULT_BALANCE, seed: Any = None) -> Actor:
        """Create an actor with seeded keys and a funded account."""
        if name in self.actors:
            raise ValueError(f"actor {name!r} already exists")
        actor = self.attach_actor(name, role, address, seed)
        self.chain.fund(actor.address, balance, actor.wallet.keypair.public)
        return actor

    def attach_actor(self, name: str, role: str, address: Address | None = None,
                     seed: Any = None) -> Actor:
        """Rebuild an actor's keys from its seed material without touching balances."""
        if role not in ROLES:
            raise ValueError(f"unknown role {role!r}")
        material = f"{self.seed}:{name}" if seed is None else str(seed)
        wallet = Wallet.create(f"wallet:{material}", address)
        actor = Actor(name, role, wallet,
                      generate_keypair(KeyKind.ENCRYPTION, f"enc:{material}"),
                      generate_keypair(KeyKind.SIGNING, f"sign:{material}"))
        wallet.nonce = self.chain.next_nonce(wallet.address)
        self.actors[name] = actor
        self.key_material[name] = material
        return actor

    def actor(self, ref: str | Actor) -> Actor:
        if isinstance(ref, Actor):
            return ref
        try:
            return self.actors[ref]
        except KeyError:
            raise PcimError(f"no actor named {ref!r}") from None

    def address_of(self, ref: str | Actor | Address) -> Address:
        if isinstance(ref, Address):
            return ref
        if isinstance(ref, str) and ref.lower().startswith("0x"):
            return Address.parse(ref)
        return self.actor(ref).address

    def send(self, sender: Actor, recipient: Actor, kind: str, payload: Any) -> None:
        """Secure channel: direct in-memory delivery."""
        recipient.inbox.append(Message(sender.name, kind, payload))

    def submit(self, actor: Actor, call: ContractCall, **pcim_fields) -> Receipt:
        pcim = PcimData(call, timestamp=self.clock(), **pcim_fields)
        actor.wallet.nonce = self.chain.next_nonce(actor.address)
        tx = sign_transaction(actor.wallet, pcim=pcim, gas_price=self.gas_price,
                              gas_limit=self.gas_limit)
        receipt = self.chain.apply_transaction(tx)
        actor.wallet.nonce = self.chain.next_nonce(actor.address)
        actor.wallet.balance = self.chain.account(actor.address).balance
        if self.auto_seal:
            self.chain.seal_block(self.clock())
        return receipt


# single contract calls

def create_contract(world: World, actor: Actor, image_cid: Cid, description: str,
                    patient: Address | None = None, image_signature: bytes = b"") -> Receipt:
    return world.submit(
        actor, ContractCall(pcac.CREATE_CONTRACT, image_signature=image_signature),
        image_cid=image_cid, patient_address=patient or actor.address,
        encryption_pubkey=actor.enc_keys.export_public(), description=description,
    ).raise_for_status()


def request_access(world: World, requestor: Actor, patient: Address, notes: str = "",
                   image_cid: Cid | None = None) -> Receipt:
    """Share the requestor's encryption key with the patient's contract."""
    call = ContractCall(pcac.REQUESTING_ACCESS, requester=requestor.address, notes=notes)
    return world.submit(requestor, call, patient_address=patient, image_cid=image_cid,
                        encryption_pubkey=requestor.enc_keys.export_public()).raise_for_status()


def deny_request(world: World, patient: Actor, requester: Address, notes: str = "") -> Receipt:
    call = ContractCall(pcac.APPROVE_IRS, requester=requester, notes=notes,
                        decision=Decision.DENY)
    return world.submit(patient, call, patient_address=patient.address).raise_for_status()


def trace(world: World, caller: Actor, patient: Address, requester: Address) -> bool:
    call = ContractCall(pcac.TRACE_AUTHORIZATION, requester=requester)
    return world.submit(caller, call, patient_address=patient).raise_for_status().return_value


def remove_requestor(world: World, patient: Actor, requester: Address) -> bool:
    call = ContractCall(pcac.REMOVE_IRS, requester=requester)
    return world.submit(patient, call,
                        patient_address=patient.address).raise_for_status().return_value


def approve_request(world: World, patient: Actor, requester: Address, notes: str = "",
                    reencrypt: bool = True) -> tuple[Cid | None, Receipt]:
    """Grant a pending request, re-encrypting the image for the requestor first.

    Any decryption or key problem aborts before the approval is submitted.
    """
    registry = world.chain.registry
    contract = registry.contract_for(patient.address)
    record = contract.requests.get(requester)
    if contract.authorize_user.get(requester):
        return None, world.submit(patient, ContractCall(pcac.APPROVE_IRS, requester=requester,
                                                        notes=notes, decision=Decision.GRANT),
                                  patient_address=patient.address).raise_for_status()
    if record is None or record.status is not pcac.Status.PENDING:
        raise NoPendingRequest(f"{requester} has no pending request")
    policy = registry.rate_limit
    if policy is not None and not policy.allows(registry.approvals.get(patient.address, []),
                                                world.clock()):
        raise RateLimited(f"{patient.name} reached the approval limit")
    share_cid = None
    if reencrypt:
        # fetch and decrypt our own copy
        image = decrypt_with(patient.enc_keys, world.cas.get_file(contract.image_cid))
        # requestor key comes from the stored request
        requester_key = KeyPair.from_public(record.requester_pubkey)
        envelope = encrypt_for(requester_key, image, world.rng)
        share_cid = world.cas.put_file(envelope.to_bytes())
        world.cas.pin(share_cid)
    call = ContractCall(pcac.APPROVE_IRS, requester=requester, notes=notes,
                        decision=Decision.GRANT, share_cid=share_cid)
    receipt = world.submit(patient, call, patient_address=patient.address,
                           encryption_pubkey=record.requester_pubkey).raise_for_status()
    if share_cid is not None:
        for actor in world.actors.values():
            if actor.address == requester:
                world.send(patient, actor, "share", share_cid)
    return share_cid, receipt


def fetch_shared_image(world: World, requestor: Actor, patient: Address) -> bytes:
    """Retrieve, decrypt and authenticate the copy shared with ``requestor``."""
    contract = world.chain.registry.contract_for(patient)
    if not contract.authorize_user.get(requestor.address):
        raise Unauthorized(f"{requestor.name} is not authorized by {patient}")
    share_cid = contract.share_map.get(requestor.address)
    if share_cid is None:
        raise NotFound(None, f"no shared copy for {requestor.name}")
    image = decrypt_with(requestor.enc_keys, world.cas.get_file(share_cid))
    _check_signature(contract, image)
    return image


def _check_signature(contract: pcac.ContractState, image: bytes) -> None:
    if not contract.image_signature:
        return
    sig = ImageSignature.from_bytes(contract.image_signature)
    signer = KeyPair(KeyKind.SIGNING, sig.signer_public)
    if not verify_image(signer, image, sig):
        raise AuthFailure("image does not match the patient's signature")


# end-to-end flows

@dataclass
class StoreResult:
    root_cid: Cid
    contract: pcac.ContractState
    tx_hash: bytes
    signature: ImageSignature


def store_image_flow(world: World, patient: Actor, radiologist: Actor, image: bytes,
                     description: str, rng: random.Random | None = None) -> StoreResult:
    if not image:
        raise ValueError("image is empty")
    # patient hands its public encryption key to the radiologist
    world.send(patient, radiologist, "encryption_key", patient.enc_keys.export_public())
    # radiologist encrypts and uploads
    key = KeyPair.from_public(radiologist.take("encryption_key").payload)
    envelope = encrypt_for(key, conceal(image), rng or world.rng)
    root = world.cas.put_file(envelope.to_bytes())
    # the Cid goes back to the patient
    world.send(radiologist, patient, "image_cid", root)
    cid = patient.take("image_cid").payload
    # duplicate check ahead of the block
    if cid in world.chain.registry.contracts:
        raise DuplicateImage(f"image {cid} is already registered")
    # patient confirms it can open the stored copy, then signs the plaintext
    plain = decrypt_with(patient.enc_keys, world.cas.get_file(cid))
    signature = sign_image(patient.sign_keys, plain)
    world.cas.pin(cid)
    receipt = create_contract(world, patient, cid, description,
                              image_signature=signature.to_bytes())
    return StoreResult(cid, world.chain.registry.contracts[cid], receipt.tx_hash, signature)


@dataclass
class ShareResult:
    share_cid: Cid
    approval_tx_hash: bytes
    plaintext: bytes


def share_image_flow(world: World, patient: Actor, requestor: Actor,
                     notes: str = "Requesting access to the image") -> ShareResult:
    request_access(world, requestor, patient.address, notes)
    share_cid, receipt = approve_request(world, patient, requestor.address)
    requestor.take("share")
    plain = fetch_shared_image(world, requestor, patient.address)
    return ShareResult(share_cid, receipt.tx_hash, plain)


# scenarios

ACTIONS = ("join", "store", "create", "request", "approve", "deny", "trace", "remove",
           "share", "fetch", "gc")


@dataclass(frozen=True)
class Step:
    at: int
    actor: str
    action: str
    args: dict[str, str]
    line: int = 0


def parse_scenario(text: str) -> list[Step]:
    """One step per line: ``<timestamp> <actor> <action> key=value ...``."""
    steps = []
    for lineno, line in enumerate(text.splitlines(), 1):
        try:
            tokens = shlex.split(line, comments=True)
        except ValueError as exc:
            raise ScenarioError(len(steps), f"line {lineno}: {exc}") from None
        if not tokens:
            continue
        if len(tokens) < 3:
            raise ScenarioError(len(steps), f"line {lineno}: need timestamp, actor and action")
        try:
            at = int(tokens[0])
        except ValueError:
            raise ScenarioError(len(steps), f"line {lineno}: bad timestamp {tokens[0]!r}") from None
        args = {}
        for tok in tokens[3:]:
            key, sep, value = tok.partition("=")
            if not sep:
                raise ScenarioError(len(steps), f"line {lineno}: argument {tok!r} is not key=value")
            args[key] = value
        if tokens[2] not in ACTIONS:
            raise ScenarioError(len(steps), f"line {lineno}: unknown action {tokens[2]!r}")
        steps.append(Step(at, tokens[1], tokens[2], args, lineno))
    for i in range(1, len(steps)):
        if steps[i].at < steps[i - 1].at:
            raise ScenarioError(i, "timestamps must be nondecreasing")
    return steps


def format_step(step: Step) -> str:
    args = " ".join(f"{k}={shlex.quote(v)}" for k, v in step.args.items())
    return f"{step.at} {step.actor} {step.action} {args}".rstrip()


def _flag(value: str | None, default: bool) -> bool:
    if value is None:
        return default
    return value.lower() in ("1", "yes", "true", "on")


def _step_image(world: World, args: dict[str, str]) -> bytes:
    if "file" in args:
        with open(args["file"], "rb") as fh:
            return fh.read()
    size = int(args.get("size", 1 << 20))
    seed = args.get("data_seed")
    rng = random.Random(int(seed)) if seed is not None else world.rng
    return rng.randbytes(size)


def execute_step(world: World, step: Step) -> Any:
    a = step.args
    if step.action == "join":
        address = Address.parse(a["address"]) if "address" in a else None
        balance = int(a["balance"]) if "balance" in a else DEFAULT_BALANCE
        return world.add_actor(step.actor, a.get("role", IMAGE_REQUESTOR), address, balance,
                               a.get("seed"))
    actor = world.actor(step.actor)
    if step.action == "store":
        radiologist = world.actor(a["radiologist"])
        return store_image_flow(world, actor, radiologist, _step_image(world, a),
                                a.get("description", ""))
    if step.action == "create":
        patient = world.address_of(a["patient"]) if "patient" in a else None
        return create_contract(world, actor, Cid.parse(a["cid"]), a.get("description", ""),
                               patient)
    if step.action == "request":
        return request_access(world, actor, world.address_of(a["patient"]), a.get("notes", ""))
    if step.action == "approve":
        return approve_request(world, actor, world.address_of(a["requester"]),
                               a.get("notes", ""), _flag(a.get("reencrypt"), True))
    if step.action == "deny":
        return deny_request(world, actor, world.address_of(a["requester"]), a.get("notes", ""))
    if step.action == "trace":
        patient = world.address_of(a.get("patient", step.actor))
        return trace(world, actor, patient, world.address_of(a["requester"]))
    if step.action == "remove":
        return remove_requestor(world, actor, world.address_of(a["requester"]))
    if step.action == "share":
        return share_image_flow(world, actor, world.actor(a["requester"]),
                                a.get("notes", "Requesting access to the image"))
    if step.action == "fetch":
        return fetch_shared_image(world, actor, world.address_of(a["patient"]))
    if step.action == "gc":
        return world.cas.gc(world.clock(), int(a.get("ttl", 30 * 24 * 3600)))
    raise ScenarioError(-1, f"unknown action {step.action!r}")


@dataclass
class StepMetric:
    index: int
    at: int
    actor: str
    action: str
    ok: bool
    gas_used: int
    block_height: int
    store_entries: int
    store_bytes: int
    error: str | None = None


@dataclass
class ScenarioResult:
    world: World
    metrics: list[StepMetric]
    errors: list[tuple[int, str, str]]

    @property
    def chain(self) -> Chain:
        return self.world.chain

    @property
    def events(self) -> list[pcac.Event]:
        return self.world.chain.events

    @property
    def head_hash(self) -> bytes:
        return self.world.chain.head.block_hash


def run_scenario(script: str | list[Step], world: World | None = None,
                 seed: int = 0) -> ScenarioResult:
    """Replay a script; a block is sealed whenever simulated time moves on.

    Domain errors are recorded per step; a step with ``must=yes`` turns its
    failure into a :class:`ScenarioError`.
    """
    steps = parse_scenario(script) if isinstance(script, str) else list(script)
    for i in range(1, len(steps)):
        if steps[i].at < steps[i - 1].at:
            raise ScenarioError(i, "timestamps must be nondecreasing")
    world = world or World.create(seed)
    world.auto_seal = False
    metrics, errors = [], []
    for i, step in enumerate(steps):
        if world.chain.pending and step.at != world.clock():
            world.chain.seal_block(world.clock())
        world.clock.set(step.at)
        before = len(world.chain.pending)
        err = None
        try:
            execute_step(world, step)
        except ScenarioError as exc:
            raise ScenarioError(i, str(exc).split(": ", 1)[-1]) from None
        except (PcimError, LookupError, ValueError) as exc:
            err = type(exc).__name__
            errors.append((i, err, str(exc)))
            if _flag(step.args.get("must"), False):
                raise ScenarioError(i, f"{step.action} failed: {err}: {exc}") from exc
        gas = sum(r.gas_used for _, r in world.chain.pending[before:])
        st = world.cas.stats()
        metrics.append(StepMetric(i, step.at, step.actor, step.action, err is None, gas,
                                  world.chain.height + (1 if world.chain.pending else 0),
                                  st.entry_count, st.total_bytes, err))
    if world.chain.pending:
        world.chain.seal_block(world.clock())
    world.auto_seal = True
    return ScenarioResult(world, metrics, errors)


# presets

FIXTURE_PATIENT = "0x5575805E19b4807974Be0B77Fd9d385D4A0e6d1E"
FIXTURE_IR1 = "0xdD870fA1b7C4700F2BD7f44238821C26f7392148"
FIXTURE_IR2 = "0x583031D1113aD414F02576BD6afaBfb302140225"
FIXTURE_IMAGE_CID = "QmNaS5gQzoPxr3S2n6T6BsFuVRmMFwpohLVFfAFrU8gyTq"
FIXTURE_DENY_REASON = "Need more detailed information to access my image"

FIXTURE_ACTORS = f"""\
0 patient join role=patient address={FIXTURE_PATIENT}
0 ir1 join role=image_requestor address={FIXTURE_IR1}
0 ir2 join role=image_requestor address={FIXTURE_IR2}
"""

# Blocks 1-7: create; IR1 request; IR2 request; approve IR1; deny IR2;
# trace IR1 and IR2; remove IR1.
FIXTURE_SCRIPT = FIXTURE_ACTORS + f"""\
1 patient create cid={FIXTURE_IMAGE_CID} description="Liver image" must=yes
2 ir1 request patient=patient notes="Doctor requesting the liver image for diagnosis" must=yes
3 ir2 request patient=patient notes="General practitioner requesting the liver image" must=yes
4 patient approve requester=ir1 reencrypt=no must=yes
5 patient deny requester=ir2 notes="{FIXTURE_DENY_REASON}" must=yes
6 patient trace requester=ir1 must=yes
6 patient trace requester=ir2 must=yes
7 patient remove requester=ir1 must=yes
"""

DEMO_SCRIPT = """\
0 patient join role=patient
0 radiologist join role=radiologist
0 doctor join role=image_requestor
0 gp join role=image_requestor
10 patient store radiologist=radiologist size=1048576 data_seed=7 description="Liver image" must=yes
20 patient share requester=doctor must=yes
30 gp request patient=patient notes="Second opinion" must=yes
40 patient deny requester=gp notes="Not needed" must=yes
50 patient trace requester=doctor must=yes
60 patient remove requester=doctor must=yes
70 patient trace requester=doctor must=yes
"""

# same run stopped before the removal, so the first requestor is still authorized
FIXTURE_APPROVED_SCRIPT = FIXTURE_SCRIPT.rsplit("7 patient remove", 1)[0]

PRESETS = {
    "fixture": FIXTURE_SCRIPT,
    "fixture-approved": FIXTURE_APPROVED_SCRIPT,
    "fixture-actors": FIXTURE_ACTORS,
    "demo": DEMO_SCRIPT,
}
