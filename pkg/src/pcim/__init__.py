"""Patient-centric image management: ledger, access-control contract,
content-addressed store, envelope encryption and actor protocols."""

from .address import Address, derive_address
from .cas import CHUNK_SIZE, CasObject, Cid, CommitObject, Link, Store, cid_of
from .envelope import (
    Envelope,
    ImageSignature,
    KeyKind,
    KeyPair,
    decrypt_with,
    encrypt_for,
    generate_keypair,
    sign_image,
    verify_image,
)
from .ledger import (
    Block,
    Chain,
    GasSchedule,
    PcimData,
    Receipt,
    Transaction,
    Wallet,
    compute_tx_cost,
    gas_for_call,
    sign_transaction,
    validate_chain,
)
from .pcac import Event, RateLimitPolicy, Registry
from .protocol import World, run_scenario, share_image_flow, store_image_flow

__version__ = "0.1.0"
