"""On-disk world: chain files, object store and actor keystore under one directory."""

from __future__ import annotations

import json
import os
import random
from pathlib import Path

from .address import Address
from .cas import Cid, DirectoryBackend, Store
from .ledger import Chain, GasSchedule
from .pcac import RateLimitPolicy
from .protocol import Message, SimClock, World

WORLD_FILE = "world.json"


def _encode_payload(payload):
    if isinstance(payload, Cid):
        return {"cid": payload.display}
    if isinstance(payload, bytes):
        return {"hex": payload.hex()}
    return {"value": payload}


def _decode_payload(d):
    if "cid" in d:
        return Cid.parse(d["cid"])
    if "hex" in d:
        return bytes.fromhex(d["hex"])
    return d["value"]


def exists(data_dir: str | os.PathLike) -> bool:
    return (Path(data_dir) / WORLD_FILE).exists()


def create_world(data_dir: str | os.PathLike, seed: int = 0,
                 schedule: GasSchedule | None = None,
                 rate_limit: RateLimitPolicy | None = RateLimitPolicy(),
                 gas_price: int | None = None, gas_limit: int | None = None) -> World:
    d = Path(data_dir)
    d.mkdir(parents=True, exist_ok=True)
    world = World.create(seed, schedule, rate_limit, backend=DirectoryBackend(d / "cas"))
    if gas_price is not None:
        world.gas_price = gas_price
    if gas_limit is not None:
        world.gas_limit = gas_limit
    return world


def save_world(world: World, data_dir: str | os.PathLike) -> None:
    d = Path(data_dir)
    world.chain.save(d / "chain")
    world.cas.flush()
    state = world.rng.getstate()
    doc = {
        "seed": world.seed,
        "clock": world.clock.now,
        "gas_price": world.gas_price,
        "gas_limit": world.gas_limit,
        "rng_state": [state[0], list(state[1]), state[2]],
        "actors": {
            name: {
                "role": a.role,
                "address": a.address.display,
                "key_material": world.key_material[name],
                "inbox": [{"sender": m.sender, "kind": m.kind,
                           "payload": _encode_payload(m.payload)} for m in a.inbox],
            }
            for name, a in world.actors.items()
        },
    }
    tmp = d / (WORLD_FILE + ".tmp")
    tmp.write_text(json.dumps(doc, indent=1))
    os.replace(tmp, d / WORLD_FILE)


def load_world(data_dir: str | os.PathLike) -> World:
    """Reload a saved world; raises CorruptChain if the block file fails to verify."""
    d = Path(data_dir)
    doc = json.loads((d / WORLD_FILE).read_text())
    chain = Chain.load(d / "chain")
    clock = SimClock(doc["clock"])
    chain.clock = clock
    rng = random.Random()
    st = doc["rng_state"]
    rng.setstate((st[0], tuple(st[1]), st[2]))
    world = World(chain, Store(DirectoryBackend(d / "cas"), clock=clock), clock, rng,
                  doc["seed"], gas_price=doc["gas_price"], gas_limit=doc["gas_limit"])
    for name, a in doc["actors"].items():
        actor = world.attach_actor(name, a["role"], Address.parse(a["address"]),
                                   a["key_material"])
        actor.inbox = [Message(m["sender"], m["kind"], _decode_payload(m["payload"]))
                       for m in a["inbox"]]
    return world
