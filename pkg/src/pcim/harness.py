"""Event export and the three benchmark reports (storage, event recording, gas)."""

from __future__ import annotations

import csv
import io
import os
import platform
import random
import statistics
import time
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence

from . import pcac
from .address import Address
from .cas import Cid, Store
from .ledger import (
    CONTRACT_ADDRESS,
    Chain,
    ContractCall,
    GasSchedule,
    PcimData,
    sign_transaction,
)
from .pcac import Decision
from .protocol import IMAGE_REQUESTOR, PATIENT, World

MiB = 1 << 20

CASE_EVENTS = {
    1: ("Requestaccepted", "Approved"),
    2: ("Requestdenied", "Reason"),
    3: ("AuthorizationSuccess",),
    4: ("AuthorizationFailed",),
}


def export_events(events: Iterable[pcac.Event], names: Iterable[str] | None = None,
                  address: Address | None = None, case: int | None = None) -> list[str]:
    """Line-delimited JSON records, keys in each event's fixed order."""
    wanted = set(names) if names is not None else None
    if case is not None:
        wanted = set(CASE_EVENTS[case]) if wanted is None else wanted & set(CASE_EVENTS[case])
    return [e.to_line() for e in events
            if (wanted is None or e.name in wanted)
            and (address is None or e.involves(address))]


# CSV plumbing

def metadata(**config) -> dict[str, str]:
    meta = {
        "python": platform.python_version(),
        "platform": platform.platform(),
        "machine": platform.machine(),
        "cpus": str(os.cpu_count()),
    }
    meta.update({k: str(v) for k, v in config.items()})
    return meta


def to_csv(rows: Sequence, row_type: type, meta: dict[str, str] | None = None) -> str:
    buf = io.StringIO()
    for k, v in (meta or {}).items():
        buf.write(f"# {k}={v}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f.name for f in fields(row_type)])
    for row in rows:
        writer.writerow(list(asdict(row).values()))
    return buf.getvalue()


def read_csv(text: str) -> list[dict[str, str]]:
    lines = [l for l in text.splitlines() if not l.startswith("#")]
    return list(csv.DictReader(lines))


# storage

@dataclass
class StorageRow:
    label: str
    size_bytes: int
    trials: int
    upload_mean_s: float
    download_mean_s: float
    objects: int
    repeat_added_entries: int
    dedup_savings_bytes: int


def bench_storage(sizes: Sequence[int], trials: int = 5, seed: int = 0,
                  label: str = "pcim-local") -> list[StorageRow]:
    """Mean put_file/get_file wall time per size, each trial on a fresh store."""
    rows = []
    for size in sorted(sizes):
        data = random.Random(seed + size).randbytes(size)
        ups, downs = [], []
        objects = added = savings = 0
        for _ in range(max(1, trials)):
            store = Store()
            t0 = time.perf_counter()
            root = store.put_file(data)
            t1 = time.perf_counter()
            got = store.get_file(root)
            t2 = time.perf_counter()
            if got != data:
                raise AssertionError("storage round trip failed")
            ups.append(t1 - t0)
            downs.append(t2 - t1)
            objects = len(store)
            store.put_file(data)
            added = len(store) - objects
            savings = store.stats().dedup_savings
        rows.append(StorageRow(label, size, max(1, trials), statistics.fmean(ups),
                               statistics.fmean(downs), objects, added, savings))
    return sorted(rows, key=lambda r: (r.label, r.size_bytes))


# event recording

@dataclass
class EventRow:
    label: str
    wallet: int
    repeats: int
    record_mean_s: float
    gas_used: int
    block_size_bytes: int


EVENT_LABELS = ("deploy",) + pcac.FUNCTIONS


def bench_events(wallet_count: int = 5, repeats: int = 3, seed: int = 0) -> list[EventRow]:
    """Mean time from submission to sealed block, per function and patient wallet."""
    rows = []
    for w in range(wallet_count):
        world = World.create(seed=seed * 1000 + w, rate_limit=None)
        patient = world.add_actor(f"patient{w}", PATIENT)
        ir = world.add_actor(f"requestor{w}", IMAGE_REQUESTOR)
        timings: dict[str, list[float]] = {k: [] for k in EVENT_LABELS}
        gas: dict[str, int] = {}
        size: dict[str, int] = {}

        def record(label, actor, call=None, **pcim_fields):
            world.clock.advance(15)
            t0 = time.perf_counter()
            if call is None:
                actor.wallet.nonce = world.chain.next_nonce(actor.address)
                tx = sign_transaction(actor.wallet, pcim=None, recipient=CONTRACT_ADDRESS)
                receipt = world.chain.apply_transaction(tx)
            else:
                world.auto_seal = False
                receipt = world.submit(actor, call, **pcim_fields)
            block = world.chain.seal_block(world.clock())
            timings[label].append(time.perf_counter() - t0)
            receipt.raise_for_status()
            gas[label] = receipt.gas_used
            size[label] = block.size_bytes

        for r in range(repeats):
            cid = Cid.from_digest(world.rng.randbytes(32))
            record("deploy", patient)
            record(pcac.CREATE_CONTRACT, patient,
                   ContractCall(pcac.CREATE_CONTRACT), image_cid=cid,
                   patient_address=patient.address, description=f"image {r}",
                   encryption_pubkey=patient.enc_keys.export_public())
            record(pcac.REQUESTING_ACCESS, ir,
                   ContractCall(pcac.REQUESTING_ACCESS, requester=ir.address, notes="study"),
                   patient_address=patient.address,
                   encryption_pubkey=ir.enc_keys.export_public())
            record(pcac.APPROVE_IRS, patient,
                   ContractCall(pcac.APPROVE_IRS, requester=ir.address, decision=Decision.GRANT),
                   patient_address=patient.address)
            record(pcac.TRACE_AUTHORIZATION, patient,
                   ContractCall(pcac.TRACE_AUTHORIZATION, requester=ir.address),
                   patient_address=patient.address)
            record(pcac.REMOVE_IRS, patient,
                   ContractCall(pcac.REMOVE_IRS, requester=ir.address),
                   patient_address=patient.address)
        for label in EVENT_LABELS:
            rows.append(EventRow(label, w, repeats, statistics.fmean(timings[label]),
                                 gas[label], size[label]))
    return sorted(rows, key=lambda r: (r.label, r.wallet))


# gas vs block size

@dataclass
class GasRow:
    block_height: int
    tx_count: int
    gas_used: int
    size_bytes: int
    gas_pct_of_target: float


def gas_workload(world: World, tx_count: int, notes_max: int, txs_per_block: int | None,
                 requestors: int = 4) -> None:
    """Drive a valid, repeating create/request/approve/trace/remove workload."""
    rng = random.Random(world.seed)
    patient = world.add_actor("patient", PATIENT)
    irs = [world.add_actor(f"ir{i}", IMAGE_REQUESTOR) for i in range(requestors)]
    stage = {ir.name: 0 for ir in irs}
    world.auto_seal = False
    notes = lambda: "n" * rng.randint(0, notes_max)
    in_block = 0
    block_target = txs_per_block or rng.randint(1, 4)
    for i in range(tx_count):
        world.clock.advance(1)
        if i == 0:
            world.submit(patient, ContractCall(pcac.CREATE_CONTRACT, notes=notes()),
                         image_cid=Cid.from_digest(rng.randbytes(32)),
                         patient_address=patient.address, description="Liver image")
        else:
            ir = irs[(i - 1) // 4 % len(irs)]
            s = stage[ir.name]
            if s == 0:
                call = ContractCall(pcac.REQUESTING_ACCESS, requester=ir.address, notes=notes())
                receipt = world.submit(ir, call, patient_address=patient.address,
                                       encryption_pubkey=ir.enc_keys.export_public())
            else:
                fn = (pcac.APPROVE_IRS, pcac.TRACE_AUTHORIZATION, pcac.REMOVE_IRS)[s - 1]
                call = ContractCall(fn, requester=ir.address, notes=notes(),
                                    decision=Decision.GRANT if s == 1 else None)
                receipt = world.submit(patient, call, patient_address=patient.address)
            receipt.raise_for_status()
            stage[ir.name] = (s + 1) % 4
        in_block += 1
        if in_block >= block_target or i == tx_count - 1:
            world.chain.seal_block(world.clock())
            in_block = 0
            block_target = txs_per_block or rng.randint(1, 4)
    world.auto_seal = True


def bench_gas(tx_count: int, per_note_byte: int = 0, txs_per_block: int | None = 1,
              notes_max: int = 2048, gas_target: int = 1_000_000, seed: int = 0) -> list[GasRow]:
    if tx_count < 1:
        raise ValueError("tx_count must be at least 1")
    schedule = GasSchedule(per_note_byte=per_note_byte)
    world = World.create(seed=seed, schedule=schedule, rate_limit=None,
                         gas_limit=10_000_000)
    gas_workload(world, tx_count, notes_max, txs_per_block)
    return [GasRow(b.height, len(b.transactions), b.gas_used, b.size_bytes,
                   100.0 * b.gas_used / gas_target)
            for b in world.chain.blocks[1:]]


def rank_correlation(xs: Sequence[float], ys: Sequence[float]) -> float:
    from scipy.stats import spearmanr
    return float(spearmanr(xs, ys).statistic)
