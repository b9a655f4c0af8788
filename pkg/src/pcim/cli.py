"""Command-line entry point. All state lives under ``--data-dir``.

Exit codes: 0 success, 1 usage error, 2 domain error, 3 corrupted store or chain.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import harness, workspace
from .address import Address
from .cas import Cid
from .errors import CorruptChain, IntegrityError, PcimError
from .ledger import GasSchedule, chain_violation
from .pcac import RateLimitPolicy
from .protocol import (
    PRESETS,
    ROLES,
    approve_request,
    deny_request,
    fetch_shared_image,
    remove_requestor,
    request_access,
    run_scenario,
    store_image_flow,
)

EXIT_OK, EXIT_USAGE, EXIT_DOMAIN, EXIT_CORRUPT = 0, 1, 2, 3
SUBCOMMANDS = ("keygen", "store", "request", "approve", "deny", "trace", "remove", "fetch",
               "run-scenario", "bench-storage", "bench-events", "bench-gas",
               "export-events", "validate")

log = logging.getLogger("pcim")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_size(text: str) -> int:
    units = {"kib": 1 << 10, "mib": 1 << 20, "gib": 1 << 30, "kb": 1000, "mb": 10**6, "b": 1}
    t = text.strip().lower()
    for suffix, mult in units.items():
        if t.endswith(suffix):
            return int(float(t[:-len(suffix)]) * mult)
    return int(t)


def parse_rate_limit(text: str) -> RateLimitPolicy | None:
    """``N`` or ``N/SECONDS``; ``off`` disables the policy."""
    if text == "off":
        return None
    count, _, window = text.partition("/")
    return RateLimitPolicy(int(count), int(window) if window else 24 * 3600)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pcim", description="Patient-centric image management simulator")
    p.add_argument("--data-dir", default="pcim-data")
    p.add_argument("--gas-price", type=int, help="wei per gas unit")
    p.add_argument("--gas-limit", type=int)
    p.add_argument("--schedule", help="JSON gas schedule file (new worlds only)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ttl", type=int, default=30 * 24 * 3600, help="gc TTL in seconds")
    p.add_argument("--rate-limit", default="10/86400", help="N[/SECONDS] or off")
    p.add_argument("--at", type=int, help="simulated time for this command")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("keygen", help="create an actor with keys and a funded wallet")
    s.add_argument("--name", required=True)
    s.add_argument("--role", choices=ROLES, required=True)
    s.add_argument("--address", help="bind the wallet to an existing address")
    s.add_argument("--balance", type=int)
    s.add_argument("--key-seed", help="seed material for the keys (default: world seed + name)")
    s.add_argument("--random", action="store_true", help="random keys instead of seeded")

    s = sub.add_parser("store", help="radiologist encrypts and stores, patient registers")
    s.add_argument("--patient", required=True)
    s.add_argument("--radiologist", required=True)
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--file")
    src.add_argument("--size", type=parse_size)
    s.add_argument("--data-seed", type=int, default=0)
    s.add_argument("--description", default="")

    s = sub.add_parser("request")
    s.add_argument("--requester", required=True)
    s.add_argument("--patient", required=True)
    s.add_argument("--notes", default="")

    s = sub.add_parser("approve")
    s.add_argument("--patient", required=True)
    s.add_argument("--requester", required=True)
    s.add_argument("--notes", default="")
    s.add_argument("--no-reencrypt", action="store_true")

    s = sub.add_parser("deny")
    s.add_argument("--patient", required=True)
    s.add_argument("--requester", required=True)
    s.add_argument("--notes", default="")

    s = sub.add_parser("trace")
    s.add_argument("--caller", required=True)
    s.add_argument("--patient", required=True)
    s.add_argument("--requester", required=True)

    s = sub.add_parser("remove")
    s.add_argument("--patient", required=True)
    s.add_argument("--requester", required=True)

    s = sub.add_parser("fetch", help="requestor downloads and decrypts its shared copy")
    s.add_argument("--requester", required=True)
    s.add_argument("--patient", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("run-scenario")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--preset", choices=sorted(PRESETS))
    g.add_argument("file", nargs="?")
    s.add_argument("--metrics", help="write per-step metrics JSON here")

    s = sub.add_parser("bench-storage")
    s.add_argument("--sizes", default="1MiB,10MiB,50MiB,100MiB")
    s.add_argument("--trials", type=int, default=5)
    s.add_argument("--out")

    s = sub.add_parser("bench-events")
    s.add_argument("--wallets", type=int, default=5)
    s.add_argument("--repeats", type=int, default=3)
    s.add_argument("--out")

    s = sub.add_parser("bench-gas")
    s.add_argument("--tx-count", type=int, default=20)
    s.add_argument("--per-note-byte", type=int, default=0)
    s.add_argument("--txs-per-block", type=int, default=1, help="0 for random 1-4")
    s.add_argument("--gas-target", type=int, default=1_000_000)
    s.add_argument("--out")

    s = sub.add_parser("export-events")
    s.add_argument("--case", type=int, choices=sorted(harness.CASE_EVENTS))
    s.add_argument("--name", action="append")
    s.add_argument("--address")

    sub.add_parser("validate")
    return p


def _open_world(args, create: bool = True):
    if workspace.exists(args.data_dir):
        world = workspace.load_world(args.data_dir)
    elif create:
        schedule = None
        if args.schedule:
            schedule = GasSchedule.from_json(json.loads(Path(args.schedule).read_text()))
        world = workspace.create_world(args.data_dir, args.seed, schedule,
                                       parse_rate_limit(args.rate_limit))
    else:
        raise PcimError(f"no world under {args.data_dir}")
    if args.gas_price is not None:
        world.gas_price = args.gas_price
    if args.gas_limit is not None:
        world.gas_limit = args.gas_limit
    if args.at is not None:
        world.clock.set(args.at)
    return world


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _run(args) -> int:
    cmd = args.command
    if cmd == "bench-storage":
        sizes = [parse_size(x) for x in args.sizes.split(",") if x]
        rows = harness.bench_storage(sizes, args.trials, args.seed)
        _emit(harness.to_csv(rows, harness.StorageRow,
                             harness.metadata(trials=args.trials, seed=args.seed)), args.out)
        return EXIT_OK
    if cmd == "bench-events":
        rows = harness.bench_events(args.wallets, args.repeats, args.seed)
        _emit(harness.to_csv(rows, harness.EventRow,
                             harness.metadata(wallets=args.wallets, repeats=args.repeats)),
              args.out)
        return EXIT_OK
    if cmd == "bench-gas":
        rows = harness.bench_gas(args.tx_count, args.per_note_byte, args.txs_per_block or None,
                                 gas_target=args.gas_target, seed=args.seed)
        _emit(harness.to_csv(rows, harness.GasRow,
                             harness.metadata(tx_count=args.tx_count,
                                              per_note_byte=args.per_note_byte,
                                              gas_target=args.gas_target)), args.out)
        return EXIT_OK
    if cmd == "validate":
        return _validate(args)
    if cmd == "export-events":
        if not workspace.exists(args.data_dir):
            return EXIT_OK
        world = _open_world(args, create=False)
        address = world.address_of(args.address) if args.address else None
        for line in harness.export_events(world.chain.events, args.name, address, args.case):
            print(line)
        return EXIT_OK

    world = _open_world(args)
    if cmd == "keygen":
        seed = os.urandom(16).hex() if args.random else args.key_seed
        address = Address.parse(args.address) if args.address else None
        kwargs = {"balance": args.balance} if args.balance is not None else {}
        actor = world.add_actor(args.name, args.role, address, seed=seed, **kwargs)
        print(json.dumps({"name": actor.name, "role": actor.role,
                          "address": actor.address.display,
                          "encryption_key": actor.enc_keys.export_public().hex()}))
    elif cmd == "store":
        if args.file:
            image = Path(args.file).read_bytes()
        else:
            import random
            image = random.Random(args.data_seed).randbytes(args.size)
        res = store_image_flow(world, world.actor(args.patient), world.actor(args.radiologist),
                               image, args.description)
        print(json.dumps({"image_cid": res.root_cid.display, "tx_hash": res.tx_hash.hex()}))
    elif cmd == "request":
        r = request_access(world, world.actor(args.requester), world.address_of(args.patient),
                           args.notes)
        print(json.dumps({"tx_hash": r.tx_hash.hex()}))
    elif cmd == "approve":
        cid, r = approve_request(world, world.actor(args.patient),
                                 world.address_of(args.requester), args.notes,
                                 reencrypt=not args.no_reencrypt)
        print(json.dumps({"share_cid": cid.display if cid else None, "granted": r.return_value,
                          "tx_hash": r.tx_hash.hex()}))
    elif cmd == "deny":
        r = deny_request(world, world.actor(args.patient), world.address_of(args.requester),
                         args.notes)
        print(json.dumps({"tx_hash": r.tx_hash.hex()}))
    elif cmd == "trace":
        from .protocol import trace
        trace(world, world.actor(args.caller), world.address_of(args.patient),
              world.address_of(args.requester))
        print(world.chain.events[-1].to_line())
    elif cmd == "remove":
        removed = remove_requestor(world, world.actor(args.patient),
                                   world.address_of(args.requester))
        print(json.dumps({"removed": removed}))
    elif cmd == "fetch":
        image = fetch_shared_image(world, world.actor(args.requester),
                                   world.address_of(args.patient))
        Path(args.out).write_bytes(image)
    elif cmd == "run-scenario":
        text = PRESETS[args.preset] if args.preset else Path(args.file).read_text()
        result = run_scenario(text, world)
        for i, name, msg in result.errors:
            print(f"step {i}: {name}: {msg}", file=sys.stderr)
        print(json.dumps({"height": world.chain.height, "head": result.head_hash.hex(),
                          "events": len(world.chain.events), "errors": len(result.errors)}))
        if args.metrics:
            Path(args.metrics).write_text(json.dumps([vars(m) for m in result.metrics], indent=1))
    workspace.save_world(world, args.data_dir)
    return EXIT_OK


def _validate(args) -> int:
    d = Path(args.data_dir)
    blocks = d / "chain" / "blocks.bin"
    if not blocks.exists():
        print("no chain to validate", file=sys.stderr)
        return EXIT_USAGE
    problem = chain_violation(blocks.read_bytes())
    if problem:
        print(f"chain invalid: {problem}", file=sys.stderr)
        return EXIT_CORRUPT
    world = workspace.load_world(d)
    bad = world.cas.verify()
    if bad:
        print(f"store invalid: {len(bad)} corrupt objects, first {bad[0]}", file=sys.stderr)
        return EXIT_CORRUPT
    print(json.dumps({"valid": True, "height": world.chain.height,
                      "objects": len(world.cas)}))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if not args.command:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return _run(args)
    except (CorruptChain, IntegrityError) as exc:
        print(f"corrupt: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except (PcimError, ValueError, LookupError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
