"""Replay the three-actor fixture run and print its event log and block summary.

    python3 scripts/run_fixture.py [--out DIR]
"""

import argparse

from pcim.harness import CASE_EVENTS, export_events
from pcim.protocol import FIXTURE_SCRIPT, run_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", help="also save the chain (genesis, blocks, events) here")
    args = ap.parse_args()

    res = run_scenario(FIXTURE_SCRIPT)
    for b in res.chain.blocks:
        print(f"block {b.height}  t={b.timestamp}  txs={len(b.transactions)}  "
              f"gas={b.gas_used}  size={b.size_bytes}  hash={b.block_hash.hex()[:16]}")
    for case in sorted(CASE_EVENTS):
        print(f"\ncase {case}")
        for line in export_events(res.events, case=case):
            print(line)
    if args.out:
        res.chain.save(args.out)
        print(f"\nchain written to {args.out}")


if __name__ == "__main__":
    main()
