"""Write the storage, event-recording and gas CSVs into one directory.

    python3 scripts/run_benchmarks.py --out results/ [--quick]

--quick shrinks sizes and repeat counts for a smoke run.
"""

import argparse
from pathlib import Path

from pcim import harness

MiB = 1 << 20


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--per-note-byte", type=int, default=68)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    sizes = [MiB, 4 * MiB] if args.quick else [MiB, 10 * MiB, 50 * MiB, 100 * MiB]
    trials = 1 if args.quick else 5
    rows = harness.bench_storage(sizes, trials, args.seed)
    (out / "storage.csv").write_text(harness.to_csv(
        rows, harness.StorageRow, harness.metadata(trials=trials, seed=args.seed)))

    wallets, repeats = (2, 1) if args.quick else (5, 3)
    rows = harness.bench_events(wallets, repeats, args.seed)
    (out / "events.csv").write_text(harness.to_csv(
        rows, harness.EventRow, harness.metadata(wallets=wallets, repeats=repeats)))

    # mixed 1-4 transactions per block, first 20 blocks
    rows = harness.bench_gas(80, args.per_note_byte, txs_per_block=None, seed=args.seed)[:20]
    (out / "gas.csv").write_text(harness.to_csv(
        rows, harness.GasRow, harness.metadata(per_note_byte=args.per_note_byte,
                                               seed=args.seed)))
    rho = harness.rank_correlation([r.gas_used for r in rows], [r.size_bytes for r in rows])
    print(f"wrote {out}/storage.csv, events.csv, gas.csv; gas~size spearman {rho:.3f}")


if __name__ == "__main__":
    main()
