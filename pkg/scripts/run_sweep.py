#!/usr/bin/env python3
"""Data-efficiency sweep: policy vs. parameter-matched CNN across dataset
sizes, three seeds each, shared fixed test set.  Emits one CSV.

    python3 scripts/run_sweep.py --out runs/curve.csv
"""

import argparse

from deskgrasp.sweep import SweepConfig, mean_success, run_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True, help="output CSV path")
    ap.add_argument("--ns", default=None, help="comma list, e.g. 10,20,40")
    ap.add_argument("--seeds", default=None, help="comma list, e.g. 0,1,2")
    ap.add_argument("--train-steps", type=int, default=None)
    ap.add_argument("--test-episodes", type=int, default=None)
    args = ap.parse_args()

    cfg = SweepConfig()
    if args.ns:
        cfg.ns = [int(v) for v in args.ns.split(",")]
    if args.seeds:
        cfg.seeds = [int(v) for v in args.seeds.split(",")]
    if args.train_steps:
        cfg.train_steps = args.train_steps
    if args.test_episodes:
        cfg.test_episodes = args.test_episodes

    rows = run_sweep(cfg, args.out,
                     progress=lambda row: print(row, flush=True))
    print(f"wrote {args.out} ({len(rows)} rows)")
    for n in cfg.ns:
        line = "  ".join(
            f"{kind}@{n}: {mean_success(rows, kind, n):.3f}"
            for kind in cfg.models)
        print(f"N={n:4d}  {line}")


if __name__ == "__main__":
    main()
