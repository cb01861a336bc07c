#!/usr/bin/env python3
"""Train the visuomotor policy on 200 synthetic demos and report held-out
success.  Writes checkpoint, fitted mixture, training log, and report.json.

    python3 scripts/run_desk_experiment.py --out runs/desk
"""

import argparse
import json

from deskgrasp.experiment import DeskExperimentConfig, run_desk_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--epochs", type=int, default=None)
    ap.add_argument("--n-train", type=int, default=None)
    ap.add_argument("--n-test", type=int, default=None)
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args()

    cfg = DeskExperimentConfig()
    for name in ("epochs", "n_train", "n_test", "seed"):
        value = getattr(args, name)
        if value is not None:
            setattr(cfg, name, value)

    result = run_desk_experiment(cfg, out_dir=args.out,
                                 progress=lambda info: print(info, flush=True))
    print(json.dumps(result.report, sort_keys=True, indent=2))


if __name__ == "__main__":
    main()
