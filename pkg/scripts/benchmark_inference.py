#!/usr/bin/env python3
"""Local single-image inference throughput of the default policy (and the
parameter-matched CNN for comparison) on this machine's CPU.

    python3 scripts/benchmark_inference.py [--ckpt runs/desk/checkpoint.ckpt]
"""

import argparse
import time

import numpy as np

from deskgrasp.baseline import CNNBaseline
from deskgrasp.checkpoint import load_model
from deskgrasp.model import PolicyConfig, PolicyNet
from deskgrasp.scene import generate_demo


def bench(model, image, warmup=3, iters=20):
    model.eval()
    for _ in range(warmup):
        model(image[None])
    t0 = time.perf_counter()
    for _ in range(iters):
        model(image[None])
    dt = (time.perf_counter() - t0) / iters
    return 1.0 / dt, dt * 1000.0


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--ckpt", default=None, help="checkpoint to benchmark")
    ap.add_argument("--iters", type=int, default=20)
    args = ap.parse_args()

    if args.ckpt:
        policy = load_model(args.ckpt)
    else:
        policy = PolicyNet(PolicyConfig(), seed=0)
    image = generate_demo(seed=0).image

    hz, ms = bench(policy, image, iters=args.iters)
    n_params = policy.parameter_count()
    print(f"policy   {n_params:>9,} params  {ms:7.1f} ms/image  {hz:6.2f} Hz")

    cnn = CNNBaseline.matched_to(policy, seed=0)
    hz, ms = bench(cnn, image, iters=args.iters)
    print(f"baseline {cnn.parameter_count():>9,} params  {ms:7.1f} ms/image  {hz:6.2f} Hz")


if __name__ == "__main__":
    main()
