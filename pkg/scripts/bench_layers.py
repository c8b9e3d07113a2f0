#!/usr/bin/env python3
"""Per-layer forward time of the ADMM-family networks across grid sizes."""

import argparse

from unfolded_doa.cli import time_layer


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--sizes", type=int, nargs="+", default=[128, 256, 512, 1024])
    p.add_argument("--kinds", nargs="+", default=["admmnet", "cadmmnet", "chadmmnet"])
    p.add_argument("--m", type=int, default=30)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--repeats", type=int, default=50)
    args = p.parse_args()

    print(f"{'N':>6} " + " ".join(f"{k:>12}" for k in args.kinds) + "   (us per layer)")
    for n in args.sizes:
        times = []
        for kind in args.kinds:
            reps = max(3, args.repeats // 10) if kind == "admmnet" and n > 512 else args.repeats
            times.append(time_layer(kind, n, args.m, reps, args.batch) * 1e6)
        print(f"{n:6d} " + " ".join(f"{t:12.1f}" for t in times))


if __name__ == "__main__":
    main()
