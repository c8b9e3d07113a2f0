#!/usr/bin/env python3
"""Desk-scale run: generate data, train every architecture, sweep SNR.

    python3 scripts/desk_experiment.py --out runs/desk --epochs 20

Writes the same files as the CLI subcommands (datasets, checkpoints,
histories, sweep.csv) into ``--out``.
"""

import argparse
import json
import tempfile
from pathlib import Path

from unfolded_doa.cli import main as cli
from unfolded_doa.nets import KINDS


def parse_args():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/desk")
    p.add_argument("--kinds", nargs="+", default=list(KINDS), choices=KINDS)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    return p.parse_args()


def run(argv):
    rc = cli(argv)
    if rc != 0:
        raise SystemExit(f"step failed with exit code {rc}: {' '.join(argv)}")


def main():
    args = parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as fh:
        json.dump({"train": {"epochs": args.epochs}}, fh)
        override = fh.name
    common = ["--preset", "desk", "--config", override, "--out", str(out),
              "--seed", str(args.seed), "--workers", str(args.workers)]
    run(["gen-data", *common])
    for kind in args.kinds:
        run(["train", *common, "--kind", kind])
    ckpts = [f"--checkpoint={k}={out / (k + '.best.ckpt')}" for k in args.kinds]
    run(["eval", *common, *ckpts])
    print(f"results in {out / 'sweep.csv'}")


if __name__ == "__main__":
    main()
