"""Command-line entry point: ``unfolded-doa {gen-data,train,eval,verify,bench}``.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import config as config_mod
from .array_signal import build_dictionary, generate_dataset, make_sla, make_ula, split_by_snr
from .errors import ConfigError, ContractError
from .evaluation import MatchConfig, snr_sweep, write_sweep
from .formats import load_checkpoint, read_dataset, save_checkpoint, write_dataset, write_manifest
from .nets import KINDS, forward, forward_layer, init_network
from .solvers import SolverConfig, admm, compact_admm, fast_compact_admm, ista
from .training import LossConfig, TrainConfig, train, write_history
from .verify import run_all

log = logging.getLogger("unfolded_doa")

OUT_ENV = "UNFOLDED_DOA_OUT"
SOLVER_KINDS = ("ista", "admm", "compact_admm", "fast_admm")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


def geometry_from(cfg: config_mod.RunConfig):
    a = cfg.array
    if a.kind.lower() == "ula":
        return make_ula(a.m, a.gamma)
    if a.kind.lower() == "sla":
        return make_sla(a.m, a.aperture or 2 * a.m, a.seed, a.gamma)
    raise ConfigError(f"unknown array kind {a.kind!r}")


def _resolve(args) -> config_mod.RunConfig:
    cfg = config_mod.load_config(args.config, args.preset)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV, "."))
    if not out.is_dir():
        raise FileNotFoundError(f"output directory {out} does not exist")
    return out


def _manifest(cfg, command: str, **extra) -> dict:
    return dict(command=command, config=cfg.to_dict(), config_hash=cfg.content_hash(), **extra)


# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(args)
    dic = build_dictionary(geometry_from(cfg), cfg.data.grid_size)
    d = cfg.data
    m = dic.m
    train_sep = d.train_min_sep or 1.0 / m
    test_sep = d.test_min_sep or 1.0 / (3 * m)
    k_range = (d.k_min, d.k_max)
    specs = [
        ("train", d.train_count, train_sep, d.train_snr_db, [cfg.seed, 0]),
        ("val", d.val_count, train_sep, d.train_snr_db, [cfg.seed, 1]),
        ("test", d.test_count, test_sep, d.test_snr_db, [cfg.seed, 2]),
    ]
    for name, count, sep, snr, seed in specs:
        samples = generate_dataset(dic, count, k_range, sep, snr, seed, d.noise_convention,
                                   workers=cfg.workers)
        write_dataset(out / f"{name}.bin", dic, samples,
                      _manifest(cfg, "gen-data", split=name, seed=seed, min_sep=sep, snr_spec=snr,
                                count_per_level=count))
        print(f"{name}: {len(samples)} samples -> {out / (name + '.bin')}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(args)
    kind = args.kind or cfg.net.kind
    if kind not in KINDS:
        raise ConfigError(f"--kind must be a network kind for training, got {kind!r}")
    data_dir = Path(args.data or cfg.data_dir or out)
    dic, train_set = read_dataset(data_dir / "train.bin")
    dic_v, val_set = read_dataset(data_dir / "val.bin")
    if dic_v.ref != dic.ref:
        raise ConfigError("train and validation sets use different dictionaries")
    if args.resume:
        net = load_checkpoint(args.resume)
        if (net.m, net.n) != (dic.m, dic.n) or net.kind != kind:
            raise ConfigError("checkpoint does not match the data or --kind")
    else:
        net = init_network(kind, dic, cfg.net.layers, cfg.net.beta0, cfg.net.rho0,
                           cfg.net.hermitian_strict)
    t = cfg.train
    tcfg = TrainConfig(epochs=t.epochs, batch_size=t.batch_size, learning_rate=t.learning_rate,
                       seed=cfg.seed, validation_every=t.validation_every, tie_mode=t.tie_mode)
    res = train(net, train_set, val_set, tcfg, LossConfig(**vars(cfg.loss)), dic)
    manifest = _manifest(cfg, "train", kind=kind, best_epoch=res.best_epoch,
                         epochs_source="preset or config file")
    save_checkpoint(out / f"{kind}.ckpt", res.network, manifest)
    save_checkpoint(out / f"{kind}.best.ckpt", res.best_network, manifest)
    write_history(out / f"{kind}.history.csv", res.history)
    write_manifest(out / f"{kind}.run", manifest)
    print(f"{kind}: best val {min(r['val_loss'] for r in res.history):.5f} at epoch {res.best_epoch}")
    return EXIT_OK


def solver_estimator(name: str, dic, cfg: config_mod.EvalConfig):
    scfg = SolverConfig(lam=cfg.solver_lambda, rho=cfg.solver_rho, iterations=cfg.solver_iterations)
    fn = {"ista": ista, "admm": admm, "compact_admm": compact_admm, "fast_admm": fast_compact_admm}[name]
    return lambda y: fn(dic, y, scfg)


def network_estimator(net, dic):
    return lambda y: forward(net, y, dic)[0]


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(args)
    data_dir = Path(args.data or cfg.data_dir or out)
    dic, test = read_dataset(data_dir / "test.bin")
    e = cfg.eval
    names = list(e.estimators)
    if args.kind in SOLVER_KINDS and args.kind not in names:
        names.append(args.kind)
    checkpoints = dict(e.checkpoints)
    for item in args.checkpoint or []:
        label, _, path = item.partition("=")
        checkpoints[label] = path or label
    estimators = {}
    for name in names:
        if name not in SOLVER_KINDS:
            raise ConfigError(f"unknown solver estimator {name!r}")
        estimators[f"{name}-{e.solver_iterations}"] = solver_estimator(name, dic, e)
    for label, path in checkpoints.items():
        net = load_checkpoint(path)
        if (net.m, net.n) != (dic.m, dic.n):
            raise ConfigError(f"checkpoint {path} does not match the test set dimensions")
        estimators[label] = network_estimator(net, dic)
    if not estimators:
        raise ConfigError("no estimators to evaluate")
    reports = snr_sweep(dic, estimators, split_by_snr(test), MatchConfig(e.delta1, e.delta2),
                        provenance=dict(config_hash=cfg.content_hash(), test_ref=dic.ref))
    write_sweep(reports, out / "sweep.csv", out / "sweep.json")
    for rep in reports:
        for r in rep.rows:
            print(f"{rep.estimator:>16} {r.snr_db:5.1f} dB  P_d {r.mean_detection_rate:.3f}  "
                  f"RMSE {r.angular_rmse_deg:.3f} deg  NMSE {r.mean_nmse:.4f}")
    return EXIT_OK


def cmd_verify(args) -> int:
    results = run_all(args.seed or 0)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'}  {r.name}  ({r.detail})")
    return EXIT_OK if all(r.ok for r in results) else EXIT_NUMERIC


def time_layer(kind: str, n: int, m: int, repeats: int, batch: int = 1, seed: int = 0) -> float:
    """Mean wall time of one forward layer at grid size ``n``."""
    dic = build_dictionary(make_ula(m), n)
    net = init_network(kind, dic, 1)
    rng = np.random.default_rng(seed)
    y = rng.standard_normal((batch, m)) + 1j * rng.standard_normal((batch, m))
    y_in = dic.backproject(y) if net.is_admm else y
    u = 0.1 * y_in if net.is_admm else np.zeros((batch, n), complex)
    layer = net.layers[0]
    forward_layer(kind, layer, u, y_in)
    t0 = time.perf_counter()
    for _ in range(repeats):
        forward_layer(kind, layer, u, y_in)
    return (time.perf_counter() - t0) / repeats


def cmd_bench(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(args)
    b = cfg.bench
    kinds = [args.kind] if args.kind in KINDS else b.kinds
    rows = []
    for n in b.sizes:
        for kind in kinds:
            sec = time_layer(kind, n, b.m, b.repeats, b.batch)
            rows.append(dict(kind=kind, n=n, per_layer_seconds=sec))
            print(f"{kind:>10} N={n:5d}  {sec * 1e6:10.1f} us/layer")
    with open(out / "bench.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["kind", "n", "per_layer_seconds"])
        w.writeheader()
        w.writerows(rows)
    by = {(r["kind"], r["n"]): r["per_layer_seconds"] for r in rows}
    lo, hi = min(b.sizes), max(b.sizes)
    for kind in kinds:
        print(f"{kind}: time(N={hi}) / time(N={lo}) = {by[kind, hi] / by[kind, lo]:.2f}")
    if "admmnet" in kinds and "cadmmnet" in kinds:
        print(f"admmnet / cadmmnet at N={lo}: {by['admmnet', lo] / by['cadmmnet', lo]:.1f}")
    write_manifest(out / "bench", _manifest(cfg, "bench"))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="unfolded-doa", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--preset", choices=sorted(config_mod.PRESETS), default="paper")
    common.add_argument("--kind", choices=SOLVER_KINDS[:2] + KINDS)
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or .)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common]).set_defaults(func=cmd_gen_data)
    tp = sub.add_parser("train", parents=[common])
    tp.add_argument("--data", help="directory holding train.bin/val.bin")
    tp.add_argument("--resume", help="checkpoint to continue from")
    tp.set_defaults(func=cmd_train)
    ep = sub.add_parser("eval", parents=[common])
    ep.add_argument("--data", help="directory holding test.bin")
    ep.add_argument("--checkpoint", action="append", metavar="LABEL=PATH")
    ep.set_defaults(func=cmd_eval)
    sub.add_parser("verify", parents=[common]).set_defaults(func=cmd_verify)
    sub.add_parser("bench", parents=[common]).set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ContractError, TypeError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ArithmeticError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
