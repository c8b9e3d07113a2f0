"""Self-checks behind ``unfolded-doa verify``: oracle equivalences, the
circulant property of the Gram matrix, init equivalence and gradient checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .array_signal import build_dictionary, generate_dataset, make_sla, make_ula, stack_samples
from .nets import ADMM_FAMILY, KINDS, forward, init_network
from .solvers import (CirculantOperator, SolverConfig, admm, circulant_apply, compact_admm,
                      fast_compact_admm, fft_backproject, is_circulant, ista)
from .training import grad_check


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str


def _rel(a, b) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def _rand(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def check_circulant_apply(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n in (8, 31, 64):
        op = CirculantOperator.from_column(_rand(rng, n))
        x = _rand(rng, n)
        worst = max(worst, _rel(circulant_apply(op, x), op.dense() @ x))
    return CheckResult("circulant_apply matches dense product", worst < 1e-10, f"rel err {worst:.2e}")


def check_backprojection(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    dic = build_dictionary(make_sla(16, 40, seed), 128)
    y = _rand(rng, (4, 16))
    err = _rel(fft_backproject(dic, y), dic.backproject(y))
    return CheckResult("FFT back-projection equals A^H y", err < 1e-10, f"rel err {err:.2e}")


def check_fast_admm(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for geom in (make_ula(16), make_sla(16, 32, seed)):
        dic = build_dictionary(geom, 64)
        y = _rand(rng, (3, 16))
        cfg = SolverConfig(lam=0.5, rho=1.0, iterations=100)
        worst = max(worst, _rel(fast_compact_admm(dic, y, cfg), compact_admm(dic, y, cfg)))
    return CheckResult("fast compact ADMM equals compact ADMM", worst < 1e-10, f"rel err {worst:.2e}")


def check_compact_iterates(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    dic = build_dictionary(make_ula(16), 64)
    y = _rand(rng, (3, 16))
    cfg = SolverConfig(lam=0.5, rho=1.0, iterations=50)
    _, u_admm = admm(dic, y, cfg, return_iterates=True)
    _, u_comp = compact_admm(dic, y, cfg, return_iterates=True)
    err = float(np.max(np.linalg.norm(u_admm - u_comp, axis=-1) / np.linalg.norm(u_admm, axis=-1)))
    return CheckResult("compact u-recursion tracks ADMM x+v", err < 1e-10, f"rel err {err:.2e}")


def check_circulance(seed: int = 0) -> CheckResult:
    ok, lines = True, []
    for gamma, expect in ((0.5, True), (0.25, False)):
        dic = build_dictionary(make_sla(12, 30, seed, gamma=gamma), 64)
        got = is_circulant(dic.gram, 1e-9 * dic.m)
        ok &= got == expect
        lines.append(f"gamma={gamma}: {got}")
    return CheckResult("A^H A circulant iff gamma = 1/2", ok, ", ".join(lines))


def parent_output(kind, dic, y, t_layers, beta0=0.1, rho0=1.0):
    """T iterations of the iterative method a freshly initialized network unfolds."""
    if kind in ADMM_FAMILY:
        cfg = SolverConfig(lam=beta0 * rho0, rho=rho0, iterations=t_layers)
        if kind == "admmnet":
            return compact_admm(dic, y, cfg)
        return fast_compact_admm(dic, y, cfg)
    return ista(dic, y, SolverConfig(lam=beta0 / dic.mu, iterations=t_layers))


def check_init_equivalence(seed: int = 0, t_layers: int = 30) -> CheckResult:
    rng = np.random.default_rng(seed)
    dic = build_dictionary(make_ula(16), 64)
    y = _rand(rng, (4, 16))
    worst = 0.0
    for kind in KINDS:
        net = init_network(kind, dic, t_layers)
        x_net, _ = forward(net, y, dic)
        worst = max(worst, _rel(x_net, parent_output(kind, dic, y, t_layers)))
    return CheckResult("initialized networks reproduce their parent solver", worst < 1e-9,
                       f"worst rel err {worst:.2e}")


def check_gradients(seed: int = 0, floor: float = 1e-6, tol: float = 1e-4) -> CheckResult:
    """Finite-difference check with a magnitude floor that absorbs the
    ~1e-10 roundoff of central differences on near-zero gradient entries."""
    dic = build_dictionary(make_ula(8), 16)
    y, x = stack_samples(generate_dataset(dic, 3, k_range=(1, 3), min_sep=1 / 8, seed=seed))
    errs = {}
    for kind in KINDS:
        net = init_network(kind, dic, 2)
        errs[kind] = grad_check(net, y, x, dic, floor=floor)
    worst = max(errs.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
    return CheckResult("backward matches central differences", worst < tol, detail)


ALL_CHECKS = (check_circulant_apply, check_backprojection, check_fast_admm, check_compact_iterates,
              check_circulance, check_init_equivalence, check_gradients)


def run_all(seed: int = 0) -> list[CheckResult]:
    return [check(seed) for check in ALL_CHECKS]
