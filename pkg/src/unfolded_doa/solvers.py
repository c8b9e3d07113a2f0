"""Iterative LASSO solvers: ISTA, ADMM, compact ADMM and its FFT variant.

All solvers accept a single measurement ``y`` of shape (M,) or a batch of
rows (B, M) and return estimates of shape (N,) or (B, N).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .array_signal import Dictionary
from .errors import DivergenceError, StructureViolation


@dataclass
class SolverConfig:
    """Hyperparameters of the iterative solvers.

    ``kappa_convention`` selects the ADMM z-step threshold: ``"prox"`` uses
    lam/rho (the proximal step of the augmented Lagrangian), ``"paper"`` uses
    rho*lam. The two agree at rho = 1.
    """

    lam: float
    rho: float = 1.0
    iterations: int = 100
    mu: float | None = None
    kappa_convention: str = "prox"

    def __post_init__(self):
        if self.lam <= 0 or self.rho <= 0:
            raise ValueError("lam and rho must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.mu is not None and self.mu <= 0:
            raise ValueError("mu must be positive")
        if self.kappa_convention not in ("prox", "paper"):
            raise ValueError(f"unknown kappa convention {self.kappa_convention!r}")

    @property
    def kappa2(self) -> float:
        if self.kappa_convention == "paper":
            return self.rho * self.lam
        return self.lam / self.rho

    def step(self, dic: Dictionary) -> float:
        return dic.mu if self.mu is None else self.mu


def soft_threshold(z, kappa):
    """Complex soft-thresholding ``exp(j arg z) * max(|z| - kappa, 0)``."""
    z = np.asarray(z)
    mag = np.abs(z)
    scale = np.maximum(mag - kappa, 0.0) / np.where(mag > 0, mag, 1.0)
    return z * scale


def _check_finite(x, name):
    if not np.all(np.isfinite(x)):
        raise DivergenceError(f"{name} produced a non-finite iterate")


def ista(dic: Dictionary, y, cfg: SolverConfig, return_iterates: bool = False):
    mu = cfg.step(dic)
    kappa1 = mu * cfg.lam
    g = np.eye(dic.n) - mu * dic.gram
    yf = mu * dic.backproject(y)
    x = np.zeros_like(yf)
    trace = []
    for _ in range(cfg.iterations):
        x = soft_threshold(x @ g.T + yf, kappa1)
        _check_finite(x, "ista")
        if return_iterates:
            trace.append(x)
    return (x, np.stack(trace)) if return_iterates else x


def admm(dic: Dictionary, y, cfg: SolverConfig, return_iterates: bool = False):
    """Scaled-form ADMM. Returns the sparse iterate ``z``.

    With ``return_iterates`` the second output stacks ``x^(t) + v^(t-1)``,
    the auxiliary sequence the compact form tracks.
    """
    rho, kappa = cfg.rho, cfg.kappa2
    try:
        chol = scipy.linalg.cho_factor(dic.gram + rho * np.eye(dic.n))
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError("A^H A + rho I is not positive definite") from exc
    yf = dic.backproject(y)
    x = np.zeros_like(yf)
    z = np.zeros_like(yf)
    v = np.zeros_like(yf)
    trace = []
    for _ in range(cfg.iterations):
        rhs = yf + rho * (z - v)
        x = scipy.linalg.cho_solve(chol, rhs.T).T
        u = x + v
        z = soft_threshold(u, kappa)
        v = u - z
        _check_finite(u, "admm")
        if return_iterates:
            trace.append(u)
    return (z, np.stack(trace)) if return_iterates else z


def _compact_step(u, yf, rho, kappa, apply_q):
    s = soft_threshold(u, kappa)
    return apply_q(yf + rho * (2 * s - u)) + u - s


def _hermitian_inverse(b):
    # Cholesky-based inverse, symmetrized: roughly 30x less drift over 100
    # iterations than a general LU inverse
    q = scipy.linalg.cho_solve(scipy.linalg.cho_factor(b), np.eye(len(b), dtype=b.dtype))
    return (q + q.conj().T) / 2


def compact_admm(dic: Dictionary, y, cfg: SolverConfig, return_iterates: bool = False):
    rho, kappa = cfg.rho, cfg.kappa2
    q = _hermitian_inverse(dic.gram + rho * np.eye(dic.n))
    yf = dic.backproject(y)
    u = np.zeros_like(yf)
    trace = []
    for _ in range(cfg.iterations):
        u = _compact_step(u, yf, rho, kappa, lambda h: h @ q.T)
        _check_finite(u, "compact_admm")
        if return_iterates:
            trace.append(u)
    x = soft_threshold(u, kappa)
    return (x, np.stack(trace)) if return_iterates else x


def fft_backproject(dic: Dictionary, y) -> np.ndarray:
    """``A^H y`` as one N-point DFT of ``y`` scattered onto the element positions.

    Valid for gamma = 1/2: ``A^H y (n) = sum_m (-1)^l_m y_m exp(-j 2 pi n l_m / N)``.
    """
    y = np.asarray(y)
    l = dic.geometry.l
    sign = np.where(l % 2 == 0, 1.0, -1.0)
    scattered = np.zeros(y.shape[:-1] + (dic.n,), dtype=np.complex128)
    scattered[..., l] = y * sign
    return np.fft.fft(scattered, axis=-1)


def require_circulant(dic: Dictionary) -> None:
    if not dic.is_circulant_grid:
        raise StructureViolation(f"circulant Gram needs gamma = 1/2, got {dic.gamma}")


def fast_compact_admm(dic: Dictionary, y, cfg: SolverConfig, return_iterates: bool = False):
    require_circulant(dic)
    rho, kappa = cfg.rho, cfg.kappa2
    q = 1.0 / (dic.gram_col_dft + rho)
    yf = fft_backproject(dic, y)
    u = np.zeros_like(yf)
    trace = []

    def apply_q(h):
        return np.fft.ifft(q * np.fft.fft(h, axis=-1), axis=-1)

    for _ in range(cfg.iterations):
        u = _compact_step(u, yf, rho, kappa, apply_q)
        _check_finite(u, "fast_compact_admm")
        if return_iterates:
            trace.append(u)
    x = soft_threshold(u, kappa)
    return (x, np.stack(trace)) if return_iterates else x


# ---------------------------------------------------------------------------
# circulant utilities


@dataclass
class CirculantOperator:
    source_col: np.ndarray
    eigenvalues: np.ndarray

    @classmethod
    def from_column(cls, col) -> "CirculantOperator":
        col = np.asarray(col, dtype=np.complex128)
        return cls(col, np.fft.fft(col))

    @property
    def n(self) -> int:
        return len(self.eigenvalues)

    def dense(self) -> np.ndarray:
        idx = (np.arange(self.n)[:, None] - np.arange(self.n)[None, :]) % self.n
        return self.source_col[idx]

    def shifted(self, rho: float) -> "CirculantOperator":
        """The operator plus ``rho I``."""
        col = self.source_col.copy()
        col[0] += rho
        return CirculantOperator(col, self.eigenvalues + rho)


def circulant_apply(op: CirculantOperator, x) -> np.ndarray:
    return np.fft.ifft(op.eigenvalues * np.fft.fft(x, axis=-1), axis=-1)


def circulant_solve(op: CirculantOperator, x) -> np.ndarray:
    if np.any(np.abs(op.eigenvalues) == 0):
        raise ArithmeticError("singular circulant operator")
    return np.fft.ifft(np.fft.fft(x, axis=-1) / op.eigenvalues, axis=-1)


def is_circulant(b_matrix, tol: float = 1e-10) -> bool:
    """True iff ``b_matrix(n, p) == b_matrix((n - p) mod N, 0)`` within ``tol``."""
    b = np.asarray(b_matrix)
    if b.ndim != 2 or b.shape[0] != b.shape[1]:
        raise ValueError("is_circulant needs a square matrix")
    n = b.shape[0]
    idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    return bool(np.all(np.abs(b - b[idx, 0]) <= tol))


# ---------------------------------------------------------------------------
# diagnostics


def lasso_objective(dic: Dictionary, y, lam: float, x) -> float:
    r = np.asarray(y) - dic.matrix_a @ x
    return 0.5 * float(np.vdot(r, r).real) + lam * float(np.sum(np.abs(x)))


def lasso_optimality_residual(dic: Dictionary, y, lam: float, x) -> float:
    """Largest violation of the LASSO subgradient optimality conditions.

    On the support ``|g_n + lam x_n/|x_n||``, off it ``max(|g_n| - lam, 0)``,
    with ``g = A^H (A x - y)``. Zero iff ``x`` solves the problem.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    x = np.asarray(x)
    g = dic.matrix_a.conj().T @ (dic.matrix_a @ x - np.asarray(y))
    mag = np.abs(x)
    on = mag > 0
    res_on = np.abs(g[on] + lam * x[on] / mag[on])
    res_off = np.maximum(np.abs(g[~on]) - lam, 0.0)
    return float(max(res_on.max(initial=0.0), res_off.max(initial=0.0)))
