"""Array geometry, steering vectors, the frequency-grid dictionary and
randomized scene/measurement synthesis."""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np

from .errors import AliasingError, GridTooSmall, InvalidGeometry, SamplingFailure

MAX_SCENE_TRIES = 10_000
NOISE_CONVENTIONS = ("per_element", "paper_literal")


@dataclass(frozen=True)
class ArrayGeometry:
    """Linear array with elements at integer multiples ``l_m`` of ``gamma``
    wavelengths."""

    positions: tuple[int, ...]
    gamma: float = 0.5
    kind: str = "ULA"

    def __post_init__(self):
        pos = tuple(int(p) for p in self.positions)
        object.__setattr__(self, "positions", pos)
        if len(pos) < 2:
            raise InvalidGeometry("an array needs at least two elements")
        if pos[0] < 0 or any(b <= a for a, b in zip(pos, pos[1:])):
            raise InvalidGeometry(f"positions must be non-negative and strictly increasing: {pos}")
        if not 0.0 < self.gamma <= 0.5:
            raise InvalidGeometry(f"gamma must lie in (0, 1/2], got {self.gamma}")
        if self.kind not in ("ULA", "SLA"):
            raise InvalidGeometry(f"unknown array kind {self.kind!r}")
        if self.kind == "ULA" and pos != tuple(range(len(pos))):
            raise InvalidGeometry("ULA positions must be 0..M-1")

    @property
    def m(self) -> int:
        return len(self.positions)

    @property
    def k_max(self) -> int:
        return self.positions[-1]

    @property
    def l(self) -> np.ndarray:
        return np.asarray(self.positions, dtype=np.int64)


def make_ula(m: int, gamma: float = 0.5) -> ArrayGeometry:
    if m < 2:
        raise InvalidGeometry(f"ULA needs m >= 2, got {m}")
    return ArrayGeometry(tuple(range(m)), gamma, "ULA")


def make_sla(m: int, aperture: int, seed, gamma: float = 0.5) -> ArrayGeometry:
    """Randomly subsample ``m`` elements of a ULA spanning ``0..aperture``.

    Both endpoints are always kept so the physical aperture is exact.
    """
    if aperture < 1 or m < 2 or m > aperture + 1:
        raise InvalidGeometry(f"cannot place {m} elements on aperture {aperture}")
    rng = np.random.default_rng(seed)
    interior = rng.choice(np.arange(1, aperture), size=m - 2, replace=False)
    positions = sorted([0, aperture, *(int(i) for i in interior)])
    return ArrayGeometry(tuple(positions), gamma, "SLA")


def steering_matrix(geom: ArrayGeometry, freqs) -> np.ndarray:
    """Columns ``exp(j 2 pi f l_m)`` for every frequency in ``freqs``; shape (M, K)."""
    f = np.atleast_1d(np.asarray(freqs, dtype=np.float64))
    if np.any(np.abs(f) > geom.gamma * (1 + 1e-12)):
        raise AliasingError(f"frequencies must lie in [-{geom.gamma}, {geom.gamma}]")
    return np.exp(2j * np.pi * np.outer(geom.l, f))


def steering_vector(geom: ArrayGeometry, f: float) -> np.ndarray:
    return steering_matrix(geom, [f])[:, 0]


def power_iteration_sq(a: np.ndarray, tol: float = 1e-10, max_iter: int = 1000) -> float:
    """Largest eigenvalue of ``a^H a`` (the squared spectral norm of ``a``)."""
    rng = np.random.default_rng(0)
    v = rng.standard_normal(a.shape[1]) + 1j * rng.standard_normal(a.shape[1])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = a.conj().T @ (a @ v)
        lam_new = float(np.real(np.vdot(v, w)))
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1.0):
            return lam_new
        lam = lam_new
    return lam


@dataclass(eq=False)
class Dictionary:
    geometry: ArrayGeometry
    grid_size: int
    grid: np.ndarray
    matrix_a: np.ndarray
    gram_col: np.ndarray
    gram_col_dft: np.ndarray

    @property
    def m(self) -> int:
        return self.geometry.m

    @property
    def n(self) -> int:
        return self.grid_size

    @property
    def gamma(self) -> float:
        return self.geometry.gamma

    @property
    def is_circulant_grid(self) -> bool:
        return self.geometry.gamma == 0.5

    @cached_property
    def gram(self) -> np.ndarray:
        return self.matrix_a.conj().T @ self.matrix_a

    @cached_property
    def sigma_max_sq(self) -> float:
        return power_iteration_sq(self.matrix_a)

    @property
    def mu(self) -> float:
        """ISTA step size 1/sigma_max(A)^2."""
        return 1.0 / self.sigma_max_sq

    @cached_property
    def ref(self) -> str:
        """Short identifier of (positions, gamma, N)."""
        key = f"{self.geometry.positions}|{self.gamma!r}|{self.grid_size}"
        return hashlib.sha256(key.encode()).hexdigest()[:16]

    def backproject(self, y: np.ndarray) -> np.ndarray:
        """``A^H y`` for a single vector or a batch of rows."""
        return np.asarray(y) @ self.matrix_a.conj()

    def nearest_bins(self, freqs) -> np.ndarray:
        f = np.asarray(freqs, dtype=np.float64)
        idx = np.rint((f + self.gamma) * self.grid_size / (2 * self.gamma)).astype(np.int64)
        if self.is_circulant_grid:
            return idx % self.grid_size
        return np.clip(idx, 0, self.grid_size - 1)


def build_dictionary(geom: ArrayGeometry, n: int) -> Dictionary:
    if n <= geom.m:
        raise GridTooSmall(f"grid size {n} must exceed the element count {geom.m}")
    if n <= geom.k_max + 1:
        raise GridTooSmall(f"grid size {n} must exceed k_M + 1 = {geom.k_max + 1}")
    grid = -geom.gamma + 2.0 * geom.gamma * np.arange(n) / n
    a = np.exp(2j * np.pi * np.outer(geom.l, grid))
    b = a.conj().T @ a[:, 0]
    return Dictionary(geom, n, grid, a, b, np.fft.fft(b))


# ---------------------------------------------------------------------------
# scenes and measurements


@dataclass
class GroundTruthScene:
    k_targets: int
    true_freqs: np.ndarray
    grid_indices: np.ndarray
    amplitudes: np.ndarray
    sparse_x: np.ndarray


@dataclass
class Sample:
    measurement: np.ndarray
    scene: GroundTruthScene
    snr_db: float
    noise_sigma_sq: float


def wrap_distance(a, b, period: float = 1.0):
    d = np.abs(np.asarray(a) - np.asarray(b)) % period
    return np.minimum(d, period - d)


def _pairwise_ok(freqs: np.ndarray, min_sep: float, period: float) -> bool:
    if len(freqs) < 2:
        return True
    d = wrap_distance(freqs[:, None], freqs[None, :], period)
    iu = np.triu_indices(len(freqs), 1)
    return bool(np.all(d[iu] >= min_sep))


def scene_from_parts(dic: Dictionary, true_freqs, amplitudes) -> GroundTruthScene:
    f = np.asarray(true_freqs, dtype=np.float64)
    amps = np.asarray(amplitudes, dtype=np.complex128)
    idx = dic.nearest_bins(f)
    x = np.zeros(dic.n, dtype=np.complex128)
    x[idx] = amps
    return GroundTruthScene(len(f), f, idx, amps, x)


def draw_scene(dic: Dictionary, k_range=(1, 8), min_sep: float | None = None,
               seed=None) -> GroundTruthScene:
    """Random K-target scene with wrap-aware minimum frequency separation.

    Frequencies are uniform on ``[-gamma, gamma)`` and snapped to their
    nearest grid bin in ``sparse_x``; ``true_freqs`` keep the off-grid values.
    """
    k_lo, k_hi = int(k_range[0]), int(k_range[1])
    if k_lo < 1 or k_hi < k_lo:
        raise ValueError(f"bad target-count range {k_range}")
    period = 2 * dic.gamma
    if min_sep is None:
        min_sep = 1.0 / dic.m
    if min_sep * k_hi >= period:
        raise SamplingFailure(f"cannot pack {k_hi} targets {min_sep} apart")
    rng = np.random.default_rng(seed)
    k = int(rng.integers(k_lo, k_hi + 1))
    for _ in range(MAX_SCENE_TRIES):
        f = rng.uniform(-dic.gamma, dic.gamma, size=k)
        if not _pairwise_ok(f, min_sep, period):
            continue
        if len(np.unique(dic.nearest_bins(f))) != k:
            continue
        break
    else:
        raise SamplingFailure(f"no feasible {k}-target scene after {MAX_SCENE_TRIES} tries")
    mag = rng.uniform(0.0, 1.0, size=k)
    while np.any(mag == 0.0):
        mag[mag == 0.0] = rng.uniform(0.0, 1.0, size=int(np.sum(mag == 0.0)))
    phase = rng.uniform(0.0, 2 * np.pi, size=k)
    return scene_from_parts(dic, f, mag * np.exp(1j * phase))


def synthesize_measurement(dic: Dictionary, scene: GroundTruthScene, snr_db: float,
                           seed=None, noise_convention: str = "per_element") -> Sample:
    """``y = sum_k x_k a(f*_k) + n`` at the requested SNR.

    With ``per_element`` (default) each element gets variance
    ``10^(-SNR/10) ||s||^2 / M`` so the realized noise-to-signal energy ratio
    matches the SNR; ``paper_literal`` drops the ``1/M``.
    """
    if scene.k_targets < 1:
        raise ValueError("scene has no targets")
    if noise_convention not in NOISE_CONVENTIONS:
        raise ValueError(f"unknown noise convention {noise_convention!r}")
    signal = steering_matrix(dic.geometry, scene.true_freqs) @ scene.amplitudes
    if math.isinf(snr_db) and snr_db > 0:
        return Sample(signal, scene, float(snr_db), 0.0)
    var = 10.0 ** (-snr_db / 10.0) * float(np.vdot(signal, signal).real)
    if noise_convention == "per_element":
        var /= dic.m
    rng = np.random.default_rng(seed)
    noise = math.sqrt(var / 2) * (rng.standard_normal(dic.m) + 1j * rng.standard_normal(dic.m))
    return Sample(signal + noise, scene, float(snr_db), var)


def _snr_levels(snr_spec) -> list[float]:
    if np.isscalar(snr_spec):
        return [float(snr_spec)]
    return [float(s) for s in snr_spec]


def _seed_key(seed) -> list[int]:
    return [int(s) for s in np.atleast_1d(seed)]


def _make_sample(dic, index, level, snr, k_range, min_sep, seed, noise_convention):
    # the scene depends only on (seed, index): every SNR level sees the same scenes
    key = _seed_key(seed)
    scene = draw_scene(dic, k_range, min_sep, seed=[*key, index, 0])
    return synthesize_measurement(dic, scene, snr, seed=[*key, index, 1, level],
                                  noise_convention=noise_convention)


def iter_samples(dic: Dictionary, count: int, k_range=(1, 8), min_sep=None, snr_spec=15.0,
                 seed=0, noise_convention: str = "per_element") -> Iterator[Sample]:
    """Yield ``count`` samples per SNR level, level by level.

    ``seed`` is an int or a sequence of ints. Sub-seeds are derived from
    ``(seed, sample index, level)`` so any sample can be regenerated on its own.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    for level, snr in enumerate(_snr_levels(snr_spec)):
        for i in range(count):
            yield _make_sample(dic, i, level, snr, k_range, min_sep, seed, noise_convention)


def _chunk(args):
    dic, idx, level, snr, k_range, min_sep, seed, conv = args
    return [_make_sample(dic, i, level, snr, k_range, min_sep, seed, conv) for i in idx]


def generate_dataset(dic: Dictionary, count: int, k_range=(1, 8), min_sep=None,
                     snr_spec=15.0, seed=0, noise_convention: str = "per_element",
                     workers: int = 1) -> list[Sample]:
    if workers <= 1:
        return list(iter_samples(dic, count, k_range, min_sep, snr_spec, seed, noise_convention))
    if count < 1:
        raise ValueError("count must be >= 1")
    jobs = []
    for level, snr in enumerate(_snr_levels(snr_spec)):
        for idx in np.array_split(np.arange(count), workers):
            jobs.append((dic, idx.tolist(), level, snr, k_range, min_sep, seed, noise_convention))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return [s for chunk in pool.map(_chunk, jobs) for s in chunk]


def stack_samples(samples: Sequence[Sample]) -> tuple[np.ndarray, np.ndarray]:
    """Measurements (S, M) and ground-truth sparse vectors (S, N)."""
    y = np.stack([s.measurement for s in samples])
    x = np.stack([s.scene.sparse_x for s in samples])
    return y, x


def split_by_snr(samples: Sequence[Sample]) -> dict[float, list[Sample]]:
    out: dict[float, list[Sample]] = {}
    for s in samples:
        out.setdefault(s.snr_db, []).append(s)
    return out
