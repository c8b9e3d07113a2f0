"""Peak picking, target matching, detection rate, angular RMSE, NMSE and the
SNR sweep harness."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .array_signal import Dictionary, GroundTruthScene, Sample, stack_samples

log = logging.getLogger(__name__)

Estimator = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class MatchConfig:
    delta1: int = 2
    delta2: float = 0.4

    def __post_init__(self):
        if self.delta1 < 0 or not 0 < self.delta2 <= 1:
            raise ValueError(f"bad match config ({self.delta1}, {self.delta2})")


def peak_spectrum(x_hat) -> np.ndarray:
    """Keep ``|x_hat(n)|`` where it is a local maximum over its circular
    neighbours, zero elsewhere. A flat-topped peak is credited to its
    leftmost bin.
    """
    a = np.abs(np.asarray(x_hat))
    n = a.shape[-1]
    left = np.roll(a, 1, axis=-1)
    right = np.roll(a, -1, axis=-1)
    keep = (a > 0) & (a > left) & (a > right)
    plateau_starts = np.argwhere((a > 0) & (a > left) & (a == right))
    for idx in plateau_starts:
        *row, j = idx
        row = tuple(row)
        k = (j + 1) % n
        while a[row + (k,)] == a[row + (j,)] and k != j:
            k = (k + 1) % n
        if a[row + (k,)] < a[row + (j,)]:
            keep[row + (j,)] = True
    flat = np.all(a == a[..., :1], axis=-1) & (a[..., 0] > 0)
    if np.any(flat):
        keep[flat, 0] = True
    return np.where(keep, a, 0.0)


def bin_distance(a, b, n: int):
    d = np.abs(np.asarray(a) - np.asarray(b)) % n
    return np.minimum(d, n - d)


def match_targets(scene: GroundTruthScene, x_pk, cfg: MatchConfig = MatchConfig()) -> list[list[int]]:
    """Per true target, the peak bins within ``delta1`` (circular) whose
    amplitude ratio to the true amplitude is at least ``delta2``."""
    x_pk = np.asarray(x_pk)
    n = len(x_pk)
    peaks = np.flatnonzero(x_pk)
    out = []
    for r in scene.grid_indices:
        near = peaks[bin_distance(peaks, r, n) <= cfg.delta1]
        truth = abs(scene.sparse_x[r])
        out.append([int(j) for j in near if x_pk[j] / truth >= cfg.delta2])
    return out


def detection_rate(scene: GroundTruthScene, j_sets: Sequence[Sequence[int]]) -> float:
    if scene.k_targets < 1:
        raise ValueError("detection rate is undefined for an empty scene")
    return sum(1 for j in j_sets if len(j) > 0) / scene.k_targets


def bin_angles_deg(dic: Dictionary) -> np.ndarray:
    """Angle of each grid bin from ``f = -gamma sin(theta)``."""
    return np.degrees(-np.arcsin(np.clip(dic.grid / dic.gamma, -1.0, 1.0)))


def squared_angle_error(dic: Dictionary, scene: GroundTruthScene, j_sets) -> float | None:
    """Mean squared angular error (deg^2) over detected targets, None if none."""
    theta = bin_angles_deg(dic)
    errs = []
    for r, js in zip(scene.grid_indices, j_sets):
        if not js:
            continue
        js = np.asarray(js)
        j = js[np.argmin(bin_distance(js, r, dic.n))]
        errs.append((theta[r] - theta[j]) ** 2)
    return float(np.mean(errs)) if errs else None


def angular_rmse(dic: Dictionary, scenes: Sequence[GroundTruthScene], estimates,
                 cfg: MatchConfig = MatchConfig()) -> float:
    """RMSE in degrees over vectors with at least one detection; NaN if none."""
    per_vector = []
    for scene, x_hat in zip(scenes, estimates):
        e = squared_angle_error(dic, scene, match_targets(scene, peak_spectrum(x_hat), cfg))
        if e is not None:
            per_vector.append(e)
    return math.sqrt(np.mean(per_vector)) if per_vector else float("nan")


def nmse_metric(x_hat, x) -> float:
    x = np.asarray(x)
    den = float(np.vdot(x, x).real)
    if den == 0:
        raise ValueError("NMSE undefined for a zero ground truth")
    d = np.asarray(x_hat) - x
    return float(np.vdot(d, d).real) / den


# ---------------------------------------------------------------------------
# sweep


@dataclass
class SweepRow:
    snr_db: float
    mean_detection_rate: float
    angular_rmse_deg: float
    mean_nmse: float
    n_vectors: int
    n_detected: int
    n_failed: int = 0


@dataclass
class MetricsReport:
    estimator: str
    rows: list[SweepRow] = field(default_factory=list)
    config_hash: str = ""


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def evaluate_batch(dic: Dictionary, samples: Sequence[Sample], x_hats, snr_db: float,
                   cfg: MatchConfig = MatchConfig()) -> SweepRow:
    pds, angle_errs, nmses, failed = [], [], [], 0
    peaks = peak_spectrum(x_hats)
    for s, x_hat, pk in zip(samples, x_hats, peaks):
        if not np.all(np.isfinite(x_hat)):
            failed += 1
            continue
        j_sets = match_targets(s.scene, pk, cfg)
        pds.append(detection_rate(s.scene, j_sets))
        e = squared_angle_error(dic, s.scene, j_sets)
        if e is not None:
            angle_errs.append(e)
        nmses.append(nmse_metric(x_hat, s.scene.sparse_x))
    rmse = math.sqrt(np.mean(angle_errs)) if angle_errs else float("nan")
    return SweepRow(snr_db, float(np.mean(pds)) if pds else float("nan"), rmse,
                    float(np.mean(nmses)) if nmses else float("nan"),
                    len(samples), len(angle_errs), failed)


def snr_sweep(dic: Dictionary, estimators: Mapping[str, Estimator],
              test_sets: Mapping[float, Sequence[Sample]], cfg: MatchConfig = MatchConfig(),
              provenance: dict | None = None, chunk: int = 1000) -> list[MetricsReport]:
    """Run every estimator on every SNR level's test vectors.

    An estimator maps a (B, M) batch of measurements to (B, N) estimates. A
    failing batch is recorded in ``n_failed`` instead of aborting the sweep.
    """
    if not estimators:
        raise ValueError("no estimators given")
    reports = []
    for label, est in estimators.items():
        h = config_hash({"estimator": label, "match": asdict(cfg), **(provenance or {})})
        rep = MetricsReport(label, config_hash=h)
        for snr in sorted(test_sets):
            samples = list(test_sets[snr])
            y, _ = stack_samples(samples)
            parts = []
            for i in range(0, len(y), chunk):
                try:
                    parts.append(np.asarray(est(y[i:i + chunk])))
                except ArithmeticError as exc:
                    log.warning("%s failed at %s dB: %s", label, snr, exc)
                    parts.append(np.full((len(y[i:i + chunk]), dic.n), np.nan + 0j))
            rep.rows.append(evaluate_batch(dic, samples, np.concatenate(parts), snr, cfg))
        reports.append(rep)
    return reports


SWEEP_COLUMNS = ["estimator", "snr_db", "p_d", "rmse_deg", "nmse", "n_vectors", "n_detected"]


def write_sweep(reports: Sequence[MetricsReport], csv_path, json_path=None) -> None:
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for rep in reports:
            for r in rep.rows:
                w.writerow([rep.estimator, r.snr_db, r.mean_detection_rate, r.angular_rmse_deg,
                            r.mean_nmse, r.n_vectors, r.n_detected])
    if json_path is not None:
        with open(json_path, "w") as fh:
            json.dump([asdict(rep) for rep in reports], fh, indent=2)
