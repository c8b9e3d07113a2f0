"""Laplacian-smoothed NMSE loss, gradients, Adam and the training loop."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .array_signal import Dictionary, stack_samples
from .errors import ContractError, UndefinedLoss
from .nets import Network, apply_constraints, backward_network, forward

log = logging.getLogger(__name__)


@dataclass
class LossConfig:
    kernel_scale: float = 0.5
    convolution_mode: str = "circular"

    def __post_init__(self):
        if self.kernel_scale <= 0:
            raise ValueError("kernel_scale must be positive")
        if self.convolution_mode not in ("circular", "linear"):
            raise ValueError(f"unknown convolution mode {self.convolution_mode!r}")

    def kernel(self, n: int) -> np.ndarray:
        """``g(k) = exp(-|k|/b)`` for ``k = -floor(N/2) .. floor(N/2)``."""
        k = np.arange(-(n // 2), n // 2 + 1)
        return np.exp(-np.abs(k) / self.kernel_scale)


class Smoother:
    """Real symmetric convolution with the Laplacian kernel on N bins."""

    def __init__(self, n: int, cfg: LossConfig):
        self.n = n
        self.mode = cfg.convolution_mode
        g = cfg.kernel(n)
        lags = np.arange(-(n // 2), n // 2 + 1)
        if self.mode == "circular":
            col = np.zeros(n)
            np.add.at(col, lags % n, g)
            self.spectrum = np.fft.fft(col).real
        else:
            col = np.zeros(n)
            col[: n // 2 + 1] = g[n // 2:]
            self.matrix = scipy.linalg.toeplitz(col)

    def __call__(self, x):
        if self.mode == "circular":
            return np.fft.ifft(self.spectrum * np.fft.fft(x, axis=-1), axis=-1)
        return x @ self.matrix


def _loss_terms(x_hat, x, smoother):
    c = smoother(x_hat - x)
    ref = smoother(x)
    den = np.sum(np.abs(ref) ** 2, axis=-1)
    if np.any(den == 0):
        raise UndefinedLoss("ground truth is zero after smoothing")
    return c, den


def smoothed_nmse_loss(x_hat, x, cfg: LossConfig | None = None) -> float:
    """``||x_hat*g - x*g||^2 / ||x*g||^2``; batched input is averaged over rows."""
    cfg = cfg or LossConfig()
    x_hat = np.asarray(x_hat)
    smoother = Smoother(x_hat.shape[-1], cfg)
    c, den = _loss_terms(x_hat, np.asarray(x), smoother)
    return float(np.mean(np.sum(np.abs(c) ** 2, axis=-1) / den))


def smoothed_nmse_grad(x_hat, x, cfg: LossConfig | None = None):
    """Batch-mean loss and its gradient w.r.t. ``x_hat`` (rows)."""
    cfg = cfg or LossConfig()
    x_hat = np.atleast_2d(x_hat)
    x = np.atleast_2d(x)
    smoother = Smoother(x_hat.shape[-1], cfg)
    c, den = _loss_terms(x_hat, x, smoother)
    per = np.sum(np.abs(c) ** 2, axis=-1) / den
    b = x_hat.shape[0]
    grad = 2 * smoother(c) / den[:, None] / b
    return float(per.mean()), grad


def backward(net: Network, cache: dict, x, cfg: LossConfig | None = None):
    """Loss and parameter gradients for the batch that produced ``cache``."""
    x_hat = cache.get("x_out")
    if x_hat is None:
        raise ContractError("cache carries no network output; use loss_and_grad")
    loss, gx = smoothed_nmse_grad(x_hat, x, cfg)
    return loss, backward_network(net, cache, gx)


def loss_and_grad(net: Network, y, x, dic: Dictionary, cfg: LossConfig | None = None):
    x_hat, cache = forward(net, np.atleast_2d(y), dic, want_cache=True)
    cache["x_out"] = x_hat
    return backward(net, cache, np.atleast_2d(x), cfg)


def batch_loss(net: Network, y, x, dic: Dictionary, cfg: LossConfig | None = None,
               chunk: int = 1024) -> float:
    total = 0.0
    for i in range(0, len(y), chunk):
        x_hat, _ = forward(net, y[i:i + chunk], dic)
        total += smoothed_nmse_loss(x_hat, x[i:i + chunk], cfg) * len(x_hat)
    return total / len(y)


# ---------------------------------------------------------------------------
# tied-parameter gradients


def fold_tied_gradients(net: Network, grads: dict) -> dict:
    """Accumulate gradients of tied entries into their free counterparts.

    Alternative to update-then-project: the result is the gradient with
    respect to the free parameters only; tied entries get zero gradient.
    """
    out = dict(grads)
    for t in range(net.t):
        if net.kind == "chadmmnet":
            g = grads[f"{t}.w"].copy()
            n = len(g)
            tied = np.arange(n // 2 + 1, n)
            g[n - tied] += np.conj(g[tied])
            g[tied] = 0
            if net.hermitian_strict:
                g[0] = g[0].real
                if n % 2 == 0:
                    g[n // 2] = g[n // 2].real
            out[f"{t}.w"] = g
        elif net.kind == "thlista":
            g = grads[f"{t}.w1"].copy()
            n = (len(g) + 1) // 2
            g[n:] += np.conj(g[: n - 1][::-1])
            g[: n - 1] = 0
            g[n - 1] = g[n - 1].real
            out[f"{t}.w1"] = g
    return out


# ---------------------------------------------------------------------------
# Adam


def _real(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    return a.view(np.float64) if np.iscomplexobj(a) else a


@dataclass
class AdamState:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    skipped: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def adam_step(net: Network, grads: dict, state: AdamState, tie_mode: str = "project") -> bool:
    """One bias-corrected Adam update over real/imaginary parts, then the
    per-kind constraints. Returns False when the step was skipped."""
    if any(not np.all(np.isfinite(g)) for g in grads.values()):
        state.skipped += 1
        log.warning("non-finite gradient, skipping step (%d skipped)", state.skipped)
        return False
    if tie_mode == "accumulate":
        grads = fold_tied_gradients(net, grads)
    elif tie_mode != "project":
        raise ValueError(f"unknown tie mode {tie_mode!r}")
    state.step_count += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step_count
    bc2 = 1.0 - b2 ** state.step_count
    params = net.named_parameters()
    for name, p in params.items():
        g = _real(np.asarray(grads[name], dtype=p.dtype, order="C"))
        pr = _real(p)
        if name not in state.first_moment:
            state.first_moment[name] = np.zeros_like(pr)
            state.second_moment[name] = np.zeros_like(pr)
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        pr -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    apply_constraints(net)
    return True


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 2048
    learning_rate: float = 1e-4
    seed: int = 0
    validation_every: int = 1
    checkpoint_dir: str | None = None
    tie_mode: str = "project"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.epochs < 0 or self.validation_every < 1:
            raise ValueError("bad epoch settings")


def _as_arrays(data):
    if isinstance(data, tuple):
        return np.asarray(data[0]), np.asarray(data[1])
    return stack_samples(data)


@dataclass
class TrainResult:
    network: Network
    best_network: Network
    history: list[dict]
    best_epoch: int


def train(net: Network, train_set, val_set, cfg: TrainConfig, loss_cfg: LossConfig | None,
          dic: Dictionary) -> TrainResult:
    """Mini-batch Adam training with per-epoch validation.

    Datasets are lists of ``Sample`` or ``(Y, X)`` array pairs. Epoch 0 is
    the untrained network. The best-validation network is kept alongside the
    final one; no early stopping.
    """
    from .formats import save_checkpoint  # avoid an import cycle at module load

    loss_cfg = loss_cfg or LossConfig()
    y_tr, x_tr = _as_arrays(train_set)
    y_va, x_va = _as_arrays(val_set)
    for y, x in ((y_tr, x_tr), (y_va, x_va)):
        if y.shape[-1] != net.m or x.shape[-1] != net.n:
            raise ContractError(f"dataset dims {(y.shape[-1], x.shape[-1])} != network {(net.m, net.n)}")
    rng = np.random.default_rng(cfg.seed)
    state = AdamState(learning_rate=cfg.learning_rate)
    ckpt = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir else None

    t0 = time.perf_counter()
    val0 = batch_loss(net, y_va, x_va, dic, loss_cfg)
    history = [dict(epoch=0, train_loss=batch_loss(net, y_tr, x_tr, dic, loss_cfg),
                    val_loss=val0, wall_seconds=time.perf_counter() - t0)]
    best, best_val, best_epoch = net.copy(), val0, 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(y_tr))
        losses, sizes = [], []
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            loss, grads = loss_and_grad(net, y_tr[idx], x_tr[idx], dic, loss_cfg)
            if cfg.learning_rate > 0:
                adam_step(net, grads, state, cfg.tie_mode)
            losses.append(loss)
            sizes.append(len(idx))
        row = dict(epoch=epoch, train_loss=float(np.average(losses, weights=sizes)),
                   val_loss=float("nan"), wall_seconds=time.perf_counter() - t0)
        if epoch % cfg.validation_every == 0 or epoch == cfg.epochs:
            row["val_loss"] = batch_loss(net, y_va, x_va, dic, loss_cfg)
            if row["val_loss"] < best_val:
                best, best_val, best_epoch = net.copy(), row["val_loss"], epoch
                if ckpt is not None:
                    save_checkpoint(ckpt / "best.ckpt", best)
        history.append(row)
        log.info("epoch %d train %.5f val %.5f", epoch, row["train_loss"], row["val_loss"])
    if ckpt is not None:
        save_checkpoint(ckpt / "final.ckpt", net)
    return TrainResult(net, best, history, best_epoch)


def write_history(path, history: list[dict]) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "val_loss", "wall_seconds"])
        w.writeheader()
        w.writerows(history)


# ---------------------------------------------------------------------------
# finite-difference verification


def grad_check(net: Network, y, x, dic: Dictionary, loss_cfg: LossConfig | None = None,
               eps: float = 1e-6, floor: float = 1e-12) -> float:
    """Max relative error between analytic and central-difference gradients
    over every real degree of freedom, with denominator
    ``max(|analytic|, |numeric|, floor)``."""
    y = np.atleast_2d(y)
    x = np.atleast_2d(x)
    _, grads = loss_and_grad(net, y, x, dic, loss_cfg)

    def f():
        x_hat, _ = forward(net, y, dic)
        return smoothed_nmse_loss(x_hat, x, loss_cfg)

    worst = 0.0
    for name, p in net.named_parameters().items():
        pr = _real(p).reshape(-1)
        ga = _real(np.asarray(grads[name], dtype=p.dtype, order="C")).reshape(-1)
        for i in range(pr.size):
            old = pr[i]
            pr[i] = old + eps
            fp = f()
            pr[i] = old - eps
            fm = f()
            pr[i] = old
            num = (fp - fm) / (2 * eps)
            err = abs(ga[i] - num) / max(abs(ga[i]), abs(num), floor)
            worst = max(worst, err)
    return worst
