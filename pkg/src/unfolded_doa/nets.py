"""Deep-unfolded networks: LISTA, TLISTA, THLISTA, ADMM-Net, CADMM-Net and
CHADMM-Net.

Forward passes work on batches of row vectors and return an activation cache;
``backward_network`` walks that cache in reverse and produces gradients with
the same layout as the parameters. A gradient of a real loss L with respect to
a complex array is stored as ``dL/dRe + 1j dL/dIm``, so that
``dL = Re(sum(conj(grad) * dz))``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .array_signal import Dictionary
from .errors import ContractError, NearSingularLayer, StructureViolation
from .solvers import is_circulant, soft_threshold

ISTA_FAMILY = ("lista", "tlista", "thlista")
ADMM_FAMILY = ("admmnet", "cadmmnet", "chadmmnet")
KINDS = ISTA_FAMILY + ADMM_FAMILY

LAYER_FIELDS = {
    "admmnet": ("W", "rho", "beta"),
    "cadmmnet": ("w", "rho", "beta"),
    "chadmmnet": ("w", "rho", "beta"),
    "lista": ("W1", "W2", "beta"),
    "tlista": ("w1", "W2", "beta"),
    "thlista": ("w1", "W2", "beta"),
}

SINGULAR_TOL = 1e-12
RHO_FLOOR = 1e-6


@dataclass
class Network:
    kind: str
    layers: list[dict[str, np.ndarray]]
    final_beta: np.ndarray
    m: int
    n: int
    gamma: float
    dictionary_ref: str = ""
    hermitian_strict: bool = False
    init_info: dict = field(default_factory=dict)

    @property
    def t(self) -> int:
        return len(self.layers)

    @property
    def is_admm(self) -> bool:
        return self.kind in ADMM_FAMILY

    def named_parameters(self) -> dict[str, np.ndarray]:
        """Flat name -> array view of every learnable parameter."""
        out = {}
        for t, layer in enumerate(self.layers):
            for name in LAYER_FIELDS[self.kind]:
                out[f"{t}.{name}"] = layer[name]
        if self.is_admm:
            out["final_beta"] = self.final_beta
        return out

    def copy(self) -> "Network":
        return copy.deepcopy(self)


def _scalar(v) -> np.ndarray:
    return np.array(float(v), dtype=np.float64)


# ---------------------------------------------------------------------------
# structural constraints


def project_hermitian_circulant(w, strict: bool = False) -> np.ndarray:
    """Tie ``w(n) = conj(w(N+2-n))`` for 1-based ``n = floor(N/2)+2 .. N``.

    Free entries are left untouched unless ``strict`` also forces ``w(1)``
    (and ``w(N/2+1)`` for even N) real, which makes the circulant exactly
    Hermitian.
    """
    w = np.array(w, dtype=np.complex128)
    n = len(w)
    tied = np.arange(n // 2 + 1, n)  # 0-based
    w[tied] = np.conj(w[n - tied])
    if strict:
        w[0] = w[0].real
        if n % 2 == 0:
            w[n // 2] = w[n // 2].real
    return w


def toeplitz_tie(w1) -> np.ndarray:
    """Hermitian tie on a Toeplitz generator indexed by lag ``s + N - 1``."""
    w1 = np.array(w1, dtype=np.complex128)
    n = (len(w1) + 1) // 2
    pos = w1[n:]  # lags 1..N-1
    w1[: n - 1] = np.conj(pos[::-1])
    w1[n - 1] = w1[n - 1].real
    return w1


def toeplitz_generator(mat) -> np.ndarray:
    """Generator ``w1[s + N - 1] = mat(n - p = s)`` of a Toeplitz matrix."""
    n = mat.shape[0]
    return np.concatenate([mat[0, :0:-1], mat[:, 0]])


def toeplitz_dense(w1) -> np.ndarray:
    n = (len(w1) + 1) // 2
    return scipy.linalg.toeplitz(w1[n - 1:], w1[n - 1::-1])


def _embed(w1) -> np.ndarray:
    # first column of the 2N circulant that contains the Toeplitz matrix
    n = (len(w1) + 1) // 2
    return np.concatenate([w1[n - 1:], [0.0], w1[: n - 1]])


def _pad(x) -> np.ndarray:
    return np.concatenate([x, np.zeros_like(x)], axis=-1)


def toeplitz_matvec(w1, x) -> np.ndarray:
    """Rows of ``x`` times the Toeplitz matrix of ``w1`` via a 2N-point FFT."""
    n = x.shape[-1]
    c_hat = np.fft.fft(_embed(w1))
    return np.fft.ifft(c_hat * np.fft.fft(_pad(x), axis=-1), axis=-1)[..., :n]


# ---------------------------------------------------------------------------
# construction


def per_layer_param_count(kind: str, n: int, m: int) -> int:
    """Learnable count per layer, complex entries counted once."""
    return {
        "admmnet": n * n + 2,
        "cadmmnet": n + 2,
        "chadmmnet": n // 2 + 3,
        "lista": n * n + m * n + 1,
        "tlista": 2 * n - 1 + m * n + 1,
        "thlista": n + m * n + 1,
    }[kind]


def param_count(net: Network) -> int:
    total = net.t * per_layer_param_count(net.kind, net.n, net.m)
    return total + (1 if net.is_admm else 0)


def init_network(kind: str, dic: Dictionary, t_layers: int, beta0: float = 0.1,
                 rho0: float = 1.0, hermitian_strict: bool = False) -> Network:
    """Initialize every layer from the parent iterative method.

    ISTA-family layers start at ``W1 = I - mu A^H A`` and ``W2 = mu A^H`` so
    that the untrained network runs ISTA with threshold ``beta0``.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown network kind {kind!r}")
    if t_layers < 1:
        raise ValueError("t_layers must be >= 1")
    if kind in ("cadmmnet", "chadmmnet"):
        if not dic.is_circulant_grid or not is_circulant(dic.gram, 1e-9 * dic.m):
            raise StructureViolation(f"{kind} needs a circulant Gram matrix (gamma = 1/2)")
    n, m = dic.n, dic.m
    layers = []
    for _ in range(t_layers):
        if kind == "admmnet":
            layer = {"W": dic.gram.copy(), "rho": _scalar(rho0)}
        elif kind == "cadmmnet":
            layer = {"w": dic.gram_col_dft.copy(), "rho": _scalar(rho0)}
        elif kind == "chadmmnet":
            layer = {"w": project_hermitian_circulant(dic.gram_col, hermitian_strict),
                     "rho": _scalar(rho0)}
        else:
            w1 = np.eye(n) - dic.mu * dic.gram
            layer = {"W2": dic.mu * dic.matrix_a.conj().T.copy()}
            if kind == "lista":
                layer["W1"] = w1.astype(np.complex128)
            else:
                layer["w1"] = toeplitz_generator(w1).astype(np.complex128)
                if kind == "thlista":
                    layer["w1"] = toeplitz_tie(layer["w1"])
        layer["beta"] = _scalar(beta0)
        layers.append({k: np.asarray(layer[k], order="C") for k in LAYER_FIELDS[kind]})
    info = {"beta0": beta0, "rho0": rho0 if kind in ADMM_FAMILY else None,
            "mu": dic.mu if kind in ISTA_FAMILY else None}
    return Network(kind, layers, _scalar(beta0), m, n, dic.gamma, dic.ref,
                   hermitian_strict, info)


def apply_constraints(net: Network) -> None:
    """Clamp beta/rho and re-impose the structural ties in place."""
    for layer in net.layers:
        np.maximum(layer["beta"], 0.0, out=layer["beta"])
        if "rho" in layer:
            np.maximum(layer["rho"], RHO_FLOOR, out=layer["rho"])
        if net.kind == "chadmmnet":
            layer["w"][...] = project_hermitian_circulant(layer["w"], net.hermitian_strict)
        elif net.kind == "thlista":
            layer["w1"][...] = toeplitz_tie(layer["w1"])
    np.maximum(net.final_beta, 0.0, out=net.final_beta)


# ---------------------------------------------------------------------------
# soft-threshold derivatives


def soft_threshold_backward(z, beta, g):
    """Gradients of ``S_beta(z)`` w.r.t. ``z`` and the real threshold.

    The subgradient at the kink ``|z| = beta`` is taken as zero.
    """
    mag = np.abs(z)
    act = mag > beta
    safe = np.where(act, mag, 1.0)
    gz = np.where(act, g * (1 - beta / (2 * safe)) + np.conj(g) * beta * z * z / (2 * safe ** 3), 0)
    gbeta = -np.sum(np.where(act, (np.conj(g) * z).real / safe, 0.0))
    return gz, float(gbeta)


# ---------------------------------------------------------------------------
# forward


def _admm_inverse(kind, layer, n):
    rho = float(layer["rho"])
    if kind == "admmnet":
        try:
            return scipy.linalg.lu_factor(layer["W"] + rho * np.eye(n), check_finite=True)
        except (np.linalg.LinAlgError, ValueError):
            return scipy.linalg.lu_factor(layer["W"] + (rho + 1e-10) * np.eye(n))
    a = layer["w"] + rho if kind == "cadmmnet" else np.fft.fft(layer["w"]) + rho
    if np.min(np.abs(a)) < SINGULAR_TOL:
        raise NearSingularLayer(f"{kind} layer has |w + rho| < {SINGULAR_TOL}")
    return a


def forward_layer(kind: str, layer: dict, prev, y_in, want_cache: bool = False):
    """One layer. ``y_in`` is ``y_F = A^H y`` for the ADMM family and ``y``
    for the ISTA family; ``prev`` is ``u^(t-1)`` or ``x^(t-1)``."""
    beta = float(layer["beta"])
    n = prev.shape[-1]
    if kind in ADMM_FAMILY:
        rho = float(layer["rho"])
        s = soft_threshold(prev, beta)
        r1 = 2 * s - prev
        h = y_in + rho * r1
        inv = _admm_inverse(kind, layer, n)
        if kind == "admmnet":
            hh = np.atleast_2d(h)
            p = scipy.linalg.lu_solve(inv, hh.T).T.reshape(h.shape)
            big_h = None
        else:
            big_h = np.fft.fft(h, axis=-1)
            p = np.fft.ifft(big_h / inv, axis=-1)
        out = p + prev - s
        cache = dict(prev=prev, r1=r1, p=p, inv=inv, big_h=big_h) if want_cache else None
        return out, cache
    if kind == "lista":
        z = prev @ layer["W1"].T + y_in @ layer["W2"].T
    else:
        z = toeplitz_matvec(layer["w1"], prev) + y_in @ layer["W2"].T
    out = soft_threshold(z, beta)
    cache = dict(prev=prev, z=z) if want_cache else None
    return out, cache


def forward(net: Network, y, dic: Dictionary | None = None, want_cache: bool = False):
    """Run the network on ``y`` (M,) or (B, M); returns ``(x_out, cache)``."""
    y = np.asarray(y, dtype=np.complex128)
    if y.shape[-1] != net.m:
        raise ContractError(f"measurement length {y.shape[-1]} != M = {net.m}")
    if net.is_admm:
        if dic is None:
            raise ContractError("ADMM-family forward needs the dictionary for y_F")
        if dic.ref != net.dictionary_ref and net.dictionary_ref:
            raise ContractError("network was initialized on a different dictionary")
        y_in = dic.backproject(y)
    else:
        y_in = y
    state = np.zeros(y.shape[:-1] + (net.n,), dtype=np.complex128)
    caches = []
    for layer in net.layers:
        state, c = forward_layer(net.kind, layer, state, y_in, want_cache)
        caches.append(c)
    if net.is_admm:
        x = soft_threshold(state, float(net.final_beta))
    else:
        x = state
    cache = dict(y_in=y_in, layers=caches, last=state, kind=net.kind, t=net.t) if want_cache else None
    return x, cache


# ---------------------------------------------------------------------------
# backward


def _layer_backward(kind, layer, c, y_in, g_out):
    """Gradient of one layer; returns (grad wrt previous state, param grads)."""
    grads = {}
    beta = float(layer["beta"])
    prev = c["prev"]
    n = prev.shape[-1]
    if kind in ADMM_FAMILY:
        rho = float(layer["rho"])
        gp = g_out
        if kind == "admmnet":
            gh = scipy.linalg.lu_solve(c["inv"], gp.T, trans=2).T
            g_mat = -(gh.T @ c["p"].conj())
            grads["W"] = g_mat
            grho = float(np.trace(g_mat).real)
        else:
            q = 1.0 / c["inv"]
            gp_hat = np.fft.fft(gp, axis=-1) / n
            gh = n * np.fft.ifft(np.conj(q) * gp_hat, axis=-1)
            gq = np.sum(np.conj(c["big_h"]) * gp_hat, axis=0)
            ga = -np.conj(q * q) * gq
            grads["w"] = ga if kind == "cadmmnet" else n * np.fft.ifft(ga)
            grho = float(np.sum(ga).real)
        grho += float(np.sum(np.conj(c["r1"]) * gh).real)
        gr1 = rho * gh
        gs = 2 * gr1 - g_out
        gz, gbeta = soft_threshold_backward(prev, beta, gs)
        g_prev = g_out - gr1 + gz
        grads["rho"] = np.array(grho)
        grads["beta"] = np.array(gbeta)
        return g_prev, grads
    gz, gbeta = soft_threshold_backward(c["z"], beta, g_out)
    grads["beta"] = np.array(gbeta)
    grads["W2"] = gz.T @ np.conj(y_in)
    if kind == "lista":
        grads["W1"] = gz.T @ np.conj(prev)
        g_prev = gz @ np.conj(layer["W1"])
    else:
        c_hat = np.fft.fft(_embed(layer["w1"]))
        gpad = np.fft.fft(_pad(gz), axis=-1)
        g_prev = np.fft.ifft(np.conj(c_hat) * gpad, axis=-1)[:, :n]
        gc = np.sum(np.fft.ifft(np.conj(np.fft.fft(_pad(prev), axis=-1)) * gpad, axis=-1), axis=0)
        grads["w1"] = np.concatenate([gc[n + 1:], gc[:n]])
    return g_prev, grads


def backward_network(net: Network, cache: dict, grad_x) -> dict[str, np.ndarray]:
    """Parameter gradients given the loss gradient w.r.t. the network output.

    ``cache`` must come from ``forward(..., want_cache=True)`` on a batch of
    rows. Returned keys match ``net.named_parameters()``.
    """
    if cache is None or cache.get("kind") != net.kind or cache.get("t") != net.t:
        raise ContractError("activation cache does not match this network")
    g = np.atleast_2d(np.asarray(grad_x, dtype=np.complex128))
    out = {}
    if net.is_admm:
        last = np.atleast_2d(cache["last"])
        g, gfb = soft_threshold_backward(last, float(net.final_beta), g)
        out["final_beta"] = np.array(gfb)
    y_in = np.atleast_2d(cache["y_in"])
    for t in range(net.t - 1, -1, -1):
        c = {k: (np.atleast_2d(v) if k in ("prev", "r1", "p", "big_h", "z") and v is not None else v)
             for k, v in cache["layers"][t].items()}
        g, grads = _layer_backward(net.kind, net.layers[t], c, y_in, g)
        for name, val in grads.items():
            out[f"{t}.{name}"] = val
    return out
