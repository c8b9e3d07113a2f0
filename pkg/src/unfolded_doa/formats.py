"""Binary dataset and checkpoint containers with JSON sidecar manifests.

All numbers are little-endian; complex arrays are stored as interleaved
(re, im) float64 pairs.

Dataset layout::

    b"DOAD" | u32 version | u32 M | u32 N | u64 count | f64 gamma
    | i64[M] positions | f64[N] grid
    then per sample, float64 values:
    K, snr_db, sigma_sq, f*[K], amplitudes[2K], y[2M]

Checkpoint layout::

    b"DOAN" | u32 version | u8[16] kind tag | u32 M | u32 N | u32 T | f64 gamma
    | u8 strict flag
    then per layer, in field order: complex arrays (interleaved f64), scalars
    as f64; then f64 final_beta.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Iterable

import numpy as np

from .array_signal import ArrayGeometry, Dictionary, Sample, build_dictionary, scene_from_parts
from .errors import ContractError
from .nets import LAYER_FIELDS, Network

DATASET_MAGIC = b"DOAD"
CHECKPOINT_MAGIC = b"DOAN"
VERSION = 1

_F64 = np.dtype("<f8")


def _atomic_write(path: Path, payload: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _interleave(z) -> bytes:
    z = np.asarray(z, dtype=np.complex128).reshape(-1)
    return np.column_stack([z.real, z.imag]).astype(_F64).tobytes()


def write_manifest(path, manifest: dict) -> None:
    _atomic_write(Path(str(path) + ".json"), json.dumps(manifest, indent=2, default=str).encode())


def read_manifest(path) -> dict:
    with open(str(path) + ".json") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# datasets


def write_dataset(path, dic: Dictionary, samples: Iterable[Sample], manifest: dict | None = None) -> int:
    samples = list(samples)
    g = dic.geometry
    head = DATASET_MAGIC + struct.pack("<IIIQd", VERSION, g.m, dic.n, len(samples), g.gamma)
    head += np.asarray(g.positions, dtype="<i8").tobytes() + dic.grid.astype(_F64).tobytes()
    body = []
    for s in samples:
        sc = s.scene
        rec = np.concatenate([[sc.k_targets, s.snr_db, s.noise_sigma_sq], sc.true_freqs]).astype(_F64)
        body.append(rec.tobytes() + _interleave(sc.amplitudes) + _interleave(s.measurement))
    _atomic_write(Path(path), head + b"".join(body))
    info = dict(manifest or {})
    info.update(kind=g.kind, m=g.m, n=dic.n, gamma=g.gamma, count=len(samples),
                positions=list(g.positions), format_version=VERSION)
    write_manifest(path, info)
    return len(samples)


def read_dataset(path) -> tuple[Dictionary, list[Sample]]:
    raw = Path(path).read_bytes()
    if raw[:4] != DATASET_MAGIC:
        raise ContractError(f"{path} is not a dataset file")
    version, m, n, count, gamma = struct.unpack_from("<IIIQd", raw, 4)
    if version != VERSION:
        raise ContractError(f"unsupported dataset version {version}")
    off = 4 + struct.calcsize("<IIIQd")
    positions = np.frombuffer(raw, "<i8", m, off)
    off += 8 * m
    off += 8 * n  # grid is implied by (gamma, N); stored for external readers
    kind = "ULA" if tuple(positions) == tuple(range(m)) else "SLA"
    try:
        kind = read_manifest(path).get("kind", kind)
    except FileNotFoundError:
        pass
    dic = build_dictionary(ArrayGeometry(tuple(int(p) for p in positions), gamma, kind), n)
    vals = np.frombuffer(raw, _F64, (len(raw) - off) // 8, off)
    samples, i = [], 0
    for _ in range(count):
        k = int(vals[i])
        snr, var = float(vals[i + 1]), float(vals[i + 2])
        i += 3
        freqs = vals[i:i + k].copy()
        i += k
        amps = vals[i:i + 2 * k].view(np.complex128).copy()
        i += 2 * k
        y = vals[i:i + 2 * m].view(np.complex128).copy()
        i += 2 * m
        samples.append(Sample(y, scene_from_parts(dic, freqs, amps), snr, var))
    return dic, samples


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, net: Network, manifest: dict | None = None) -> None:
    path = Path(path)
    tag = net.kind.encode().ljust(16, b"\0")
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", VERSION), tag,
             struct.pack("<IIIdB", net.m, net.n, net.t, net.gamma, int(net.hermitian_strict))]
    for layer in net.layers:
        for name in LAYER_FIELDS[net.kind]:
            arr = layer[name]
            if np.iscomplexobj(arr):
                parts.append(_interleave(arr))
            else:
                parts.append(np.asarray(arr, dtype=_F64).reshape(-1).tobytes())
    parts.append(np.asarray(net.final_beta, dtype=_F64).reshape(-1).tobytes())
    _atomic_write(path, b"".join(parts))
    info = dict(manifest or {})
    info.update(kind=net.kind, m=net.m, n=net.n, t=net.t, gamma=net.gamma,
                dictionary_ref=net.dictionary_ref, init=net.init_info, format_version=VERSION)
    write_manifest(path, info)


def _shape(kind: str, name: str, m: int, n: int):
    return {"W": (n, n), "W1": (n, n), "W2": (n, m), "w": (n,), "w1": (2 * n - 1,)}.get(name, ())


def load_checkpoint(path) -> Network:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ContractError(f"{path} is not a checkpoint")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise ContractError(f"unsupported checkpoint version {version}")
    kind = raw[8:24].rstrip(b"\0").decode()
    if kind not in LAYER_FIELDS:
        raise ContractError(f"unknown kind tag {kind!r}")
    m, n, t, gamma, strict = struct.unpack_from("<IIIdB", raw, 24)
    off = 24 + struct.calcsize("<IIIdB")
    vals = np.frombuffer(raw, _F64, (len(raw) - off) // 8, off)
    i = 0
    layers = []
    for _ in range(t):
        layer = {}
        for name in LAYER_FIELDS[kind]:
            shape = _shape(kind, name, m, n)
            if shape:
                size = int(np.prod(shape))
                layer[name] = vals[i:i + 2 * size].view(np.complex128).reshape(shape).copy()
                i += 2 * size
            else:
                layer[name] = np.array(vals[i])
                i += 1
        layers.append(layer)
    final_beta = np.array(vals[i])
    try:
        info = read_manifest(path)
    except FileNotFoundError:
        info = {}
    return Network(kind, layers, final_beta, m, n, gamma, info.get("dictionary_ref", ""),
                   bool(strict), info.get("init", {}))
