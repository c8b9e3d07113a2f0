"""Run configuration: nested dataclasses loaded from JSON, unknown keys rejected."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field

from .errors import ConfigError


@dataclass
class ArrayConfig:
    kind: str = "ula"
    m: int = 30
    aperture: int | None = None
    gamma: float = 0.5
    seed: int = 7


@dataclass
class DataConfig:
    grid_size: int = 256
    train_count: int = 100_000
    val_count: int = 20_000
    test_count: int = 1_000
    k_min: int = 1
    k_max: int = 8
    train_min_sep: float | None = None  # default 1/M
    test_min_sep: float | None = None  # default 1/(3M)
    train_snr_db: float = 15.0
    test_snr_db: list = field(default_factory=lambda: [0, 5, 10, 15, 20, 25, 30, 35])
    noise_convention: str = "per_element"


@dataclass
class NetConfig:
    kind: str = "chadmmnet"
    layers: int = 30
    beta0: float = 0.1
    rho0: float = 1.0
    hermitian_strict: bool = False


@dataclass
class TrainSection:
    epochs: int = 50
    batch_size: int = 2048
    learning_rate: float = 1e-4
    validation_every: int = 1
    tie_mode: str = "project"


@dataclass
class LossSection:
    kernel_scale: float = 0.5
    convolution_mode: str = "circular"


@dataclass
class EvalConfig:
    estimators: list = field(default_factory=lambda: ["ista", "admm"])
    checkpoints: dict = field(default_factory=dict)
    delta1: int = 2
    delta2: float = 0.4
    solver_iterations: int = 100
    solver_lambda: float = 0.1
    solver_rho: float = 1.0


@dataclass
class BenchConfig:
    sizes: list = field(default_factory=lambda: [256, 512, 1024])
    kinds: list = field(default_factory=lambda: ["admmnet", "cadmmnet"])
    m: int = 30
    repeats: int = 20
    batch: int = 1


@dataclass
class RunConfig:
    array: ArrayConfig = field(default_factory=ArrayConfig)
    data: DataConfig = field(default_factory=DataConfig)
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainSection = field(default_factory=TrainSection)
    loss: LossSection = field(default_factory=LossSection)
    eval: EvalConfig = field(default_factory=EvalConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    seed: int = 0
    data_dir: str | None = None
    workers: int = 1

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def content_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown keys in {where or 'config'}: {sorted(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        hint = hints[f.name]
        if dataclasses.is_dataclass(hint):
            kwargs[f.name] = _build(hint, data[f.name], f"{where}.{f.name}".lstrip("."))
        else:
            kwargs[f.name] = data[f.name]
    return cls(**kwargs)


def merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "checkpoints":
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out


def paper_preset() -> dict:
    return RunConfig().to_dict()


def desk_preset() -> dict:
    cfg = RunConfig(
        array=ArrayConfig(kind="ula", m=16),
        data=DataConfig(grid_size=64, train_count=10_000, val_count=2_000, test_count=1_000),
        net=NetConfig(layers=10),
        train=TrainSection(epochs=20, batch_size=256, learning_rate=1e-3),
    )
    return cfg.to_dict()


PRESETS = {"paper": paper_preset, "desk": desk_preset}


def load_config(path: str | None = None, preset: str | None = "paper") -> RunConfig:
    base = PRESETS[preset or "paper"]()
    if path is not None:
        with open(path) as fh:
            try:
                override = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(override, dict):
            raise ConfigError("config must be a JSON object")
        # validate the override alone first so typos are reported verbatim
        _build(RunConfig, merge(RunConfig().to_dict(), override), "")
        base = merge(base, override)
    return _build(RunConfig, base, "")
