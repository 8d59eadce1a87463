"""Experiment configuration: JSON in, typed dataclasses out.

Every section rejects unknown keys. Defaults reproduce the reference
simulation settings (120 fps AR traffic, 20 ms / 1e-3 target, 52/133 RBs).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .arrival import ArrivalParams
from .channel import ChannelParams
from .learner.network import DEFAULT_DIMS
from .snc import QosTarget

__all__ = [
    "ConfigError",
    "ArrivalConfig",
    "ChannelConfig",
    "QosConfig",
    "TrainSection",
    "SimConfig",
    "ExperimentConfig",
    "load_config",
]

class ConfigError(ValueError):
    pass


def _build(cls, data: dict | None, where: str):
    data = {} if data is None else data
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class ArrivalConfig:
    """Either ``fps`` (with ``sigma_ms`` and ``half_width_ms``) or explicit ``mu_ms, b1_ms, b2_ms``."""

    fps: float | None = 120.0
    sigma_ms: float = 2.0
    half_width_ms: float = 5.0
    mu_ms: float | None = None
    b1_ms: float | None = None
    b2_ms: float | None = None

    def __post_init__(self):
        explicit = (self.mu_ms, self.b1_ms, self.b2_ms)
        if any(v is not None for v in explicit):
            if any(v is None for v in explicit):
                raise ValueError("mu_ms, b1_ms and b2_ms must be given together")
        elif self.fps is None:
            raise ValueError("give fps or mu_ms/b1_ms/b2_ms")
        self.params()

    def params(self) -> ArrivalParams:
        if self.mu_ms is not None:
            return ArrivalParams(self.mu_ms, self.sigma_ms, self.b1_ms, self.b2_ms)
        return ArrivalParams.from_fps(self.fps, self.sigma_ms, self.half_width_ms)


@dataclass(frozen=True)
class ChannelConfig:
    n_antennas: int = 8
    pathloss_db: float | None = None
    rb_bandwidth_hz: float = 180e3
    noise_psd_dbm_hz: float = -173.0
    n_rb_ul: int = 52
    n_rb_dl: int = 133
    slot_ms: float = 1.0
    interference_prob: float = 0.5
    inr_db: float = 10.0
    m_bits_ul: float = 1e5
    m_bits_dl: float = 1e6

    def __post_init__(self):
        self.link("ul")

    def link(self, which: str, inr_db: float | None = None) -> ChannelParams:
        n_rb = {"ul": self.n_rb_ul, "dl": self.n_rb_dl}[which]
        return ChannelParams.from_db(
            n_rb,
            self.inr_db if inr_db is None else inr_db,
            n_antennas=self.n_antennas,
            pathloss_db=self.pathloss_db,
            rb_bandwidth_hz=self.rb_bandwidth_hz,
            noise_psd_dbm_hz=self.noise_psd_dbm_hz,
            slot_ms=self.slot_ms,
            interference_prob=self.interference_prob,
        )

    def m_bits(self, which: str) -> float:
        return {"ul": self.m_bits_ul, "dl": self.m_bits_dl}[which]


@dataclass(frozen=True)
class QosConfig:
    d_max_ms: float = 20.0
    eps_max: float = 1e-3

    def __post_init__(self):
        self.target()

    def target(self) -> QosTarget:
        return QosTarget(self.d_max_ms, self.eps_max)


@dataclass(frozen=True)
class TrainSection:
    batch_size: int = 1024
    primal_lr: float = 1e-3
    dual_lr: float = 0.01
    n_iters: int = 2000
    k_max_cap: int = 200
    lambda_cap: float = 1e6
    lambda_init: float = 0.0
    dual_clip: float | None = 1.0
    lr_decay: float = 0.01
    n_train_slots: int = 500_000
    n_test_slots: int = 10_000
    dims: tuple[int, ...] = DEFAULT_DIMS
    dtype: str = "float32"
    calibration_margin: float | None = 0.02

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")


@dataclass(frozen=True)
class SimConfig:
    n_packets: int = 1_000_000
    n_pool: int = 1_000_000
    n_baseline_slots: int = 100_000
    d_grid_ms: tuple[float, ...] = tuple(float(d) for d in range(0, 121, 2))
    exp_mean_slots: float = 5.0
    inr_list_db: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0, 20.0)
    ks_slots: int = 5000
    ks_water_level_w: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "d_grid_ms", tuple(float(d) for d in self.d_grid_ms))
        object.__setattr__(self, "inr_list_db", tuple(float(d) for d in self.inr_list_db))


@dataclass(frozen=True)
class ExperimentConfig:
    arrival: ArrivalConfig = field(default_factory=ArrivalConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    qos: QosConfig = field(default_factory=QosConfig)
    train: TrainSection = field(default_factory=TrainSection)
    sim: SimConfig = field(default_factory=SimConfig)
    experiment: str = "default"
    seed: int = 0
    out_dir: str = "out"

    _sections = {"arrival": ArrivalConfig, "channel": ChannelConfig, "qos": QosConfig, "train": TrainSection, "sim": SimConfig}

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config root must be an object")
        top = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - top)
        if unknown:
            raise ConfigError(f"unknown key(s) {', '.join(unknown)}")
        kw = {}
        for name, value in data.items():
            if name in cls._sections:
                kw[name] = _build(cls._sections[name], value, name)
            else:
                kw[name] = value
        if not isinstance(kw.get("seed", 0), int):
            raise ConfigError("seed must be an integer")
        return cls(**kw)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = dataclasses.asdict(v) if dataclasses.is_dataclass(v) else v
        return json.loads(json.dumps(out))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def config_hash(self) -> str:
        """Short SHA-256 of the canonical JSON form."""
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:12]

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)


def load_config(path=None) -> ExperimentConfig:
    """Config from a JSON file, or the defaults when ``path`` is None."""
    if path is None:
        return ExperimentConfig()
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return ExperimentConfig.from_dict(data)
