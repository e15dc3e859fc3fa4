"""Scenario and experiment configuration.

All quantities in :class:`SystemConfig` are linear (watts) except the two
channel levels, which are kept in dB because ``-inf`` is a meaningful
"disabled" sentinel for them. dB inputs of the flat config file are
converted once, in :func:`load_config`.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


def db2pow(db: float) -> float:
    if db == -math.inf:
        return 0.0
    return 10.0 ** (db / 10.0)


def dbm2watt(dbm: float) -> float:
    return db2pow(dbm - 30.0)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SystemConfig:
    n_tx: int = 4
    n_rx: int = 4
    n_users: int = 2
    n_targets: int = 1
    p_max: float = 1000.0  # 30 dBW
    noise_comm: float = 1e-9  # -60 dBm
    noise_radar: float = 1e-9
    alpha_pow_db: float = -60.0
    si_pow_db: float = -110.0
    gamma_com: float = 0.3
    gamma_sen: float = 5.0
    delta_tx: float = 0.5
    delta_rx: float = 0.5
    angle_samples: int = 180
    user_angle_range: tuple[float, float] = (-60.0, 60.0)
    target_angle_range: tuple[float, float] = (-60.0, 60.0)
    user_dist_range: tuple[float, float] = (20.0, 100.0)
    carrier_freq: float = 2.6e9

    def __post_init__(self):
        for name in ("n_tx", "n_rx", "n_users", "n_targets"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.p_max <= 0:
            raise ConfigError("p_max must be positive")
        if self.noise_comm <= 0 or self.noise_radar <= 0:
            raise ConfigError("noise powers must be positive")
        if self.angle_samples < 2:
            raise ConfigError("angle_samples must be >= 2")
        for name in ("user_angle_range", "target_angle_range", "user_dist_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name}: min > max")
        if self.user_dist_range[0] <= 0:
            raise ConfigError("user distances must be positive")

    @property
    def alpha_pow(self) -> float:
        return db2pow(self.alpha_pow_db)

    @property
    def si_pow(self) -> float:
        return db2pow(self.si_pow_db)

    @property
    def csi_length(self) -> int:
        nt, nr = self.n_tx, self.n_rx
        return 2 * (nt * self.n_users + nt * self.n_targets + nr * self.n_targets + nr * nt)

    @property
    def angle_grid(self):
        """Left-closed grid over [-90, 90) degrees, in radians."""
        import numpy as np

        a = self.angle_samples
        return np.deg2rad(-90.0 + np.arange(a) * (180.0 / a))

    def replace(self, **kw) -> "SystemConfig":
        return dataclasses.replace(self, **kw)

    def config_hash(self) -> str:
        return _hash_items(dataclasses.asdict(self))


def _hash_items(d: dict) -> str:
    text = "\n".join(f"{k}={d[k]!r}" for k in sorted(d))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class ExperimentConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    case: int = 3
    seed: int = 0
    episodes: int = 500
    episode_len: int = 100
    d1: int = 10_000
    d2: int = 50_000
    feature_size: int = 16
    # autoencoder
    ae_epochs: int = 200
    ae_lr: float = 1e-3
    ae_batch: int = 128
    ae_patience: int = 20
    # reconstruction
    recon_epochs: int = 30
    recon_lr: float = 1e-3
    recon_batch: int = 256
    recon_loss: str = "pattern"
    # agent
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    discount: float = 0.0
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    hidden: int = 128
    rollout_len: int = 5
    init_log_std: float = 0.5
    out_dir: str = "runs"

    def __post_init__(self):
        if self.case not in (0, 1, 2, 3):
            raise ConfigError(f"case must be 0..3, got {self.case}")
        if self.episodes < 0 or self.episode_len < 0:
            raise ConfigError("episodes and episode_len must be >= 0")
        if self.d1 < 1 or self.d2 < 1 or self.feature_size < 1:
            raise ConfigError("d1, d2, feature_size must be >= 1")
        if not 0 <= self.discount < 1:
            raise ConfigError("discount must be in [0, 1)")
        if self.recon_loss not in ("pattern", "vector"):
            raise ConfigError("recon_loss must be 'pattern' or 'vector'")
        if self.rollout_len < 1:
            raise ConfigError("rollout_len must be >= 1")

    def config_hash(self) -> str:
        d = dataclasses.asdict(self)
        d.pop("out_dir")
        d["system"] = self.system.config_hash()
        return _hash_items(d)

    def replace(self, **kw) -> "ExperimentConfig":
        sys_keys = {f.name for f in dataclasses.fields(SystemConfig)}
        sys_kw = {k: v for k, v in kw.items() if k in sys_keys}
        rest = {k: v for k, v in kw.items() if k not in sys_keys}
        system = self.system.replace(**sys_kw) if sys_kw else self.system
        return dataclasses.replace(self, system=system, **rest)


# Flat config-file keys. dB-valued keys map onto linear SystemConfig fields.
_SYSTEM_KEYS: dict[str, tuple[str, Any]] = {
    "n_tx": ("n_tx", int),
    "n_rx": ("n_rx", int),
    "n_users": ("n_users", int),
    "n_targets": ("n_targets", int),
    "p_max_dbw": ("p_max", lambda s: db2pow(float(s))),
    "noise_dbm": ("noise_comm", lambda s: dbm2watt(float(s))),
    "noise_radar_dbm": ("noise_radar", lambda s: dbm2watt(float(s))),
    "alpha_db": ("alpha_pow_db", float),
    "si_db": ("si_pow_db", float),
    "gamma_com": ("gamma_com", float),
    "gamma_sen": ("gamma_sen", float),
    "angle_samples": ("angle_samples", int),
}

_EXPERIMENT_KEYS: dict[str, Any] = {
    "case": int,
    "seed": int,
    "episodes": int,
    "episode_len": int,
    "d1": int,
    "d2": int,
    "feature_size": int,
    "ae_epochs": int,
    "ae_lr": float,
    "ae_batch": int,
    "ae_patience": int,
    "recon_epochs": int,
    "recon_lr": float,
    "recon_batch": int,
    "recon_loss": str,
    "actor_lr": float,
    "critic_lr": float,
    "discount": float,
    "entropy_coef": float,
    "value_coef": float,
    "hidden": int,
    "rollout_len": int,
    "init_log_std": float,
    "out_dir": str,
}

CONFIG_KEYS = tuple(_SYSTEM_KEYS) + tuple(_EXPERIMENT_KEYS)


def parse_pairs(pairs: dict[str, str], base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Apply string ``key -> value`` pairs (config-file units) onto ``base``."""
    base = base or ExperimentConfig()
    sys_kw, exp_kw = {}, {}
    for key, raw in pairs.items():
        if key in _SYSTEM_KEYS:
            name, conv = _SYSTEM_KEYS[key]
            target = sys_kw
        elif key in _EXPERIMENT_KEYS:
            name, conv = key, _EXPERIMENT_KEYS[key]
            target = exp_kw
        else:
            raise ConfigError(f"unknown config key: {key!r}")
        try:
            target[name] = conv(raw.strip())
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    # noise_dbm sets both noise powers unless the radar one is given explicitly
    if "noise_comm" in sys_kw and "noise_radar" not in sys_kw:
        sys_kw["noise_radar"] = sys_kw["noise_comm"]
    system = base.system.replace(**sys_kw)
    return dataclasses.replace(base, system=system, **exp_kw)


def read_config_file(path: str | Path) -> dict[str, str]:
    pairs = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> ExperimentConfig:
    pairs = read_config_file(path) if path else {}
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        k, v = item.split("=", 1)
        pairs[k.strip()] = v.strip()
    return parse_pairs(pairs)


def dump_config(cfg: ExperimentConfig) -> str:
    """Render ``cfg`` in the flat file format (round-trips through load_config)."""
    s = cfg.system
    lines = [
        f"n_tx = {s.n_tx}",
        f"n_rx = {s.n_rx}",
        f"n_users = {s.n_users}",
        f"n_targets = {s.n_targets}",
        f"p_max_dbw = {10 * math.log10(s.p_max)!r}",
        f"noise_dbm = {10 * math.log10(s.noise_comm) + 30!r}",
        f"noise_radar_dbm = {10 * math.log10(s.noise_radar) + 30!r}",
        f"alpha_db = {s.alpha_pow_db!r}",
        f"si_db = {s.si_pow_db!r}",
        f"gamma_com = {s.gamma_com!r}",
        f"gamma_sen = {s.gamma_sen!r}",
        f"angle_samples = {s.angle_samples}",
    ]
    for key in _EXPERIMENT_KEYS:
        lines.append(f"{key} = {getattr(cfg, key)}")
    return "\n".join(lines) + "\n"
