from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, fields

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..benchsim.env import TaskConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    chunk_len: int = 16
    horizon: int = 4
    diffusion_steps: int = 30
    switch_p: float = 0.6
    mu: float = 0.3
    lam: float = 1e-4
    eta: float = 0.97
    lr: float = 1e-3
    seed: int = 0
    beta_min: float = 1e-4
    beta_max: float = 0.02
    latent: int = 64
    encoder_hidden: tuple = (256, 128)
    denoiser_hidden: int = 256
    denoiser_depth: int = 3
    sg_window: int = 7
    sg_polyorder: int = 3
    ttl_samples: int = 0  # 0 means one sample per diffusion step
    augment: bool = True
    checkpoint_every: int = 25

    def __post_init__(self):
        checks = [
            (self.epochs >= 1, "epochs must be >= 1"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (1 <= self.horizon <= self.chunk_len, "need 1 <= horizon <= chunk_len"),
            (self.diffusion_steps >= 1, "diffusion_steps must be >= 1"),
            (0.0 <= self.switch_p <= 1.0, "switch_p must lie in [0, 1]"),
            (0.0 <= self.mu <= 1.0, "mu must lie in [0, 1]"),
            (self.lam > 0, "lam must be > 0"),
            (self.eta > 0, "eta must be > 0"),
            (self.lr > 0, "lr must be > 0"),
            (self.sg_window >= 3 and self.sg_window % 2 == 1, "sg_window must be odd and >= 3"),
            (0 <= self.sg_polyorder < self.sg_window, "sg_polyorder must be < sg_window"),
            (self.ttl_samples >= 0, "ttl_samples must be >= 0"),
            (self.checkpoint_every >= 1, "checkpoint_every must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return _build(cls, d)


def _build(cls, d: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    try:
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path):
    """Read a TOML file with optional ``[train]`` and ``[task]`` tables."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    extra = set(raw) - {"train", "task"}
    if extra:
        raise ConfigError(f"unknown config tables: {sorted(extra)}")
    train = _build(TrainConfig, raw.get("train", {}))
    task = _build(TaskConfig, raw["task"]) if "task" in raw else None
    return train, task
