"""The trainable policy and its serialized bundle."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import numgraph as ng
from ..diffusion import Denoiser, NoiseSchedule, build_schedule
from ..koopman import ChannelAttentionFusion, KoopmanOperator, LatentPolicy, VisualEncoder
from .config import TrainConfig


@dataclass
class Normalizer:
    """Affine map of each column from [lo, hi] onto [-1, 1]."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray, margin: float = 0.05) -> "Normalizer":
        x = np.asarray(x, dtype=np.float64).reshape(-1, np.shape(x)[-1])
        lo, hi = x.min(axis=0), x.max(axis=0)
        span = np.maximum(hi - lo, 1e-6)
        return cls(lo - margin * span, hi + margin * span)

    def encode(self, x) -> np.ndarray:
        return 2.0 * (np.asarray(x, dtype=np.float64) - self.lo) / (self.hi - self.lo) - 1.0

    def decode(self, z) -> np.ndarray:
        return self.lo + (np.asarray(z, dtype=np.float64) + 1.0) * 0.5 * (self.hi - self.lo)

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Normalizer":
        return cls(np.array(d["lo"], dtype=np.float64), np.array(d["hi"], dtype=np.float64))


class PolicyModel(ng.Module):
    def __init__(self, cfg: TrainConfig, image_hw, q_dim: int, action_dim: int, rng: np.random.Generator):
        self.encoder = VisualEncoder(tuple(image_hw), rng, hidden=tuple(cfg.encoder_hidden), latent=cfg.latent)
        self.fusion = ChannelAttentionFusion(q_dim, rng, latent=cfg.latent)
        self.policy = LatentPolicy(rng, latent=cfg.latent)
        self.koopman = KoopmanOperator(rng, latent=cfg.latent)
        self.denoiser = Denoiser(cfg.chunk_len, action_dim, rng, cond_dim=cfg.latent,
                                 hidden=cfg.denoiser_hidden, depth=cfg.denoiser_depth)


@dataclass
class PolicyBundle:
    cfg: TrainConfig
    model: PolicyModel
    sched: NoiseSchedule
    q_norm: Normalizer
    a_norm: Normalizer
    image_hw: tuple
    task: str = ""

    @classmethod
    def create(cls, cfg: TrainConfig, image_hw, q_norm: Normalizer, a_norm: Normalizer, task: str = ""):
        rng = np.random.default_rng([cfg.seed, 0])
        model = PolicyModel(cfg, image_hw, len(q_norm.lo), len(a_norm.lo), rng)
        sched = build_schedule(cfg.diffusion_steps, cfg.beta_min, cfg.beta_max)
        return cls(cfg, model, sched, q_norm, a_norm, tuple(image_hw), task)

    @property
    def action_dim(self) -> int:
        return len(self.a_norm.lo)

    def meta(self) -> dict:
        return {
            "train_config": self.cfg.to_dict(),
            "image_hw": list(self.image_hw),
            "q_norm": self.q_norm.to_dict(),
            "a_norm": self.a_norm.to_dict(),
            "task": self.task,
            "schedule_beta": [float(b) for b in self.sched.beta],
        }

    def save(self, out_dir) -> Path:
        return ng.save_checkpoint(out_dir, self.model.state_dict(), self.meta())

    @classmethod
    def load(cls, in_dir) -> "PolicyBundle":
        params, meta = ng.load_checkpoint(in_dir)
        cfg = TrainConfig.from_dict(meta["train_config"])
        bundle = cls.create(cfg, meta["image_hw"], Normalizer.from_dict(meta["q_norm"]),
                            Normalizer.from_dict(meta["a_norm"]), meta.get("task", ""))
        bundle.model.load_state_dict(params)
        stored = np.array(meta["schedule_beta"])
        if not np.array_equal(stored, bundle.sched.beta):
            bundle.sched = NoiseSchedule.from_betas(stored)
        return bundle

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for name, p in self.model.named_parameters():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
        h.update(json.dumps(self.meta(), sort_keys=True).encode())
        return h.hexdigest()
