"""DDPM over action chunks: schedule, forward corruption, epsilon loss, reverse pass.

Diffusion steps are 1-indexed (``k = 1..K``) everywhere in this module;
schedule arrays are stored 0-indexed, so step ``k`` reads index ``k - 1``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import numgraph as ng
from .numgraph import ContractError

COSINE_OFFSET = 0.008


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def steps(self) -> int:
        return len(self.beta)

    @classmethod
    def from_betas(cls, beta) -> "NoiseSchedule":
        beta = np.asarray(beta, dtype=np.float64)
        if beta.ndim != 1 or len(beta) == 0 or np.any(beta <= 0) or np.any(beta >= 1):
            raise ContractError("schedule: betas must be a non-empty vector in (0, 1)")
        alpha = 1.0 - beta
        return cls(beta=beta, alpha=alpha, alpha_bar=np.cumprod(alpha))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "beta", "alpha", "alpha_bar"])
            for k in range(self.steps):
                w.writerow([k + 1, repr(float(self.beta[k])), repr(float(self.alpha[k])), repr(float(self.alpha_bar[k]))])

    @classmethod
    def from_csv(cls, path) -> "NoiseSchedule":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls.from_betas([float(r["beta"]) for r in rows])


def build_schedule(steps: int, beta_min: float = 1e-4, beta_max: float = 0.02) -> NoiseSchedule:
    """Squared-cosine alpha_bar profile with every implied beta clamped to [beta_min, beta_max].

    After clamping, alpha_bar is recomputed as the running product so the
    schedule stays self-consistent; with the default bounds this means
    alpha_bar_K stays well above zero for small K.
    """
    if steps < 1:
        raise ContractError(f"schedule: step count must be >= 1, got {steps}")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ContractError(f"schedule: need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})")
    k = np.arange(steps + 1, dtype=np.float64)
    f = np.cos(((k / steps) + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * math.pi / 2.0) ** 2
    profile = f / f[0]
    beta = 1.0 - profile[1:] / profile[:-1]
    return NoiseSchedule.from_betas(np.clip(beta, beta_min, beta_max))


def _check_step(k, sched: NoiseSchedule) -> np.ndarray:
    k = np.asarray(k)
    if np.any(k < 1) or np.any(k > sched.steps):
        raise ContractError(f"diffusion step out of range [1, {sched.steps}]: {k}")
    return k


def forward_diffuse(a0, k, eps, sched: NoiseSchedule) -> np.ndarray:
    """sqrt(abar_k) a0 + sqrt(1 - abar_k) eps; ``k`` may be a scalar or one step per leading row."""
    a0 = np.asarray(a0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if a0.shape != eps.shape:
        raise ContractError(f"forward_diffuse: noise shape {eps.shape} != chunk shape {a0.shape}")
    k = _check_step(k, sched)
    ab = sched.alpha_bar[k - 1]
    if ab.ndim:
        ab = ab.reshape(ab.shape + (1,) * (a0.ndim - ab.ndim))
    return np.sqrt(ab) * a0 + np.sqrt(1.0 - ab) * eps


def switch_select(f_u, f_f, p: float, rng: np.random.Generator):
    """Pick the latent-action conditioning with probability ``p``; one uniform draw."""
    if not 0.0 <= p <= 1.0:
        raise ContractError(f"switch probability must lie in [0, 1], got {p}")
    use_u = bool(rng.random() < p)
    return (f_u if use_u else f_f), use_u


def switch_mask(batch: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """Per-sample Bernoulli(p) draws (True selects the latent action); one draw per sample."""
    if not 0.0 <= p <= 1.0:
        raise ContractError(f"switch probability must lie in [0, 1], got {p}")
    return rng.random(batch) < p


def step_embedding(k, dim: int = 32) -> np.ndarray:
    k = np.atleast_1d(np.asarray(k, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half - 1, 1))
    arg = k[:, None] * freqs[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


class Denoiser(ng.Module):
    """Conditional epsilon predictor.

    An MLP over the flattened noisy chunk. The step embedding and the
    conditioning vector are concatenated onto the input of every hidden layer.
    """

    def __init__(
        self,
        chunk_len: int,
        action_dim: int,
        rng: np.random.Generator,
        cond_dim: int = 64,
        hidden: int = 256,
        depth: int = 3,
        emb_dim: int = 32,
    ):
        self.chunk_len = chunk_len
        self.action_dim = action_dim
        self.cond_dim = cond_dim
        self.emb_dim = emb_dim
        flat = chunk_len * action_dim
        side = emb_dim + cond_dim
        self.hidden = [ng.Dense((flat if i == 0 else hidden) + side, hidden, rng) for i in range(depth)]
        self.out = ng.Dense(hidden, flat, rng)

    def __call__(self, noisy, k, cond) -> ng.Tensor:
        noisy = ng.as_tensor(noisy)
        cond = ng.as_tensor(cond)
        if cond.ndim == 1:
            cond = ng.reshape(cond, (1, -1))
        b = noisy.shape[0]
        if cond.shape != (b, self.cond_dim):
            raise ng.DimensionError(f"denoiser: conditioning shape {cond.shape}, expected {(b, self.cond_dim)}")
        emb = ng.Tensor(np.broadcast_to(step_embedding(k, self.emb_dim), (b, self.emb_dim)).copy())
        side = ng.concat([emb, cond], axis=1)
        h = ng.reshape(noisy, (b, -1))
        for layer in self.hidden:
            h = ng.relu(layer(ng.concat([h, side], axis=1)))
        return ng.reshape(self.out(h), (b, self.chunk_len, self.action_dim))


def _batched(f_star, a0):
    a0 = np.asarray(a0, dtype=np.float64)
    if a0.ndim == 2:
        a0 = a0[None]
    f_star = ng.as_tensor(f_star)
    if f_star.ndim == 1:
        f_star = ng.reshape(f_star, (1, -1))
    return f_star, a0


def ddpm_loss(f_star, a0, denoiser, sched: NoiseSchedule, rng: np.random.Generator, k=None, eps=None):
    """Epsilon-prediction MSE (mean reduction) with k ~ U{1..K} and eps ~ N(0, I) per sample.

    Returns ``(loss, k, eps)`` so callers can replay the exact draw.
    """
    f_star, a0 = _batched(f_star, a0)
    b = a0.shape[0]
    if k is None:
        k = rng.integers(1, sched.steps + 1, size=b)
    if eps is None:
        eps = rng.standard_normal(a0.shape)
    noisy = forward_diffuse(a0, k, eps, sched)
    pred = denoiser(noisy, k, f_star)
    return ng.mse(pred, eps), k, eps


class NonFiniteSampleError(FloatingPointError):
    pass


def denoise_chunk(f_star, denoiser, sched: NoiseSchedule, init) -> np.ndarray:
    """Deterministic reverse pass: K updates from k=K down to 1, no injected noise."""
    init = np.asarray(init, dtype=np.float64)
    single = init.ndim == 2
    x = init[None] if single else init.copy()
    if x.shape[1:] != (denoiser.chunk_len, denoiser.action_dim):
        raise ContractError(f"denoise_chunk: init shape {init.shape} does not match chunk geometry")
    cond = ng.stop_gradient(ng.as_tensor(f_star))
    if cond.ndim == 1:
        cond = ng.reshape(cond, (1, -1))
    ks = np.empty(x.shape[0], dtype=np.int64)
    for k in range(sched.steps, 0, -1):
        ks.fill(k)
        eps_hat = denoiser(x, ks, cond).data
        a, ab = sched.alpha[k - 1], sched.alpha_bar[k - 1]
        x = (x - (1.0 - a) / math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(a)
        if not np.all(np.isfinite(x)):
            raise NonFiniteSampleError(f"non-finite chunk at diffusion step k={k}")
    return x[0] if single else x

