"""Visual encoder, channel-attention fusion, latent action policy and the Koopman constraint."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import numgraph as ng
from .numgraph import ContractError

LATENT_DIM = 64


@dataclass
class Observation:
    front_image: np.ndarray
    wrist_image: np.ndarray
    q: np.ndarray


@dataclass
class LatentBundle:
    f_v: np.ndarray
    f_u: np.ndarray
    f_f: np.ndarray


def stack_observations(obs: Sequence[Observation]):
    return (
        np.stack([o.front_image for o in obs]),
        np.stack([o.wrist_image for o in obs]),
        np.stack([o.q for o in obs]),
    )


class VisualEncoder(ng.Module):
    """Per-view dense towers (flatten -> 256 -> 128, relu), concatenated and projected to the latent width."""

    def __init__(self, image_hw=(32, 32), rng=None, hidden=(256, 128), latent: int = LATENT_DIM):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.image_hw = tuple(image_hw)
        n = self.image_hw[0] * self.image_hw[1]
        self.front = [ng.Dense(n, hidden[0], rng), ng.Dense(hidden[0], hidden[1], rng)]
        self.wrist = [ng.Dense(n, hidden[0], rng), ng.Dense(hidden[0], hidden[1], rng)]
        self.proj = ng.Dense(2 * hidden[1], latent, rng)

    def _tower(self, layers, images) -> ng.Tensor:
        h = ng.reshape(images, (images.shape[0], -1))
        for layer in layers:
            h = ng.relu(layer(h))
        return h

    def __call__(self, front, wrist) -> ng.Tensor:
        front, wrist = ng.as_tensor(front), ng.as_tensor(wrist)
        for name, img in (("front", front), ("wrist", wrist)):
            if img.shape[1:] != self.image_hw:
                raise ContractError(f"encode_visual: {name} view has resolution {img.shape[1:]}, expected {self.image_hw}")
        return self.proj(ng.concat([self._tower(self.front, front), self._tower(self.wrist, wrist)], axis=1))


def encode_visual(obs: Observation, encoder: VisualEncoder) -> ng.Tensor:
    return encoder(obs.front_image[None], obs.wrist_image[None])


class ChannelAttentionFusion(ng.Module):
    """Squeeze-excitation over two channels: lifted proprioception and the visual feature.

    Each channel is squeezed to its mean, a small gating MLP emits one sigmoid
    gate per channel, and the gated channels are summed and projected.
    """

    def __init__(self, q_dim: int, rng, latent: int = LATENT_DIM, reduction_hidden: int = 8):
        self.latent = latent
        self.lift = ng.Dense(q_dim, latent, rng)
        self.excite = [ng.Dense(2, reduction_hidden, rng), ng.Dense(reduction_hidden, 2, rng)]
        self.proj = ng.Dense(latent, latent, rng)
        self._squeeze = np.full((latent, 1), 1.0 / latent)
        self._spread = np.ones((1, latent))

    def gates(self, f_v, q) -> tuple[ng.Tensor, ng.Tensor]:
        q_lift = self.lift(q)
        z = ng.concat([ng.matmul(q_lift, self._squeeze), ng.matmul(f_v, self._squeeze)], axis=1)
        g = ng.sigmoid(self.excite[1](ng.relu(self.excite[0](z))))
        return g, q_lift

    def __call__(self, f_v, q, force_gates: Optional[tuple] = None) -> ng.Tensor:
        f_v, q = ng.as_tensor(f_v), ng.as_tensor(q)
        g, q_lift = self.gates(f_v, q)
        if force_gates is not None:
            g = ng.Tensor(np.tile(np.asarray(force_gates, dtype=np.float64), (f_v.shape[0], 1)))
        g_q = ng.matmul(ng.slice(g, 0, 1, axis=1), self._spread)
        g_v = ng.matmul(ng.slice(g, 1, 2, axis=1), self._spread)
        return self.proj(ng.add(ng.mul(q_lift, g_q), ng.mul(f_v, g_v)))


def fuse(f_v, q, fusion: ChannelAttentionFusion, force_gates=None) -> ng.Tensor:
    return fusion(f_v, q, force_gates=force_gates)


class LatentPolicy(ng.Module):
    """Residual MLP: a stem projection followed by two residual blocks of width 64."""

    def __init__(self, rng, latent: int = LATENT_DIM, blocks: int = 2, zero_residual: bool = False):
        self.stem = ng.Dense(latent, latent, rng)
        self.blocks = [
            ResidualBlock(latent, rng, zero=zero_residual) for _ in range(blocks)
        ]

    def stem_only(self, f_v) -> ng.Tensor:
        return self.stem(f_v)

    def __call__(self, f_v) -> ng.Tensor:
        h = self.stem(ng.as_tensor(f_v))
        for block in self.blocks:
            h = block(h)
        return h


class ResidualBlock(ng.Module):
    def __init__(self, width: int, rng, zero: bool = False):
        self.inner = ng.Dense(width, width, rng)
        self.outer = ng.Dense(width, width, rng, zero=zero)

    def __call__(self, x) -> ng.Tensor:
        return ng.add(x, self.outer(ng.relu(self.inner(x))))


def latent_policy(f_v, policy: LatentPolicy) -> ng.Tensor:
    return policy(f_v)


class KoopmanOperator(ng.Module):
    """State-evolution matrix ``K`` and control-effect matrix ``V`` acting on latent rows."""

    def __init__(self, rng, latent: int = LATENT_DIM, init_scale: float = 0.01):
        self.K = ng.Tensor(np.eye(latent) + init_scale * rng.standard_normal((latent, latent)), requires_grad=True)
        self.V = ng.Tensor(init_scale * rng.standard_normal((latent, latent)), requires_grad=True)

    def to_csv(self, path) -> None:
        """Rows ``matrix,row,c0..c{n-1}`` for both operators."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            n = self.K.shape[0]
            w.writerow(["matrix", "row"] + [f"c{j}" for j in range(n)])
            for label, m in (("K", self.K.data), ("V", self.V.data)):
                for i, row in enumerate(m):
                    w.writerow([label, i] + [repr(float(x)) for x in row])


def read_operator_csv(path) -> dict[str, np.ndarray]:
    rows: dict[str, list] = {"K": [], "V": []}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for rec in reader:
            rows[rec[0]].append([float(x) for x in rec[2:]])
    return {k: np.array(v) for k, v in rows.items()}


def dko_predict(f_v, f_u, K, V) -> ng.Tensor:
    """One-step latent prediction ``K f_v + V f_u``; latents are row vectors (or a batch of rows)."""
    return ng.add(ng.matmul(f_v, ng.transpose(K)), ng.matmul(f_u, ng.transpose(V)))


# --- augmentation ---------------------------------------------------------------


@dataclass(frozen=True)
class AugmentConfig:
    crop: float = 0.10
    flip_prob: float = 0.5
    rotation: float = math.radians(15.0)
    noise_std: float = 0.02
    brightness: tuple = (0.9, 1.1)

    def __post_init__(self):
        if min(self.crop, self.rotation, self.noise_std) < 0 or min(self.brightness) < 0:
            raise ContractError("augment: bounds must be nonnegative")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ContractError("augment: flip probability must lie in [0, 1]")

    @classmethod
    def identity(cls) -> "AugmentConfig":
        return cls(crop=0.0, flip_prob=0.0, rotation=0.0, noise_std=0.0, brightness=(1.0, 1.0))


@dataclass(frozen=True)
class AugmentParams:
    """One drawn transform; applying it twice gives identical results."""

    zoom: float  # >1 crops (zooms in), <1 pads
    shift: tuple  # (dx, dy) as fractions of image width/height, source space
    flip: bool
    angle: float  # radians
    noise_std: float
    noise_seed: int
    brightness: float


def draw_augment(cfg: AugmentConfig, rng: np.random.Generator) -> AugmentParams:
    c = rng.uniform(-cfg.crop, cfg.crop)
    shift = tuple(rng.uniform(-cfg.crop, cfg.crop, size=2) * 0.5)
    flip = bool(rng.random() < cfg.flip_prob)
    angle = float(rng.uniform(-cfg.rotation, cfg.rotation))
    noise_seed = int(rng.integers(0, 2**31 - 1))
    lo, hi = cfg.brightness
    bright = float(rng.uniform(lo, hi))
    return AugmentParams(
        zoom=1.0 / (1.0 - c), shift=shift, flip=flip, angle=angle,
        noise_std=cfg.noise_std, noise_seed=noise_seed, brightness=bright,
    )


def _inverse_grids(params: Sequence[AugmentParams], h: int, w: int):
    """Source coordinates of every output pixel under crop/pad -> flip -> rotate, one grid per transform."""
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    u, v = (cols - cx)[None], (rows - cy)[None]
    col = lambda xs: np.array(xs, dtype=np.float64)[:, None, None]  # noqa: E731
    ca = col([math.cos(p.angle) for p in params])
    sa = col([math.sin(p.angle) for p in params])
    u, v = ca * u + sa * v, -sa * u + ca * v
    u = u * col([-1.0 if p.flip else 1.0 for p in params])
    zoom = col([p.zoom for p in params])
    u = u / zoom + col([p.shift[0] for p in params]) * w
    v = v / zoom + col([p.shift[1] for p in params]) * h
    return v + cy, u + cx


def _bilinear(images: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Bilinear sampling with zero fill outside.

    ``images`` is (B, H, W) or (B, C, H, W); grids are (B, H, W) and shared by
    every channel of a sample.
    """
    lead = images.shape[:-2]
    h, w = images.shape[-2:]
    b = lead[0]
    flat = np.zeros(lead + (h + 2, w + 2))
    flat[..., 1:-1, 1:-1] = images
    flat = flat.reshape(b, -1, (h + 2) * (w + 2))
    y0 = np.floor(ys)
    x0 = np.floor(xs)
    wy, wx = ys - y0, xs - x0
    y0 = y0.astype(np.int64) + 1
    x0 = x0.astype(np.int64) + 1
    out = np.zeros((b, flat.shape[1], h * w))
    for dy, fy in ((0, 1.0 - wy), (1, wy)):
        yi = np.clip(y0 + dy, 0, h + 1)  # outside samples land on the zero border
        for dx, fx in ((0, 1.0 - wx), (1, wx)):
            idx = (yi * (w + 2) + np.clip(x0 + dx, 0, w + 1)).reshape(b, 1, -1)
            wgt = (fy * fx).reshape(b, 1, -1)
            out += wgt * np.take_along_axis(flat, np.broadcast_to(idx, (b, flat.shape[1], h * w)), axis=2)
    return out.reshape(lead + (h, w))


def apply_augment_batch(images: np.ndarray, params: Sequence[AugmentParams]) -> np.ndarray:
    """Apply one transform per sample to (B, H, W) or (B, C, H, W) images."""
    images = np.asarray(images, dtype=np.float64)
    h, w = images.shape[-2:]
    ys, xs = _inverse_grids(params, h, w)
    out = _bilinear(images, ys, xs)
    for i, p in enumerate(params):
        if p.noise_std > 0:
            out[i] += np.random.default_rng(p.noise_seed).normal(0.0, p.noise_std, size=out.shape[1:])
        out[i] *= p.brightness
    return np.clip(out, 0.0, 1.0, out=out)


def apply_augment(image: np.ndarray, params: AugmentParams) -> np.ndarray:
    return apply_augment_batch(np.asarray(image)[None], [params])[0]


def augment(image: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator):
    """Draw a transform, apply it, and return ``(augmented, params)`` for re-application."""
    params = draw_augment(cfg, rng)
    return apply_augment(image, params), params


def augment_pair_batch(images_t: np.ndarray, images_n: np.ndarray, cfg: AugmentConfig, rng):
    """Augment a batch of (current, next) images with one shared transform per sample."""
    params = [draw_augment(cfg, rng) for _ in range(images_t.shape[0])]
    both = apply_augment_batch(np.stack([images_t, images_n], axis=1), params)
    return both[:, 0], both[:, 1]


# --- losses ---------------------------------------------------------------------


def dko_terms(f_v_t, f_v_next, f_u, f_v_t_aug, f_v_next_aug, koopman: KoopmanOperator):
    """The two prediction errors of the Koopman constraint.

    term 1 (clean views): K sg(f_v_t) + V f_u  vs  f_v_next
    term 2 (augmented):   sg(K) f_v_t_aug + sg(V f_u)  vs  f_v_next_aug
    """
    pred1 = dko_predict(ng.stop_gradient(f_v_t), f_u, koopman.K, koopman.V)
    term1 = ng.mse(pred1, f_v_next)
    control = ng.stop_gradient(ng.matmul(f_u, ng.transpose(koopman.V)))
    pred2 = ng.add(ng.matmul(f_v_t_aug, ng.transpose(ng.stop_gradient(koopman.K))), control)
    term2 = ng.mse(pred2, f_v_next_aug)
    return term1, term2


def combine_dko(term1, term2, mu: float = 0.3) -> ng.Tensor:
    if not 0.0 <= mu <= 1.0:
        raise ContractError(f"dko weight must lie in [0, 1], got {mu}")
    return ng.add(ng.scale(term1, mu), ng.scale(term2, 1.0 - mu))


def dko_loss(pairs, encoder: VisualEncoder, policy: LatentPolicy, koopman: KoopmanOperator,
             mu: float = 0.3, cfg: AugmentConfig = AugmentConfig(), rng=None) -> ng.Tensor:
    """Koopman consistency loss over a batch ``(front_t, wrist_t, front_next, wrist_next)``."""
    if not 0.0 <= mu <= 1.0:
        raise ContractError(f"dko weight must lie in [0, 1], got {mu}")
    rng = rng if rng is not None else np.random.default_rng(0)
    front_t, wrist_t, front_n, wrist_n = pairs
    f_v_t = encoder(front_t, wrist_t)
    f_v_n = encoder(front_n, wrist_n)
    f_u = policy(f_v_t)
    af_t, af_n = augment_pair_batch(np.asarray(front_t), np.asarray(front_n), cfg, rng)
    aw_t, aw_n = augment_pair_batch(np.asarray(wrist_t), np.asarray(wrist_n), cfg, rng)
    term1, term2 = dko_terms(f_v_t, f_v_n, f_u, encoder(af_t, aw_t), encoder(af_n, aw_n), koopman)
    return combine_dko(term1, term2, mu)


def reg_loss(koopman: KoopmanOperator) -> ng.Tensor:
    return ng.add(ng.l2sq(koopman.K), ng.l2sq(koopman.V))
