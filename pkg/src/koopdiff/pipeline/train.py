"""Joint training of the encoders, Koopman operator and denoiser."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import numgraph as ng
from ..benchsim.dataset import DemoDataset
from ..diffusion import ddpm_loss, switch_mask
from ..koopman import AugmentConfig, augment_pair_batch, combine_dko, dko_terms, reg_loss
from .config import TrainConfig
from .model import Normalizer, PolicyBundle

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class StepLosses:
    total: float
    ddpm: float
    dko: float
    reg: float
    used_u: int
    batch: int


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)  # per-epoch mean losses
    switch_draws: int = 0
    switch_u: int = 0
    seconds: float = 0.0

    @property
    def u_frequency(self) -> float:
        return self.switch_u / max(self.switch_draws, 1)


def _mask_tensor(mask: np.ndarray, width: int) -> ng.Tensor:
    return ng.Tensor(np.repeat(mask.astype(np.float64)[:, None], width, axis=1))


def loss_terms(bundle: PolicyBundle, batch, rng: np.random.Generator, aug: AugmentConfig | None):
    """Forward pass for one batch; returns the loss tensors and the switch mask.

    Must run inside an active tape for gradients.
    """
    cfg, m = bundle.cfg, bundle.model
    ft, wt, fn, wn, q, chunk = batch
    qn = ng.Tensor(bundle.q_norm.encode(q))
    an = bundle.a_norm.encode(chunk)

    f_v = m.encoder(ft, wt)
    f_vn = m.encoder(fn, wn)
    f_u = m.policy(f_v)
    f_f = m.fusion(f_v, qn)

    if aug is not None:
        aft, afn = augment_pair_batch(ft, fn, aug, rng)
        awt, awn = augment_pair_batch(wt, wn, aug, rng)
    else:
        aft, afn, awt, awn = ft, fn, wt, wn
    term1, term2 = dko_terms(f_v, f_vn, f_u, m.encoder(aft, awt), m.encoder(afn, awn), m.koopman)
    l_dko = combine_dko(term1, term2, cfg.mu)
    l_reg = reg_loss(m.koopman)

    mask = switch_mask(len(an), cfg.switch_p, rng)
    mt = _mask_tensor(mask, cfg.latent)
    f_star = ng.add(ng.mul(f_u, mt), ng.mul(f_f, ng.Tensor(1.0 - mt.data)))
    l_ddpm, _, _ = ddpm_loss(f_star, an, m.denoiser, bundle.sched, rng)
    total = ng.add(ng.add(l_ddpm, l_dko), ng.scale(l_reg, cfg.lam))
    return {"total": total, "ddpm": l_ddpm, "dko": l_dko, "reg": l_reg}, mask


def train_step(bundle: PolicyBundle, opt: ng.Adam, batch, rng, aug) -> StepLosses:
    with ng.Tape() as tape:
        losses, mask = loss_terms(bundle, batch, rng, aug)
        total = losses["total"].item()
        if not math.isfinite(total):
            raise TrainingDiverged(f"non-finite loss {total}")
        grads = tape.backward(losses["total"])
    opt.step(grads)
    return StepLosses(total, losses["ddpm"].item(), losses["dko"].item(), losses["reg"].item(),
                      int(mask.sum()), len(mask))


def fit_normalizers(ds: DemoDataset):
    q = np.concatenate([ep.q for ep in ds.episodes])
    a = np.concatenate([ep.actions for ep in ds.episodes])
    return Normalizer.fit(q), Normalizer.fit(a)


def train(ds: DemoDataset, cfg: TrainConfig, out_dir=None, progress=None):
    """Train a policy on ``ds``; returns ``(bundle, TrainLog)``.

    Every random draw descends from ``cfg.seed``: parameter init, batch
    order, augmentation, switch draws and diffusion noise.
    """
    q_norm, a_norm = fit_normalizers(ds)
    bundle = PolicyBundle.create(cfg, ds.cfg.image_hw, q_norm, a_norm, task=ds.cfg.task)
    opt = ng.Adam(bundle.model.parameters(), lr=cfg.lr)
    aug = AugmentConfig() if cfg.augment else None
    index = ds.tuple_index()
    trainlog = TrainLog()
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng([cfg.seed, 1, epoch])
        order = rng.permutation(len(index))
        sums = np.zeros(4)
        n_batches = 0
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = ds.gather(index[order[start:start + cfg.batch_size]], cfg.horizon, cfg.chunk_len)
            try:
                s = train_step(bundle, opt, batch, rng, aug)
            except (TrainingDiverged, ng.NonFiniteGradientError, FloatingPointError) as exc:
                raise TrainingDiverged(f"epoch {epoch} batch {b}: {exc}") from exc
            sums += (s.total, s.ddpm, s.dko, s.reg)
            trainlog.switch_draws += s.batch
            trainlog.switch_u += s.used_u
            n_batches += 1
        mean = sums / n_batches
        trainlog.epochs.append({"epoch": epoch, "total": mean[0], "ddpm": mean[1], "dko": mean[2], "reg": mean[3]})
        log.info("epoch %d total %.5f ddpm %.5f dko %.5f reg %.3f", epoch, *mean)
        if progress is not None:
            progress(epoch, mean)
        if out_dir is not None and ((epoch + 1) % cfg.checkpoint_every == 0):
            bundle.save(Path(out_dir) / f"epoch_{epoch + 1:04d}")
    trainlog.seconds = time.perf_counter() - t0
    if out_dir is not None:
        bundle.save(Path(out_dir) / "final")
    return bundle, trainlog
