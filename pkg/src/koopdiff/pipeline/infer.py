"""Closed-loop inference: dual-branch chunk generation, pooling, selection, smoothing."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import numgraph as ng
from ..aggregator import ChunkRecord, aggregate, build_pool, smooth, test_time_loss
from ..benchsim.env import JOINT_RATE
from ..diffusion import denoise_chunk
from ..koopman import Observation
from .model import PolicyBundle

VARIANTS = ("dual", "visual-only", "fused-only")


class InferenceError(RuntimeError):
    pass


@dataclass
class InferState:
    """Per-episode inference memory: live chunk records and committed commands."""

    history: list = field(default_factory=list)
    committed: list = field(default_factory=list)
    trace: list = field(default_factory=list)


@dataclass
class RoundResult:
    actions: np.ndarray  # (h, d) executable commands
    records: list
    raw: np.ndarray  # (h, d) selected rows before smoothing


def latents(bundle: PolicyBundle, obs: Observation):
    m = bundle.model
    front = np.asarray(obs.front_image)[None]
    wrist = np.asarray(obs.wrist_image)[None]
    f_v = m.encoder(front, wrist)
    f_u = m.policy(f_v)
    f_f = m.fusion(f_v, bundle.q_norm.encode(np.asarray(obs.q))[None])
    return f_v.data, f_u.data, f_f.data


def _slew(rows: np.ndarray, prev: np.ndarray) -> np.ndarray:
    out = rows.copy()
    last = prev[:2]
    for i in range(len(out)):
        d = out[i, :2] - last
        m = float(np.max(np.abs(d)))
        if m > JOINT_RATE:
            out[i, :2] = last + d * (JOINT_RATE / m)
        last = out[i, :2]
    return out


def infer_round(bundle: PolicyBundle, obs: Observation, state: InferState, t: int, rng: np.random.Generator,
                variant: str = "dual", force_equal: bool = False) -> RoundResult:
    """Generate this round's chunks and return the next ``h`` commands."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    cfg, sched = bundle.cfg, bundle.sched
    h, l = cfg.horizon, cfg.chunk_len
    _, f_u, f_f = latents(bundle, obs)
    if force_equal:
        f_f = f_u.copy()
    conds = np.concatenate([f_u, f_f], axis=0)
    init = rng.standard_normal((l, bundle.action_dim))
    chunks = denoise_chunk(conds, bundle.model.denoiser, sched, np.stack([init, init]))
    samples = cfg.ttl_samples or sched.steps
    e = test_time_loss(conds, chunks, bundle.model.denoiser, sched, samples=samples,
                       seed=int(rng.integers(2**31)))
    decoded = bundle.a_norm.decode(chunks)
    records = [ChunkRecord(decoded[0], t, "visual", float(e[0])), ChunkRecord(decoded[1], t, "fused", float(e[1]))]
    if variant == "dual":
        state.history.extend(records)
        pool = build_pool(state.history, t, h, cfg.eta)
        if any(not step for step in pool.steps):
            raise InferenceError("empty candidate pool")
        rows = aggregate(pool, trace=state.trace)
    else:
        rec = records[0] if variant == "visual-only" else records[1]
        rows = rec.chunk[:h].copy()
        for i in range(h):
            state.trace.append({"t": t + i, "branch": rec.branch, "birth_step": t, "offset": i, "e": rec.test_loss,
                                "w_i": 1.0, "confidence": 1.0, "omega": 1.0, "selected": 1})

    ctx = (cfg.sg_window - 1) // 2
    left = state.committed[-ctx:] if ctx else []
    seq = np.concatenate([np.array(left).reshape(-1, rows.shape[1]), rows], axis=0)
    smoothed = smooth(seq, cfg.sg_window, cfg.sg_polyorder)[len(left):]
    prev = state.committed[-1] if state.committed else np.concatenate([obs.q[:2], obs.q[2:]])
    out = _slew(smoothed, np.asarray(prev))
    state.committed.extend(list(out))
    return RoundResult(out, records, rows)
