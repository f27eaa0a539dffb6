"""Chunk scoring, overlap pooling, weighted per-step selection and smoothing."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import numgraph as ng
from .diffusion import NoiseSchedule, forward_diffuse
from .numgraph import ContractError

log = logging.getLogger(__name__)

BRANCHES = ("visual", "fused")
E_FLOOR = 1e-8


@dataclass(eq=False)
class ChunkRecord:
    chunk: np.ndarray
    birth_step: int
    branch: str
    test_loss: float

    def __post_init__(self):
        if self.branch not in BRANCHES:
            raise ContractError(f"unknown branch tag {self.branch!r}")
        if self.birth_step < 0:
            raise ContractError(f"birth_step must be >= 0, got {self.birth_step}")
        if not (math.isfinite(self.test_loss) and self.test_loss >= 0):
            raise ContractError(f"test loss must be finite and >= 0, got {self.test_loss}")


def stratified_steps(steps: int, samples: int) -> np.ndarray:
    j = np.arange(samples)
    return 1 + (j * steps) // samples


def test_time_loss(f, a0, denoiser, sched: NoiseSchedule, samples: int | None = None, seed: int = 0):
    """Eps-prediction loss re-evaluated on a generated chunk.

    ``f`` and ``a0`` may carry a leading batch axis (one row per chunk); every
    row then sees the same stratified k sweep and the same noise, so scores
    are comparable across chunks of one round. Returns a float or an array.
    """
    samples = sched.steps if samples is None else samples
    if samples < 1:
        raise ContractError(f"test_time_loss: need at least one sample, got {samples}")
    a0 = np.asarray(a0, dtype=np.float64)
    single = a0.ndim == 2
    a0 = a0[None] if single else a0
    cond = np.asarray(f.data if isinstance(f, ng.Tensor) else f, dtype=np.float64)
    cond = cond.reshape(a0.shape[0], -1)
    b = a0.shape[0]
    rng = np.random.default_rng(seed)
    ks = stratified_steps(sched.steps, samples)
    eps = rng.standard_normal((samples,) + a0.shape[1:])
    # one batched pass: samples x chunks
    k_all = np.repeat(ks, b)
    eps_all = np.repeat(eps, b, axis=0)
    a_all = np.tile(a0, (samples, 1, 1))
    noisy = forward_diffuse(a_all, k_all, eps_all, sched)
    pred = denoiser(noisy, k_all, np.tile(cond, (samples, 1))).data
    per = np.mean((pred - eps_all) ** 2, axis=(1, 2)).reshape(samples, b).mean(axis=0)
    return float(per[0]) if single else per


def temporal_weights(length: int, eta: float) -> np.ndarray:
    if length < 1:
        raise ContractError(f"temporal_weights: length must be >= 1, got {length}")
    if not eta > 0:
        raise ContractError(f"temporal_weights: decay must be > 0, got {eta}")
    w = eta ** np.arange(length, dtype=np.float64)
    return w / w.sum()


@dataclass
class Candidate:
    action: np.ndarray
    record: ChunkRecord
    offset: int


@dataclass
class OverlapPool:
    t: int
    eta: float
    steps: list  # list[list[Candidate]], one list per target step t..t+h-1
    records: list = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return len(self.steps)


def build_pool(history: list, t: int, h: int, eta: float = 0.97) -> OverlapPool:
    """Gather every live chunk row covering steps t..t+h-1.

    Records whose span ended before ``t`` are removed from ``history`` in place.
    """
    if h < 1:
        raise ContractError(f"build_pool: horizon must be >= 1, got {h}")
    history[:] = [r for r in history if r.birth_step + len(r.chunk) > t]
    for r in history:
        if r.birth_step > t:
            raise ContractError(f"build_pool: record born at {r.birth_step} is newer than t={t}")
    steps = []
    used = []
    for target in range(t, t + h):
        cands = []
        for r in history:
            off = target - r.birth_step
            if 0 <= off < len(r.chunk):
                cands.append(Candidate(r.chunk[off], r, off))
                if r not in used:
                    used.append(r)
        if not cands:
            raise ContractError(f"build_pool: no candidate covers step {target}")
        steps.append(cands)
    return OverlapPool(t=t, eta=eta, steps=steps, records=used)


@dataclass
class Scored:
    candidate: Candidate
    e: float
    w: float
    confidence: float
    omega: float
    selected: bool = False


def _rank_key(s: Scored):
    return (s.omega, s.candidate.record.birth_step, s.candidate.record.branch == "fused")


def score_pool(pool: OverlapPool, weights=None) -> list:
    """Per target step, a list of :class:`Scored` with the winner flagged.

    ``weights`` overrides the temporal weight vector (indexed by offset).
    """
    if weights is None:
        weights = temporal_weights(max(len(r.chunk) for r in pool.records), pool.eta)
    w = np.asarray(weights, dtype=np.float64)
    total = sum(max(r.test_loss, E_FLOOR) for r in pool.records)
    out = []
    for cands in pool.steps:
        e = np.array([max(c.record.test_loss, E_FLOOR) for c in cands])
        ratio = total / e
        conf = ratio / ratio.sum()
        scored = [Scored(c, float(ei), float(w[c.offset]), float(ci), float(w[c.offset] * ci))
                  for c, ei, ci in zip(cands, e, conf)]
        if not any(s.omega > 0 for s in scored):
            fused = [s for s in scored if s.candidate.record.branch == "fused"] or scored
            best = max(fused, key=lambda s: s.candidate.record.birth_step)
            log.warning("aggregate: all weights zero at step %d; falling back to newest fused chunk",
                        pool.t + len(out))
        else:
            best = max(scored, key=_rank_key)
        best.selected = True
        out.append(scored)
    return out


def aggregate(pool: OverlapPool, weights=None, trace: list | None = None) -> np.ndarray:
    """Pick one action row per target step by maximum confidence x temporal weight.

    If ``trace`` is given, one dict per candidate is appended to it.
    """
    scored = score_pool(pool, weights)
    rows = []
    for i, step in enumerate(scored):
        for s in step:
            if s.selected:
                rows.append(np.array(s.candidate.action, dtype=np.float64))
            if trace is not None:
                trace.append({
                    "t": pool.t + i,
                    "branch": s.candidate.record.branch,
                    "birth_step": s.candidate.record.birth_step,
                    "offset": s.candidate.offset,
                    "e": s.e,
                    "w_i": s.w,
                    "confidence": s.confidence,
                    "omega": s.omega,
                    "selected": int(s.selected),
                })
    return np.stack(rows)


TRACE_COLUMNS = ("t", "branch", "birth_step", "offset", "e", "w_i", "confidence", "omega", "selected")


def write_trace(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in TRACE_COLUMNS})


# --- Savitzky-Golay -------------------------------------------------------------


def _check_window(window: int, polyorder: int) -> None:
    if window < 3 or window % 2 == 0:
        raise ContractError(f"smooth: window must be odd and >= 3, got {window}")
    if not 0 <= polyorder < window:
        raise ContractError(f"smooth: polyorder must satisfy 0 <= polyorder < window, got {polyorder}")


def _fit_matrix(positions: np.ndarray, polyorder: int, at: np.ndarray) -> np.ndarray:
    """Rows map window samples to the least-squares polynomial evaluated at ``at``."""
    vander = np.vander(positions, polyorder + 1, increasing=True)
    pinv = np.linalg.pinv(vander)
    return np.vander(at, polyorder + 1, increasing=True) @ pinv


def savgol_coefficients(window: int, polyorder: int) -> np.ndarray:
    """Centre-point smoothing weights (applied as a dot product with the window)."""
    _check_window(window, polyorder)
    half = window // 2
    pos = np.arange(-half, half + 1, dtype=np.float64)
    return _fit_matrix(pos, polyorder, np.zeros(1))[0]


def smooth(seq, window: int = 7, polyorder: int = 3, edges: str = "fit") -> np.ndarray:
    """Column-wise Savitzky-Golay filter; sequences shorter than the window pass through.

    ``edges="fit"`` evaluates the polynomial fitted to the first/last window
    at the boundary samples, which keeps polynomials of degree <= polyorder
    exact everywhere. ``edges="mirror"`` reflects the signal about its end
    samples instead.
    """
    _check_window(window, polyorder)
    x = np.asarray(seq, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    n = x.shape[0]
    if n < window:
        return (x[:, 0] if squeeze else x).copy()
    half = window // 2
    coef = savgol_coefficients(window, polyorder)
    if edges == "mirror":
        padded = np.concatenate([x[half:0:-1], x, x[-2:-half - 2:-1]], axis=0)
        out = np.stack([coef @ padded[i:i + window] for i in range(n)])
    elif edges == "fit":
        out = np.empty_like(x)
        for i in range(half, n - half):
            out[i] = coef @ x[i - half:i + half + 1]
        pos = np.arange(window, dtype=np.float64)
        head = _fit_matrix(pos, polyorder, np.arange(half, dtype=np.float64))
        tail = _fit_matrix(pos, polyorder, np.arange(window - half, window, dtype=np.float64))
        out[:half] = head @ x[:window]
        out[n - half:] = tail @ x[n - window:]
    else:
        raise ContractError(f"smooth: unknown edge mode {edges!r}")
    return out[:, 0] if squeeze else out
