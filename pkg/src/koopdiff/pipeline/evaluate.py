"""Closed-loop rollouts and the success-rate evaluation grid."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

from ..benchsim.env import EpisodeTrace, TaskConfig, env_reset, env_step, task_defaults
from .infer import VARIANTS, InferState, infer_round
from .model import PolicyBundle

CONDITIONS = ("fixed", "perturbed")


def _seed_int(*parts) -> int:
    """Stable 63-bit integer from arbitrary labels."""
    h = hashlib.sha256("/".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1


def episode_seeds(master: int, task: str, episode: int) -> int:
    """Task initialization seed; shared by every condition and variant."""
    return _seed_int("init", master, task, episode)


def inference_seed(master: int, cell: str, episode: int) -> int:
    return _seed_int("infer", master, cell, episode)


def rollout(bundle: PolicyBundle, cfg: TaskConfig, seed: int, variant: str = "dual",
            infer_seed: int | None = None, keep_pool_trace: bool = False) -> EpisodeTrace:
    """Run one episode: alternate an inference round with ``h`` environment steps."""
    state, obs = env_reset(cfg, seed)
    rng = np.random.default_rng(infer_seed if infer_seed is not None else seed)
    mem = InferState()
    trace = EpisodeTrace(cfg.task, seed, cfg.init_mode)
    trace.pool_trace = mem.trace if keep_pool_trace else None
    t = 0
    while True:
        before = len(mem.trace)
        r = infer_round(bundle, obs, mem, t, rng, variant)
        picks = [row["branch"] for row in mem.trace[before:] if row["selected"]]
        if not keep_pool_trace:
            mem.trace.clear()
        for i, a in enumerate(r.actions):
            state, obs, done, _ = env_step(state, a, cfg)
            trace.record(a, state, {"branch": picks[i] if i < len(picks) else ""})
            t += 1
            if done:
                return trace


@dataclass
class CellResult:
    task: str
    condition: str
    variant: str
    horizon: int
    n: int
    successes: int
    seeds: list = field(default_factory=list)
    episode_success: list = field(default_factory=list)
    episode_steps: list = field(default_factory=list)

    @property
    def rate(self) -> float:
        return self.successes / self.n

    @property
    def cell_id(self) -> str:
        return f"{self.task}/{self.condition}/{self.variant}/h{self.horizon}"


@dataclass
class EvalReport:
    master_seed: int
    cells: list = field(default_factory=list)

    def rate(self, task, condition, variant, horizon=None) -> float:
        for c in self.cells:
            if (c.task, c.condition, c.variant) == (task, condition, variant) and horizon in (None, c.horizon):
                return c.rate
        raise KeyError((task, condition, variant, horizon))

    def to_dict(self) -> dict:
        cells = sorted(self.cells, key=lambda c: c.cell_id)
        return {
            "master_seed": self.master_seed,
            "cells": [
                {"task": c.task, "condition": c.condition, "variant": c.variant, "horizon": c.horizon, "n": c.n,
                 "successes": c.successes, "success_rate": c.rate, "seeds": c.seeds,
                 "episode_success": c.episode_success, "episode_steps": c.episode_steps}
                for c in cells
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        rows = [("task", "condition", "variant", "h", "N", "success")]
        for c in sorted(self.cells, key=lambda c: c.cell_id):
            rows.append((c.task, c.condition, c.variant, str(c.horizon), str(c.n), f"{100 * c.rate:.1f}%"))
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = ["  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"


def run_cell(bundle: PolicyBundle, task: str, condition: str, variant: str, n: int, master_seed: int,
             horizon: int | None = None, task_overrides: dict | None = None) -> CellResult:
    if bundle.cfg.horizon != (horizon or bundle.cfg.horizon):
        bundle = replace(bundle, cfg=replace(bundle.cfg, horizon=horizon))
    h = bundle.cfg.horizon
    cfg = task_defaults(task, init_mode=condition, **(task_overrides or {}))
    cell = CellResult(task, condition, variant, h, n, 0)
    for ep in range(n):
        seed = episode_seeds(master_seed, task, ep)
        tr = rollout(bundle, cfg, seed, variant, infer_seed=inference_seed(master_seed, cell.cell_id, ep))
        cell.seeds.append(seed)
        cell.episode_success.append(bool(tr.success))
        cell.episode_steps.append(len(tr))
        cell.successes += int(tr.success)
    return cell


def evaluate(bundle: PolicyBundle, tasks=("latch_pull",), conditions=CONDITIONS, variants=VARIANTS, n: int = 40,
             master_seed: int = 0, horizons=None, order=None) -> EvalReport:
    """Success rates for every task x condition x variant x horizon cell.

    ``order`` optionally permutes cell execution; results do not depend on it
    because every episode's randomness is derived from its own labels.
    """
    if n < 1:
        raise ValueError("evaluate: n must be >= 1")
    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown variant {v!r}")
    horizons = list(horizons or [bundle.cfg.horizon])
    cells = [(t, c, v, h) for t in tasks for c in conditions for v in variants for h in horizons]
    if order is not None:
        cells = [cells[i] for i in order]
    report = EvalReport(master_seed)
    for t, c, v, h in cells:
        report.cells.append(run_cell(bundle, t, c, v, n, master_seed, h))
    return report
