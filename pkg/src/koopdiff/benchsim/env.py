"""Planar two-link arm with a parallel gripper and three tabletop-style tasks.

The arm lives in a vertical plane: base at the origin, y pointing up. Actions
are absolute joint targets plus a gripper-width command; the simulator moves
toward them under per-step rate limits, so a target equal to the current
state is a no-op.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..numgraph import ContractError

L1, L2 = 0.5, 0.4
JOINT_LIMIT = math.pi
JOINT_RATE = 0.08  # rad per step, max-norm over joints
GRIP_MAX = 0.08
GRIP_RATE = 0.015
GRASP_WIDTH = 0.02  # width at which the fingers touch a grasped object
RELEASED_WIDTH = 0.04  # the latch only counts as opened once the fingers are this far apart
CANONICAL_Q = (2.4, -1.0)

TASKS = ("latch_pull", "press_button", "place_block")


@dataclass(frozen=True)
class TaskConfig:
    task: str = "latch_pull"
    x_range: tuple = (-0.15, 0.25)
    y_range: tuple = (0.55, 0.72)
    step_limit: int = 120
    init_mode: str = "fixed"
    perturb_bound: float = math.radians(10.0)
    grasp_radius: float = 0.035
    pull_distance: float = 0.15
    success_progress: float = 0.6
    zone_x_range: tuple = (0.10, 0.30)
    force_grasp_failures: int = 0
    image_hw: tuple = (32, 32)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ContractError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.init_mode not in ("fixed", "perturbed"):
            raise ContractError(f"init_mode must be 'fixed' or 'perturbed', got {self.init_mode!r}")
        if self.step_limit < 1:
            raise ContractError("step_limit must be >= 1")
        if self.perturb_bound < 0:
            raise ContractError("perturb_bound must be >= 0")
        for lo, hi in (self.x_range, self.y_range, self.zone_x_range):
            if lo > hi:
                raise ContractError(f"empty placement range ({lo}, {hi})")
            for x in (lo, hi):
                if abs(x) > 0.8:
                    raise ContractError(f"placement coordinate {x} outside the workspace")
        for y in self.y_range:
            r = math.hypot(self.x_range[0], y), math.hypot(self.x_range[1], y)
            if max(r) > L1 + L2 - 0.05 or min(r) < abs(L1 - L2) + 0.1:
                raise ContractError(f"placement range not comfortably reachable (radius {r})")


def task_defaults(task: str, **overrides) -> TaskConfig:
    base = {
        "latch_pull": {},
        "press_button": dict(x_range=(-0.20, 0.30), y_range=(0.35, 0.55)),
        "place_block": dict(x_range=(-0.25, 0.0), y_range=(0.45, 0.65), step_limit=140),
    }.get(task, {})
    return TaskConfig(task=task, **{**base, **overrides})


@dataclass(frozen=True)
class EnvState:
    q: np.ndarray  # joint angles (2,)
    width: float
    grip_cmd: float
    obj: np.ndarray  # current object position (2,): handle, button, or block
    obj_home: np.ndarray  # initial object position
    zone: np.ndarray  # goal position (place_block); unused elsewhere
    progress: float
    grasped: bool
    grasp_offset: np.ndarray
    failed_grasps: int
    pressed: bool
    success: bool
    step: int
    seed: int


def fk(q) -> np.ndarray:
    q1, q2 = float(q[0]), float(q[1])
    return np.array([L1 * math.cos(q1) + L2 * math.cos(q1 + q2), L1 * math.sin(q1) + L2 * math.sin(q1 + q2)])


def elbow(q) -> np.ndarray:
    return np.array([L1 * math.cos(q[0]), L1 * math.sin(q[0])])


def ik(p):
    """Elbow solution with q2 <= 0; None when the point is out of reach."""
    x, y = float(p[0]), float(p[1])
    c2 = (x * x + y * y - L1 * L1 - L2 * L2) / (2 * L1 * L2)
    if c2 > 1.0 or c2 < -1.0:
        return None
    q2 = -math.acos(c2)
    q1 = math.atan2(y, x) - math.atan2(L2 * math.sin(q2), L1 + L2 * math.cos(q2))
    q1 = (q1 + math.pi) % (2 * math.pi) - math.pi
    return np.array([q1, q2])


def ee(state: EnvState) -> np.ndarray:
    return fk(state.q)


def proprio(state: EnvState) -> np.ndarray:
    return np.array([state.q[0], state.q[1], state.width])


def env_reset(cfg: TaskConfig, seed: int):
    """Initial state and observation; object placement and joint perturbation come from ``seed``."""
    from .render import observe

    rng = np.random.default_rng(seed)
    obj = np.array([rng.uniform(*cfg.x_range), rng.uniform(*cfg.y_range)])
    zone = np.array([rng.uniform(*cfg.zone_x_range), rng.uniform(*cfg.y_range)])
    q = np.array(CANONICAL_Q, dtype=np.float64)
    if cfg.init_mode == "perturbed":
        q = q + rng.uniform(-cfg.perturb_bound, cfg.perturb_bound, size=2)
    state = EnvState(
        q=q, width=GRIP_MAX, grip_cmd=GRIP_MAX, obj=obj, obj_home=obj.copy(), zone=zone,
        progress=0.0, grasped=False, grasp_offset=np.zeros(2), failed_grasps=0,
        pressed=False, success=False, step=0, seed=seed,
    )
    return state, observe(state, cfg)


def _move_arm(q, target) -> np.ndarray:
    dq = np.asarray(target, dtype=np.float64) - q
    m = float(np.max(np.abs(dq)))
    if m > JOINT_RATE:
        dq = dq * (JOINT_RATE / m)
    return np.clip(q + dq, -JOINT_LIMIT, JOINT_LIMIT)


def _move_gripper(width, cmd) -> float:
    cmd = min(max(cmd, 0.0), GRIP_MAX)
    return width + min(max(cmd - width, -GRIP_RATE), GRIP_RATE)


def _grasp_logic(s: dict, cfg: TaskConfig, prev_width: float, tip: np.ndarray, movable: bool):
    """Shared close/open handling for the graspable tasks; mutates ``s``."""
    if s["grasped"]:
        if s["grip_cmd"] > GRASP_WIDTH + 1e-9 and s["width"] > prev_width:
            s["grasped"] = False
        else:
            s["width"] = max(s["width"], GRASP_WIDTH)
    elif prev_width > GRASP_WIDTH >= s["width"]:
        near = float(np.linalg.norm(tip - s["obj"])) <= cfg.grasp_radius
        forced = s["failed_grasps"] < cfg.force_grasp_failures
        if near and not forced:
            s["grasped"] = True
            s["width"] = GRASP_WIDTH
            s["grasp_offset"] = tip - s["obj"]
        else:
            s["failed_grasps"] += 1
    if s["grasped"] and movable:
        target = tip - s["grasp_offset"]
        if float(np.linalg.norm(target - s["obj"])) > 0.05 + cfg.grasp_radius:
            s["grasped"] = False  # slipped out
        return target
    return None


def env_step(state: EnvState, action, cfg: TaskConfig):
    """Advance one step; returns (state, observation, done, success)."""
    from .render import observe

    a = np.asarray(action, dtype=np.float64)
    if a.shape != (3,) or not np.all(np.isfinite(a)):
        raise ContractError(f"env_step: action must be 3 finite values, got {a!r}")
    q = _move_arm(state.q, a[:2])
    grip_cmd = float(a[2])
    width = _move_gripper(state.width, grip_cmd)
    s = dict(
        q=q, width=width, grip_cmd=grip_cmd, obj=state.obj.copy(), grasped=state.grasped,
        grasp_offset=state.grasp_offset, failed_grasps=state.failed_grasps, progress=state.progress,
        pressed=state.pressed, success=state.success,
    )
    tip = fk(q)
    if cfg.task == "latch_pull":
        target = _grasp_logic(s, cfg, state.width, tip, movable=True)
        if target is not None and s["grasped"]:
            home = state.obj_home
            s["obj"] = np.array([home[0], min(max(target[1], home[1] - cfg.pull_distance), home[1])])
        s["progress"] = (state.obj_home[1] - s["obj"][1]) / cfg.pull_distance
        done_now = s["progress"] >= cfg.success_progress and not s["grasped"] and width >= RELEASED_WIDTH
    elif cfg.task == "place_block":
        target = _grasp_logic(s, cfg, state.width, tip, movable=True)
        if target is not None and s["grasped"]:
            s["obj"] = target
        dist = float(np.linalg.norm(s["obj"] - state.zone))
        s["progress"] = max(0.0, 1.0 - dist / max(float(np.linalg.norm(state.obj_home - state.zone)), 1e-9))
        done_now = (not s["grasped"]) and dist < 0.03 and width > GRASP_WIDTH + 0.01
    else:  # press_button: a press needs the tip inside the cap footprint and below its top
        inside = abs(tip[0] - state.obj_home[0]) < 0.03
        depth = (state.obj_home[1] + PRESS_TOP - tip[1]) / PRESS_DEPTH if inside else 0.0
        s["progress"] = min(max(depth, 0.0), 1.0)
        s["pressed"] = state.pressed or s["progress"] >= 1.0
        s["obj"] = state.obj_home - np.array([0.0, PRESS_SHIFT * s["progress"]])
        done_now = s["pressed"] and tip[1] > state.obj_home[1] + PRESS_CLEAR
    s["success"] = state.success or bool(done_now)
    new = replace(state, step=state.step + 1, **s)
    done = new.success or new.step >= cfg.step_limit
    return new, observe(new, cfg), done, new.success


PRESS_TOP = 0.02  # cap top above the button anchor
PRESS_DEPTH = 0.02  # tip travel below the cap top for a full press
PRESS_SHIFT = 0.004  # visible cap displacement at full press; deliberately tiny
PRESS_CLEAR = 0.08  # retreat height that completes the task


@dataclass
class EpisodeTrace:
    task: str
    seed: int
    init_mode: str
    actions: list = field(default_factory=list)
    q: list = field(default_factory=list)
    width: list = field(default_factory=list)
    ee: list = field(default_factory=list)
    obj: list = field(default_factory=list)
    success_flags: list = field(default_factory=list)
    failed_grasps: list = field(default_factory=list)
    meta: list = field(default_factory=list)

    def record(self, action, state: EnvState, meta=None) -> None:
        self.actions.append(np.asarray(action, dtype=np.float64).copy())
        self.q.append(state.q.copy())
        self.width.append(state.width)
        self.ee.append(fk(state.q))
        self.obj.append(state.obj.copy())
        self.success_flags.append(state.success)
        self.failed_grasps.append(state.failed_grasps)
        self.meta.append(meta or {})

    @property
    def success(self) -> bool:
        return bool(self.success_flags and self.success_flags[-1])

    def __len__(self):
        return len(self.actions)

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "a_q1", "a_q2", "a_grip", "q1", "q2", "width", "ee_x", "ee_y",
                        "obj_x", "obj_y", "failed_grasps", "success", "branch_pick", "seed"])
            for i in range(len(self)):
                a, q, e, o = self.actions[i], self.q[i], self.ee[i], self.obj[i]
                w.writerow([i + 1, *map(repr, map(float, a)), *map(repr, map(float, q)), repr(float(self.width[i])),
                            *map(repr, map(float, e)), *map(repr, map(float, o)), self.failed_grasps[i],
                            int(self.success_flags[i]), self.meta[i].get("branch", ""), self.seed])
