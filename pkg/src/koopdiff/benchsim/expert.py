"""State-driven scripted demonstrator.

The controller reads only the environment state, never its own history, so
it can be restarted from any state (including after a failed grasp) and
still finish the task.
"""

from __future__ import annotations

import math

import numpy as np

from .env import (
    GRIP_MAX,
    GRASP_WIDTH,
    PRESS_CLEAR,
    PRESS_DEPTH,
    PRESS_TOP,
    EnvState,
    TaskConfig,
    fk,
    ik,
)

NOISE_STD = math.radians(0.5)
APPROACH_SPEED = 0.015  # m per step
PULL_SPEED = 0.01
AT_TARGET = 0.006


class UnreachableTarget(RuntimeError):
    pass


def _ik(p) -> np.ndarray:
    q = ik(p)
    if q is None:
        raise UnreachableTarget(f"no joint solution for point ({p[0]:.3f}, {p[1]:.3f})")
    return q


def _toward(tip, goal, speed) -> np.ndarray:
    d = goal - tip
    n = float(np.linalg.norm(d))
    return goal.copy() if n <= speed else tip + d * (speed / n)


def phase_target(state: EnvState, cfg: TaskConfig):
    """(phase name, Cartesian goal of the current phase, gripper command)."""
    tip = fk(state.q)
    obj = state.obj
    if state.success:
        return "hold", tip, state.grip_cmd
    if cfg.task == "press_button":
        home = state.obj_home
        above = home + np.array([0.0, PRESS_TOP + 0.05])
        if state.pressed:
            return "retreat", home + np.array([0.0, PRESS_CLEAR + 0.02]), 0.04
        if abs(tip[0] - home[0]) < 0.01 and tip[1] < above[1] + AT_TARGET:
            return "press", home + np.array([0.0, PRESS_TOP - PRESS_DEPTH - 0.005]), 0.0
        return "approach", above, 0.0
    if state.grasped:
        if cfg.task == "latch_pull":
            if state.progress >= 1.0 - 1e-9:
                return "release", tip, GRIP_MAX
            goal = state.obj_home + state.grasp_offset - np.array([0.0, cfg.pull_distance + 0.005])
            return "pull", goal, 0.0
        goal = state.zone + state.grasp_offset
        if float(np.linalg.norm(obj - state.zone)) < 0.01:
            return "release", tip, GRIP_MAX
        return "transport", goal, 0.0
    if state.grip_cmd < GRIP_MAX:  # closing, closed, or failed
        near = float(np.linalg.norm(tip - obj)) <= cfg.grasp_radius
        if state.width > GRASP_WIDTH and near:
            return "grasp", obj, 0.0
        return "reopen", tip, GRIP_MAX
    if state.width < GRIP_MAX - 1e-9:
        return "reopen", tip, GRIP_MAX
    if float(np.linalg.norm(tip - obj)) > AT_TARGET:
        return "approach", obj, GRIP_MAX
    return "grasp", obj, 0.0


def scripted_expert(state: EnvState, cfg: TaskConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Absolute joint targets for the next waypoint plus a gripper command."""
    phase, goal, grip = phase_target(state, cfg)
    tip = fk(state.q)
    if phase == "hold":
        q = state.q.copy()
    elif phase in ("grasp", "reopen", "release"):
        q = _ik(goal) if phase == "grasp" else state.q.copy()
    else:
        speed = PULL_SPEED if phase in ("pull", "press") else APPROACH_SPEED
        q = _ik(_toward(tip, goal, speed))
    if rng is not None and phase != "hold":
        q = q + rng.normal(0.0, NOISE_STD, size=2)
    return np.array([q[0], q[1], grip])
