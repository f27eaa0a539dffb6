"""Anti-aliased grayscale rasterizer for the two camera views."""

from __future__ import annotations

import math

import numpy as np

from ..koopman import Observation
from .env import PRESS_TOP, EnvState, TaskConfig, elbow, fk, proprio

FRONT_X = (-0.6, 0.6)
FRONT_Y = (-0.1, 1.1)
WRIST_SPAN = 0.3

ARM, FINGER, OBJECT, FIXTURE = 0.55, 0.8, 1.0, 0.3


def _grid(x_range, y_range, hw):
    h, w = hw
    xs = x_range[0] + (np.arange(w) + 0.5) * (x_range[1] - x_range[0]) / w
    ys = y_range[1] - (np.arange(h) + 0.5) * (y_range[1] - y_range[0]) / h
    gx, gy = np.meshgrid(xs, ys)
    px = (x_range[1] - x_range[0]) / w
    return gx, gy, px


def _segment(gx, gy, a, b, half, px):
    ax, ay = a
    dx, dy = b[0] - ax, b[1] - ay
    n2 = dx * dx + dy * dy
    if n2 > 0:
        t = np.clip(((gx - ax) * dx + (gy - ay) * dy) / n2, 0.0, 1.0)
    else:
        t = 0.0
    d = np.hypot(gx - (ax + t * dx), gy - (ay + t * dy)) - half
    return np.clip(0.5 - d / px, 0.0, 1.0)


def _box(gx, gy, center, half_w, half_h, px):
    d = np.maximum(np.abs(gx - center[0]) - half_w, np.abs(gy - center[1]) - half_h)
    return np.clip(0.5 - d / px, 0.0, 1.0)


def _primitives(state: EnvState, cfg: TaskConfig):
    """(kind, intensity, geometry) tuples in world coordinates."""
    q = state.q
    e, tip = elbow(q), fk(q)
    prims = [
        ("box", FIXTURE, ((0.0, -0.05), 0.08, 0.04)),
        ("seg", ARM, ((0.0, 0.0), tuple(e), 0.018)),
        ("seg", ARM, (tuple(e), tuple(tip), 0.014)),
    ]
    ang = q[0] + q[1]
    along = np.array([math.cos(ang), math.sin(ang)])
    side = np.array([-along[1], along[0]])
    for sgn in (1.0, -1.0):
        base = tip + sgn * side * (state.width / 2 + 0.006)
        prims.append(("seg", FINGER, (tuple(base - along * 0.01), tuple(base + along * 0.025), 0.006)))
    o, home = state.obj, state.obj_home
    if cfg.task == "latch_pull":
        prims.append(("seg", FIXTURE, ((home[0], home[1] + 0.01), (home[0], home[1] - cfg.pull_distance - 0.01), 0.006)))
        prims.append(("box", OBJECT, (tuple(o), 0.04, 0.012)))
    elif cfg.task == "press_button":
        prims.append(("box", FIXTURE, ((home[0], home[1] - 0.01), 0.05, 0.01)))
        prims.append(("box", 0.9, ((o[0], o[1] + PRESS_TOP / 2), 0.025, PRESS_TOP / 2)))
    else:
        z = state.zone
        prims.append(("seg", FIXTURE, ((z[0] - 0.04, z[1] - 0.03), (z[0] + 0.04, z[1] - 0.03), 0.005)))
        prims.append(("box", OBJECT, (tuple(o), 0.02, 0.02)))
    return prims


def _raster(prims, gx, gy, px) -> np.ndarray:
    img = np.zeros(gx.shape)
    for kind, val, geo in prims:
        if kind == "seg":
            cov = _segment(gx, gy, geo[0], geo[1], geo[2], px)
        else:
            cov = _box(gx, gy, geo[0], geo[1], geo[2], px)
        np.maximum(img, val * cov, out=img)
    return img


def render(state: EnvState, cfg: TaskConfig):
    """(front_image, wrist_image), each H x W in [0, 1]."""
    hw = tuple(cfg.image_hw)
    prims = _primitives(state, cfg)
    front = _raster(prims, *_grid(FRONT_X, FRONT_Y, hw))
    tip = fk(state.q)
    half = WRIST_SPAN / 2
    wrist = _raster(prims, *_grid((tip[0] - half, tip[0] + half), (tip[1] - half, tip[1] + half), hw))
    return front, wrist


def observe(state: EnvState, cfg: TaskConfig) -> Observation:
    front, wrist = render(state, cfg)
    return Observation(front, wrist, proprio(state))


__all__ = ["render", "observe", "FRONT_X", "FRONT_Y", "WRIST_SPAN"]
