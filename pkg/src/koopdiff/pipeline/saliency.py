from __future__ import annotations

import numpy as np

from .. import numgraph as ng
from ..koopman import Observation, VisualEncoder


def saliency_maps(encoder: VisualEncoder, obs: Observation):
    """|d ||f_v||^2 / d pixel| for each view, scaled so each map peaks at 1.

    A view whose gradient vanishes everywhere yields an all-zero map.
    """
    with ng.Tape() as tape:
        front = ng.Tensor(np.asarray(obs.front_image, dtype=np.float64)[None], requires_grad=True)
        wrist = ng.Tensor(np.asarray(obs.wrist_image, dtype=np.float64)[None], requires_grad=True)
        grads = tape.backward(ng.l2sq(encoder(front, wrist)))
    maps = []
    for leaf in (front, wrist):
        g = grads.get(leaf)
        m = np.zeros(leaf.shape[1:]) if g is None else np.abs(g.data[0])
        peak = float(m.max())
        maps.append(m / peak if peak > 0 else m)
    return maps[0], maps[1]


def saliency(bundle, obs: Observation):
    return saliency_maps(bundle.model.encoder, obs)
