from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import ContractError, Tensor


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter {name!r}; step rejected")
        self.name = name


@dataclass
class OptimState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def optim_step(params: Mapping[str, Tensor], grads: Mapping, state: OptimState):
    """One bias-corrected adaptive-moment update, in place on ``params[name].data``.

    ``grads`` maps parameter names (or the parameter Tensors themselves, as
    returned by ``Tape.backward``) to arrays or Tensors; parameters without an
    entry are treated as having zero gradient. Every gradient is validated
    before anything is modified, so a rejected step leaves params and state
    untouched.
    """
    prepared = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = grads.get(p)
        if g is None:
            g = np.zeros_like(p.data)
        elif isinstance(g, Tensor):
            g = g.data
        if g.shape != p.data.shape:
            raise ContractError(f"optim_step: gradient for {name!r} has shape {g.shape}, parameter {p.data.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)
        prepared[name] = g

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, g in prepared.items():
        p = params[name]
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            v = state.v[name] = np.zeros_like(p.data)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        denom = np.sqrt(v / c2)
        denom += state.eps
        p.data = p.data - (state.lr / c1) * m / denom
    return params, state


class Adam:
    """Thin stateful wrapper around :func:`optim_step`."""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = dict(params)
        self.state = OptimState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def step(self, grads: Mapping) -> None:
        optim_step(self.params, grads, self.state)
