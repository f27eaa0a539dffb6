"""Parameter containers. Modules hold Tensors; naming follows attribute paths."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops
from .tensor import Tensor


class Module:
    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for attr, value in vars(self).items():
            if attr.startswith("_"):
                continue
            name = f"{prefix}{attr}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(f"{name}: stored shape {arr.shape} != {p.data.shape}")
            p.data = arr.copy()


class Dense(Module):
    """Affine layer ``x @ weight + bias`` with Glorot-uniform init."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, zero: bool = False):
        limit = np.sqrt(6.0 / (n_in + n_out))
        w = np.zeros((n_in, n_out)) if zero else rng.uniform(-limit, limit, size=(n_in, n_out))
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True)

    def __call__(self, x) -> Tensor:
        return ops.add(ops.matmul(x, self.weight), self.bias)
