"""Dense float64 tensors recorded on an explicit differentiation tape.

Values live in numpy arrays. A ``Tape`` is entered as a context manager; every
primitive evaluated while it is active, and whose inputs are tracked, appends
its output to the tape together with a closure computing the vector-Jacobian
product. ``Tape.backward`` walks that list in reverse creation order, which is
a valid topological order by construction.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible for a primitive."""


class ContractError(ValueError):
    """A precondition of an operation was violated."""


_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "node", "_tape", "_parents", "_vjp", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=np.float64, copy=True) if not isinstance(data, np.ndarray) or data.dtype != np.float64 else data
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self.node: Optional[int] = None
        self._tape: Optional[Tape] = None
        self._parents: tuple = ()
        self._vjp: Optional[Callable] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        from . import ops

        return ops.transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def tracked_on(self, tape: "Tape") -> bool:
        return self.requires_grad or self._tape is tape

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    # operator sugar; the primitives live in ops
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops

        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops

        if np.isscalar(other):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        from . import ops

        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def __rmatmul__(self, other):
        from . import ops

        return ops.matmul(other, self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


class Tape:
    """Ordered record of primitive applications for reverse-mode differentiation."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("tape stack corrupted")
        stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
        out.node = len(self.nodes)
        out._tape = self
        out._parents = tuple(parents)
        out._vjp = vjp
        self.nodes.append(out)
        return out

    def backward(self, loss: Tensor) -> dict:
        """Gradients of a scalar ``loss`` w.r.t. every leaf tensor with ``requires_grad``.

        Returns a dict keyed by the leaf tensor objects themselves.
        """
        if loss.data.size != 1:
            raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
        if loss._tape is not self:
            if loss.requires_grad:
                return {loss: Tensor(np.ones_like(loss.data))}
            raise ContractError("backward: loss was not recorded on this tape")

        pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, tuple[Tensor, np.ndarray]] = {}
        for node in reversed(self.nodes[: loss.node + 1]):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None:
                    continue
                if parent._tape is self:
                    key = id(parent)
                    prev = pending.get(key)
                    pending[key] = pg if prev is None else prev + pg
                elif parent.requires_grad:
                    key = id(parent)
                    if key in leaves:
                        leaves[key] = (parent, leaves[key][1] + pg)
                    else:
                        leaves[key] = (parent, pg)
        return {t: Tensor(g) for t, g in leaves.values()}


def backward(loss: Tensor) -> dict:
    """Run the reverse pass on the tape that recorded ``loss``."""
    tape = loss._tape
    if tape is None:
        if loss.data.size != 1:
            raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
        raise ContractError("backward: loss is not on an active tape")
    return tape.backward(loss)
