"""Minimal float64 tensor library with tape-based reverse-mode differentiation."""

from .checkpoint import ChecksumError, load_checkpoint, save_checkpoint
from .nn import Dense, Module
from .ops import (
    add,
    concat,
    l2sq,
    matmul,
    mean,
    mse,
    mul,
    relu,
    reshape,
    scale,
    sigmoid,
    slice,
    softmax,
    stop_gradient,
    sub,
    sum,
    tanh,
    transpose,
)
from .optim import Adam, NonFiniteGradientError, OptimState, optim_step
from .tensor import ContractError, DimensionError, Tape, Tensor, active_tape, as_tensor, backward

__all__ = [
    "Adam",
    "ChecksumError",
    "ContractError",
    "Dense",
    "DimensionError",
    "Module",
    "NonFiniteGradientError",
    "OptimState",
    "Tape",
    "Tensor",
    "active_tape",
    "add",
    "as_tensor",
    "backward",
    "concat",
    "l2sq",
    "load_checkpoint",
    "matmul",
    "mean",
    "mse",
    "mul",
    "optim_step",
    "relu",
    "reshape",
    "save_checkpoint",
    "scale",
    "sigmoid",
    "slice",
    "softmax",
    "stop_gradient",
    "sub",
    "sum",
    "tanh",
    "transpose",
]
