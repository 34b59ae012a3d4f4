"""Tensor arithmetic, reverse-mode differentiation, and the Adam optimizer."""

from .optim import Adam
from .tensor import (
    Tape,
    Tensor,
    add,
    backward,
    concat,
    dropout,
    getitem,
    leaky_relu,
    matmul,
    mul,
    neg,
    relu,
    reshape,
    sigmoid,
    softmax_masked,
    sub,
    tanh,
    tmean,
    transpose,
    tsum,
)

__all__ = [
    "Adam",
    "Tape",
    "Tensor",
    "add",
    "backward",
    "concat",
    "dropout",
    "getitem",
    "leaky_relu",
    "matmul",
    "mul",
    "neg",
    "relu",
    "reshape",
    "sigmoid",
    "softmax_masked",
    "sub",
    "tanh",
    "tmean",
    "transpose",
    "tsum",
]
