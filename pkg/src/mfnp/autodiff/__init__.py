"""Minimal reverse-mode autodiff over dense float64 tensors."""

from .checkpoint import load_arrays, save_arrays, save_parameters
from .functional import LOG_2PI, diag_gaussian_kl, gaussian_nll, reparameterized_sample
from .optim import AdamState, ParameterSet, adam_step
from .tensor import (
    NonFiniteError,
    pause_tracing,
    ShapeError,
    Tape,
    Tensor,
    add,
    affine,
    backward,
    broadcast_to,
    concat,
    div,
    exp,
    log,
    matmul,
    mul,
    neg,
    relu,
    reshape,
    scale,
    softmax,
    softplus,
    sqrt,
    sub,
    swap_last2,
    tanh,
    tmean,
    tsum,
)

__all__ = [
    "AdamState",
    "LOG_2PI",
    "NonFiniteError",
    "ParameterSet",
    "ShapeError",
    "Tape",
    "Tensor",
    "adam_step",
    "add",
    "affine",
    "backward",
    "broadcast_to",
    "concat",
    "diag_gaussian_kl",
    "div",
    "exp",
    "gaussian_nll",
    "load_arrays",
    "log",
    "matmul",
    "mul",
    "neg",
    "pause_tracing",
    "relu",
    "reparameterized_sample",
    "reshape",
    "save_arrays",
    "save_parameters",
    "scale",
    "softmax",
    "softplus",
    "sqrt",
    "sub",
    "swap_last2",
    "tanh",
    "tmean",
    "tsum",
]
