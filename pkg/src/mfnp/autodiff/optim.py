"""Named parameter collections and the Adam optimizer."""

from dataclasses import dataclass, field

import numpy as np

from ..backend import kernels as K
from .tensor import Tensor


class ParameterSet:
    """Ordered map from path-like names to trainable tensors.

    The version counter increments once per applied optimizer step; a
    published snapshot (``copy()``) is never mutated afterwards.
    """

    def __init__(self):
        self._params = {}
        self.version = 0

    def add(self, name, tensor):
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        tensor.requires_grad = True
        tensor._traced = True
        self._params[name] = tensor
        return tensor

    def names(self):
        return list(self._params)

    def tensors(self):
        return list(self._params.values())

    def items(self):
        return self._params.items()

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def copy(self):
        out = ParameterSet()
        for name, t in self._params.items():
            out.add(name, Tensor(t.data.copy()))
        out.version = self.version
        return out

    def load_arrays(self, arrays):
        """Overwrite parameter data in place from a name -> array mapping."""
        for name, arr in arrays.items():
            dst = self._params[name]
            if dst.data.shape != arr.shape:
                raise ValueError(
                    f"parameter {name}: shape {arr.shape} != {dst.data.shape}"
                )
            dst.data[...] = arr


@dataclass
class AdamState:
    """Per-parameter moment buffers plus the optimizer hyperparameters."""

    lr: float = 1e-3
    weight_decay: float = 5e-7
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0 or self.beta1 <= 0 or self.beta2 <= 0 or self.eps <= 0:
            raise ValueError("Adam hyperparameters must be strictly positive")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be nonnegative")


def adam_step(params, grads, state):
    """Apply one Adam update (bias-corrected, decoupled weight decay).

    `grads` maps parameter names to gradient arrays; missing names mean a
    zero gradient and leave the parameter untouched except for weight decay.
    Returns True when the step was applied, False when a non-finite gradient
    made it skip the whole step.
    """
    for name, g in grads.items():
        if not np.isfinite(float(np.asarray(g).sum())):
            return False
    state.t += 1
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        else:
            g = np.asarray(g, dtype=np.float64)
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape mismatch for {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        K.adam_update(
            p.data.reshape(-1),
            np.ascontiguousarray(g).reshape(-1),
            m.reshape(-1),
            v.reshape(-1),
            state.t,
            state.lr,
            state.beta1,
            state.beta2,
            state.eps,
            state.weight_decay,
        )
    params.version += 1
    return True
