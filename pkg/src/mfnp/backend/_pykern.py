"""Pure-numpy implementations of the hot kernels.

Same call signatures as the compiled core in ``_ckern``; all arrays are
C-contiguous float64. Backward kernels accumulate into their output
argument so callers never allocate per-op temporaries for accumulation.
"""

import numpy as np

NAME = "python"


def tanh_fwd(x, out):
    np.tanh(x, out=out)


def tanh_bwd(y, g, gx):
    # d/dx tanh = 1 - y^2
    gx += g * (1.0 - y * y)


def softplus_fwd(x, out):
    # log(1 + e^x) in the overflow-safe form max(x, 0) + log1p(e^{-|x|})
    np.abs(x, out=out)
    np.negative(out, out=out)
    np.exp(out, out=out)
    np.log1p(out, out=out)
    out += np.maximum(x, 0.0)


def softplus_bwd(x, g, gx):
    # d/dx softplus = sigmoid(x)
    gx += g / (1.0 + np.exp(-x))


def relu_fwd(x, out):
    np.maximum(x, 0.0, out=out)


def relu_bwd(x, g, gx):
    gx += g * (x > 0.0)


def exp_bwd(y, g, gx):
    gx += g * y


def log_bwd(x, g, gx):
    gx += g / x


def sqrt_bwd(y, g, gx):
    gx += g / (2.0 * y)


def fma_acc(a, b, out):
    """out += a * b elementwise."""
    out += a * b


def softmax_fwd(x, out, ncols):
    rows = x.reshape(-1, ncols)
    o = out.reshape(-1, ncols)
    np.subtract(rows, rows.max(axis=1, keepdims=True), out=o)
    np.exp(o, out=o)
    o /= o.sum(axis=1, keepdims=True)


def softmax_bwd(y, g, gx, ncols):
    yr = y.reshape(-1, ncols)
    gr = g.reshape(-1, ncols)
    dot = (gr * yr).sum(axis=1, keepdims=True)
    gx += (yr * (gr - dot)).ravel()


def adam_update(p, g, m, v, t, lr, beta1, beta2, eps, weight_decay):
    """Fused Adam step with bias correction and decoupled weight decay.

    Weight decay shrinks the parameter before the moment update is applied.
    """
    if weight_decay != 0.0:
        p -= (lr * weight_decay) * p
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    p -= lr * mhat / (np.sqrt(vhat) + eps)
