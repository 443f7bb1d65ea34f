"""Differentiable probability primitives: Gaussian NLL, diagonal-Gaussian KL
and the reparameterization trick. All are composed from tape primitives so
gradients flow through them."""

import numpy as np

from . import tensor as T

LOG_2PI = float(np.log(2.0 * np.pi))


def gaussian_nll(y, mu, var):
    """Average negative log-likelihood of y under N(mu, diag var).

    Computes (1/(2N)) * sum_i sum_j [log(2*pi*var_ij) + (y_ij-mu_ij)^2/var_ij]
    where N is the leading dimension (1 for a single vector).
    """
    y, mu, var = T._as_tensor(y), T._as_tensor(mu), T._as_tensor(var)
    if not (y.shape == mu.shape == var.shape):
        raise T.ShapeError(
            f"gaussian_nll: shapes differ: y {y.shape}, mu {mu.shape}, var {var.shape}"
        )
    if np.any(var.data <= 0.0):
        raise ValueError("gaussian_nll: variance must be positive elementwise")
    n = y.shape[0] if y.data.ndim > 1 else 1
    resid = T.sub(y, mu)
    quad = T.div(T.mul(resid, resid), var)
    logdet = T.add(T.log(var), LOG_2PI)
    total = T.tsum(T.add(logdet, quad))
    return T.scale(total, 0.5 / n)


def diag_gaussian_kl(mu1, var1, mu2, var2):
    """KL( N(mu1, var1) || N(mu2, var2) ) for diagonal Gaussians, summed over
    every element (so batched inputs yield the batch total)."""
    mu1, var1 = T._as_tensor(mu1), T._as_tensor(var1)
    mu2, var2 = T._as_tensor(mu2), T._as_tensor(var2)
    if not (mu1.shape == var1.shape == mu2.shape == var2.shape):
        raise T.ShapeError("diag_gaussian_kl: all four inputs must share a shape")
    if np.any(var1.data <= 0.0) or np.any(var2.data <= 0.0):
        raise ValueError("diag_gaussian_kl: variances must be positive")
    log_ratio = T.log(T.div(var2, var1))
    dmu = T.sub(mu1, mu2)
    num = T.add(var1, T.mul(dmu, dmu))
    terms = T.sub(T.add(log_ratio, T.div(num, var2)), 1.0)
    return T.scale(T.tsum(terms), 0.5)


def reparameterized_sample(mu, var, rng):
    """Draw z = mu + sqrt(var) * eps with eps ~ N(0, I) from `rng`.

    The noise is a constant, so gradients flow to mu and var only.
    """
    mu, var = T._as_tensor(mu), T._as_tensor(var)
    if mu.shape != var.shape:
        raise T.ShapeError(f"reparameterized_sample: mu {mu.shape} vs var {var.shape}")
    if np.any(var.data <= 0.0):
        raise ValueError("reparameterized_sample: variance must be positive")
    eps = T.Tensor(rng.standard_normal(mu.shape))
    return T.add(mu, T.mul(T.sqrt(var), eps))
