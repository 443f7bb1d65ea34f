# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: fused elementwise forward/backward passes, row-wise
softmax and the Adam update. Single pass over memory, no temporaries."""

from libc.math cimport exp, log1p, fabs, sqrt, tanh, pow

NAME = "compiled"


def tanh_fwd(double[::1] x, double[::1] out):
    cdef Py_ssize_t i, n = x.shape[0]
    with nogil:
        for i in range(n):
            out[i] = tanh(x[i])


def tanh_bwd(double[::1] y, double[::1] g, double[::1] gx):
    cdef Py_ssize_t i, n = y.shape[0]
    with nogil:
        for i in range(n):
            gx[i] += g[i] * (1.0 - y[i] * y[i])


def softplus_fwd(double[::1] x, double[::1] out):
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double xi
    with nogil:
        for i in range(n):
            xi = x[i]
            out[i] = (xi if xi > 0.0 else 0.0) + log1p(exp(-fabs(xi)))


def softplus_bwd(double[::1] x, double[::1] g, double[::1] gx):
    cdef Py_ssize_t i, n = x.shape[0]
    with nogil:
        for i in range(n):
            gx[i] += g[i] / (1.0 + exp(-x[i]))


def relu_fwd(double[::1] x, double[::1] out):
    cdef Py_ssize_t i, n = x.shape[0]
    with nogil:
        for i in range(n):
            out[i] = x[i] if x[i] > 0.0 else 0.0


def relu_bwd(double[::1] x, double[::1] g, double[::1] gx):
    cdef Py_ssize_t i, n = x.shape[0]
    with nogil:
        for i in range(n):
            if x[i] > 0.0:
                gx[i] += g[i]


def exp_bwd(double[::1] y, double[::1] g, double[::1] gx):
    cdef Py_ssize_t i, n = y.shape[0]
    with nogil:
        for i in range(n):
            gx[i] += g[i] * y[i]


def log_bwd(double[::1] x, double[::1] g, double[::1] gx):
    cdef Py_ssize_t i, n = x.shape[0]
    with nogil:
        for i in range(n):
            gx[i] += g[i] / x[i]


def sqrt_bwd(double[::1] y, double[::1] g, double[::1] gx):
    cdef Py_ssize_t i, n = y.shape[0]
    with nogil:
        for i in range(n):
            gx[i] += g[i] / (2.0 * y[i])


def fma_acc(double[::1] a, double[::1] b, double[::1] out):
    cdef Py_ssize_t i, n = a.shape[0]
    with nogil:
        for i in range(n):
            out[i] += a[i] * b[i]


def softmax_fwd(double[::1] x, double[::1] out, Py_ssize_t ncols):
    cdef Py_ssize_t r, j, base, nrows = x.shape[0] // ncols
    cdef double mx, s
    with nogil:
        for r in range(nrows):
            base = r * ncols
            mx = x[base]
            for j in range(1, ncols):
                if x[base + j] > mx:
                    mx = x[base + j]
            s = 0.0
            for j in range(ncols):
                out[base + j] = exp(x[base + j] - mx)
                s += out[base + j]
            for j in range(ncols):
                out[base + j] /= s


def softmax_bwd(double[::1] y, double[::1] g, double[::1] gx, Py_ssize_t ncols):
    cdef Py_ssize_t r, j, base, nrows = y.shape[0] // ncols
    cdef double dot
    with nogil:
        for r in range(nrows):
            base = r * ncols
            dot = 0.0
            for j in range(ncols):
                dot += g[base + j] * y[base + j]
            for j in range(ncols):
                gx[base + j] += y[base + j] * (g[base + j] - dot)


def adam_update(double[::1] p, double[::1] g, double[::1] m, double[::1] v,
                long t, double lr, double beta1, double beta2, double eps,
                double weight_decay):
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double bc1 = 1.0 - pow(beta1, t)
    cdef double bc2 = 1.0 - pow(beta2, t)
    cdef double mhat, vhat
    with nogil:
        for i in range(n):
            if weight_decay != 0.0:
                p[i] -= lr * weight_decay * p[i]
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
            mhat = m[i] / bc1
            vhat = v[i] / bc2
            p[i] -= lr * mhat / (sqrt(vhat) + eps)
