"""Dense float64 tensors with tape-based reverse-mode differentiation.

A :class:`Tape` records every primitive applied to traced tensors in
execution order (which is already topological); :func:`backward` replays
the record once, in reverse, accumulating gradients. Elementwise shapes
must match exactly or one operand must be a scalar; any other coercion has
to be spelled out with :func:`broadcast_to`. Every forward primitive
rejects non-finite outputs.
"""

import math
import threading
from contextlib import contextmanager

import numpy as np

from ..backend import kernels as K


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    """Dense row-major float64 array, optionally tracked by the active tape."""

    __slots__ = ("data", "requires_grad", "_traced")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = requires_grad
        self._traced = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def copy(self):
        return Tensor(self.data.copy(), requires_grad=self.requires_grad)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, traced={self._traced})"


class Node:
    """One recorded primitive: output tensor plus its backward closure."""

    __slots__ = ("op", "output", "bwd")

    def __init__(self, op, output, bwd):
        self.op = op
        self.output = output
        self.bwd = bwd


class Tape:
    """Ordered record of primitives; inputs of a node always precede it."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _tapes().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tapes().pop()
        assert popped is self


_STACK = threading.local()


def _tapes():
    tapes = getattr(_STACK, "tapes", None)
    if tapes is None:
        _STACK.tapes = tapes = []
    return tapes


def _active_tape():
    tapes = _tapes()
    return tapes[-1] if tapes else None


@contextmanager
def pause_tracing():
    """Temporarily disable tape recording (e.g. for constant label paths)."""
    tapes = _tapes()
    saved = list(tapes)
    tapes.clear()
    try:
        yield
    finally:
        tapes.extend(saved)


def _as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _finite_or_raise(op, arr):
    # a single reduction pass; any NaN/Inf poisons the sum
    if not math.isfinite(float(arr.sum())):
        raise NonFiniteError(f"non-finite output of op '{op}'")


def _emit(op, out_data, inputs, bwd):
    """Finalize a primitive: finiteness check, optional tape recording."""
    _finite_or_raise(op, out_data)
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None and any(t._traced for t in inputs):
        out._traced = True
        tape.nodes.append(Node(op, out, bwd))
    return out


def _slot(grads, t):
    s = grads.get(t)
    if s is None:
        s = np.zeros_like(t.data)
        grads[t] = s
    return s


def _flat(a):
    return a.reshape(-1)


# ---------------------------------------------------------------------------
# elementwise binary ops

def _binary_shapes(op, a, b):
    if a.data.shape == b.data.shape:
        return a.data.shape
    if a.data.shape == ():
        return b.data.shape
    if b.data.shape == ():
        return a.data.shape
    raise ShapeError(
        f"{op}: shapes {a.data.shape} and {b.data.shape} must match exactly "
        "(or one side must be a scalar)"
    )


def _acc_binary(grads, t, contrib):
    """Accumulate a full-shape contribution into t's slot, reducing if t is scalar."""
    if t.data.shape == () and contrib.shape != ():
        grads[t] = grads.get(t, np.zeros((), dtype=np.float64)) + contrib.sum()
    else:
        _slot(grads, t)
        grads[t] += contrib


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("add", a, b)
    out = a.data + b.data

    def bwd(g, grads):
        if a._traced:
            _acc_binary(grads, a, g)
        if b._traced:
            _acc_binary(grads, b, g)

    return _emit("add", out, (a, b), bwd)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("sub", a, b)
    out = a.data - b.data

    def bwd(g, grads):
        if a._traced:
            _acc_binary(grads, a, g)
        if b._traced:
            _acc_binary(grads, b, -g)

    return _emit("sub", out, (a, b), bwd)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("mul", a, b)
    out = a.data * b.data

    def bwd(g, grads):
        if a._traced:
            if a.data.shape == g.shape and b.data.shape == g.shape:
                K.fma_acc(_flat(g), _flat(b.data), _flat(_slot(grads, a)))
            else:
                _acc_binary(grads, a, g * b.data)
        if b._traced:
            if b.data.shape == g.shape and a.data.shape == g.shape:
                K.fma_acc(_flat(g), _flat(a.data), _flat(_slot(grads, b)))
            else:
                _acc_binary(grads, b, g * a.data)

    return _emit("mul", out, (a, b), bwd)


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("div", a, b)
    out = a.data / b.data

    def bwd(g, grads):
        if a._traced:
            _acc_binary(grads, a, g / b.data)
        if b._traced:
            _acc_binary(grads, b, -g * a.data / (b.data * b.data))

    return _emit("div", out, (a, b), bwd)


def neg(a):
    a = _as_tensor(a)
    out = -a.data

    def bwd(g, grads):
        if a._traced:
            _slot(grads, a)
            grads[a] -= g

    return _emit("neg", out, (a,), bwd)


def scale(a, s):
    """Multiply by a plain Python scalar (not differentiable in s)."""
    a = _as_tensor(a)
    s = float(s)
    out = a.data * s

    def bwd(g, grads):
        if a._traced:
            _slot(grads, a)
            grads[a] += g * s

    return _emit("scale", out, (a,), bwd)


# ---------------------------------------------------------------------------
# matmul

def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.data.shape, b.data.shape
    ok = (
        (len(sa) == 2 and len(sb) == 2 and sa[1] == sb[0])
        or (len(sa) == 3 and len(sb) == 2 and sa[2] == sb[0])
        or (len(sa) == 3 and len(sb) == 3 and sa[0] == sb[0] and sa[2] == sb[1])
    )
    if not ok:
        raise ShapeError(f"matmul: incompatible shapes {sa} @ {sb}")
    out = a.data @ b.data

    def bwd(g, grads):
        if a._traced:
            ga = g @ np.swapaxes(b.data, -1, -2)
            _slot(grads, a)
            grads[a] += ga
        if b._traced:
            if len(sa) == 3 and len(sb) == 2:
                gb = a.data.reshape(-1, sa[2]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
            _slot(grads, b)
            grads[b] += gb

    return _emit("matmul", out, (a, b), bwd)


def affine(x, w, b):
    """x @ w + b, the bias broadcast over leading axes (fused linear map)."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    sx, sw = x.data.shape, w.data.shape
    if len(sw) != 2 or len(sx) < 2 or sx[-1] != sw[0] or b.data.shape != (sw[1],):
        raise ShapeError(f"affine: incompatible shapes {sx} @ {sw} + {b.data.shape}")
    out = x.data @ w.data
    out += b.data

    def bwd(g, grads):
        if x._traced:
            _slot(grads, x)
            grads[x] += g @ w.data.T
        if w._traced:
            if len(sx) > 2:
                gw = x.data.reshape(-1, sx[-1]).T @ g.reshape(-1, sw[1])
            else:
                gw = x.data.T @ g
            _slot(grads, w)
            grads[w] += gw
        if b._traced:
            _slot(grads, b)
            grads[b] += g.reshape(-1, sw[1]).sum(axis=0)

    return _emit("affine", out, (x, w, b), bwd)


def swap_last2(a):
    a = _as_tensor(a)
    if a.data.ndim < 2:
        raise ShapeError(f"swap_last2: needs ndim >= 2, got {a.data.shape}")
    out = np.ascontiguousarray(np.swapaxes(a.data, -1, -2))

    def bwd(g, grads):
        if a._traced:
            _slot(grads, a)
            grads[a] += np.swapaxes(g, -1, -2)

    return _emit("swap_last2", out, (a,), bwd)


# ---------------------------------------------------------------------------
# elementwise unary ops (kernel-backed)

def tanh(a):
    # numpy's vectorized forward beats a scalar-libm loop; the fused
    # backward accumulation is where the kernel backend earns its keep
    a = _as_tensor(a)
    out = np.tanh(a.data)

    def bwd(g, grads):
        if a._traced:
            K.tanh_bwd(_flat(out), _flat(g), _flat(_slot(grads, a)))

    return _emit("tanh", out, (a,), bwd)


def relu(a):
    a = _as_tensor(a)
    out = np.maximum(a.data, 0.0)

    def bwd(g, grads):
        if a._traced:
            K.relu_bwd(_flat(a.data), _flat(g), _flat(_slot(grads, a)))

    return _emit("relu", out, (a,), bwd)


def softplus(a):
    a = _as_tensor(a)
    out = np.empty_like(a.data)
    K.softplus_fwd(_flat(a.data), _flat(out))

    def bwd(g, grads):
        if a._traced:
            K.softplus_bwd(_flat(a.data), _flat(g), _flat(_slot(grads, a)))

    return _emit("softplus", out, (a,), bwd)


def exp(a):
    a = _as_tensor(a)
    out = np.exp(a.data)

    def bwd(g, grads):
        if a._traced:
            K.exp_bwd(_flat(out), _flat(g), _flat(_slot(grads, a)))

    return _emit("exp", out, (a,), bwd)


def log(a):
    a = _as_tensor(a)
    out = np.log(a.data)

    def bwd(g, grads):
        if a._traced:
            K.log_bwd(_flat(a.data), _flat(g), _flat(_slot(grads, a)))

    return _emit("log", out, (a,), bwd)


def sqrt(a):
    a = _as_tensor(a)
    out = np.sqrt(a.data)

    def bwd(g, grads):
        if a._traced:
            K.sqrt_bwd(_flat(out), _flat(g), _flat(_slot(grads, a)))

    return _emit("sqrt", out, (a,), bwd)


# ---------------------------------------------------------------------------
# shape ops, reductions, softmax

def concat(tensors):
    """Concatenate along the last axis."""
    ts = [_as_tensor(t) for t in tensors]
    lead = ts[0].data.shape[:-1]
    for t in ts:
        if t.data.ndim != ts[0].data.ndim or t.data.shape[:-1] != lead:
            raise ShapeError(
                "concat: leading dims must agree, got "
                + ", ".join(str(t.data.shape) for t in ts)
            )
    out = np.concatenate([t.data for t in ts], axis=-1)
    widths = [t.data.shape[-1] for t in ts]

    def bwd(g, grads):
        ofs = 0
        for t, w in zip(ts, widths):
            if t._traced:
                _slot(grads, t)
                grads[t] += g[..., ofs : ofs + w]
            ofs += w

    return _emit("concat", out, tuple(ts), bwd)


def reshape(a, shape):
    a = _as_tensor(a)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.data.size and -1 not in shape:
        raise ShapeError(f"reshape: cannot view {a.data.shape} as {shape}")
    out = a.data.reshape(shape).copy()

    def bwd(g, grads):
        if a._traced:
            _slot(grads, a)
            grads[a] += g.reshape(a.data.shape)

    return _emit("reshape", out, (a,), bwd)


def broadcast_to(a, shape):
    """Explicitly tile a tensor up to `shape` (trailing dims must match)."""
    a = _as_tensor(a)
    shape = tuple(int(s) for s in shape)
    sa = a.data.shape
    if sa != () and (len(sa) > len(shape) or shape[len(shape) - len(sa) :] != sa):
        raise ShapeError(f"broadcast_to: {sa} is not a trailing slice of {shape}")
    out = np.ascontiguousarray(np.broadcast_to(a.data, shape))
    n_lead = len(shape) - len(sa)

    def bwd(g, grads):
        if a._traced:
            contrib = g.sum(axis=tuple(range(n_lead))) if n_lead else g
            _slot(grads, a)
            grads[a] += contrib.reshape(sa)

    return _emit("broadcast_to", out, (a,), bwd)


def _reduce(op, a, axis, keepdims, mean):
    a = _as_tensor(a)
    if axis is not None and not (-a.data.ndim <= axis < a.data.ndim):
        raise ShapeError(f"{op}: axis {axis} out of range for {a.data.shape}")
    if mean:
        out = a.data.mean(axis=axis, keepdims=keepdims)
    else:
        out = a.data.sum(axis=axis, keepdims=keepdims)
    out = np.asarray(out, dtype=np.float64)
    denom = a.data.size if axis is None else a.data.shape[axis]

    def bwd(g, grads):
        if not a._traced:
            return
        if axis is None:
            gg = np.broadcast_to(g, a.data.shape)
        else:
            gexp = g if keepdims else np.expand_dims(g, axis)
            gg = np.broadcast_to(gexp, a.data.shape)
        _slot(grads, a)
        if mean:
            grads[a] += gg / denom
        else:
            grads[a] += gg

    return _emit(op, out, (a,), bwd)


def tsum(a, axis=None, keepdims=False):
    return _reduce("sum", a, axis, keepdims, mean=False)


def tmean(a, axis=None, keepdims=False):
    return _reduce("mean", a, axis, keepdims, mean=True)


def softmax(a):
    """Softmax over the last axis."""
    a = _as_tensor(a)
    if a.data.ndim < 1:
        raise ShapeError("softmax: needs at least one axis")
    ncols = a.data.shape[-1]
    out = np.empty_like(a.data)
    K.softmax_fwd(_flat(a.data), _flat(out), ncols)

    def bwd(g, grads):
        if a._traced:
            K.softmax_bwd(_flat(out), _flat(g), _flat(_slot(grads, a)), ncols)

    return _emit("softmax", out, (a,), bwd)


# ---------------------------------------------------------------------------
# backward driver

def backward(tape, loss):
    """Gradients of a scalar loss w.r.t. every traced tensor on the tape.

    Returns a mapping from Tensor to gradient array; tensors that never
    influenced the loss are simply absent (their gradient is zero).
    """
    if loss.data.shape != ():
        raise ShapeError(f"backward: loss must be scalar, got {loss.data.shape}")
    grads = {loss: np.ones((), dtype=np.float64)}
    for node in reversed(tape.nodes):
        g = grads.pop(node.output, None)
        if g is None:
            continue
        node.bwd(np.asarray(g), grads)
    return grads
