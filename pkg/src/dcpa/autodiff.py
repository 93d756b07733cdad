"""Minimal dense-tensor reverse-mode autodiff on numpy.

The graph built during forward evaluation is the tape: each Tensor produced
by a primitive keeps its parents and a backward closure, in execution order.
backward() walks the reverse topological order, accumulates gradients into
requires_grad leaves, and frees the tape. Precision is a build-wide switch:
float32 for training and inference, float64 for finite-difference gradient
validation.

Supported primitives: matmul, add/sub/mul/div (numpy broadcasting), neg,
transpose, reshape, concat, slicing, sum/mean over an axis, sqrt, sin, cos,
exp, tanh, gelu (tanh approximation), layer_norm over one axis.
"""

from __future__ import annotations

import contextlib
import math
import threading

import numpy as np

from .errors import NonScalarError, ShapeError

_DTYPE = np.float32
# per-thread so concurrent inference under no_grad cannot race the flag
_TLS = threading.local()

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def _grad_enabled():
    return getattr(_TLS, "grad_enabled", True)


def set_default_dtype(dtype):
    global _DTYPE
    if dtype not in (np.float32, np.float64):
        raise ValueError("dtype must be float32 or float64")
    _DTYPE = dtype


def get_default_dtype():
    return _DTYPE


@contextlib.contextmanager
def use_dtype(dtype):
    prev = _DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (per thread)."""
    prev = _grad_enabled()
    _TLS.grad_enabled = False
    try:
        yield
    finally:
        _TLS.grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward",
                 "_grad_owned")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._grad_owned = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self):
        """Value without tape history; gradients stop here."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def backward(self):
        backward(self)

    # convenience methods mirroring the functional API
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _lift(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=_DTYPE))


def _make(data, parents, backward_fn):
    out = Tensor(data)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accumulate(tensor, grad):
    if not tensor.requires_grad:
        return  # constant branch: no downstream consumer of this gradient
    if tensor.grad is None:
        # store by reference; closures never mutate gradients they hand out
        tensor.grad = np.asarray(grad)
        tensor._grad_owned = False
    elif tensor._grad_owned:
        tensor.grad += grad
    else:
        tensor.grad = tensor.grad + grad
        tensor._grad_owned = True


def _owned_grad_buffer(tensor):
    """Gradient buffer of the tensor that is safe to mutate in place."""
    if tensor.grad is None:
        tensor.grad = np.zeros_like(tensor.data)
        tensor._grad_owned = True
    elif not tensor._grad_owned:
        tensor.grad = tensor.grad.copy()
        tensor._grad_owned = True
    return tensor.grad


def _unbroadcast(grad, shape):
    """Reduce a broadcast gradient back to the operand's shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def backward(out: Tensor):
    """Reverse accumulation from a scalar output; consumes the tape."""
    if out.data.size != 1:
        raise NonScalarError(
            f"backward requires a scalar output, got shape {out.data.shape}")
    topo = []
    visited = set()
    stack = [(out, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    out.grad = np.ones_like(out.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    # free the tape; interior nodes drop their gradients, leaves keep them
    for node in topo:
        if node._backward is not None:
            node._backward = None
            node._parents = ()
            if node is not out:
                node.grad = None


# ---------------------------------------------------------------------------
# primitives

def add(a, b):
    a, b = _lift(a), _lift(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))
    return _make(data, (a, b), bwd)


def sub(a, b):
    a, b = _lift(a), _lift(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}")

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))
    return _make(data, (a, b), bwd)


def mul(a, b):
    a, b = _lift(a), _lift(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")

    def bwd(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))
    return _make(data, (a, b), bwd)


def div(a, b):
    a, b = _lift(a), _lift(b)
    try:
        data = a.data / b.data
    except ValueError:
        raise ShapeError(f"div: incompatible shapes {a.shape} and {b.shape}")

    def bwd(g):
        _accumulate(a, _unbroadcast(g / b.data, a.data.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))
    return _make(data, (a, b), bwd)


def neg(a):
    a = _lift(a)

    def bwd(g):
        _accumulate(a, -g)
    return _make(-a.data, (a,), bwd)


def matmul(a, b):
    a, b = _lift(a), _lift(b)
    if a.data.ndim < 1 or b.data.ndim < 1:
        raise ShapeError(f"matmul: operands must be at least 1-d, "
                         f"got {a.shape} and {b.shape}")
    # lift 1-d operands to matrices so the gradient rules are uniform
    a2 = a.data[None, :] if a.data.ndim == 1 else a.data
    b2 = b.data[:, None] if b.data.ndim == 1 else b.data
    try:
        data2 = a2 @ b2
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    squeeze = []
    if a.data.ndim == 1:
        squeeze.append(-2)
    if b.data.ndim == 1:
        squeeze.append(-1)
    data = np.squeeze(data2, axis=tuple(squeeze)) if squeeze else data2

    def bwd(g):
        g2 = g.reshape(data2.shape)
        ga = g2 @ np.swapaxes(b2, -1, -2)
        gb = np.swapaxes(a2, -1, -2) @ g2
        _accumulate(a, _unbroadcast(ga, a2.shape).reshape(a.data.shape))
        _accumulate(b, _unbroadcast(gb, b2.shape).reshape(b.data.shape))
    return _make(data, (a, b), bwd)


def transpose(a, axes=None):
    a = _lift(a)
    data = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def bwd(g):
        _accumulate(a, np.transpose(g, inv))
    return _make(data, (a,), bwd)


def reshape(a, shape):
    a = _lift(a)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {shape}")

    def bwd(g):
        _accumulate(a, g.reshape(a.data.shape))
    return _make(data, (a,), bwd)


def concat(tensors, axis=0):
    tensors = [_lift(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(
            f"concat: incompatible shapes {[t.shape for t in tensors]} on axis {axis}")
    sizes = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def bwd(g):
        for t, piece in zip(tensors, np.split(g, sizes, axis=axis)):
            _accumulate(t, piece)
    return _make(data, tuple(tensors), bwd)


def _is_basic_key(key):
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(p, (slice, int)) or p is None or p is Ellipsis
               for p in parts)


def take(a, key):
    a = _lift(a)
    data = a.data[key]
    basic = _is_basic_key(key)

    def bwd(g):
        if not a.requires_grad:
            return
        buf = _owned_grad_buffer(a)
        if basic:
            buf[key] += g   # no duplicate indices possible with basic slicing
        else:
            np.add.at(buf, key, g)
    return _make(data, (a,), bwd)


def tsum(a, axis=None, keepdims=False):
    a = _lift(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.data.shape).copy())
    return _make(data, (a,), bwd)


def tmean(a, axis=None, keepdims=False):
    a = _lift(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    out = tsum(a, axis=axis, keepdims=keepdims)
    return mul(out, 1.0 / n)


def sqrt(a):
    a = _lift(a)
    data = np.sqrt(a.data)

    def bwd(g):
        _accumulate(a, g * (0.5 / np.maximum(data, 1e-300)))
    return _make(data, (a,), bwd)


def sin(a):
    a = _lift(a)

    def bwd(g):
        _accumulate(a, g * np.cos(a.data))
    return _make(np.sin(a.data), (a,), bwd)


def cos(a):
    a = _lift(a)

    def bwd(g):
        _accumulate(a, -g * np.sin(a.data))
    return _make(np.cos(a.data), (a,), bwd)


def exp(a):
    a = _lift(a)
    data = np.exp(a.data)

    def bwd(g):
        _accumulate(a, g * data)
    return _make(data, (a,), bwd)


def tanh(a):
    a = _lift(a)
    data = np.tanh(a.data)

    def bwd(g):
        _accumulate(a, g * (1.0 - data * data))
    return _make(data, (a,), bwd)


def gelu(a):
    """GELU, tanh approximation: 0.5 x (1 + tanh(c (x + 0.044715 x^3)))
    with c = sqrt(2/pi). Written with in-place array ops; integer-power
    ufuncs on float32 are an order of magnitude slower."""
    a = _lift(a)
    x = a.data
    u = x * x
    u *= _GELU_A
    u += 1.0
    u *= x
    u *= _GELU_C
    t = np.tanh(u, out=u)
    data = t + 1.0
    data *= x
    data *= 0.5

    def bwd(g):
        du = x * x
        du *= 3.0 * _GELU_A
        du += 1.0
        du *= _GELU_C
        grad = t * t
        np.subtract(1.0, grad, out=grad)
        grad *= du
        grad *= x
        grad += 1.0
        grad += t
        grad *= 0.5
        grad *= g
        _accumulate(a, grad)
    return _make(data, (a,), bwd)


def layer_norm(a, axis=-1, eps=1e-5):
    """Normalize to zero mean / unit variance along one axis (no affine)."""
    a = _lift(a)
    x = a.data
    mean = x.mean(axis=axis, keepdims=True)
    xc = x - mean
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc
    xhat *= inv

    def bwd(g):
        m1 = g.mean(axis=axis, keepdims=True)
        m2 = (g * xhat).mean(axis=axis, keepdims=True)
        gx = g - m1
        gx -= xhat * m2
        gx *= inv
        _accumulate(a, gx)
    return _make(xhat, (a,), bwd)


def layer_norm_affine(a, gain, bias, axis=-1, eps=1e-5):
    """layer_norm(a) * gain + bias fused into one primitive application."""
    a, gain, bias = _lift(a), _lift(gain), _lift(bias)
    x = a.data
    mean = x.mean(axis=axis, keepdims=True)
    xhat = x - mean
    var = (xhat * xhat).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat *= inv
    out = xhat * gain.data
    out += bias.data

    def bwd(g):
        _accumulate(bias, _unbroadcast(g, bias.data.shape))
        _accumulate(gain, _unbroadcast(g * xhat, gain.data.shape))
        gx = g * gain.data
        m1 = gx.mean(axis=axis, keepdims=True)
        m2 = (gx * xhat).mean(axis=axis, keepdims=True)
        gx -= m1
        gx -= xhat * m2
        gx *= inv
        _accumulate(a, gx)
    return _make(out, (a, gain, bias), bwd)


def linear(a, weight, bias=None):
    """a @ weight (+ bias) with the bias add fused onto the gemm output."""
    if bias is None:
        return matmul(a, weight)
    a, weight, bias = _lift(a), _lift(weight), _lift(bias)
    try:
        data = a.data @ weight.data
    except ValueError:
        raise ShapeError(f"linear: incompatible shapes {a.shape} and {weight.shape}")
    data += bias.data

    def bwd(g):
        _accumulate(bias, _unbroadcast(g, bias.data.shape))
        _accumulate(a, _unbroadcast(g @ weight.data.T, a.data.shape))
        ga = a.data
        if ga.ndim > 2:
            ga = ga.reshape(-1, ga.shape[-1])
            _accumulate(weight, ga.T @ g.reshape(-1, g.shape[-1]))
        else:
            _accumulate(weight, ga.T @ g)
    return _make(data, (a, weight, bias), bwd)


PRIMITIVES = {
    "matmul": matmul, "add": add, "sub": sub, "mul": mul, "div": div,
    "neg": neg, "transpose": transpose, "reshape": reshape, "concat": concat,
    "slice": take, "sum": tsum, "mean": tmean, "sqrt": sqrt, "sin": sin,
    "cos": cos, "exp": exp, "tanh": tanh, "gelu": gelu, "layer_norm": layer_norm,
}


def grad_check(fn, inputs, eps=1e-5):
    """Worst relative error between reverse-mode and central differences.

    fn maps a list of float64 arrays (wrapped as Tensors) to a scalar Tensor.
    Relative error per coordinate uses max(|ad|, |fd|, 1e-12) as denominator.
    """
    with use_dtype(np.float64):
        tensors = [Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)
                   for x in inputs]
        out = fn(tensors)
        backward(out)
        analytic = [t.grad if t.grad is not None else np.zeros_like(t.data)
                    for t in tensors]

        worst = 0.0
        for which, base in enumerate(inputs):
            base = np.asarray(base, dtype=np.float64)
            flat = base.ravel()
            for idx in range(flat.size):
                bumped_plus = flat.copy()
                bumped_plus[idx] += eps
                bumped_minus = flat.copy()
                bumped_minus[idx] -= eps
                args_p = [bumped_plus.reshape(base.shape) if i == which else inputs[i]
                          for i in range(len(inputs))]
                args_m = [bumped_minus.reshape(base.shape) if i == which else inputs[i]
                          for i in range(len(inputs))]
                with no_grad():
                    f_p = float(fn([Tensor(np.asarray(x, dtype=np.float64))
                                    for x in args_p]).data)
                    f_m = float(fn([Tensor(np.asarray(x, dtype=np.float64))
                                    for x in args_m]).data)
                fd = (f_p - f_m) / (2.0 * eps)
                ad = float(analytic[which].ravel()[idx])
                denom = max(abs(ad), abs(fd), 1e-12)
                worst = max(worst, abs(ad - fd) / denom)
    return worst
