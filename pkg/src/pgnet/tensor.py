"""Dense tensors with tape-based reverse-mode differentiation.

Every differentiable kernel the network needs lives here: elementwise
algebra, reductions, convolution, activations, batch normalization and
bicubic resampling. Operations executed while gradients are enabled are
appended to a thread-local tape; :func:`backward` replays the tape in
exact reverse order and then clears it.

Storage is 32-bit by default. Arrays passed in as float64 stay float64,
which is what the finite-difference gradient checks rely on.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ContractError, DimensionError, NumericalError

LEAKY_SLOPE = 0.2
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
CUBIC_A = -0.5

# Raise on NaN/Inf in op outputs.
CHECK_FINITE = True


class _Tape(threading.local):
    def __init__(self):
        self.nodes = []
        self.enabled = True


_tape = _Tape()


@contextmanager
def no_grad():
    """Disable recording for the enclosed block."""
    prev = _tape.enabled
    _tape.enabled = False
    try:
        yield
    finally:
        _tape.enabled = prev


def tape_length() -> int:
    return len(_tape.nodes)


def clear_tape() -> None:
    _tape.nodes.clear()


def _as_float_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is None:
        keep = isinstance(data, (np.ndarray, np.generic)) and arr.dtype in (np.float32, np.float64)
        dtype = arr.dtype if keep else np.float32
    return np.ascontiguousarray(arr, dtype=dtype)


class Tensor:
    """N-d float array that can take part in a recorded computation."""

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_float_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._is_leaf = True

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Parameter(Tensor):
    """Trainable leaf tensor with a persistent, same-shape gradient accumulator."""

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _check(arr: np.ndarray, opname: str) -> None:
    if CHECK_FINITE and not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite value produced by {opname}")


def op(out_data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, name: str = "op") -> Tensor:
    """Wrap ``out_data`` as the result of a differentiable operation.

    ``backward_fn(grad_out)`` must return one gradient (or None) per parent.
    The node is recorded only when recording is enabled and some parent
    requires gradients.
    """
    _check(out_data, name)
    needs = _tape.enabled and any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=needs, dtype=out_data.dtype)
    out._is_leaf = False
    if needs:
        _tape.nodes.append((out, tuple(parents), backward_fn))
    return out


def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(leaf) into every reachable leaf's ``grad`` (+=)."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    nodes = _tape.nodes
    if not nodes:
        raise ContractError("backward called with an empty tape")
    pending = {id(loss): np.ones_like(loss.data)}
    try:
        for out, parents, fn in reversed(nodes):
            g = pending.pop(id(out), None)
            if g is None:
                continue
            grads = fn(g)
            for p, pg in zip(parents, grads):
                if pg is None or not p.requires_grad:
                    continue
                if p._is_leaf:
                    if p.grad is None:
                        p.grad = np.array(pg, dtype=p.dtype, copy=True)
                    else:
                        p.grad += pg
                else:
                    key = id(p)
                    if key in pending:
                        pending[key] = pending[key] + pg
                    else:
                        pending[key] = pg
    finally:
        nodes.clear()


# ---------------------------------------------------------------------------
# elementwise algebra


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, dtype=a.dtype)
    if isinstance(b, Tensor):
        return Tensor(a, dtype=b.dtype), b
    return Tensor(a), Tensor(b)


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return op(a.data + b.data, (a, b),
              lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return op(a.data - b.data, (a, b),
              lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return op(a.data * b.data, (a, b),
              lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data
    return op(out, (a, b),
              lambda g: (_unbroadcast(g / b.data, a.shape),
                         _unbroadcast(-g * out / b.data, b.shape)), "div")


def neg(a: Tensor) -> Tensor:
    return op(-a.data, (a,), lambda g: (-g,), "neg")


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims), dtype=a.dtype)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return op(out, (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    return op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    edges = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(np.take(g, np.arange(edges[i], edges[i + 1]), axis=axis) for i in range(len(tensors)))

    return op(out, tensors, bw, "concat")


# ---------------------------------------------------------------------------
# activations


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ConfigError(f"leaky slope must be in (0, 1), got {slope}")
    pos = x.data > 0
    out = np.where(pos, x.data, x.data * x.dtype.type(slope))
    return op(out, (x,), lambda g: (np.where(pos, g, g * x.dtype.type(slope)),), "leaky_relu")


def relu(x: Tensor) -> Tensor:
    # gradient 0 at exactly 0
    pos = x.data > 0
    return op(np.where(pos, x.data, 0).astype(x.dtype), (x,), lambda g: (np.where(pos, g, 0).astype(g.dtype),), "relu")


def _stable_sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _stable_sigmoid(x.data)
    return op(s, (x,), lambda g: (g * s * (1 - s),), "sigmoid")


def channel_std(x: Tensor) -> Tensor:
    """Population standard deviation over axis 1, kept as a singleton axis.

    The derivative is taken as 0 where the deviation is exactly 0.
    """
    c = x.shape[1]
    mu = x.data.mean(axis=1, keepdims=True)
    dev = x.data - mu
    std = np.sqrt((dev * dev).mean(axis=1, keepdims=True))

    def bw(g):
        safe = np.where(std > 0, std, 1)
        return (np.where(std > 0, g * dev / (c * safe), 0).astype(x.dtype),)

    return op(std.astype(x.dtype), (x,), bw, "channel_std")


# ---------------------------------------------------------------------------
# convolution


def conv_output_extent(n: int, k: int, stride: int, padding: int) -> int:
    span = n + 2 * padding - k
    if span < 0 or span % stride:
        raise ConfigError(
            f"extent {n} with kernel {k}, stride {stride}, padding {padding} gives a non-integral output")
    return span // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x`` (b, c_in, h, w) with ``weight`` (c_out, c_in, k, k)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    b, ci, h, w = x.shape
    co, wci, k, k2 = weight.shape
    if wci != ci or k != k2:
        raise DimensionError(f"weight {weight.shape} incompatible with input {x.shape}")
    if bias is not None and bias.shape != (co,):
        raise DimensionError(f"bias shape {bias.shape} != ({co},)")
    if k < 1 or stride < 1 or padding < 0:
        raise ConfigError(f"bad conv geometry k={k} stride={stride} padding={padding}")
    oh = conv_output_extent(h, k, stride, padding)
    ow = conv_output_extent(w, k, stride, padding)
    wmat = weight.data.reshape(co, ci * k * k)

    if k == 1 and stride == 1 and padding == 0:
        xm = x.data.transpose(0, 2, 3, 1).reshape(-1, ci)
        out = xm @ wmat.T
        if bias is not None:
            out = out + bias.data
        out = out.reshape(b, h, w, co).transpose(0, 3, 1, 2)

        def bw(g):
            gm = g.transpose(0, 2, 3, 1).reshape(-1, co)
            dx = (gm @ wmat).reshape(b, h, w, ci).transpose(0, 3, 1, 2)
            dw = (gm.T @ xm).reshape(weight.shape)
            db = gm.sum(axis=0) if bias is not None else None
            return dx, dw, db
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :oh, :ow]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * oh * ow, ci * k * k)
        out = cols @ wmat.T
        if bias is not None:
            out = out + bias.data
        out = out.reshape(b, oh, ow, co).transpose(0, 3, 1, 2)

        def bw(g):
            gm = g.transpose(0, 2, 3, 1).reshape(-1, co)
            dw = (gm.T @ cols).reshape(weight.shape)
            db = gm.sum(axis=0) if bias is not None else None
            dcols = (gm @ wmat).reshape(b, oh, ow, ci, k, k)
            dxp = np.zeros(xp.shape, dtype=x.dtype)
            for i in range(k):
                for j in range(k):
                    dxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += \
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            dx = dxp[:, :, padding:padding + h, padding:padding + w] if padding else dxp
            return dx, dw, db

    out = np.ascontiguousarray(out, dtype=x.dtype)
    parents = (x, weight) if bias is None else (x, weight, bias)
    return op(out, parents, bw, "conv2d")


# ---------------------------------------------------------------------------
# normalization


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = BN_MOMENTUM, eps: float = BN_EPS) -> Tensor:
    """Per-channel batch normalization over (batch, height, width).

    In training mode the running statistics are updated in place
    (unbiased variance, as is conventional).
    """
    b, c, h, w = x.shape
    shp = (1, c, 1, 1)
    g_ = gamma.data.reshape(shp)
    if training:
        n = b * h * w
        if n < 2:
            raise NumericalError(f"batch_norm in train mode needs >= 2 values per channel, got {n}")
        mu = x.data.mean(axis=(0, 2, 3), keepdims=True)
        xc = x.data - mu
        var = (xc * xc).mean(axis=(0, 2, 3), keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        running_mean *= 1 - momentum
        running_mean += momentum * mu.reshape(c).astype(running_mean.dtype)
        running_var *= 1 - momentum
        running_var += momentum * (var.reshape(c) * n / (n - 1)).astype(running_var.dtype)

        def bw(g):
            dxhat = g * g_
            sd = dxhat.sum(axis=(0, 2, 3), keepdims=True)
            sdx = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            dx = inv / n * (n * dxhat - sd - xhat * sdx)
            return (dx.astype(x.dtype), (g * xhat).sum(axis=(0, 2, 3)).astype(gamma.dtype),
                    g.sum(axis=(0, 2, 3)).astype(beta.dtype))
    else:
        inv = (1.0 / np.sqrt(running_var + eps)).astype(x.dtype).reshape(shp)
        xhat = (x.data - running_mean.astype(x.dtype).reshape(shp)) * inv

        def bw(g):
            return ((g * g_ * inv).astype(x.dtype), (g * xhat).sum(axis=(0, 2, 3)).astype(gamma.dtype),
                    g.sum(axis=(0, 2, 3)).astype(beta.dtype))

    out = (xhat * g_ + beta.data.reshape(shp)).astype(x.dtype)
    return op(out, (x, gamma, beta), bw, "batch_norm")


# ---------------------------------------------------------------------------
# resampling


def cubic_weight(t: np.ndarray, a: float = CUBIC_A) -> np.ndarray:
    """Keys cubic convolution kernel."""
    t = np.abs(t)
    t2, t3 = t * t, t * t * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


@lru_cache(maxsize=64)
def _resize_matrix64(n_in: int, n_out: int) -> np.ndarray:
    scale = n_out / n_in
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        src = (i + 0.5) / scale - 0.5
        base = int(np.floor(src))
        for tap in range(base - 1, base + 3):
            m[i, min(max(tap, 0), n_in - 1)] += cubic_weight(np.array(src - tap))
    m.setflags(write=False)
    return m


def resize_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Dense (n_out, n_in) bicubic interpolation operator with clamped edges."""
    return _resize_matrix64(n_in, n_out).astype(dtype)


def scaled_extent(n: int, scale: float) -> int:
    out = n * scale
    r = int(round(out))
    if r < 1 or abs(out - r) > 1e-9:
        raise ConfigError(f"extent {n} scaled by {scale} is not integral")
    return r


def bicubic_resize(x: Tensor, scale: float) -> Tensor:
    if x.ndim != 4:
        raise DimensionError(f"bicubic_resize expects (b, c, h, w), got {x.shape}")
    if scale <= 0:
        raise ConfigError(f"scale must be positive, got {scale}")
    h, w = x.shape[2:]
    if min(h, w) < 2 and scale != 1:
        raise ConfigError(f"bicubic_resize needs extents >= 2, got {h}x{w}")
    oh, ow = scaled_extent(h, scale), scaled_extent(w, scale)
    mh = resize_matrix(h, oh, x.dtype)
    mw = resize_matrix(w, ow, x.dtype)
    out = np.matmul(np.matmul(mh, x.data), mw.T)
    return op(np.ascontiguousarray(out), (x,), lambda g: (np.matmul(np.matmul(mh.T, g), mw),), "bicubic_resize")


# ---------------------------------------------------------------------------
# gradient checking


def numerical_grad(fn: Callable[[], float], arr: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central finite differences of the scalar ``fn()`` w.r.t. ``arr`` (mutated in place, then restored)."""
    g = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        hi = fn()
        flat[i] = old - step
        lo = fn()
        flat[i] = old
        gf[i] = (hi - lo) / (2 * step)
    return g


def gradcheck(fn: Callable[..., Tensor], inputs: Sequence[Tensor], step: float = 1e-4) -> float:
    """Max relative error between analytic and finite-difference gradients.

    ``fn(*inputs)`` must return a scalar tensor; inputs should be float64
    tensors with ``requires_grad=True``. Error is measured elementwise
    against ``max(1, |analytic|)``.
    """
    for t in inputs:
        t.grad = None
    clear_tape()
    loss = fn(*inputs)
    backward(loss)
    worst = 0.0
    for t in inputs:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()

        def f():
            with no_grad():
                return float(fn(*inputs).data.reshape(-1)[0])

        numeric = numerical_grad(f, t.data, step)
        err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
        worst = max(worst, float(err.max()) if err.size else 0.0)
    return worst
