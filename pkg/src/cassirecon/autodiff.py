"""Reverse-mode automatic differentiation on numpy arrays.

Values are wrapped in :class:`Tensor`.  Operations record parent links and a
backward closure; :func:`backward` runs the reverse sweep in topological
order and accumulates gradients on every tensor created with
``requires_grad=True``.  Everything is float64.

Only the primitives this package needs are provided: broadcast arithmetic,
batched matmul, shape surgery (reshape / transpose / concat / slicing /
index gather / roll), reductions, the usual smooth nonlinearities, softmax,
2-D convolution backed by the im2col kernels, nearest-neighbour upsampling,
and an orthonormal 2-D FFT pair that represents complex spectra as a stacked
(real, imag) leading axis.

Gradient singularities of sqrt and atan2 are epsilon-guarded in the backward
closures only; forward values stay exact.
"""

from __future__ import annotations

import contextlib

import numpy as np

from . import kernels
from .errors import DetachedGraphError, NumericalError, ShapeError

SQRT_GRAD_EPS = 1e-12    # floor on the magnitude in d sqrt / dx = 0.5 / sqrt
ATAN2_GRAD_EPS = 1e-24   # floor on x^2 + y^2 in the atan2 jacobian

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A float64 array plus optional gradient linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, as_tensor(other))

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __getitem__(self, key):
        return getitem(self, key)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _acc(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _op(data, parents, backward):
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)
    return Tensor(data)


def backward(loss):
    """Run the reverse sweep from a scalar loss.

    Raises :class:`DetachedGraphError` when the loss carries no gradient
    linkage (every input was detached or created outside the graph).
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor loss")
    if not loss.requires_grad:
        raise DetachedGraphError("loss is detached from every parameter")
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.data.shape}")

    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# arithmetic

def add(a, b):
    data = a.data + b.data

    def bw(g):
        _acc(a, _unbroadcast(g, a.shape))
        _acc(b, _unbroadcast(g, b.shape))

    return _op(data, (a, b), bw)


def sub(a, b):
    data = a.data - b.data

    def bw(g):
        _acc(a, _unbroadcast(g, a.shape))
        _acc(b, _unbroadcast(-g, b.shape))

    return _op(data, (a, b), bw)


def neg(a):
    return _op(-a.data, (a,), lambda g: _acc(a, -g))


def mul(a, b):
    data = a.data * b.data

    def bw(g):
        _acc(a, _unbroadcast(g * b.data, a.shape))
        _acc(b, _unbroadcast(g * a.data, b.shape))

    return _op(data, (a, b), bw)


def div(a, b):
    data = a.data / b.data

    def bw(g):
        _acc(a, _unbroadcast(g / b.data, a.shape))
        _acc(b, _unbroadcast(-g * data / b.data, b.shape))

    return _op(data, (a, b), bw)


def matmul(a, b):
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs ndim >= 2 operands, got {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        _acc(a, _unbroadcast(ga, a.shape))
        _acc(b, _unbroadcast(gb, b.shape))

    return _op(data, (a, b), bw)


# ---------------------------------------------------------------------------
# shape surgery

def reshape(a, shape):
    data = a.data.reshape(shape)
    return _op(data, (a,), lambda g: _acc(a, g.reshape(a.shape)))


def transpose(a, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    data = a.data.transpose(axes)
    return _op(data, (a,), lambda g: _acc(a, g.transpose(inv)))


def concat(parts, axis):
    parts = [as_tensor(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _acc(p, g[tuple(sl)])

    return _op(data, tuple(parts), bw)


def getitem(a, key):
    """Basic (slice / int) indexing."""
    data = a.data[key]

    def bw(g):
        gx = np.zeros_like(a.data)
        gx[key] += g
        _acc(a, gx)

    return _op(data, (a,), bw)


def index_take(a, idx, axis):
    """Gather along one axis with an integer index vector (repeats allowed)."""
    idx = np.asarray(idx, dtype=np.intp)
    data = np.take(a.data, idx, axis=axis)

    def bw(g):
        gx = np.zeros_like(a.data)
        np.add.at(np.moveaxis(gx, axis, 0), idx, np.moveaxis(g, axis, 0))
        _acc(a, gx)

    return _op(data, (a,), bw)


def roll(a, shifts, axes):
    data = np.roll(a.data, shifts, axes)
    inv = tuple(-s for s in shifts) if isinstance(shifts, tuple) else -shifts
    return _op(data, (a,), lambda g: _acc(a, np.roll(g, inv, axes)))


def _reflect_index(n, before, after):
    """Indices implementing reflect padding without edge repetition.

    A size-1 axis degenerates to edge replication (there is nothing to
    mirror), which keeps padding total for every input size.
    """
    idx = np.arange(-before, n + after)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * n - 2
    m = np.mod(idx, period)
    return np.where(m >= n, period - m, m)


def pad2d_reflect(a, pad_h, pad_w):
    """Reflect-pad the two leading (spatial) axes of a tensor."""
    hb, ha = pad_h
    wb, wa = pad_w
    out = a
    if hb or ha:
        out = index_take(out, _reflect_index(out.shape[0], hb, ha), axis=0)
    if wb or wa:
        out = index_take(out, _reflect_index(out.shape[1], wb, wa), axis=1)
    return out


# ---------------------------------------------------------------------------
# reductions

def _bcast_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = axis if isinstance(axis, tuple) else (axis,)
        for ax in sorted(a % len(shape) for a in axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims=False):
    data = a.data.sum(axis=axis, keepdims=keepdims)
    return _op(data, (a,), lambda g: _acc(a, _bcast_reduced(g, a.shape, axis, keepdims)))


def tmean(a, axis=None, keepdims=False):
    data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size / data.size

    def bw(g):
        _acc(a, _bcast_reduced(g, a.shape, axis, keepdims) / count)

    return _op(data, (a,), bw)


# ---------------------------------------------------------------------------
# nonlinearities

def relu(a):
    data = np.maximum(a.data, 0.0)
    return _op(data, (a,), lambda g: _acc(a, g * (a.data > 0.0)))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    s = _sigmoid(a.data)
    return _op(s, (a,), lambda g: _acc(a, g * s * (1.0 - s)))


def silu(a):
    """x * sigmoid(x), the smooth gating nonlinearity used in feed-forwards."""
    s = _sigmoid(a.data)
    data = a.data * s
    return _op(data, (a,), lambda g: _acc(a, g * s * (1.0 + a.data * (1.0 - s))))


def softplus(a):
    data = np.logaddexp(0.0, a.data)
    return _op(data, (a,), lambda g: _acc(a, g * _sigmoid(a.data)))


def texp(a):
    data = np.exp(a.data)
    return _op(data, (a,), lambda g: _acc(a, g * data))


def tlog(a):
    data = np.log(a.data)
    return _op(data, (a,), lambda g: _acc(a, g / a.data))


def tsqrt(a):
    data = np.sqrt(a.data)

    def bw(g):
        _acc(a, g * 0.5 / np.maximum(data, SQRT_GRAD_EPS))

    return _op(data, (a,), bw)


def tsin(a):
    data = np.sin(a.data)
    return _op(data, (a,), lambda g: _acc(a, g * np.cos(a.data)))


def tcos(a):
    data = np.cos(a.data)
    return _op(data, (a,), lambda g: _acc(a, g * (-np.sin(a.data))))


def atan2(y, x):
    """Four-quadrant arctangent; jacobian is epsilon-guarded at the origin."""
    data = np.arctan2(y.data, x.data)

    def bw(g):
        denom = y.data * y.data + x.data * x.data + ATAN2_GRAD_EPS
        _acc(y, _unbroadcast(g * x.data / denom, y.shape))
        _acc(x, _unbroadcast(g * (-y.data) / denom, x.shape))

    return _op(data, (y, x), bw)


def softmax(a, axis):
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        _acc(a, s * (g - dot))

    return _op(s, (a,), bw)


# ---------------------------------------------------------------------------
# convolution and resampling

def conv2d(x, w, b=None, stride=1):
    """2-D convolution of an (H, W, Cin) map with (kh, kw, Cin, Cout) weights.

    Zero 'same' padding of kh//2 / kw//2; output is (ceil(H/stride),
    ceil(W/stride), Cout).  Forward and both backward passes run on the
    im2col / col2im kernels.
    """
    kh, kw, cin, cout = w.shape
    H, W, c = x.shape
    if c != cin:
        raise ShapeError(f"conv2d input channels {c} do not match weight {w.shape}")
    ph, pw = kh // 2, kw // 2
    xp = np.ascontiguousarray(np.pad(x.data, ((ph, ph), (pw, pw), (0, 0))))
    Hp, Wp = xp.shape[:2]
    cols = kernels.im2col(xp, kh, kw, stride)
    wmat = w.data.reshape(kh * kw * cin, cout)
    out = cols @ wmat
    if b is not None:
        out = out + b.data
    ho = (Hp - kh) // stride + 1
    wo = (Wp - kw) // stride + 1
    data = out.reshape(ho, wo, cout)

    def bw(g):
        gmat = g.reshape(ho * wo, cout)
        if b is not None:
            _acc(b, gmat.sum(axis=0))
        _acc(w, (cols.T @ gmat).reshape(w.shape))
        gxp = kernels.col2im(np.ascontiguousarray(gmat @ wmat.T), Hp, Wp, cin, kh, kw, stride)
        _acc(x, gxp[ph:ph + H, pw:pw + W, :])

    parents = (x, w) if b is None else (x, w, b)
    return _op(data, parents, bw)


def upsample2(x):
    """Nearest-neighbour 2x upsampling of the two spatial axes."""
    H, W, C = x.shape
    data = np.repeat(np.repeat(x.data, 2, axis=0), 2, axis=1)

    def bw(g):
        _acc(x, g.reshape(H, 2, W, 2, C).sum(axis=(1, 3)))

    return _op(data, (x,), bw)


# ---------------------------------------------------------------------------
# orthonormal 2-D FFT (complex values as a stacked (real, imag) leading axis)

def fft2_pack(x):
    """Orthonormal 2-D DFT over the two leading axes, packed as (2, H, W, ...)."""
    s = np.fft.fft2(x.data, axes=(0, 1), norm="ortho")
    data = np.stack([s.real, s.imag])

    def bw(g):
        gc = g[0] + 1j * g[1]
        _acc(x, np.fft.ifft2(gc, axes=(0, 1), norm="ortho").real)

    return _op(data, (x,), bw)


def ifft2_real(s, residual_tol=None):
    """Inverse orthonormal 2-D DFT of a packed spectrum, returning the real part.

    When ``residual_tol`` is given, an imaginary residue above it raises
    :class:`NumericalError` (a recombined spectrum of real signals must be
    conjugate-symmetric up to roundoff; anything larger signals a bug).
    """
    c = s.data[0] + 1j * s.data[1]
    z = np.fft.ifft2(c, axes=(0, 1), norm="ortho")
    if residual_tol is not None:
        residue = float(np.abs(z.imag).max()) if z.size else 0.0
        if residue > residual_tol:
            raise NumericalError(
                f"imaginary residue {residue:.3e} exceeds {residual_tol:.1e} after inverse FFT"
            )
    data = np.ascontiguousarray(z.real)

    def bw(g):
        gs = np.fft.fft2(g, axes=(0, 1), norm="ortho")
        _acc(s, np.stack([gs.real, gs.imag]))

    return _op(data, (s,), bw)


# ---------------------------------------------------------------------------
# parameter container

class ParamStore:
    """Named, ordered collection of trainable tensors.

    Names are unique, iteration order is insertion order, and shapes are
    fixed at creation; checkpoints serialize stores in this order.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name, array):
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.array(array, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params.keys())

    def items(self):
        return self._params.items()

    def n_values(self):
        return sum(t.size for t in self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def grads(self):
        """Gradient arrays by name; parameters never touched get zeros."""
        return {
            name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in self._params.items()
        }

    def state_dict(self):
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state_dict(self, state):
        missing = [n for n in self._params if n not in state]
        extra = [n for n in state if n not in self._params]
        if missing or extra:
            raise ShapeError(
                f"checkpoint does not match model: missing={missing[:3]}, unexpected={extra[:3]}"
            )
        for name, t in self._params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ShapeError(
                    f"parameter {name}: checkpoint shape {arr.shape} vs model {t.data.shape}"
                )
            t.data = arr.copy()
