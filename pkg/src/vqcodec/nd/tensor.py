"""Minimal reverse-mode autodiff over numpy arrays.

Deterministic and CPU-only.  Float64 is the default for tests and gradient
checks; float32 is supported as a faster training mode.  A tape is built
implicitly per forward pass and consumed by :func:`backward`; higher-order
gradients are unsupported.  Independent graphs may run on separate threads
(the grad-enabled flag is thread-local), but a single tape has no locking
and must stay on one thread.
"""

from __future__ import annotations

import threading

import numpy as np

from vqcodec.errors import CodecError, DomainError, ShapeError

_FLOAT_TYPES = (np.float32, np.float64)

_state = threading.local()
_strict_domain = True
_check_finite = False


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager that disables tape recording."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


def set_strict_domain(flag):
    """Toggle domain checks (log of non-positive values, etc.)."""
    global _strict_domain
    _strict_domain = bool(flag)


def set_check_finite(flag):
    """When enabled, every op asserts its output is finite."""
    global _check_finite
    _check_finite = bool(flag)


class Tensor:
    """N-dimensional float array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.type not in _FLOAT_TYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        """New constant tensor sharing this tensor's data."""
        return Tensor(self.data)

    def backward(self):
        backward(self)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

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
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __abs__(self):
        return absolute(self)


class Parameter(Tensor):
    """Learnable tensor; ``decay`` marks it for weight decay."""

    __slots__ = ("decay",)

    def __init__(self, data, decay=True, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.decay = bool(decay)


def _as_tensor(value, like=None):
    if isinstance(value, Tensor):
        return value
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype))


def _make(data, parents, backward_fn):
    """Create an op output, recording it on the implicit tape if needed."""
    if _check_finite and not np.all(np.isfinite(data)):
        raise CodecError("non-finite values produced by a forward op")
    out = Tensor(data)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad, shape):
    """Reduce a broadcast gradient back to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# backward engine


class Tape:
    """Execution-ordered record of the ops below one output tensor.

    The order is topological (parents before dependents); running
    :meth:`backward` visits each recorded op exactly once in reverse.
    """

    def __init__(self, output: Tensor):
        order = []
        visited = set()
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.order = order

    def backward(self, root: Tensor):
        buf = {id(root): np.ones_like(root.data)}
        nodes = {id(root): root}
        for node in reversed(self.order):
            g = buf.get(id(node))
            if g is None or node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in buf:
                    buf[key] = buf[key] + pg
                else:
                    buf[key] = pg
                    nodes[key] = parent
        for key, g in buf.items():
            node = nodes[key]
            if not node.requires_grad:
                continue
            if not (isinstance(g, np.ndarray) and g.flags.writeable and g.base is None):
                g = np.array(g)
            node.grad = g if node.grad is None else node.grad + g


def backward(loss: Tensor):
    """Accumulate gradients of a scalar loss into every reachable
    requires-grad tensor."""
    if loss.data.size != 1:
        raise CodecError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise CodecError("loss does not require grad; nothing to backpropagate")
    Tape(loss).backward(loss)


def stop_gradient(x: Tensor) -> Tensor:
    """Value of ``x`` treated as a constant by the tape."""
    return x.detach() if isinstance(x, Tensor) else Tensor(x)


def override_value(x: Tensor, value) -> Tensor:
    """Forward ``value`` bit-exactly while keeping ``x``'s gradient path.

    The backward pass treats the op as the identity on ``x``; ``value``
    itself receives no gradient.  This is the gradient override used at the
    quantization boundary.
    """
    x = _as_tensor(x)
    vd = value.data if isinstance(value, Tensor) else np.asarray(value)
    if vd.shape != x.data.shape:
        raise ShapeError(f"override shape {vd.shape} != input shape {x.data.shape}")

    def bwd(g):
        return (g if x.requires_grad else None,)

    return _make(vd, (x,), bwd)


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    data = a.data + b.data

    def bwd(g):
        return (
            _unbroadcast(g, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g, b.data.shape) if b.requires_grad else None,
        )

    return _make(data, (a, b), bwd)


def sub(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    data = a.data - b.data

    def bwd(g):
        return (
            _unbroadcast(g, a.data.shape) if a.requires_grad else None,
            _unbroadcast(-g, b.data.shape) if b.requires_grad else None,
        )

    return _make(data, (a, b), bwd)


def mul(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    ad, bd = a.data, b.data
    data = ad * bd

    def bwd(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return _make(data, (a, b), bwd)


def div(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    ad, bd = a.data, b.data
    data = ad / bd

    def bwd(g):
        ga = _unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * ad / (bd * bd), bd.shape) if b.requires_grad else None
        return (ga, gb)

    return _make(data, (a, b), bwd)


def sin(x):
    x = _as_tensor(x)
    xd = x.data

    def bwd(g):
        return (g * np.cos(xd) if x.requires_grad else None,)

    return _make(np.sin(xd), (x,), bwd)


def exp(x):
    x = _as_tensor(x)
    data = np.exp(x.data)

    def bwd(g):
        return (g * data if x.requires_grad else None,)

    return _make(data, (x,), bwd)


def log(x):
    x = _as_tensor(x)
    xd = x.data
    if _strict_domain and np.any(xd <= 0):
        raise DomainError("log requires strictly positive inputs")

    def bwd(g):
        return (g / xd if x.requires_grad else None,)

    return _make(np.log(xd), (x,), bwd)


def power(x, exponent):
    """Elementwise x ** exponent for a plain-number exponent."""
    x = _as_tensor(x)
    xd = x.data
    p = float(exponent)
    if _strict_domain and p != int(p) and np.any(xd < 0):
        raise DomainError("fractional power of a negative base")
    data = xd ** p

    def bwd(g):
        if not x.requires_grad:
            return (None,)
        if p == 2.0:
            return (g * (2.0 * xd),)
        return (g * (p * xd ** (p - 1.0)),)

    return _make(data, (x,), bwd)


def absolute(x):
    x = _as_tensor(x)
    xd = x.data

    def bwd(g):
        return (g * np.sign(xd) if x.requires_grad else None,)

    return _make(np.abs(xd), (x,), bwd)


def safe_sqrt(x):
    """sqrt with a zero gradient at exactly zero (used for magnitudes)."""
    x = _as_tensor(x)
    xd = x.data
    if _strict_domain and np.any(xd < 0):
        raise DomainError("sqrt of a negative value")
    data = np.sqrt(xd)

    def bwd(g):
        if not x.requires_grad:
            return (None,)
        inv = np.zeros_like(data)
        mask = xd > 0
        inv[mask] = 0.5 / data[mask]
        return (g * inv,)

    return _make(data, (x,), bwd)


def _sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x):
    x = _as_tensor(x)
    data = _sigmoid_np(x.data)

    def bwd(g):
        return (g * data * (1.0 - data) if x.requires_grad else None,)

    return _make(data, (x,), bwd)


def tanh(x):
    x = _as_tensor(x)
    data = np.tanh(x.data)

    def bwd(g):
        return (g * (1.0 - data * data) if x.requires_grad else None,)

    return _make(data, (x,), bwd)


def leaky_relu(x, negative_slope=0.1):
    x = _as_tensor(x)
    xd = x.data
    slope = float(negative_slope)
    data = xd * np.asarray(slope, dtype=xd.dtype)
    np.maximum(data, xd, out=data)

    def bwd(g):
        if not x.requires_grad:
            return (None,)
        return (np.where(xd >= 0, g, slope * g),)

    return _make(data, (x,), bwd)


def snake(x, alpha, eps=1e-9):
    """Periodic-bias activation y = x + sin^2(alpha*x) / (alpha + eps).

    ``alpha`` broadcasts against ``x`` (per-channel in practice); the eps
    guard makes alpha = 0 an exact identity.  Fused into one op because it
    appears on every residual path.
    """
    x = _as_tensor(x)
    alpha = _as_tensor(alpha, like=x)
    xd, ad = x.data, alpha.data
    inv = 1.0 / (ad + eps)
    s = np.sin(ad * xd)
    data = s * s * inv + xd

    def bwd(g):
        sin2 = np.sin(2.0 * (ad * xd))
        gx = None
        if x.requires_grad:
            gx = g * (1.0 + ad * inv * sin2)
        ga = None
        if alpha.requires_grad:
            s_ = np.sin(ad * xd)
            full = g * (xd * inv * sin2 - s_ * s_ * (inv * inv))
            ga = _unbroadcast(full, ad.shape)
        return (gx, ga)

    return _make(data, (x, alpha), bwd)


def maximum_scalar(x, floor):
    """Elementwise max(x, floor); gradient passes where x >= floor."""
    x = _as_tensor(x)
    xd = x.data
    s = float(floor)
    data = np.maximum(xd, s)

    def bwd(g):
        if not x.requires_grad:
            return (None,)
        return (np.where(xd >= s, g, 0.0),)

    return _make(data, (x,), bwd)


# ---------------------------------------------------------------------------
# reductions and shape ops


def sum(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    xd = x.data
    data = xd.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if not x.requires_grad:
            return (None,)
        if axis is None:
            return (np.broadcast_to(g, xd.shape),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, xd.shape),)

    return _make(data, (x,), bwd)


def mean(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    xd = x.data
    if axis is None:
        count = xd.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for a in axes:
            count *= xd.shape[a]
    data = xd.mean(axis=axis, keepdims=keepdims)

    def bwd(g):
        if not x.requires_grad:
            return (None,)
        g2 = g * np.asarray(1.0 / count, dtype=xd.dtype)
        if axis is not None and not keepdims:
            g2 = np.expand_dims(g2, axis)
        return (np.broadcast_to(g2, xd.shape),)

    return _make(data, (x,), bwd)


def reshape(x, shape):
    x = _as_tensor(x)
    xd = x.data
    data = xd.reshape(shape)

    def bwd(g):
        return (g.reshape(xd.shape) if x.requires_grad else None,)

    return _make(data, (x,), bwd)


def transpose(x, axes):
    x = _as_tensor(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    data = np.transpose(x.data, axes)

    def bwd(g):
        return (np.transpose(g, inverse) if x.requires_grad else None,)

    return _make(data, (x,), bwd)


def narrow(x, axis, start, length):
    """Slice ``length`` entries from ``start`` along ``axis``."""
    x = _as_tensor(x)
    xd = x.data
    if start < 0 or start + length > xd.shape[axis]:
        raise ShapeError(
            f"narrow [{start}:{start + length}] out of range for axis {axis} "
            f"of shape {xd.shape}"
        )
    index = [slice(None)] * xd.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    data = xd[index]

    def bwd(g):
        if not x.requires_grad:
            return (None,)
        out = np.zeros_like(xd)
        out[index] = g
        return (out,)

    return _make(data, (x,), bwd)


def pad_reflect1d(x, before, after):
    """Reflect-pad the last axis.  Requires pad < axis length."""
    x = _as_tensor(x)
    xd = x.data
    t = xd.shape[-1]
    if before >= t or after >= t:
        raise ShapeError(f"reflect pad ({before},{after}) too wide for length {t}")
    widths = [(0, 0)] * (xd.ndim - 1) + [(before, after)]
    data = np.pad(xd, widths, mode="reflect")

    def bwd(g):
        if not x.requires_grad:
            return (None,)
        out = np.array(g[..., before:before + t])
        if before:
            out[..., 1:before + 1] += g[..., :before][..., ::-1]
        if after:
            out[..., t - 1 - after:t - 1] += g[..., before + t:][..., ::-1]
        return (out,)

    return _make(data, (x,), bwd)


def frame(x, length, hop):
    """Slice a [B, T] signal into overlapping frames [B, n_frames, length]."""
    x = _as_tensor(x)
    xd = np.ascontiguousarray(x.data)
    if xd.ndim != 2:
        raise ShapeError(f"frame expects [B, T], got {xd.shape}")
    if hop <= 0:
        raise ShapeError("hop must be positive")
    b, t = xd.shape
    if t < length:
        raise ShapeError(f"signal length {t} shorter than frame length {length}")
    n_frames = (t - length) // hop + 1
    sb, st = xd.strides
    view = np.lib.stride_tricks.as_strided(
        xd, (b, n_frames, length), (sb, st * hop, st)
    )
    data = np.ascontiguousarray(view)

    def bwd(g):
        if not x.requires_grad:
            return (None,)
        out = np.zeros_like(xd)
        ob, ot = out.strides
        # frames f and f+q never overlap when q*hop >= length
        q = -(-length // hop)
        for j in range(min(q, n_frames)):
            nj = (n_frames - 1 - j) // q + 1
            target = np.lib.stride_tricks.as_strided(
                out[:, j * hop:], (b, nj, length), (ob, ot * hop * q, ot)
            )
            target += g[:, j::q, :]
        return (out,)

    return _make(data, (x,), bwd)


def matmul(a, b):
    """2-D matrix product."""
    a = _as_tensor(a)
    b = _as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {ad.shape} @ {bd.shape}")
    if ad.shape[1] != bd.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {ad.shape} @ {bd.shape}")
    data = ad @ bd

    def bwd(g):
        ga = g @ bd.T if a.requires_grad else None
        gb = ad.T @ g if b.requires_grad else None
        return (ga, gb)

    return _make(data, (a, b), bwd)


def gather_rows(table, indices):
    """Look rows of a 2-D table up by integer index."""
    table = _as_tensor(table)
    td = table.data
    if td.ndim != 2:
        raise ShapeError(f"gather_rows expects a 2-D table, got {td.shape}")
    idx = np.asarray(indices)
    data = td[idx]

    def bwd(g):
        if not table.requires_grad:
            return (None,)
        out = np.zeros_like(td)
        np.add.at(out, idx.reshape(-1), g.reshape(-1, td.shape[1]))
        return (out,)

    return _make(data, (table,), bwd)


def l2_normalize(x, axis, eps=1e-12):
    """Scale slices along ``axis`` to unit L2 norm, flooring the norm at eps.

    The floor keeps the gradient finite for all-zero slices; above the floor
    the output has exactly unit norm.
    """
    n2 = sum(mul(x, x), axis=axis, keepdims=True)
    floored = maximum_scalar(n2, eps * eps)
    return mul(x, power(floored, -0.5))
