"""Dense tensors with tape-based reverse-mode differentiation.

Only the handful of ops needed by the networks in this package are provided:
affine, valid 2-D convolution, ReLU, non-overlapping max pooling, softmax
cross-entropy, squared error and a few elementwise/reduction helpers.

Gradients are recorded on an explicit :class:`Tape`::

    with Tape() as tape:
        loss = softmax_cross_entropy(affine(x, w, b), labels)
    dw, db = tape.gradient(loss, [w, b])

Ops executed while a tape is active are appended to it in execution order,
so the tape is already topologically sorted and the backward sweep visits
each node once.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DimensionError, InputError, UsageError

_ACTIVE_TAPES: list["Tape"] = []


class Tensor:
    """An n-dimensional array of reals, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self.data.dtype)))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)


def _not_scalar(t):
    raise DimensionError(f"item() needs a single-element tensor, got shape {t.shape}")


def _as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


class Tape:
    """Records ops for a single reverse sweep from a scalar root."""

    def __init__(self):
        self._nodes = []
        self._recorded = set()

    def __enter__(self):
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPES.remove(self)
        return False

    def _record(self, out, inputs, backward):
        self._nodes.append((out, inputs, backward))
        self._recorded.add(id(out))

    def gradient(self, target, sources):
        """Gradients of the scalar ``target`` with respect to each source.

        Sources that do not influence ``target`` get a zero array.
        """
        if target.size != 1:
            raise UsageError(f"gradient root must be a scalar, got shape {target.shape}")
        source_ids = {id(s) for s in sources}
        if id(target) not in self._recorded and id(target) not in source_ids:
            raise UsageError("gradient requested for a value not recorded on this tape; "
                             "run the forward pass inside the tape first")
        grads = {id(target): np.ones_like(target.data)}
        for out, inputs, backward in reversed(self._nodes):
            g = grads.get(id(out))
            if g is None:
                continue
            if id(out) not in source_ids:
                del grads[id(out)]
            for t, gi in zip(inputs, backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        return [grads.get(id(s), np.zeros_like(s.data)) for s in sources]


def _record(out, inputs, backward):
    if _ACTIVE_TAPES:
        out.requires_grad = any(t.requires_grad for t in inputs)
        _ACTIVE_TAPES[-1]._record(out, inputs, backward)
    return out


def value_and_grad(fn, params):
    """Evaluate scalar ``fn(*params)`` and its gradient w.r.t. ``params``.

    ``params`` are numpy arrays; they are wrapped as tracked leaves.
    """
    leaves = [Tensor(p, requires_grad=True) for p in params]
    with Tape() as tape:
        out = fn(*leaves)
    return out.item(), tape.gradient(out, leaves)


# -- elementwise / reductions -------------------------------------------------


def _same_shape_or_scalar(a, b, op):
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _reduce_to(g, shape):
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape)


def _pair(a, b):
    if not isinstance(a, Tensor):
        a = _as_tensor(a, b.data.dtype)
    if not isinstance(b, Tensor):
        b = _as_tensor(b, a.data.dtype)
    return a, b


def add(a, b):
    a, b = _pair(a, b)
    _same_shape_or_scalar(a, b, "add")
    out = Tensor(a.data + b.data)

    def backward(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _record(out, (a, b), backward)


def neg(a):
    out = Tensor(-a.data)
    return _record(out, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = _pair(a, b)
    _same_shape_or_scalar(a, b, "mul")
    out = Tensor(a.data * b.data)

    def backward(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return _record(out, (a, b), backward)


def square(a):
    out = Tensor(a.data * a.data)
    return _record(out, (a,), lambda g: (2.0 * g * a.data,))


def total(a):
    """Sum of all entries, as a scalar tensor."""
    out = Tensor(np.sum(a.data))
    return _record(out, (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean(a):
    n = a.size
    out = Tensor(np.sum(a.data) / n)
    return _record(out, (a,), lambda g: (np.full(a.shape, g / n, dtype=a.data.dtype),))


def reshape(a, shape):
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), lambda g: (g.reshape(a.shape),))


def flatten(a):
    """Collapse all but the leading (batch) axis."""
    return reshape(a, (a.shape[0], -1))


def relu(a):
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, 0).astype(a.data.dtype, copy=False))
    return _record(out, (a,), lambda g: (g * mask,))


# -- layers -----------------------------------------------------------------


def affine(x, weight, bias=None):
    """``x @ weight.T + bias`` for x of shape (B, I) and weight (O, I)."""
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise DimensionError(f"affine expects 2-D input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise DimensionError(f"affine: input has {x.shape[1]} features, weight expects {weight.shape[1]}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise DimensionError(f"affine: bias shape {bias.shape} != ({weight.shape[0]},)")
    y = x.data @ weight.data.T
    if bias is not None:
        y = y + bias.data
    out = Tensor(y)

    def backward(g):
        dx = g @ weight.data if x.requires_grad else None
        dw = g.T @ x.data
        db = g.sum(axis=0) if bias is not None else None
        return dx, dw, db

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _record(out, inputs, backward)


def conv_output_extent(size, k, stride):
    span = size - k
    if span < 0 or span % stride:
        raise ConfigError(f"extent {size} with kernel {k} and stride {stride} "
                          "does not give an integral valid-convolution output")
    return span // stride + 1


def conv2d(x, kernels, bias=None, stride=1):
    """Valid (unpadded) cross-correlation.

    x: (B, C, H, W); kernels: (F, C, k, k); bias: (F,). Output (B, F, H', W').
    """
    if x.data.ndim != 4 or kernels.data.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and kernels, got {x.shape}, {kernels.shape}")
    B, C, H, W = x.shape
    F, Ck, k, k2 = kernels.shape
    if Ck != C or k != k2:
        raise DimensionError(f"conv2d: input channels {C} vs kernel {kernels.shape}")
    if bias is not None and bias.shape != (F,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} != ({F},)")
    if stride < 1:
        raise ConfigError("stride must be a positive integer", "stride")
    Ho = conv_output_extent(H, k, stride)
    Wo = conv_output_extent(W, k, stride)

    cols = sliding_window_view(x.data, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    # (B, Ho, Wo, F) -> (B, F, Ho, Wo)
    y = np.tensordot(cols, kernels.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        y = y + bias.data[None, :, None, None]
    out = Tensor(np.ascontiguousarray(y))

    def backward(g):
        dw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        db = g.sum(axis=(0, 2, 3)) if bias is not None else None
        dx = None
        if x.requires_grad:
            dcols = np.tensordot(g, kernels.data, axes=([1], [0]))  # (B, Ho, Wo, C, k, k)
            dx = np.zeros_like(x.data)
            hi = stride * (Ho - 1) + 1
            wi = stride * (Wo - 1) + 1
            for i in range(k):
                for j in range(k):
                    dx[:, :, i:i + hi:stride, j:j + wi:stride] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dx, dw, db

    inputs = (x, kernels) if bias is None else (x, kernels, bias)
    return _record(out, inputs, backward)


def maxpool2d(x, size=2):
    """Non-overlapping ``size`` x ``size`` max pooling over (B, C, H, W).

    Ties send the gradient to the first maximum in row-major window order.
    """
    B, C, H, W = x.shape
    if H % size or W % size:
        raise ConfigError(f"pool window {size} does not divide spatial extent {H}x{W}", "pool")
    Hp, Wp = H // size, W // size
    win = (x.data.reshape(B, C, Hp, size, Wp, size)
           .transpose(0, 1, 2, 4, 3, 5)
           .reshape(B, C, Hp, Wp, size * size))
    idx = np.argmax(win, axis=-1)[..., None]
    out = Tensor(np.take_along_axis(win, idx, axis=-1)[..., 0])

    def backward(g):
        dwin = np.zeros(win.shape, dtype=g.dtype)
        np.put_along_axis(dwin, idx, g[..., None], axis=-1)
        dx = (dwin.reshape(B, C, Hp, Wp, size, size)
              .transpose(0, 1, 2, 4, 3, 5)
              .reshape(B, C, H, W))
        return (dx,)

    return _record(out, (x,), backward)


# -- losses -----------------------------------------------------------------


def softmax_cross_entropy(logits, labels):
    """Mean over the batch of ``-log softmax(logits)[label]``."""
    z = logits.data
    if z.ndim != 2:
        raise DimensionError(f"logits must be (batch, classes), got {logits.shape}")
    labels = np.asarray(labels)
    B, K = z.shape
    if labels.shape != (B,):
        raise DimensionError(f"labels shape {labels.shape} != ({B},)")
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise InputError(f"labels must lie in [0, {K}); got range [{labels.min()}, {labels.max()}]")
    shifted = z - z.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    sumexp = expz.sum(axis=1, keepdims=True)
    rows = np.arange(B)
    loss = np.mean(np.log(sumexp[:, 0]) - shifted[rows, labels])
    out = Tensor(np.asarray(loss, dtype=z.dtype))

    def backward(g):
        p = expz / sumexp
        p[rows, labels] -= 1.0
        return (p * (g / B),)

    return _record(out, (logits,), backward)


def squared_error(pred, target):
    """Least-squares loss ``sum((pred - target)**2) / (2 * batch)``."""
    t = np.asarray(target.data if isinstance(target, Tensor) else target)
    if pred.shape != t.shape:
        raise DimensionError(f"squared_error: {pred.shape} vs {t.shape}")
    r = pred.data - t
    B = pred.shape[0]
    out = Tensor(np.asarray(0.5 * np.sum(r * r) / B, dtype=pred.data.dtype))
    return _record(out, (pred,), lambda g: (r * (g / B),))
