"""Reverse-mode automatic differentiation on float64 numpy arrays.

Every differentiable operation records itself on the active :class:`Graph`
(an explicit tape).  Calling ``graph.backward(loss)`` walks the tape in
reverse and accumulates gradients into ``Tensor.grad``.  Everything is
float64; there is no GPU path and no fusion.  A graph is single-threaded,
but independent graphs may run concurrently (the active-graph stack is
thread-local).
"""

from __future__ import annotations

import threading
import warnings

import numpy as np

_local = threading.local()


def _graph_stack() -> list:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_graph():
    """The innermost graph currently recording, or None."""
    stack = _graph_stack()
    return stack[-1] if stack else None


class Tensor:
    """A dense float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name

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

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"

    # Operator sugar; scalars and arrays are promoted to constant tensors.
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


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Graph:
    """Tape of executed ops, in execution (hence topological) order.

    Use as a context manager; ops run inside the ``with`` block are
    recorded when any of their inputs requires a gradient.
    """

    def __init__(self):
        self._ops = []  # (out, inputs, backward_fn)

    def __enter__(self):
        _graph_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _graph_stack().pop()
        assert popped is self, "graphs must be exited in LIFO order"
        return False

    def __len__(self):
        return len(self._ops)

    def record(self, out, inputs, backward_fn):
        self._ops.append((out, tuple(inputs), backward_fn))

    def backward(self, loss: Tensor, params=None):
        """Accumulate d(loss)/d(x) into ``x.grad`` for the recorded subgraph.

        ``loss`` must be a scalar.  Each op's backward runs exactly once,
        in reverse tape order; fan-out gradients add.  If ``params`` is
        given, any listed tensor left without a gradient (disconnected
        from the loss) gets a zero gradient and a warning.
        """
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        loss.grad = np.ones_like(loss.data)
        for out, inputs, backward_fn in reversed(self._ops):
            if out.grad is None:
                continue
            grads = backward_fn(out.grad)
            for inp, g in zip(inputs, grads):
                if g is None:
                    continue
                # accumulation always rebinds (never mutates), so holding the
                # array a backward_fn returned is safe without copying
                inp.grad = g if inp.grad is None else inp.grad + g
        if params is not None:
            for p in params:
                if p.grad is None:
                    warnings.warn(f"parameter {p.name or p!r} is disconnected from the loss; grad set to 0")
                    p.grad = np.zeros_like(p.data)


def record_op(out_data, inputs, backward_fn, name=None) -> Tensor:
    """Wrap raw output data in a Tensor, recording on the active graph.

    ``backward_fn(grad_out) -> [grad_for_each_input]`` (None entries allowed).
    Recording happens only if a graph is active and some input requires grad;
    the output's requires_grad propagates accordingly.
    """
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs, name=name)
    graph = active_graph()
    if graph is not None and needs:
        graph.record(out, inputs, backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy trailing-dim broadcast)."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record_op(out, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return record_op(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record_op(out, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    # A zero denominator is a bug upstream (our ratios are sums of positive
    # exponentials), so fail loudly instead of producing Inf.
    if np.any(b.data == 0.0):
        raise ZeroDivisionError("division by a tensor containing zero")
    out = a.data / b.data

    def backward(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return record_op(out, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return record_op(-a.data, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return record_op(out, (a,), backward)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise ValueError("log of non-positive tensor")
    out = np.log(a.data)

    def backward(g):
        return (g / a.data,)

    return record_op(out, (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0.0):
        raise ValueError("sqrt of negative tensor")
    out = np.sqrt(a.data)

    def backward(g):
        return (g * 0.5 / out,)

    return record_op(out, (a,), backward)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Branch on the sign to avoid overflow in exp.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)

    def backward(g):
        return (g * out * (1.0 - out),)

    return record_op(out, (a,), backward)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)

    def backward(g):
        return (g * (a.data > 0.0),)

    return record_op(out, (a,), backward)


# ---------------------------------------------------------------------------
# matmul and shape ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; stacked leading dims broadcast as in numpy ``@``."""
    if a.data.shape[-1] != b.data.shape[-2 if b.ndim > 1 else 0]:
        raise ValueError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        bt = np.swapaxes(b.data, -1, -2) if b.ndim >= 2 else b.data[None, :]
        at = np.swapaxes(a.data, -1, -2)
        ga = g @ bt
        gb = at @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul expects operands of rank >= 2")
    return record_op(out, (a, b), backward)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)

    def backward(g):
        return (g.reshape(a.shape),)

    return record_op(out, (a,), backward)


def transpose(a: Tensor, axes=None) -> Tensor:
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def backward(g):
        return (np.transpose(g, inv),)

    return record_op(out, (a,), backward)


def crop2d(a: Tensor, rows: int, cols: int) -> Tensor:
    """Top-left submatrix of a 2-D tensor; gradient zero-pads back."""
    if a.ndim != 2:
        raise ValueError("crop2d needs a 2-D tensor")
    if rows > a.shape[0] or cols > a.shape[1]:
        raise ValueError(f"crop {rows}x{cols} exceeds tensor shape {a.shape}")
    out = a.data[:rows, :cols]

    def backward(g):
        full = np.zeros_like(a.data)
        full[:rows, :cols] = g
        return (full,)

    return record_op(out, (a,), backward)


# ---------------------------------------------------------------------------
# reductions


def _normalize_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    if any(a >= ndim or a < -ndim for a in axis):
        raise ValueError(f"axis {axis} out of range for rank {ndim}")
    return tuple(a % ndim for a in axis)


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return record_op(out, (a,), backward)


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape) / count,)

    return record_op(out, (a,), backward)


def tmax(a: Tensor, axis=None, keepdims=False, return_index=False):
    """Maximum along one axis (or all).  Ties route gradient to the first hit.

    With ``return_index`` the flat/axis argmax indices come back alongside,
    which is what stabilization code wants.
    """
    if axis is None:
        idx = int(np.argmax(a.data))
        out = a.data.reshape(-1)[idx]

        def backward(g):
            full = np.zeros_like(a.data)
            full.reshape(-1)[idx] = g
            return (full,)

        t = record_op(np.asarray(out), (a,), backward)
        return (t, idx) if return_index else t

    ax = axis % a.ndim
    idx = np.argmax(a.data, axis=ax)
    out = np.take_along_axis(a.data, np.expand_dims(idx, ax), axis=ax)
    if not keepdims:
        out = np.squeeze(out, axis=ax)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(idx, ax), g, axis=ax)
        return (full,)

    t = record_op(out, (a,), backward)
    return (t, idx) if return_index else t


# ---------------------------------------------------------------------------
# fused neural-net ops


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last dim: (x - mu)/sqrt(var + eps) * gain + bias."""
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError(f"layer_norm gain/bias must have shape ({d},)")
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=lead)
        dbias = g.sum(axis=lead)
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx, dgain, dbias

    return record_op(out, (a, gain, bias), backward)


def batch_norm_nchw(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize (B, C, H, W) per channel with batch statistics.

    Differentiable through the statistics; one fused op instead of a chain
    of reductions and broadcasts.  gamma/beta are (1, C, 1, 1).
    """
    axes = (0, 2, 3)
    m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        dgamma = (g * xhat).sum(axis=axes, keepdims=True)
        dbeta = g.sum(axis=axes, keepdims=True)
        dxhat = g * gamma.data
        m1 = dxhat.sum(axis=axes, keepdims=True) / m
        m2 = (dxhat * xhat).sum(axis=axes, keepdims=True) / m
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx, dgamma, dbeta

    return record_op(out, (x, gamma, beta), backward)


def log_softmax(a: Tensor) -> Tensor:
    """Row-wise log softmax over the last dim (shift-stabilized)."""
    shift = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shift).sum(axis=-1, keepdims=True))
    out = shift - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return record_op(out, (a,), backward)


def embed(table: Tensor, ids: np.ndarray, freeze_row0: bool = True) -> Tensor:
    """Row lookup ``table[ids]``; gradient scatter-adds back into the table.

    ``freeze_row0`` keeps the padding row's gradient at exactly zero.
    """
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"token id out of range for table with {table.shape[0]} rows")
    out = table.data[ids]

    def backward(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        if freeze_row0:
            dt[0] = 0.0
        return (dt,)

    return record_op(out, (table,), backward)


# ---------------------------------------------------------------------------
# convolution / pooling (NCHW, stride 1, cross-correlation)


def _cols(xp: np.ndarray, kh: int, kw: int, oh: int, ow: int) -> np.ndarray:
    # xp: padded (C, Hp, Wp) -> (oh*ow, C*kh*kw)
    v = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    return np.ascontiguousarray(v[:, :oh, :ow].transpose(1, 2, 0, 3, 4)).reshape(oh * ow, -1)


def conv2d(x: Tensor, w: Tensor, b: Tensor, pad: int = 1) -> Tensor:
    """Stride-1 cross-correlation of (B,C,H,W) with (O,C,kh,kw) kernels.

    Samples are processed one at a time to keep the im2col buffers small.
    """
    bs, c, h, wd = x.shape
    o, cw, kh, kw = w.shape
    if cw != c:
        raise ValueError(f"conv2d channel mismatch: input has {c}, kernel expects {cw}")
    if h + 2 * pad < kh or wd + 2 * pad < kw:
        raise ValueError("spatial dims smaller than kernel")
    oh, ow = h + 2 * pad - kh + 1, wd + 2 * pad - kw + 1
    wmat = w.data.reshape(o, -1)
    out = np.empty((bs, o, oh, ow))
    pad_spec = ((0, 0), (pad, pad), (pad, pad))
    for i in range(bs):
        xp = np.pad(x.data[i], pad_spec)
        out[i] = (_cols(xp, kh, kw, oh, ow) @ wmat.T).T.reshape(o, oh, ow)
    out += b.data[None, :, None, None]

    def backward(g):
        dw = np.zeros_like(wmat)
        dx = np.zeros_like(x.data)
        for i in range(bs):
            xp = np.pad(x.data[i], pad_spec)
            cols = _cols(xp, kh, kw, oh, ow)
            g2 = g[i].reshape(o, -1).T  # (oh*ow, O)
            dw += g2.T @ cols
            dcols = (g2 @ wmat).reshape(oh, ow, c, kh, kw)
            dxp = np.zeros_like(xp)
            for di in range(kh):
                for dj in range(kw):
                    dxp[:, di:di + oh, dj:dj + ow] += dcols[:, :, :, di, dj].transpose(2, 0, 1)
            dx[i] = dxp[:, pad:pad + h, pad:pad + wd] if pad else dxp
        db = g.sum(axis=(0, 2, 3))
        return dx, dw.reshape(w.shape), db

    return record_op(out, (x, w, b), backward)


def avgpool2d(x: Tensor, k: int = 2) -> Tensor:
    """k x k average pooling with stride k; trailing remainder rows/cols drop."""
    bs, c, h, w = x.shape
    oh, ow = h // k, w // k
    if oh == 0 or ow == 0:
        raise ValueError(f"input {h}x{w} smaller than pool size {k}")
    xc = x.data[:, :, :oh * k, :ow * k]
    out = xc.reshape(bs, c, oh, k, ow, k).mean(axis=(3, 5))

    def backward(g):
        dx = np.zeros_like(x.data)
        dx[:, :, :oh * k, :ow * k] = np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k)
        return (dx,)

    return record_op(out, (x,), backward)


def assert_finite(t: Tensor, what: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise FloatingPointError(f"{what} contains NaN/Inf")
    return t
