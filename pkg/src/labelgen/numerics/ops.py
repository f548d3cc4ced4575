"""Differentiable array operations.

Each op computes its forward value with numpy and, when recording, registers a
closure that maps the output gradient back to its inputs.  All ops preserve the
floating dtype of their operands, so the same code runs in float32 (training)
and float64 (gradient checks).
"""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .tensor import ShapeError, Tensor, record

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None and like.dtype.kind == "f" else np.float32
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record("add", out, (a, b), bw)


def sub(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    out = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return record("sub", out, (a, b), bw)


def mul(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    out = a.data * b.data

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return record("mul", out, (a, b), bw)


def div(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
        return ga, gb

    return record("div", out, (a, b), bw)


def power(x: Tensor, exponent: float) -> Tensor:
    out = x.data ** exponent

    def bw(g):
        return (g * exponent * x.data ** (exponent - 1),)

    return record("power", out, (x,), bw)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return record("exp", out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    out = np.log(x.data)
    return record("log", out, (x,), lambda g: (g / x.data,))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return record("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record("relu", x.data * mask, (x,), lambda g: (g * mask,))


def gelu(x: Tensor) -> Tensor:
    """GELU with the exact error-function form, x * Phi(x)."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd / _SQRT2))
    out = xd * cdf

    def bw(g):
        pdf = np.exp(-0.5 * xd * xd) * _INV_SQRT_2PI
        return (g * (cdf + xd * pdf),)

    return record("gelu", out.astype(xd.dtype, copy=False), (x,), bw)


# ---------------------------------------------------------------- reductions / shape

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return record("sum", np.asarray(out, dtype=x.dtype), (x,), bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.mean(x.data, axis=axis, keepdims=keepdims)
    count = x.data.size // max(np.asarray(out).size, 1)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).astype(x.dtype),)

    return record("mean", np.asarray(out, dtype=x.dtype), (x,), bw)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)
    return record("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return record("transpose", out, (x,), lambda g: (np.ascontiguousarray(g.transpose(inverse)),))


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in items)


def getitem(x: Tensor, index) -> Tensor:
    out = x.data[index]
    basic = _is_basic_index(index)

    def bw(g):
        full = np.zeros_like(x.data)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return record("getitem", np.array(out), (x,), bw)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return record("concat", out, tensors, bw)


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands need at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimension mismatch: {a.shape[-1]} vs {b.shape[-2]}")
    out = a.data @ b.data

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return record("matmul", out, (a, b), bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` over the trailing axis of ``x``."""
    d_out, d_in = weight.shape
    if x.shape[-1] != d_in:
        raise ShapeError(f"linear: input trailing dimension {x.shape[-1]} != d_in {d_in}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        g2 = g.reshape(-1, d_out)
        gx = (g @ weight.data) if x.requires_grad else None
        gw = g2.T @ x.data.reshape(-1, d_in) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return record("linear", out, inputs, bw)


def embedding(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids.data if isinstance(ids, Tensor) else ids)
    if ids.dtype.kind not in "iu":
        raise TypeError("embedding ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"token id out of range [0, {table.shape[0]})")
    out = table.data[ids]

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return record("embedding", out, (table,), bw)


# ---------------------------------------------------------------- normalisation / probabilities

def softmax(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return record("softmax", out, (x,), bw)


def log_softmax(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return record("log_softmax", out, (x,), bw)


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    if eps <= 0:
        raise ValueError("eps must be positive")
    d = x.shape[-1]
    if gain.shape != (d,) or shift.shape != (d,):
        raise ShapeError(f"layer_norm: gain/shift must have shape ({d},)")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    centered = xd - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gain.data + shift.data

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        dxhat = g * gain.data
        gx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return record("layer_norm", out, (x, gain, shift), bw)


def cross_entropy(logits: Tensor, targets, ignore_index: int = -100) -> Tensor:
    """Mean negative log-likelihood over positions whose target != ignore_index."""
    t = np.asarray(targets.data if isinstance(targets, Tensor) else targets)
    V = logits.shape[-1]
    if t.shape != logits.shape[:-1]:
        raise ShapeError(f"cross_entropy: targets shape {t.shape} != logits leading shape {logits.shape[:-1]}")
    valid = t != ignore_index
    if np.any((t[valid] < 0) | (t[valid] >= V)):
        raise IndexError(f"target outside [0, {V})")
    count = int(valid.sum())
    if count == 0:
        raise ValueError("empty loss support")
    z = logits.data
    shifted = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(shifted)
    sez = ez.sum(axis=-1, keepdims=True)
    logp = shifted - np.log(sez)
    safe_t = np.where(valid, t, 0)
    picked = np.take_along_axis(logp, safe_t[..., None], axis=-1)[..., 0]
    loss = -(picked * valid).sum() / count

    def bw(g):
        p = ez / sez
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, safe_t[..., None], 1.0, axis=-1)
        grad = (p - onehot) * valid[..., None] * (g / count)
        return (grad.astype(z.dtype, copy=False),)

    return record("cross_entropy", np.asarray(loss, dtype=z.dtype), (logits,), bw)


def attention(q: Tensor, k: Tensor, v: Tensor, causal_mask: bool = False) -> Tensor:
    """Scaled dot-product attention, softmax(Q K^T / sqrt(dk) + mask) V.

    With ``causal_mask`` query i may attend to key j only when
    j <= i + (Tk - Tq), i.e. queries are aligned with the last keys.
    """
    dk = q.shape[-1]
    if k.shape[-1] != dk:
        raise ShapeError(f"attention: key width {k.shape[-1]} != query width {dk}")
    if v.shape[-2] != k.shape[-2]:
        raise ShapeError(f"attention: {v.shape[-2]} values for {k.shape[-2]} keys")
    scale = 1.0 / math.sqrt(dk)
    s = (q.data @ np.swapaxes(k.data, -1, -2)) * scale
    tq, tk = s.shape[-2], s.shape[-1]
    if causal_mask:
        blocked = np.triu(np.ones((tq, tk), dtype=bool), k=1 + tk - tq)
        s = np.where(blocked, -np.inf, s)
    s = s - s.max(axis=-1, keepdims=True)
    p = np.exp(s)
    p /= p.sum(axis=-1, keepdims=True)
    p = p.astype(q.dtype, copy=False)
    out = p @ v.data

    def bw(g):
        gv = _unbroadcast(np.swapaxes(p, -1, -2) @ g, v.shape)
        gp = g @ np.swapaxes(v.data, -1, -2)
        gs = p * (gp - (gp * p).sum(axis=-1, keepdims=True)) * scale
        gq = _unbroadcast(gs @ k.data, q.shape)
        gk = _unbroadcast(np.swapaxes(gs, -1, -2) @ q.data, k.shape)
        return gq, gk, gv

    return record("attention", out, (q, k, v), bw)


# ---------------------------------------------------------------- convolution

def _check_conv(x: Tensor, kernel: Tensor, stride: int, padding: int, channels_last: bool, depthwise: bool):
    if x.ndim != 4:
        raise ShapeError(f"conv input must be 4-D, got {x.ndim}-D")
    if kernel.ndim != 4:
        raise ShapeError(f"conv kernel must be 4-D, got {kernel.ndim}-D")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if padding < 0:
        raise ValueError("padding must be >= 0")
    if channels_last:
        n, h, w, c = x.shape
    else:
        n, c, h, w = x.shape
    c_out, c_k, kh, kw = kernel.shape
    if depthwise:
        if c_k != 1:
            raise ShapeError(f"depthwise kernel dimension 1 (in-channels per group) must be 1, got {c_k}")
        if c_out != c:
            raise ShapeError(f"depthwise kernel channels {c_out} != input channels {c}")
    elif c_k != c:
        raise ShapeError(f"input channels {c} != kernel in-channels {c_k}")
    if kh > h + 2 * padding:
        raise ShapeError(f"kernel height {kh} exceeds padded input height {h + 2 * padding}")
    if kw > w + 2 * padding:
        raise ShapeError(f"kernel width {kw} exceeds padded input width {w + 2 * padding}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    return n, c, h, w, c_out, kh, kw, ho, wo


def _to_nhwc(a: np.ndarray, channels_last: bool) -> np.ndarray:
    return a if channels_last else a.transpose(0, 2, 3, 1)


def _from_nhwc(a: np.ndarray, channels_last: bool) -> np.ndarray:
    return a if channels_last else np.ascontiguousarray(a.transpose(0, 3, 1, 2))


def _pad_hw(a: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return a
    return np.pad(a, ((0, 0), (padding, padding), (padding, padding), (0, 0)))


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0,
           channels_last: bool = False) -> Tensor:
    """2-D cross-correlation (no kernel flip).

    ``x`` is [N, C_in, H, W] (or [N, H, W, C_in] with ``channels_last``);
    ``kernel`` is always [C_out, C_in, kh, kw].
    """
    n, c, h, w, c_out, kh, kw, ho, wo = _check_conv(x, kernel, stride, padding, channels_last, False)
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv bias must have shape ({c_out},), got {bias.shape}")
    xp = _pad_hw(_to_nhwc(x.data, channels_last), padding)
    # (N, H', W', C, kh, kw)
    cols = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    out = np.tensordot(cols, kernel.data, axes=([3, 4, 5], [1, 2, 3]))
    if bias is not None:
        out += bias.data
    inputs = (x, kernel) if bias is None else (x, kernel, bias)

    def bw(g):
        g = _to_nhwc(g, channels_last)
        gx = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :] += (
                        g @ kernel.data[:, :, i, j]
                    )
            gx = gxp[:, padding:padding + h, padding:padding + w, :]
            gx = _from_nhwc(gx, channels_last) if not channels_last else np.ascontiguousarray(gx)
        gk = None
        if kernel.requires_grad:
            gk = np.tensordot(g, cols, axes=([0, 1, 2], [0, 1, 2]))
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=(0, 1, 2))

    return record("conv2d", _from_nhwc(out, channels_last), inputs, bw)


def depthwise_conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0,
                     channels_last: bool = False) -> Tensor:
    """Per-channel cross-correlation; ``kernel`` is [C, 1, kh, kw]."""
    n, c, h, w, _, kh, kw, ho, wo = _check_conv(x, kernel, stride, padding, channels_last, True)
    if bias is not None and bias.shape != (c,):
        raise ShapeError(f"conv bias must have shape ({c},), got {bias.shape}")
    xp = _pad_hw(_to_nhwc(x.data, channels_last), padding)
    kt = np.ascontiguousarray(kernel.data[:, 0].transpose(1, 2, 0))  # (kh, kw, C)
    hs = stride * (ho - 1) + 1
    ws = stride * (wo - 1) + 1
    out = np.zeros((n, ho, wo, c), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            out += xp[:, i:i + hs:stride, j:j + ws:stride, :] * kt[i, j]
    if bias is not None:
        out += bias.data
    inputs = (x, kernel) if bias is None else (x, kernel, bias)

    def bw(g):
        g = np.ascontiguousarray(_to_nhwc(g, channels_last))
        gx = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i:i + hs:stride, j:j + ws:stride, :] += g * kt[i, j]
            gx = gxp[:, padding:padding + h, padding:padding + w, :]
            gx = _from_nhwc(gx, channels_last) if not channels_last else np.ascontiguousarray(gx)
        gk = None
        if kernel.requires_grad:
            g2 = g.reshape(-1, c)
            gkt = np.empty((kh, kw, c), dtype=xp.dtype)
            for i in range(kh):
                for j in range(kw):
                    win = xp[:, i:i + hs:stride, j:j + ws:stride, :].reshape(-1, c)
                    gkt[i, j] = np.einsum("pc,pc->c", win, g2)
            gk = gkt.transpose(2, 0, 1)[:, None]
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=(0, 1, 2))

    return record("depthwise_conv2d", _from_nhwc(out, channels_last), inputs, bw)


__all__ = [
    "add", "sub", "mul", "div", "power", "exp", "log", "tanh", "relu", "gelu",
    "sum", "mean", "reshape", "transpose", "getitem", "concat",
    "matmul", "linear", "embedding", "softmax", "log_softmax", "layer_norm",
    "cross_entropy", "attention", "conv2d", "depthwise_conv2d",
]
