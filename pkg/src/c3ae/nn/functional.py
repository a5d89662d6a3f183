"""Differentiable ops on NCHW tensors."""
from __future__ import annotations

import numpy as np

from . import _conv
from .tensor import Tensor, as_tensor, make_op


def conv2d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Stride-1 cross-correlation with "same" zero padding.

    Even kernel sizes pad one more pixel after than before.
    """
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ValueError(f"conv2d expects NCHW input and OCkk kernels, got {x.shape} and {weight.shape}")
    o, c, kh, kw = weight.shape
    if kh != kw:
        raise ValueError(f"only square kernels are supported, got {kh}x{kw}")
    if x.shape[1] != c:
        raise ValueError(f"input has {x.shape[1]} channels but kernels expect {c}")
    if bias.shape != (o,):
        raise ValueError(f"bias shape {bias.shape} does not match {o} output channels")
    if kh > x.shape[2] or kw > x.shape[3]:
        raise ValueError(f"kernel {kh}x{kw} larger than input {x.shape[2]}x{x.shape[3]}")
    dtype = np.result_type(x.data, weight.data)
    y, ctx = _conv.forward(x.data.astype(dtype, copy=False), weight.data.astype(dtype, copy=False),
                           bias.data.astype(dtype, copy=False))

    def backward(g):
        gx, gw, gb = _conv.backward(g.astype(dtype, copy=False), ctx, weight.data.astype(dtype, copy=False),
                                    need_input=x.requires_grad)
        return gx, gw, gb

    return make_op(y, (x, weight, bias), backward)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2. Ties route the gradient to the first element."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    win = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gwin = np.zeros((n, c, h // 2, w // 2, 4), dtype=g.dtype)
        np.put_along_axis(gwin, idx[..., None], g[..., None], axis=-1)
        return (gwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w),)

    return make_op(out, (x,), backward)


def upsample2_nearest(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    return make_op(out, (x,), lambda g: (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),))


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial axes, keeping them as size 1."""
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True, dtype=np.float64).astype(x.dtype)
    return make_op(out, (x,), lambda g: (np.broadcast_to(g / (h * w), x.shape).copy(),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_op(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    z = x.data
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return make_op(out, (x,), lambda g: (g * out * (1 - out),))


def softplus(x: Tensor) -> Tensor:
    z = x.data
    out = (np.maximum(z, 0) + np.log1p(np.exp(-np.abs(z)))).astype(x.dtype)

    def backward(g):
        e = np.exp(-np.abs(z))
        sig = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return (g * sig,)

    return make_op(out, (x,), backward)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1 / (1 - rate)`` while training."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    scale = np.asarray(1.0 / (1.0 - rate), dtype=x.dtype)
    mask = (rng.random(x.shape) >= rate) * scale
    mask = mask.astype(x.dtype)
    return make_op(x.data * mask, (x,), lambda g: (g * mask,))


def reshape(x: Tensor, shape) -> Tensor:
    return make_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def take_rows(x: Tensor, index) -> Tensor:
    """Select rows (first axis) of ``x``; gradients scatter back."""
    index = np.asarray(index, dtype=np.intp)

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return make_op(x.data[index], (x,), backward)


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale each row of an ``(N, C)`` tensor to unit L2 norm."""
    norm = np.sqrt(np.sum(x.data.astype(np.float64) ** 2, axis=1, keepdims=True))
    norm = np.maximum(norm, eps)
    out = (x.data / norm).astype(x.dtype)

    def backward(g):
        dot = np.sum(g * out, axis=1, keepdims=True)
        return ((g - out * dot) / norm,)

    return make_op(out, (x,), backward)


def mean(x: Tensor) -> Tensor:
    n = x.size
    out = np.asarray(x.data.sum(dtype=np.float64) / n)
    return make_op(out, (x,), lambda g: (np.full(x.shape, g / n, dtype=x.dtype),))


__all__ = [
    "as_tensor",
    "conv2d",
    "dropout",
    "global_avg_pool",
    "l2_normalize",
    "maxpool2",
    "mean",
    "relu",
    "reshape",
    "sigmoid",
    "softplus",
    "take_rows",
    "upsample2_nearest",
]
