"""Compute kernels for stride-1 "same" 2-D cross-correlation.

Two interchangeable kernels implement the same forward/backward math:

* ``numpy``: im2col + GEMM. The input gradient is computed as a
  correlation of the output gradient with the flipped, channel-transposed
  kernel, which keeps the column matrix proportional to the output channel
  count rather than the input channel count.
* ``torch``: delegates the three GEMM-heavy primitives to libtorch when it
  is importable. It exists only for speed; the autodiff graph, padding
  rule and every other op remain in numpy.

Select with :func:`set_backend` or the ``C3AE_CONV_BACKEND`` environment
variable (``auto`` picks torch when available).
"""
from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_BACKEND = None


def same_padding(k: int) -> tuple[int, int]:
    """Zero padding (before, after) that keeps the spatial size for kernel ``k``."""
    lo = (k - 1) // 2
    return lo, k - 1 - lo


def torch_available() -> bool:
    try:
        import torch  # noqa: F401
    except ImportError:
        return False
    return True


def set_backend(name: str):
    global _BACKEND
    if name == "auto":
        name = "torch" if torch_available() else "numpy"
    if name not in ("numpy", "torch"):
        raise ValueError(f"unknown conv backend {name!r}")
    if name == "torch" and not torch_available():
        raise ValueError("torch conv backend requested but torch is not installed")
    _BACKEND = name


def get_backend() -> str:
    if _BACKEND is None:
        set_backend(os.environ.get("C3AE_CONV_BACKEND", "auto"))
    return _BACKEND


def _im2col(xp: np.ndarray, k: int, h: int, w: int) -> np.ndarray:
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # N, C, H, W, k, k
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * k * k)


def _pad(x: np.ndarray, lo: int, hi: int) -> np.ndarray:
    return np.pad(x, ((0, 0), (0, 0), (lo, hi), (lo, hi)))


def forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Return ``(y, ctx)``; ``ctx`` is whatever :func:`backward` needs."""
    if get_backend() == "torch":
        return _torch_forward(x, w, b)
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    lo, hi = same_padding(k)
    cols = _im2col(_pad(x, lo, hi), k, h, wd)
    y = cols @ w.reshape(o, -1).T
    y += b
    return np.ascontiguousarray(y.reshape(n, h, wd, o).transpose(0, 3, 1, 2)), ("numpy", cols, x.shape)


def backward(g: np.ndarray, ctx, w: np.ndarray, need_input: bool = True):
    """Gradients ``(gx, gw, gb)`` for output gradient ``g``."""
    if ctx[0] == "torch":
        return _torch_backward(g, ctx, w, need_input)
    _, cols, xshape = ctx
    n, c, h, wd = xshape
    o, _, k, _ = w.shape
    lo, hi = same_padding(k)
    g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
    gw = (g2.T @ cols).reshape(w.shape)
    gb = g.sum(axis=(0, 2, 3), dtype=np.float64).astype(g.dtype)
    gx = None
    if need_input:
        wt = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)).reshape(c, -1)
        gcols = _im2col(_pad(g, hi, lo), k, h, wd)
        gx = np.ascontiguousarray((gcols @ wt.T).reshape(n, h, wd, c).transpose(0, 3, 1, 2))
    return gx, gw, gb


def _torch_forward(x, w, b):
    import torch
    import torch.nn.functional as F

    k = w.shape[2]
    lo, hi = same_padding(k)
    with torch.no_grad():
        xp = F.pad(torch.from_numpy(x), (lo, hi, lo, hi))
        y = F.conv2d(xp, torch.from_numpy(w), torch.from_numpy(b))
    return y.numpy(), ("torch", xp, x.shape)


def _torch_backward(g, ctx, w, need_input):
    import torch
    from torch.nn.grad import conv2d_input, conv2d_weight

    _, xp, xshape = ctx
    k = w.shape[2]
    lo, _ = same_padding(k)
    h, wd = xshape[2:]
    with torch.no_grad():
        gt = torch.from_numpy(np.ascontiguousarray(g))
        gw = conv2d_weight(xp, w.shape, gt).numpy()
        gx = None
        if need_input:
            gxp = conv2d_input(xp.shape, torch.from_numpy(w), gt)
            gx = np.ascontiguousarray(gxp[:, :, lo:lo + h, lo:lo + wd].numpy())
    gb = g.sum(axis=(0, 2, 3), dtype=np.float64).astype(g.dtype)
    return gx, gw, gb
