"""Scalar training losses."""
from __future__ import annotations

import numpy as np

from ..color import DomainError
from .tensor import Tensor, make_op

BCE_CLAMP = 1e-7
COS_CLAMP = 1e-7


def _const(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def bce_loss(pred: Tensor, target) -> Tensor:
    """Mean binary cross-entropy; ``pred`` is clamped to [1e-7, 1 - 1e-7]."""
    t = _const(target).astype(np.float64)
    if t.shape != pred.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {t.shape}")
    p = np.clip(pred.data.astype(np.float64), BCE_CLAMP, 1.0 - BCE_CLAMP)
    n = p.size
    value = -np.sum(t * np.log(p) + (1.0 - t) * np.log1p(-p)) / n

    def backward(g):
        return (g * (p - t) / (p * (1.0 - p)) / n,)

    return make_op(np.asarray(value), (pred,), backward)


def rae_loss(est: Tensor, gt) -> Tensor:
    """Mean angular error in degrees between rows of ``est`` and ``gt``.

    The forward value clamps the cosine to [-1, 1]; the derivative uses the
    tighter [-1 + 1e-7, 1 - 1e-7] so it stays finite when rows coincide.
    """
    e = est.data.astype(np.float64)
    t = _const(gt).astype(np.float64)
    if e.ndim != 2 or e.shape != t.shape:
        raise ValueError(f"rae_loss expects matching (N, C) inputs, got {e.shape} and {t.shape}")
    ne = np.linalg.norm(e, axis=1, keepdims=True)
    nt = np.linalg.norm(t, axis=1, keepdims=True)
    if np.any(ne == 0) or np.any(nt == 0):
        raise DomainError("rae_loss is undefined for zero-norm rows")
    cos = np.sum(e * t, axis=1, keepdims=True) / (ne * nt)
    n = e.shape[0]
    value = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))).sum() / n

    def backward(g):
        c = np.clip(cos, -1.0 + COS_CLAMP, 1.0 - COS_CLAMP)
        dcos = t / (ne * nt) - cos * e / ne**2
        dangle = -np.degrees(1.0) / np.sqrt(1.0 - c * c)
        return (g * dangle * dcos / n,)

    return make_op(np.asarray(value), (est,), backward)
