"""Illuminant vectors, angular error and diagonal (von Kries) correction."""
from __future__ import annotations

import math

import numpy as np


class DomainError(ValueError):
    """Raised for inputs outside an operation's mathematical domain."""


def as_illuminant(ill, name: str = "illuminant") -> np.ndarray:
    """Coerce ``ill`` to a float64 3-vector and check it is finite."""
    vec = np.asarray(ill, dtype=np.float64).reshape(-1)
    if vec.shape != (3,):
        raise DomainError(f"{name} must have exactly 3 components, got shape {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise DomainError(f"{name} has non-finite components: {vec}")
    return vec


def normalize(ill) -> np.ndarray:
    """Return the unit-L2-norm version of an illuminant."""
    vec = as_illuminant(ill)
    norm = np.linalg.norm(vec)
    if norm == 0:
        raise DomainError("cannot normalize a zero vector")
    return vec / norm


def max_normalize(ill) -> np.ndarray:
    """Scale an illuminant so its largest component is 1."""
    vec = as_illuminant(ill)
    peak = vec.max()
    if peak <= 0:
        raise DomainError(f"illuminant has no positive component: {vec}")
    return vec / peak


def rae(a, b) -> float:
    """Recovery angular error between two illuminants, in degrees.

    Args:
        a: First RGB vector (any positive scale).
        b: Second RGB vector.

    Returns:
        The angle between ``a`` and ``b`` in degrees.

    Raises:
        DomainError: If either vector has zero norm.
    """
    va = as_illuminant(a, "a")
    vb = as_illuminant(b, "b")
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na == 0 or nb == 0:
        raise DomainError("rae is undefined for zero-norm vectors")
    cos = float(np.dot(va, vb) / (na * nb))
    return math.degrees(math.acos(min(1.0, max(-1.0, cos))))


def rae_batch(est: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Row-wise :func:`rae` for two ``(N, 3)`` arrays."""
    est = np.asarray(est, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    ne = np.linalg.norm(est, axis=1)
    ng = np.linalg.norm(gt, axis=1)
    if np.any(ne == 0) or np.any(ng == 0):
        raise DomainError("rae is undefined for zero-norm vectors")
    cos = np.einsum("ij,ij->i", est, gt) / (ne * ng)
    return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))


def check_image(img) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise DomainError(f"expected an H x W x 3 image, got shape {img.shape}")
    return img


def apply_illuminant(img, ill) -> np.ndarray:
    """Render ``img`` under illuminant ``ill`` by per-channel multiplication.

    ``ill`` is expected to be max-normalized so the result stays in [0, 1];
    the output is clipped regardless.
    """
    img = check_image(img)
    gains = as_illuminant(ill)
    out = img * gains.astype(img.dtype if img.dtype.kind == "f" else np.float64)
    return np.clip(out, 0.0, 1.0)


def correction_gains(ill_est) -> np.ndarray:
    """Per-channel gains that neutralize ``ill_est`` while keeping green fixed."""
    vec = as_illuminant(ill_est, "ill_est")
    if np.any(vec <= 0):
        raise DomainError(f"illuminant estimate must be strictly positive, got {vec}")
    return vec[1] / vec


def correct_image(img, ill_est) -> np.ndarray:
    """White-balance ``img`` given an illuminant estimate (green-anchored)."""
    img = check_image(img)
    gains = correction_gains(ill_est)
    out = img * gains.astype(img.dtype if img.dtype.kind == "f" else np.float64)
    return np.clip(out, 0.0, 1.0)
