"""Statistical illuminant estimators from the Minkowski-norm family.

All four classic presets are zero-order (no derivatives) members of one
estimator: optional Gaussian smoothing followed by a per-channel p-norm
mean of the pixel values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .color import DomainError, check_image


@dataclass(frozen=True)
class MinkowskiConfig:
    p: float = 1.0
    sigma: float = 0.0

    def __post_init__(self):
        if not (self.p >= 1 or math.isinf(self.p)):
            raise ValueError(f"Minkowski order must be >= 1, got {self.p}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


GREY_WORLD = MinkowskiConfig(p=1.0, sigma=0.0)
WHITE_PATCH = MinkowskiConfig(p=math.inf, sigma=0.0)
SHADES_OF_GREY = MinkowskiConfig(p=6.0, sigma=0.0)
GENERAL_GREY_WORLD = MinkowskiConfig(p=13.0, sigma=2.0)


def smooth(img: np.ndarray, sigma: float) -> np.ndarray:
    """Per-channel Gaussian blur, kernel truncated at 3 sigma, reflected borders."""
    if sigma == 0:
        return img
    return gaussian_filter(img, sigma=(sigma, sigma, 0), mode="reflect", truncate=3.0)


def minkowski_estimate(img, cfg: MinkowskiConfig = GREY_WORLD) -> np.ndarray:
    """Estimate the illuminant as the per-channel Minkowski p-mean.

    Args:
        img: H x W x 3 linear image.
        cfg: Minkowski order and pre-smoothing scale.

    Returns:
        Unit-norm RGB illuminant estimate.

    Raises:
        DomainError: If a channel is identically zero after smoothing.
    """
    img = check_image(img).astype(np.float64)
    data = smooth(img, cfg.sigma).reshape(-1, 3)
    data = np.maximum(data, 0.0)
    if math.isinf(cfg.p):
        est = data.max(axis=0)
    else:
        # scale by the channel max first so large p cannot underflow
        peak = data.max(axis=0)
        if np.any(peak == 0):
            raise DomainError("degenerate input: an image channel is all zero")
        est = peak * np.mean((data / peak) ** cfg.p, axis=0) ** (1.0 / cfg.p)
    if np.any(est == 0):
        raise DomainError("degenerate input: an image channel is all zero")
    return est / np.linalg.norm(est)


def grey_world(img) -> np.ndarray:
    return minkowski_estimate(img, GREY_WORLD)


def white_patch(img) -> np.ndarray:
    return minkowski_estimate(img, WHITE_PATCH)


def shades_of_grey(img, p: float = SHADES_OF_GREY.p) -> np.ndarray:
    return minkowski_estimate(img, MinkowskiConfig(p=p, sigma=0.0))


def general_grey_world(img) -> np.ndarray:
    return minkowski_estimate(img, GENERAL_GREY_WORLD)


BASELINES = {
    "grey-world": grey_world,
    "white-patch": white_patch,
    "shades-of-grey": shades_of_grey,
    "general-grey-world": general_grey_world,
}
