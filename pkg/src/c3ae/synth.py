"""Synthetic scenes rendered under known illuminants (diagonal model).

A canonical scene is a mosaic of random reflectance rectangles seen under
white light; rendering multiplies each channel by the illuminant. Every
scene draws from its own random stream derived from ``(seed, index)`` so
generation order and parallelism never change the output.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .color import apply_illuminant, as_illuminant, max_normalize
from .data import CCM, MANIFEST_NAME, DatasetManifest, ManifestEntry, apply_ccm, save_manifest
from .imageio import save_image

REFLECTANCE_RANGE = (0.1, 0.9)

DEFAULT_CLUSTERS = (
    ((1.0, 0.65, 0.35), 0.04),  # warm, incandescent-like
    ((0.75, 1.0, 0.8), 0.04),  # daylight
    ((0.55, 0.85, 1.0), 0.04),  # shade / overcast
)


@dataclass(frozen=True)
class SceneConfig:
    width: int = 192
    height: int = 192
    num_patches: int = 40
    noise_std: float = 0.0
    seed: int = 0
    balanced: bool = False

    def __post_init__(self):
        if self.width < 64 or self.height < 64:
            raise ValueError(f"scenes must be at least 64x64, got {self.width}x{self.height}")
        if self.num_patches < 1:
            raise ValueError("num_patches must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class IlluminantPrior:
    mode: str = "cluster"
    clusters: tuple = field(default=DEFAULT_CLUSTERS)

    def __post_init__(self):
        if self.mode not in ("cluster", "uniform-chromaticity"):
            raise ValueError(f"unknown prior mode {self.mode!r}")
        if self.mode == "cluster":
            if not self.clusters:
                raise ValueError("cluster prior needs at least one cluster")
            for center, spread in self.clusters:
                if min(as_illuminant(center)) <= 0:
                    raise ValueError(f"cluster center must be strictly positive, got {center}")
                if spread < 0:
                    raise ValueError("cluster spread must be >= 0")

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """Draw one max-normalized illuminant."""
        if self.mode == "uniform-chromaticity":
            return max_normalize(rng.uniform(0.3, 1.0, size=3))
        center, spread = self.clusters[int(rng.integers(len(self.clusters)))]
        ill = as_illuminant(center) * np.exp(spread * rng.standard_normal(3))
        return max_normalize(ill)


def scene_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, index, stream])


def _balance(img: np.ndarray) -> np.ndarray:
    """Shift channel means to their common average, shrinking toward it if needed."""
    means = img.reshape(-1, 3).mean(axis=0)
    c = means.mean()
    out = img - (means - c)
    lo, hi = out.min(), out.max()
    if lo < 0 or hi > 1:
        # contraction about c keeps every channel mean at exactly c
        k = min(c / (c - lo) if lo < 0 else 1.0, (1 - c) / (hi - c) if hi > 1 else 1.0)
        out = c + (out - c) * k
    return out


def gen_canonical_scene(cfg: SceneConfig, index: int = 0) -> np.ndarray:
    """Random-rectangle reflectance mosaic under white light, float64 in [0, 1]."""
    rng = scene_rng(cfg.seed, index)
    h, w = cfg.height, cfg.width
    img = np.empty((h, w, 3))
    img[:] = rng.uniform(*REFLECTANCE_RANGE, size=3)
    if cfg.num_patches > 1:
        for _ in range(cfg.num_patches - 1):
            ph = int(rng.integers(max(2, h // 16), max(3, h // 2)))
            pw = int(rng.integers(max(2, w // 16), max(3, w // 2)))
            top = int(rng.integers(0, h - ph + 1))
            left = int(rng.integers(0, w - pw + 1))
            img[top:top + ph, left:left + pw] = rng.uniform(*REFLECTANCE_RANGE, size=3)
    if cfg.noise_std > 0:
        img = np.clip(img + rng.normal(0.0, cfg.noise_std, size=img.shape), 0.0, 1.0)
    if cfg.balanced:
        img = _balance(img)
    return img


def render(canonical: np.ndarray, ill) -> np.ndarray:
    """The canonical scene as captured under illuminant ``ill``."""
    return apply_illuminant(canonical, ill)


def render_sample(cfg: SceneConfig, prior: IlluminantPrior, index: int, ccm: CCM | None = None):
    """Scene ``index`` rendered under a prior draw: ``(image, ground truth)``."""
    canonical = gen_canonical_scene(cfg, index)
    ill = prior.sample(scene_rng(cfg.seed, index, 1))
    img = render(canonical, ill)
    if ccm is not None:
        img = apply_ccm(img, ccm)
        ill = ccm.matrix @ ill
    return img, ill


def gen_dataset(n_labeled: int, n_unlabeled: int, cfg: SceneConfig, prior: IlluminantPrior, out_dir,
                split: str = "train", camera: str = "synth", ccm: CCM | None = None,
                image_format: str = "png", workers: int = 1) -> DatasetManifest:
    """Render a dataset to ``out_dir`` and write its manifest.

    The first ``n_labeled`` scenes carry ground truth; the rest are stored
    without it. Unlabeled scenes are still rendered under prior draws.
    With ``ccm`` set, images and labels are mapped into another camera's
    RGB space.
    """
    if n_labeled < 0 or n_unlabeled < 0 or n_labeled + n_unlabeled < 1:
        raise ValueError("need n_labeled + n_unlabeled >= 1 with both non-negative")
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    try:
        img_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {img_dir}: {exc}") from exc

    def make(index: int) -> ManifestEntry:
        img, ill = render_sample(cfg, prior, index, ccm)
        rel = f"images/{split}_{index:05d}.{image_format}"
        target = out_dir / rel
        try:
            save_image(target, img)
        except OSError as exc:
            raise OSError(f"failed writing {target}: {exc}") from exc
        labeled = index < n_labeled
        gt = tuple(float(v) for v in ill) if labeled else None
        return ManifestEntry(rel, gt, camera, split, labeled)

    indices = range(n_labeled + n_unlabeled)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(make, indices))
    else:
        entries = [make(i) for i in indices]
    manifest = DatasetManifest(entries, out_dir)
    try:
        save_manifest(manifest, out_dir / MANIFEST_NAME)
    except OSError as exc:
        raise OSError(f"failed writing manifest in {out_dir}: {exc}") from exc
    return manifest
