"""Dataset manifests, patch augmentation, patch-based inference, CCMs and evaluation."""
from __future__ import annotations

import csv
import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import cv2
import numpy as np

from .color import DomainError, as_illuminant, check_image, rae
from .imageio import load_image
from .metrics import ErrorStats, summarize

PATCH = 64
SUPER_CROP = 92
MAX_ANGLE = 30.0
GAIN_RANGE = (0.8, 1.2)
MAX_LONG_SIDE, MAX_SHORT_SIDE = 1920, 1080
SPLITS = ("train", "val", "test")
MANIFEST_NAME = "manifest.tsv"


class ManifestError(ValueError):
    pass


class UnlabeledDataError(DomainError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    gt: tuple[float, float, float] | None
    camera: str = "synth"
    split: str = "train"
    labeled: bool = False

    def __post_init__(self):
        if self.labeled != (self.gt is not None):
            raise ManifestError(f"{self.path}: labeled flag must match presence of ground truth")
        if self.split not in SPLITS:
            raise ManifestError(f"{self.path}: unknown split {self.split!r}")
        if self.gt is not None and min(self.gt) <= 0:
            raise ManifestError(f"{self.path}: ground truth must be strictly positive")


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    root: Path = Path(".")

    def __post_init__(self):
        paths = [e.path for e in self.entries]
        if len(set(paths)) != len(paths):
            dupes = sorted({p for p in paths if paths.count(p) > 1})
            raise ManifestError(f"duplicate image paths in manifest: {dupes[:5]}")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def image_path(self, entry: ManifestEntry) -> Path:
        return self.root / entry.path

    def labeled(self) -> "DatasetManifest":
        return DatasetManifest([e for e in self.entries if e.labeled], self.root)

    def unlabeled(self) -> "DatasetManifest":
        return DatasetManifest([e for e in self.entries if not e.labeled], self.root)

    def split(self, name: str) -> "DatasetManifest":
        return DatasetManifest([e for e in self.entries if e.split == name], self.root)

    def __add__(self, other: "DatasetManifest") -> "DatasetManifest":
        if self.root.resolve() == other.root.resolve():
            return DatasetManifest(self.entries + other.entries, self.root)
        # different roots: rebase onto absolute paths
        rebased = [replace(e, path=str((m.root / e.path).resolve())) for m in (self, other) for e in m.entries]
        return DatasetManifest(rebased, Path("/"))


def _format_gt(gt) -> str:
    return "-" if gt is None else ",".join(repr(float(v)) for v in gt)


def format_manifest(manifest: DatasetManifest) -> str:
    lines = ["# path\tground_truth\tcamera\tsplit\tlabeled"]
    for e in manifest.entries:
        lines.append("\t".join((e.path, _format_gt(e.gt), e.camera, e.split, "1" if e.labeled else "0")))
    return "\n".join(lines) + "\n"


def save_manifest(manifest: DatasetManifest, path) -> Path:
    path = Path(path)
    path.write_text(format_manifest(manifest), encoding="utf-8")
    return path


def load_manifest(path) -> DatasetManifest:
    """Parse a tab-separated manifest; paths resolve against its directory."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    entries = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 5:
            raise ManifestError(f"{path}:{lineno}: expected 5 tab-separated fields, got {len(cols)}")
        img, gt_s, camera, split, flag = cols
        try:
            gt = None if gt_s == "-" else tuple(float(v) for v in gt_s.split(","))
        except ValueError as exc:
            raise ManifestError(f"{path}:{lineno}: bad ground truth {gt_s!r}") from exc
        if gt is not None and len(gt) != 3:
            raise ManifestError(f"{path}:{lineno}: ground truth needs 3 components")
        if flag not in ("0", "1"):
            raise ManifestError(f"{path}:{lineno}: labeled flag must be 0 or 1, got {flag!r}")
        try:
            entries.append(ManifestEntry(img, gt, camera, split, flag == "1"))
        except ManifestError as exc:
            raise ManifestError(f"{path}:{lineno}: {exc}") from exc
    try:
        return DatasetManifest(entries, path.parent)
    except ManifestError as exc:
        raise ManifestError(f"{path}: {exc}") from exc


def fit_working_size(img: np.ndarray) -> np.ndarray:
    """Area-downscale images larger than 1920x1080 (either orientation)."""
    h, w = img.shape[:2]
    long_side, short_side = max(h, w), min(h, w)
    scale = min(1.0, MAX_LONG_SIDE / long_side, MAX_SHORT_SIDE / short_side)
    if scale >= 1.0:
        return img
    size = (max(1, round(w * scale)), max(1, round(h * scale)))
    return cv2.resize(img, size, interpolation=cv2.INTER_AREA)


def downscale_half(img: np.ndarray) -> np.ndarray:
    """Halve both axes by 2x2 box averaging (a trailing odd row/column is dropped)."""
    h, w = img.shape[0] // 2 * 2, img.shape[1] // 2 * 2
    blocks = img[:h, :w].reshape(h // 2, 2, w // 2, 2, -1)
    return blocks.mean(axis=(1, 3), dtype=np.float64).astype(img.dtype)


def rotate_center_crop(region: np.ndarray, angle_deg: float, size: int = PATCH) -> np.ndarray:
    """Bilinearly sample a ``size`` square rotated by ``angle_deg`` about the region centre."""
    rh, rw = region.shape[:2]
    cy, cx = (rh - 1) / 2.0, (rw - 1) / 2.0
    off = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    dy, dx = np.meshgrid(off, off, indexing="ij")
    t = math.radians(angle_deg)
    c, s = math.cos(t), math.sin(t)
    sy = cy + s * dx + c * dy
    sx = cx + c * dx - s * dy
    if sy.min() < 0 or sx.min() < 0 or sy.max() > rh - 1 or sx.max() > rw - 1:
        raise DomainError(f"a {size}px patch rotated by {angle_deg} deg does not fit a {rh}x{rw} region")
    y0 = np.minimum(np.floor(sy).astype(int), rh - 2)
    x0 = np.minimum(np.floor(sx).astype(int), rw - 2)
    fy = (sy - y0)[..., None]
    fx = (sx - x0)[..., None]
    src = region.astype(np.float64)
    top = src[y0, x0] * (1 - fx) + src[y0, x0 + 1] * fx
    bot = src[y0 + 1, x0] * (1 - fx) + src[y0 + 1, x0 + 1] * fx
    return (top * (1 - fy) + bot * fy).astype(region.dtype)


@dataclass(frozen=True)
class Augmentation:
    """The random draws behind one augmented patch."""

    top: int
    left: int
    angle: float
    gains: tuple[float, float, float]


def draw_augmentation(shape, rng: np.random.Generator, training: bool = True) -> Augmentation:
    h, w = shape[:2]
    if h < SUPER_CROP or w < SUPER_CROP:
        raise DomainError(f"image {h}x{w} is smaller than the {SUPER_CROP}x{SUPER_CROP} crop")
    top = int(rng.integers(0, h - SUPER_CROP + 1))
    left = int(rng.integers(0, w - SUPER_CROP + 1))
    angle = float(rng.uniform(-MAX_ANGLE, MAX_ANGLE))
    gains = tuple(float(g) for g in rng.uniform(*GAIN_RANGE, size=3)) if training else (1.0, 1.0, 1.0)
    return Augmentation(top, left, angle, gains)


def augment_patch(img, gt, rng: np.random.Generator | None = None, aug: Augmentation | None = None,
                  fit: bool = True):
    """Crop, rotate and colour-jitter one training patch.

    A 92x92 region is cropped, rotated about its centre by an angle in
    [-30, 30] degrees and the central 64x64 window is kept, so no pixel
    outside the region is ever sampled. The patch and its label are then
    scaled by the same per-channel gains from [0.8, 1.2].

    Args:
        img: H x W x 3 linear image.
        gt: Ground-truth illuminant, or ``None`` for unlabeled images.
        rng: Source of randomness (ignored when ``aug`` is given).
        aug: Explicit draws, for reproducing or testing a specific patch.
        fit: Downscale images larger than 1920x1080 first.

    Returns:
        ``(patch, gt')`` where ``gt' = gains * gt`` or ``None``.
    """
    img = check_image(img)
    if fit:
        img = fit_working_size(img)
    if aug is None:
        if rng is None:
            raise ValueError("augment_patch needs either rng or aug")
        aug = draw_augmentation(img.shape, rng)
    region = img[aug.top:aug.top + SUPER_CROP, aug.left:aug.left + SUPER_CROP]
    if region.shape[:2] != (SUPER_CROP, SUPER_CROP):
        raise DomainError(f"crop at ({aug.top}, {aug.left}) leaves the {img.shape[0]}x{img.shape[1]} image")
    patch = rotate_center_crop(region, aug.angle)
    gains = np.asarray(aug.gains)
    patch = np.clip(patch * gains.astype(patch.dtype), 0.0, 1.0)
    gt_out = None if gt is None else tuple(float(v) for v in as_illuminant(gt) * gains)
    return patch, gt_out


def pool_estimates(estimates) -> np.ndarray:
    """Per-channel median of patch estimates, renormalized to unit length."""
    est = np.asarray(estimates, dtype=np.float64)
    med = np.median(est, axis=0)
    norm = np.linalg.norm(med)
    if norm == 0:
        raise DomainError("pooled estimate is the zero vector")
    return med / norm


def sample_patches(img: np.ndarray, rng: np.random.Generator, n: int = 5, size: int = PATCH) -> np.ndarray:
    h, w = img.shape[:2]
    if h < size or w < size:
        raise DomainError(f"image {h}x{w} is smaller than a {size}x{size} patch")
    tops = rng.integers(0, h - size + 1, size=n)
    lefts = rng.integers(0, w - size + 1, size=n)
    return np.stack([img[t:t + size, l:l + size] for t, l in zip(tops, lefts)])


def infer_illuminant(model, img, rng: np.random.Generator, n_patches: int = 5) -> np.ndarray:
    """Global illuminant estimate from median-pooled patch estimates.

    The image is halved in both axes by area averaging, ``n_patches``
    random 64x64 windows are estimated in one batch, and the per-channel
    median is renormalized.

    ``model`` is either a :class:`~c3ae.model.CAEParams` or a callable
    mapping an ``(N, 3, 64, 64)`` float32 batch to ``(N, 3)`` estimates.
    """
    img = check_image(img)
    small = downscale_half(img)
    patches = sample_patches(small, rng, n_patches)
    batch = np.ascontiguousarray(patches.transpose(0, 3, 1, 2), dtype=np.float32)
    if callable(model):
        est = np.asarray(model(batch))
    else:
        from .model import forward_estimate

        est = forward_estimate(model, batch, training=False).data
    return pool_estimates(est)


@dataclass(frozen=True)
class CCM:
    matrix: np.ndarray

    @property
    def condition_number(self) -> float:
        return float(np.linalg.cond(self.matrix))

    def inverse(self) -> "CCM":
        return CCM(np.linalg.inv(self.matrix))


def fit_ccm(src, dst) -> CCM:
    """Least-squares 3x3 matrix ``M`` minimizing ``sum ||M @ src_i - dst_i||^2``.

    Solved through the normal equations in float64.

    Raises:
        DomainError: If the source colours do not span RGB space.
    """
    s = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    d = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    if s.shape != d.shape:
        raise ValueError(f"need matching correspondences, got {s.shape} and {d.shape}")
    rank = np.linalg.matrix_rank(s)
    if rank < 3:
        raise DomainError(f"rank-deficient correspondences: source colours span rank {rank} < 3")
    gram = s.T @ s
    m_t = np.linalg.solve(gram, s.T @ d)
    return CCM(m_t.T)


def ccm_residual(ccm, src, dst) -> float:
    m = ccm.matrix if isinstance(ccm, CCM) else np.asarray(ccm)
    s = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    d = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    return float(np.sum((s @ m.T - d) ** 2))


def apply_ccm(img, ccm) -> np.ndarray:
    img = check_image(img)
    m = ccm.matrix if isinstance(ccm, CCM) else np.asarray(ccm, dtype=np.float64)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        raise DomainError(f"CCM must be a finite 3x3 matrix, got shape {m.shape}")
    out = img.astype(np.float64) @ m.T
    return np.clip(out, 0.0, 1.0).astype(img.dtype if img.dtype.kind == "f" else np.float64)


@dataclass(frozen=True)
class ImageResult:
    path: str
    estimate: tuple[float, float, float]
    rae: float


def image_rng(seed: int, index: int) -> np.random.Generator:
    """Random stream for item ``index``, independent of processing order."""
    return np.random.default_rng([seed, index])


def evaluate(estimator, manifest: DatasetManifest, seed: int = 0, csv_path=None,
             workers: int = 1) -> tuple[ErrorStats, list[ImageResult]]:
    """Angular-error summary of an estimator over a labeled manifest.

    Args:
        estimator: A :class:`~c3ae.model.CAEParams` (patch inference with
            median pooling) or a callable taking a full image and returning
            an illuminant (e.g. a statistical baseline).
        manifest: Entries to evaluate; all must be labeled.
        seed: Base seed; image ``i`` uses its own stream derived from it.
        csv_path: Optional per-image CSV destination.
        workers: Thread count for per-image evaluation.
    """
    if len(manifest) == 0:
        raise UnlabeledDataError("cannot evaluate an empty manifest")
    missing = [e.path for e in manifest if not e.labeled]
    if missing:
        raise UnlabeledDataError(f"{len(missing)} manifest entries have no ground truth, e.g. {missing[0]}")
    from .model import CAEParams

    def run(item):
        i, entry = item
        img = load_image(manifest.image_path(entry))
        if isinstance(estimator, CAEParams):
            est = infer_illuminant(estimator, img, image_rng(seed, i))
        else:
            est = np.asarray(estimator(img), dtype=np.float64)
        return ImageResult(entry.path, tuple(float(v) for v in est), rae(entry.gt, est))

    items = list(enumerate(manifest.entries))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, items))
    else:
        results = [run(item) for item in items]
    if csv_path is not None:
        write_results_csv(results, csv_path)
    return summarize(r.rae for r in results), results


def write_results_csv(results: Iterable[ImageResult], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("path", "est_r", "est_g", "est_b", "rae_deg"))
        for r in results:
            writer.writerow((r.path, *(repr(v) for v in r.estimate), repr(r.rae)))


def manifest_checksum(manifest: DatasetManifest) -> str:
    """SHA-256 over the manifest text and every referenced image file."""
    digest = hashlib.sha256(format_manifest(manifest).encode("utf-8"))
    for entry in manifest:
        digest.update(manifest.image_path(entry).read_bytes())
    return digest.hexdigest()


def load_images(manifest: DatasetManifest) -> list[np.ndarray]:
    """Load every image of a manifest (fitted to the working size)."""
    return [fit_working_size(load_image(manifest.image_path(e))) for e in manifest]

