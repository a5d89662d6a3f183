"""Training regimes: reconstruction pre-training, fine-tuning, and the composite objective."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import DatasetManifest, augment_patch, evaluate, load_images
from .metrics import ErrorStats
from .model import CAEParams, ConfigurationError, forward_autoencode, forward_estimate
from .nn import OptimizerState, Tensor, adam_step, bce_loss, rae_loss, take_rows

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 10
    alpha: float = 0.5
    lr: float = 1e-3
    seed: int = 0
    finetune_epochs: int | None = None
    finetune_batch_size: int = 20
    early_stop_patience: int | None = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1 or self.finetune_batch_size < 1:
            raise ValueError("batch sizes must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


PRETRAIN_DEFAULTS = TrainConfig(epochs=1000, batch_size=10)
FINETUNE_DEFAULTS = TrainConfig(epochs=1000, batch_size=20)


@dataclass
class TrainReport:
    losses: list[float] = field(default_factory=list)
    val_rae: list[float] = field(default_factory=list)
    wall_time: float = 0.0
    val_stats: ErrorStats | None = None
    phase_losses: dict[str, list[float]] = field(default_factory=dict)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            has_val = len(self.val_rae) == len(self.losses) and self.val_rae
            writer.writerow(("epoch", "loss", "val_rae_mean") if has_val else ("epoch", "loss"))
            for i, loss in enumerate(self.losses, 1):
                row = (i, repr(loss), repr(self.val_rae[i - 1])) if has_val else (i, repr(loss))
                writer.writerow(row)


class TrainingSet:
    """Images held in memory with optional per-image ground truth."""

    def __init__(self, images: Sequence[np.ndarray], gts: Sequence | None = None):
        self.images = list(images)
        self.gts = None if gts is None else [None if g is None else np.asarray(g, dtype=np.float64) for g in gts]
        if self.gts is not None and len(self.gts) != len(self.images):
            raise ValueError("need one ground truth slot per image")

    @classmethod
    def from_manifest(cls, manifest: DatasetManifest) -> "TrainingSet":
        return cls(load_images(manifest), [e.gt for e in manifest])

    def __len__(self):
        return len(self.images)

    def labeled_mask(self) -> np.ndarray:
        if self.gts is None:
            return np.zeros(len(self), dtype=bool)
        return np.array([g is not None for g in self.gts], dtype=bool)

    def subset(self, mask) -> "TrainingSet":
        idx = np.flatnonzero(mask)
        gts = None if self.gts is None else [self.gts[i] for i in idx]
        return TrainingSet([self.images[i] for i in idx], gts)

    def __add__(self, other: "TrainingSet") -> "TrainingSet":
        gts = [None] * len(self) if self.gts is None else list(self.gts)
        gts += [None] * len(other) if other.gts is None else list(other.gts)
        return TrainingSet(self.images + other.images, gts)


def as_training_set(data) -> TrainingSet:
    if isinstance(data, TrainingSet):
        return data
    if isinstance(data, DatasetManifest):
        return TrainingSet.from_manifest(data)
    sets = [as_training_set(d) for d in data]
    if not sets:
        return TrainingSet([])
    out = sets[0]
    for s in sets[1:]:
        out = out + s
    return out


def streams(seed: int):
    """Independent generators for batching, augmentation and dropout."""
    children = np.random.SeedSequence(seed).spawn(3)
    return tuple(np.random.default_rng(c) for c in children)


def mixed_batches(n_labeled: int, n_unlabeled: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """One epoch of batches over labeled items ``0..n_labeled-1`` then unlabeled ones.

    Both pools are shuffled and interleaved by stratified position so each
    batch holds labeled and unlabeled rows in proportion to the pool sizes.
    When labels exist every batch gets at least one labeled row (one
    unlabeled row is swapped for a random labeled item if needed).
    """
    total = n_labeled + n_unlabeled
    if total == 0:
        return []
    lab = rng.permutation(n_labeled)
    unl = n_labeled + rng.permutation(n_unlabeled)
    keys = np.concatenate([(np.arange(n_labeled) + 0.5) / max(n_labeled, 1),
                           (np.arange(n_unlabeled) + 0.5) / max(n_unlabeled, 1)])
    order = np.concatenate([lab, unl])[np.argsort(keys, kind="stable")]
    n_batches = math.ceil(total / batch_size)
    bounds = [(b * total) // n_batches for b in range(n_batches + 1)]
    batches = [order[bounds[b]:bounds[b + 1]].copy() for b in range(n_batches)]
    if n_labeled:
        for batch in batches:
            if not np.any(batch < n_labeled):
                batch[int(rng.integers(len(batch)))] = int(rng.integers(n_labeled))
    return batches


def _patch_batch(data: TrainingSet, idx, rng: np.random.Generator):
    patches, gts = [], []
    for i in idx:
        gt = None if data.gts is None else data.gts[i]
        patch, gt_aug = augment_patch(data.images[i], gt, rng, fit=False)
        patches.append(patch)
        gts.append(gt_aug)
    batch = np.ascontiguousarray(np.stack(patches).transpose(0, 3, 1, 2), dtype=np.float32)
    return batch, gts


def composite_loss(recon: Tensor, targets, codes: Tensor, gt_mask, gts, alpha: float) -> Tensor:
    """``alpha * BCE(all rows) + (1 - alpha) * mean RAE(labeled rows) / 90``.

    ``codes`` holds the per-row illuminant estimates read off the
    bottleneck. With no labeled row the angular term is zero.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    bce = bce_loss(recon, targets)
    rows = np.flatnonzero(np.asarray(gt_mask, dtype=bool))
    if rows.size == 0:
        return alpha * bce
    gt_rows = np.asarray([gts[i] for i in rows], dtype=np.float64)
    angular = rae_loss(take_rows(codes, rows), gt_rows)
    return alpha * bce + (1.0 - alpha) * (angular / 90.0)


def _step(params: CAEParams, tensors: dict[str, Tensor], names: list[str], state: OptimizerState):
    grads = {n: tensors[n].grad for n in names if tensors[n].grad is not None}
    adam_step(params.arrays, grads, state)


def pretrain(params: CAEParams, data, cfg: TrainConfig = PRETRAIN_DEFAULTS, unlabeled=None):
    """Minimize reconstruction BCE over labeled and unlabeled images.

    Labels are ignored. Only encoder, middle and decoder weights change.

    Args:
        params: Starting parameters (not modified).
        data: Labeled images (manifest, list of manifests or TrainingSet).
        cfg: Epochs, batch size, learning rate and seed.
        unlabeled: Optional unlabeled images.

    Returns:
        ``(trained params, TrainReport)``.
    """
    return _run_phase1(params, data, unlabeled, cfg, alpha=1.0, supervised=False)


def _run_phase1(params, labeled, unlabeled, cfg: TrainConfig, alpha: float, supervised: bool):
    # batching depends only on the labeled/unlabeled split, so plain
    # pre-training and the composite loss at alpha = 1 see identical batches
    everything = as_training_set(labeled) + as_training_set(unlabeled if unlabeled is not None else [])
    mask = everything.labeled_mask()
    pool = everything.subset(mask) + everything.subset(~mask)
    n_l, n_u = int(mask.sum()), int((~mask).sum())
    if n_l + n_u == 0:
        raise ValueError("training needs at least one image")
    if not params.has_decoder:
        raise ConfigurationError("reconstruction training needs a decoder")
    params = params.copy()
    names = params.names("encoder", "middle", "decoder")
    state = OptimizerState(lr=cfg.lr)
    batch_rng, aug_rng, drop_rng = streams(cfg.seed)
    report = TrainReport()
    start = time.perf_counter()
    for epoch in range(cfg.epochs):
        epoch_losses = []
        for idx in mixed_batches(n_l, n_u, cfg.batch_size, batch_rng):
            batch, gts = _patch_batch(pool, idx, aug_rng)
            tensors = params.tensors(names)
            recon, code = forward_autoencode((params.config, tensors), batch, True, drop_rng)
            if supervised:
                mask = idx < n_l
                est = forward_estimate((params.config, tensors), None, code=code)
                loss = composite_loss(recon, batch, est, mask, gts, alpha)
            else:
                loss = bce_loss(recon, batch)
            loss.backward()
            _step(params, tensors, names, state)
            epoch_losses.append(loss.item())
        report.losses.append(float(np.mean(epoch_losses)))
        log.info("phase-1 epoch %d/%d loss %.5f", epoch + 1, cfg.epochs, report.losses[-1])
    report.wall_time = time.perf_counter() - start
    return params, report


def finetune(params: CAEParams, labeled, cfg: TrainConfig = FINETUNE_DEFAULTS, val=None):
    """Minimize the angular error of illuminant estimates on labeled patches.

    The decoder is neither used nor changed. For 3-channel models without a
    head the code itself is regressed.

    Args:
        params: Starting parameters (not modified).
        labeled: Labeled images; unlabeled entries are skipped.
        cfg: ``epochs`` and ``batch_size`` drive this phase.
        val: Optional labeled validation manifest for the final stats and
            early stopping.
    """
    data = as_training_set(labeled)
    data = data.subset(data.labeled_mask())
    if len(data) == 0:
        raise ValueError("fine-tuning needs labeled images")
    if not params.config.with_head and params.config.code_channels != 3:
        raise ConfigurationError("fine-tuning a wide code needs a regression head")
    params = params.copy()
    names = params.names("encoder", "middle", "head")
    state = OptimizerState(lr=cfg.lr)
    batch_rng, aug_rng, drop_rng = streams(cfg.seed)
    report = TrainReport()
    best = (math.inf, None)
    stale = 0
    start = time.perf_counter()
    for epoch in range(cfg.epochs):
        epoch_losses = []
        order = batch_rng.permutation(len(data))
        for b in range(0, len(order), cfg.batch_size):
            idx = order[b:b + cfg.batch_size]
            batch, gts = _patch_batch(data, idx, aug_rng)
            tensors = params.tensors(names)
            est = forward_estimate((params.config, tensors), batch, True, drop_rng)
            loss = rae_loss(est, np.asarray(gts))
            loss.backward()
            _step(params, tensors, names, state)
            epoch_losses.append(loss.item())
        report.losses.append(float(np.mean(epoch_losses)))
        log.info("fine-tune epoch %d/%d rae %.4f", epoch + 1, cfg.epochs, report.losses[-1])
        if val is not None and cfg.early_stop_patience is not None:
            score = evaluate(params, val, seed=cfg.seed)[0].mean
            report.val_rae.append(score)
            if score < best[0]:
                best, stale = (score, params.copy()), 0
            else:
                stale += 1
                if stale >= cfg.early_stop_patience:
                    params = best[1]
                    break
    if val is not None:
        report.val_stats = evaluate(params, val, seed=cfg.seed)[0]
    report.wall_time = time.perf_counter() - start
    return params, report


def train_composite(params: CAEParams, labeled, unlabeled, cfg: TrainConfig, val=None):
    """Semi-supervised training on the composite loss, then labeled fine-tuning.

    Phase 1 runs ``cfg.epochs`` epochs of mixed batches (batch size
    ``cfg.batch_size``); phase 2 runs ``cfg.finetune_epochs`` epochs
    (default: ``cfg.epochs``) with ``cfg.finetune_batch_size``.
    """
    if params.config.code_channels != 3:
        raise ConfigurationError(
            f"composite training needs a 3-channel code, model has {params.config.code_channels}"
        )
    labeled = as_training_set(labeled)
    if not labeled.labeled_mask().any():
        raise ValueError("composite training needs labeled images")
    unlabeled = as_training_set(unlabeled if unlabeled is not None else [])
    params, rep1 = _run_phase1(params, labeled, unlabeled, cfg, cfg.alpha, supervised=True)
    ft_cfg = TrainConfig(
        epochs=cfg.epochs if cfg.finetune_epochs is None else cfg.finetune_epochs,
        batch_size=cfg.finetune_batch_size,
        lr=cfg.lr,
        seed=cfg.seed,
        early_stop_patience=cfg.early_stop_patience,
    )
    params, rep2 = finetune(params, labeled, ft_cfg, val=val)
    report = TrainReport(
        losses=rep1.losses + rep2.losses,
        val_rae=rep2.val_rae,
        wall_time=rep1.wall_time + rep2.wall_time,
        val_stats=rep2.val_stats,
        phase_losses={"composite": rep1.losses, "finetune": rep2.losses},
    )
    return params, report
