"""Training-dynamics utilities: LR schedule, stochastic depth, anchor
re-initialization, and batch-norm statistics adaptation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import AnchorSet, SeededRng, normalize
from .errors import (DimensionMismatch, EmptyStream, InvalidRate, OutOfRange,
                     ZeroVector)

log = logging.getLogger(__name__)


@dataclass
class Schedule:
    """Linear warmup from base_lr to peak_lr, then cosine decay to 0."""

    base_lr: float = 0.001
    peak_lr: float = 0.4
    warmup_iters: int = 10_000
    total_iters: int = 100_000

    def __post_init__(self):
        if self.base_lr <= 0 or self.peak_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.base_lr > self.peak_lr:
            raise ValueError("base_lr must not exceed peak_lr")
        if not 0 < self.warmup_iters < self.total_iters:
            raise ValueError("need 0 < warmup_iters < total_iters")


def lr_at(it: int, sched: Schedule) -> float:
    """Learning rate at a given iteration."""
    if it < 0 or it > sched.total_iters:
        raise OutOfRange(f"iteration {it} outside [0, {sched.total_iters}]")
    if it <= sched.warmup_iters:
        frac = it / sched.warmup_iters
        return sched.base_lr + (sched.peak_lr - sched.base_lr) * frac
    progress = (it - sched.warmup_iters) / (sched.total_iters - sched.warmup_iters)
    return sched.peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class DepthMask:
    """Per-residual-block keep flags. At inference every block runs and the
    residual branch output is scaled by keep_rate instead."""

    keep: np.ndarray
    keep_rate: float

    @property
    def kept_fraction(self) -> float:
        return float(self.keep.mean())


def sample_depth_mask(num_blocks: int, keep_rate: float, rng: SeededRng,
                      training: bool = True) -> DepthMask:
    """Independent Bernoulli(keep_rate) keep flag per block."""
    if not 0 < keep_rate <= 1:
        raise InvalidRate(f"keep_rate {keep_rate} outside (0, 1]")
    if not training:
        return DepthMask(np.ones(num_blocks, dtype=bool), keep_rate)
    keep = rng.gen.random(num_blocks) < keep_rate
    return DepthMask(keep, keep_rate)


def anchor_finetune(features, labels, anchors: AnchorSet) -> AnchorSet:
    """Re-initialize each class anchor as the normalized mean of its features.

    Classes with no samples (or a degenerate zero mean) keep their previous
    anchor unchanged.
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if features.shape[1] != anchors.dim:
        raise DimensionMismatch("feature dim != anchor dim")
    labels = np.asarray(labels, dtype=np.int64)
    new = anchors.anchors.copy()
    for c in np.unique(labels):
        mean = features[labels == c].mean(axis=0)
        try:
            new[c] = normalize(mean)
        except ZeroVector:
            log.warning("class %d has a degenerate mean feature; anchor kept", c)
    return AnchorSet(new, list(anchors.class_ids))


@dataclass
class BnStats:
    """Per-channel normalization statistics."""

    mean: np.ndarray
    var: np.ndarray
    # Default guards zero variance without visibly perturbing unit-variance
    # channels; training-time BN layers pass their own larger eps.
    eps: float = 1e-12

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.var = np.asarray(self.var, dtype=np.float64)
        if self.mean.shape != self.var.shape:
            raise DimensionMismatch("mean/var shape mismatch")
        if np.any(self.var < 0):
            raise ValueError("variance entries must be nonnegative")

    def normalize(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / np.sqrt(self.var + self.eps)


def adabn_recalibrate(batches, old: Optional[BnStats] = None) -> BnStats:
    """Replace running BN statistics with exact full-pass statistics over the
    target-domain batches. Affine parameters (owned by the model) are untouched.

    Uses a single concatenated two-pass computation: exact mean, then exact
    population variance.
    """
    batches = [np.atleast_2d(np.asarray(b, dtype=np.float64)) for b in batches]
    if not batches:
        raise EmptyStream("no batches provided")
    data = np.concatenate(batches, axis=0)
    if old is not None and data.shape[1] != old.mean.shape[0]:
        raise DimensionMismatch("channel count does not match existing stats")
    mean = data.mean(axis=0)
    var = ((data - mean) ** 2).mean(axis=0)
    eps = old.eps if old is not None else 1e-12
    return BnStats(mean, var, eps)
