"""Quality-aware set-to-set feature aggregation.

Per-frame quality is the ratio of the cosine to the frame's own class
anchor over the best impostor-anchor cosine, squashed through a z-score +
sigmoid using whole-training-set statistics, then affine-rescaled per set
so the best frame gets weight 1 and the worst weight 0. The set feature
is the quality-weighted average of frame features, renormalized.

Sets with fewer than 3 frames skip the per-set rescale and use the
normalized qualities directly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import AnchorSet, cosine_matrix, normalize
from .errors import (AllEqual, DegenerateDistribution, EmptySet, InvalidClass,
                     MissingQualities, SingleClass)

POLICIES = ("avg", "weighted_sum", "top1", "qan_pp")

_RAW_DENOM_FLOOR = 1e-3
_RAW_CLIP = 50.0
MIN_FRAMES_FOR_RESCALE = 3


@dataclass
class QualityStats:
    """Dataset-level raw-quality statistics (population std)."""

    mean: float
    std: float

    def __post_init__(self):
        if self.std <= 0:
            raise DegenerateDistribution("quality std must be positive")


@dataclass
class FrameSet:
    """One video: an ordered list of unit-norm frame embeddings plus qualities."""

    frames: np.ndarray                      # n x d
    qualities: Optional[np.ndarray] = None  # n, normalized qualities in (0,1)
    set_id: str = ""

    def __post_init__(self):
        self.frames = np.atleast_2d(np.asarray(self.frames, dtype=np.float64))
        if self.frames.shape[0] < 1:
            raise EmptySet("a frame set needs at least one frame")
        if self.qualities is not None:
            self.qualities = np.asarray(self.qualities, dtype=np.float64)
            if self.qualities.shape != (self.frames.shape[0],):
                raise MissingQualities("one quality per frame required")

    @property
    def n(self) -> int:
        return self.frames.shape[0]


def quality_raw(feat, anchors: AnchorSet, true_class: int) -> float:
    """Own-anchor cosine over best impostor-anchor cosine.

    The denominator is floored at 1e-3 and the ratio clipped to
    [-50, 50]; the downstream z-score + sigmoid makes extreme magnitudes
    inert, so clipping only guards the arithmetic.
    """
    if anchors.num_classes < 2:
        raise SingleClass("quality needs at least two classes")
    if not 0 <= true_class < anchors.num_classes:
        raise InvalidClass(f"class {true_class} out of range")
    cos = cosine_matrix(feat, anchors)[0]
    own = cos[true_class]
    impostor = np.delete(cos, true_class).max()
    q = own / max(impostor, _RAW_DENOM_FLOOR)
    return float(np.clip(q, -_RAW_CLIP, _RAW_CLIP))


def quality_normalize(raw_all):
    """z-score against whole-set statistics, then sigmoid into (0, 1)."""
    raw = np.asarray(raw_all, dtype=np.float64)
    if raw.size < 2:
        raise DegenerateDistribution("need at least two raw qualities")
    mean = float(raw.mean())
    std = float(raw.std())  # population std
    if std == 0.0:
        raise DegenerateDistribution("all raw qualities equal")
    z = (raw - mean) / std
    return 1.0 / (1.0 + np.exp(-z)), QualityStats(mean, std)


def quality_rescale(q):
    """Per-set affine map sending (max, min) -> (1, 0). Requires n >= 3."""
    q = np.asarray(q, dtype=np.float64)
    if q.size < MIN_FRAMES_FOR_RESCALE:
        raise ValueError("rescale needs at least 3 frames")
    hi, lo = q.max(), q.min()
    if hi == lo:
        raise AllEqual("all qualities equal; caller should fall back to uniform")
    k = 1.0 / (hi - lo)
    b = 1.0 - k * hi
    return k * q + b


def _weights_for(set_: FrameSet, policy: str) -> np.ndarray:
    if policy == "avg":
        return np.full(set_.n, 1.0 / set_.n)
    if set_.qualities is None:
        raise MissingQualities(f"policy {policy!r} needs per-frame qualities")
    q = set_.qualities
    if policy == "top1":
        w = np.zeros(set_.n)
        w[int(np.argmax(q))] = 1.0
        return w
    if policy == "weighted_sum":
        return q / q.sum()
    if policy == "qan_pp":
        if set_.n < MIN_FRAMES_FOR_RESCALE:
            return q / q.sum()
        try:
            w = quality_rescale(q)
        except AllEqual:
            return np.full(set_.n, 1.0 / set_.n)
        return w / w.sum()
    raise ValueError(f"unknown policy {policy!r}")


def aggregate(set_: FrameSet, policy: str) -> np.ndarray:
    """Collapse a frame set to one unit-norm embedding under the given policy."""
    if set_.n == 0:
        raise EmptySet("empty frame set")
    w = _weights_for(set_, policy)
    return normalize(w @ set_.frames)


def quality_regression_target(features, anchors: AnchorSet, labels):
    """Normalized quality targets over a whole training set (L2-regression targets)."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    raw = [quality_raw(f, anchors, int(c)) for f, c in zip(features, labels)]
    normalized, stats = quality_normalize(raw)
    return normalized, stats


# ---------------------------------------------------------------------------
# CSV persistence: `set_id,frame_idx,quality,dim0..dim{d-1}`.


def save_framesets_csv(path, sets) -> None:
    d = sets[0].frames.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["set_id", "frame_idx", "quality"] + [f"dim{i}" for i in range(d)])
        for s in sets:
            for i in range(s.n):
                q = "" if s.qualities is None else format(s.qualities[i], ".17g")
                w.writerow([s.set_id, i, q] + [format(x, ".17g") for x in s.frames[i]])


def load_framesets_csv(path):
    groups: dict = {}
    order = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        for line in r:
            if not line:
                continue
            sid = line[0]
            if sid not in groups:
                groups[sid] = ([], [])
                order.append(sid)
            q = float(line[2]) if line[2] != "" else None
            groups[sid][0].append([float(x) for x in line[3:]])
            groups[sid][1].append(q)
    sets = []
    for sid in order:
        frames, quals = groups[sid]
        qualities = None if any(q is None for q in quals) else np.asarray(quals)
        sets.append(FrameSet(np.asarray(frames), qualities, set_id=sid))
    return sets
