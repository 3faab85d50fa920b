"""Verification-pair scoring, ROC curves and TPR at a fixed FPR.

Thresholding is a step function: the operating threshold is the smallest
candidate (impostor score values plus a sentinel just above the maximum)
whose false-positive rate does not exceed the target. Ties at the
threshold count as accepts. No interpolation anywhere, so every value is
exactly reproducible by brute-force counting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import SeededRng
from .errors import EmptyScores, InsufficientData


@dataclass
class ScoreSet:
    genuine: np.ndarray   # same-identity pair scores
    impostor: np.ndarray  # cross-identity pair scores

    def __post_init__(self):
        self.genuine = np.asarray(self.genuine, dtype=np.float64).ravel()
        self.impostor = np.asarray(self.impostor, dtype=np.float64).ravel()


@dataclass
class RocPoint:
    threshold: float
    tpr: float
    fpr: float


def verification_pairs(embeddings, labels, pairing: str = "all",
                       num_pairs: int = 0, rng: SeededRng = None) -> ScoreSet:
    """Cosine scores of same-label and cross-label pairs.

    pairing="all" enumerates every pair; pairing="sampled" draws
    `num_pairs` genuine and `num_pairs` impostor pairs with the given rng.
    """
    embeddings = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    labels = np.asarray(labels)
    n = embeddings.shape[0]
    if len(set(labels.tolist())) < 2:
        raise InsufficientData("need at least two identities")

    if pairing == "all":
        sim = np.clip(embeddings @ embeddings.T, -1.0, 1.0)
        iu, ju = np.triu_indices(n, k=1)
        same = labels[iu] == labels[ju]
        return ScoreSet(sim[iu[same], ju[same]], sim[iu[~same], ju[~same]])

    if pairing != "sampled":
        raise ValueError(f"unknown pairing {pairing!r}")
    if rng is None or num_pairs <= 0:
        raise InsufficientData("sampled pairing needs num_pairs > 0 and an rng")
    by_label: dict = {}
    for i, lab in enumerate(labels.tolist()):
        by_label.setdefault(lab, []).append(i)
    gen = rng.gen
    labs = sorted(by_label, key=str)
    multi = [l for l in labs if len(by_label[l]) >= 2]
    if not multi:
        raise InsufficientData("no identity has two samples")
    genuine, impostor = [], []
    for _ in range(num_pairs):
        lab = multi[gen.integers(len(multi))]
        i, j = gen.choice(by_label[lab], size=2, replace=False)
        genuine.append(float(embeddings[i] @ embeddings[j]))
        la, lb = gen.choice(len(labs), size=2, replace=False)
        i = by_label[labs[la]][gen.integers(len(by_label[labs[la]]))]
        j = by_label[labs[lb]][gen.integers(len(by_label[labs[lb]]))]
        impostor.append(float(embeddings[i] @ embeddings[j]))
    return ScoreSet(np.clip(genuine, -1, 1), np.clip(impostor, -1, 1))


def tpr_at_fpr(scores: ScoreSet, fpr_target: float):
    """(tpr, threshold) at the loosest threshold keeping FPR <= target."""
    g, imp = scores.genuine, scores.impostor
    if g.size == 0 or imp.size == 0:
        raise EmptyScores("both score lists must be non-empty")
    if not 0 <= fpr_target <= 1:
        raise ValueError("fpr_target must be in [0, 1]")
    imp_sorted = np.sort(imp)
    candidates = np.unique(imp_sorted)
    # count of impostors >= tau for each candidate; decreasing in tau
    counts = imp.size - np.searchsorted(imp_sorted, candidates, side="left")
    ok = counts <= fpr_target * imp.size
    if ok.any():
        tau = float(candidates[int(np.argmax(ok))])  # smallest qualifying value
    else:
        tau = float(np.nextafter(candidates[-1], np.inf))
    tpr = np.count_nonzero(g >= tau) / g.size
    return float(tpr), tau


def roc_curve(scores: ScoreSet):
    """One RocPoint per distinct score, threshold descending, plus endpoints."""
    g, imp = scores.genuine, scores.impostor
    if g.size == 0 or imp.size == 0:
        raise EmptyScores("both score lists must be non-empty")
    thresholds = np.unique(np.concatenate([g, imp]))[::-1]
    points = [RocPoint(np.inf, 0.0, 0.0)]
    for tau in thresholds:
        points.append(RocPoint(
            float(tau),
            float(np.count_nonzero(g >= tau) / g.size),
            float(np.count_nonzero(imp >= tau) / imp.size),
        ))
    if points[-1].tpr != 1.0 or points[-1].fpr != 1.0:
        points.append(RocPoint(-np.inf, 1.0, 1.0))
    return points
