"""Vector primitives, cosine geometry, deterministic RNG and CSV persistence.

All math runs in 64-bit floating point. Embeddings live on the unit
hypersphere; every similarity in the toolkit is a plain dot product of
unit vectors, clamped to [-1, 1] before any derived trigonometry.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, ZeroVector

NORM_EPS = 1e-12


def normalize(v) -> np.ndarray:
    """Project a vector (or each row of a matrix) onto the unit sphere.

    Raises ZeroVector if any norm is below 1e-12.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 1:
        n = np.linalg.norm(v)
        if n < NORM_EPS:
            raise ZeroVector("cannot normalize a vector with norm < 1e-12")
        return v / n
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    if np.any(norms < NORM_EPS):
        raise ZeroVector("cannot normalize rows with norm < 1e-12")
    return v / norms


@dataclass
class AnchorSet:
    """Unit-norm class anchors (the classification-layer weights), one per identity."""

    anchors: np.ndarray  # C x d, rows unit-norm
    class_ids: list = field(default_factory=list)

    def __post_init__(self):
        self.anchors = np.asarray(self.anchors, dtype=np.float64)
        if self.anchors.ndim != 2:
            raise DimensionMismatch("anchors must be a C x d matrix")
        if not self.class_ids:
            self.class_ids = list(range(self.anchors.shape[0]))
        if len(self.class_ids) != self.anchors.shape[0]:
            raise DimensionMismatch("class_ids length must match anchor count")
        if len(set(self.class_ids)) != len(self.class_ids):
            raise ValueError("class_ids must be unique")

    @property
    def num_classes(self) -> int:
        return self.anchors.shape[0]

    @property
    def dim(self) -> int:
        return self.anchors.shape[1]


def cosine_matrix(feats, anchors) -> np.ndarray:
    """Pairwise cosine similarities between unit features and unit anchors.

    Returns an N x C matrix clamped to [-1, 1].
    """
    feats = np.atleast_2d(np.asarray(feats, dtype=np.float64))
    mat = anchors.anchors if isinstance(anchors, AnchorSet) else np.atleast_2d(
        np.asarray(anchors, dtype=np.float64))
    if feats.shape[1] != mat.shape[1]:
        raise DimensionMismatch(
            f"feature dim {feats.shape[1]} != anchor dim {mat.shape[1]}")
    return np.clip(feats @ mat.T, -1.0, 1.0)


class SeededRng:
    """Counter-based deterministic random stream (Philox under the hood).

    Identical seeds give identical draws on every platform. Streams are
    splittable: ``split(i)`` derives an independent child stream, so one
    root seed can feed every component of an experiment reproducibly.
    """

    def __init__(self, seed, _seed_seq=None):
        self.seed = int(seed) if _seed_seq is None else seed
        self._ss = _seed_seq if _seed_seq is not None else np.random.SeedSequence(int(seed))
        self.gen = np.random.Generator(np.random.Philox(self._ss))

    def split(self, index: int) -> "SeededRng":
        child = np.random.SeedSequence(
            entropy=self._ss.entropy,
            spawn_key=self._ss.spawn_key + (int(index),),
        )
        return SeededRng(self.seed, _seed_seq=child)


# ---------------------------------------------------------------------------
# CSV persistence: header `id,dim0,...,dim{d-1}`, 17 significant digits.


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_embeddings_csv(path, ids, vectors) -> None:
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    d = vectors.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id"] + [f"dim{i}" for i in range(d)])
        for ident, row in zip(ids, vectors):
            w.writerow([ident] + [_fmt(x) for x in row])


def load_embeddings_csv(path):
    """Returns (ids, N x d float64 matrix)."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        d = len(header) - 1
        ids, rows = [], []
        for line in r:
            if not line:
                continue
            ids.append(line[0])
            rows.append([float(x) for x in line[1:]])
    mat = np.asarray(rows, dtype=np.float64).reshape(len(ids), d)
    return ids, mat
