"""Synthetic open-set identity data on the unit hypersphere.

Identity prototypes are drawn uniformly on the unit sphere of a signal
subspace (the first `signal_dim` of `input_dim` coordinates); samples are
noisy copies of their prototype, renormalized. `noise_sigma` is the expected
L2 norm of the perturbation relative to the unit prototype (per-coordinate
std is noise_sigma / sqrt(input_dim)), so its meaning does not drift with
dimension.

Video-style frame sets carry a configurable fraction of corrupted frames.
A corrupted frame is either heavy noise or a 50/50 blend with another
identity (`blend_fraction` controls the mix); ground truth is retained
for diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .core import SeededRng, normalize
from .errors import InvalidSpec

MAX_FRAMES_PER_SET = 16


@dataclass
class SyntheticSpec:
    num_identities: int = 200
    num_test_identities: int = 50
    samples_per_id: int = 20
    input_dim: int = 64
    signal_dim: int = 32
    embed_dim: int = 16
    hidden_dim: int = 64
    noise_sigma: float = 0.3
    corrupt_fraction: float = 0.4
    blend_fraction: float = 0.25
    sets_per_id: int = 4
    seed: int = 0

    def __post_init__(self):
        if min(self.num_identities, self.num_test_identities,
               self.samples_per_id, self.input_dim, self.embed_dim,
               self.sets_per_id) < 1:
            raise InvalidSpec("counts and dimensions must be positive")
        if self.noise_sigma < 0:
            raise InvalidSpec("noise_sigma must be nonnegative")
        if not 0 <= self.corrupt_fraction <= 1:
            raise InvalidSpec("corrupt_fraction must be in [0, 1]")
        if not 0 <= self.blend_fraction <= 1:
            raise InvalidSpec("blend_fraction must be in [0, 1]")
        if not 1 <= self.signal_dim <= self.input_dim:
            raise InvalidSpec("signal_dim must be in [1, input_dim]")


@dataclass
class LabeledSet:
    x: np.ndarray          # N x input_dim unit rows
    y: np.ndarray          # N identity indices (local to this set)
    prototypes: np.ndarray  # num_ids x input_dim


@dataclass
class RawFrameSet:
    """Input-space frames for one synthetic video, before embedding."""

    inputs: np.ndarray
    identity: int
    corrupt: np.ndarray  # bool mask, ground truth
    set_id: str = ""


def _sphere(rng: SeededRng, n: int, d: int) -> np.ndarray:
    return normalize(rng.gen.standard_normal((n, d)))


def _sample_ids(prototypes, spec: SyntheticSpec, rng: SeededRng):
    n_ids = prototypes.shape[0]
    sigma = spec.noise_sigma / np.sqrt(spec.input_dim)
    xs, ys = [], []
    for c in range(n_ids):
        noise = rng.gen.standard_normal((spec.samples_per_id, spec.input_dim))
        xs.append(normalize(prototypes[c] + sigma * noise))
        ys.append(np.full(spec.samples_per_id, c, dtype=np.int64))
    return LabeledSet(np.concatenate(xs), np.concatenate(ys), prototypes)


def gen_identities(spec: SyntheticSpec, rng: Optional[SeededRng] = None):
    """(train, test) labeled sets with disjoint identity prototypes."""
    rng = rng if rng is not None else SeededRng(spec.seed)
    # Prototypes live on the sphere of a signal subspace (first signal_dim
    # coordinates). Off-subspace energy is pure nuisance, which is what makes
    # heavily corrupted frames of unseen identities detectable at all -- the
    # stand-in for the face manifold of real data.
    n_protos = spec.num_identities + spec.num_test_identities
    protos = np.zeros((n_protos, spec.input_dim))
    protos[:, :spec.signal_dim] = _sphere(rng.split(0), n_protos, spec.signal_dim)
    train = _sample_ids(protos[:spec.num_identities], spec, rng.split(1))
    test = _sample_ids(protos[spec.num_identities:], spec, rng.split(2))
    return train, test


def gen_framesets(spec: SyntheticSpec, prototypes: np.ndarray,
                  rng: SeededRng) -> List[RawFrameSet]:
    """Frame sets over the given prototypes; each set has 1..16 frames."""
    gen = rng.gen
    n_ids = prototypes.shape[0]
    sigma = spec.noise_sigma / np.sqrt(spec.input_dim)
    sets: List[RawFrameSet] = []
    for c in range(n_ids):
        for s in range(spec.sets_per_id):
            n = int(gen.integers(1, MAX_FRAMES_PER_SET + 1))
            corrupt = gen.random(n) < spec.corrupt_fraction
            frames = np.empty((n, spec.input_dim))
            for i in range(n):
                noise = gen.standard_normal(spec.input_dim)
                if not corrupt[i]:
                    frames[i] = prototypes[c] + sigma * noise
                elif gen.random() >= spec.blend_fraction:
                    frames[i] = prototypes[c] + 5.0 * sigma * noise
                else:
                    other = int(gen.integers(n_ids - 1))
                    other += other >= c
                    frames[i] = (0.5 * prototypes[c] + 0.5 * prototypes[other]
                                 + sigma * noise)
            sets.append(RawFrameSet(normalize(frames), c, corrupt,
                                    set_id=f"id{c}_set{s}"))
    return sets
