"""Margin losses: finite-difference oracles, reduction identities, modulator."""

import math

import numpy as np
import pytest

from budgetface.errors import InvalidLabel, NonFiniteInput
from budgetface.losses import (LossOutput, MarginConfig, arcface_forward,
                               arcneg_modulator, arcnegface_forward,
                               grad_anchors, grad_embeddings, loss_backward)

FD_STEP = 1e-6


def random_batch(rng, n_max=8, c_max=16, lo=-0.9, hi=0.9):
    n = int(rng.integers(1, n_max + 1))
    c = int(rng.integers(2, c_max + 1))
    cos = rng.uniform(lo, hi, size=(n, c))
    labels = rng.integers(0, c, size=n)
    return cos, labels


def fd_grad(loss_fn, cos, step=FD_STEP):
    """Central finite differences of a scalar loss over every cos entry."""
    g = np.zeros_like(cos)
    for i in range(cos.shape[0]):
        for j in range(cos.shape[1]):
            up = cos.copy()
            up[i, j] += step
            dn = cos.copy()
            dn[i, j] -= step
            g[i, j] = (loss_fn(up) - loss_fn(dn)) / (2 * step)
    return g


def max_rel_err(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), 1.0)))


def frozen_modulator(cos, labels, cfg):
    """Capture the Gaussian modulator once so the FD oracle holds it constant,
    matching the stop-gradient treatment in the analytic backward pass."""
    record = {}

    def capture(x, y):
        record["t"] = arcneg_modulator(x, y, cfg)
        return record["t"]

    arcnegface_forward(cos, labels, cfg, modulator=capture)
    t0 = record["t"]
    return lambda x, y: t0


def test_arcface_grad_matches_fd():
    rng = np.random.default_rng(10)
    worst = 0.0
    for _ in range(50):
        cfg = MarginConfig(scale=float(rng.uniform(4, 20)),
                           margin=float(rng.uniform(0.2, 0.5)),
                           label_smooth_eps=float(rng.choice([0.0, 0.1])))
        cos, labels = random_batch(rng)
        out = arcface_forward(cos, labels, cfg)
        num = fd_grad(lambda c: arcface_forward(c, labels, cfg).loss, cos)
        worst = max(worst, max_rel_err(out.grad_cos, num))
    assert worst < 1e-5


def test_arcnegface_grad_matches_fd():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(50):
        cfg = MarginConfig(scale=float(rng.uniform(4, 20)),
                           margin=float(rng.uniform(0.2, 0.5)),
                           loss="arcnegface")
        cos, labels = random_batch(rng)
        mod = frozen_modulator(cos, labels, cfg)
        out = arcnegface_forward(cos, labels, cfg, modulator=mod)
        num = fd_grad(
            lambda c: arcnegface_forward(c, labels, cfg, modulator=mod).loss, cos)
        worst = max(worst, max_rel_err(out.grad_cos, num))
    assert worst < 1e-5


def test_arcface_fallback_region_grad():
    # deep past the theta + m = pi boundary the margined cosine is replaced by
    # a linear penalty; the analytic gradient must still match FD there
    cfg = MarginConfig(scale=8.0, margin=0.5)
    rng = np.random.default_rng(12)
    cos = rng.uniform(-0.9, 0.9, size=(4, 6))
    labels = np.array([0, 1, 2, 3])
    cos[np.arange(4), labels] = rng.uniform(-0.999, -0.99, size=4)
    out = arcface_forward(cos, labels, cfg)
    num = fd_grad(lambda c: arcface_forward(c, labels, cfg).loss, cos)
    assert max_rel_err(out.grad_cos, num) < 1e-5
    assert np.isfinite(out.loss)


def test_arcnegface_unit_modulator_reduces_to_arcface():
    rng = np.random.default_rng(13)
    cfg = MarginConfig(scale=12.0, margin=0.4)
    for _ in range(200):
        cos, labels = random_batch(rng)
        base = arcface_forward(cos, labels, cfg)
        red = arcnegface_forward(cos, labels, cfg, modulator=lambda x, y: 1.0)
        assert abs(base.loss - red.loss) < 1e-12
        assert np.max(np.abs(base.logits - red.logits)) < 1e-12
        assert np.max(np.abs(base.grad_cos - red.grad_cos)) < 1e-12


def softmax_ce_oracle(logits, labels):
    """Independent mean cross-entropy, no shared code with the package."""
    total = 0.0
    for row, lab in zip(logits, labels):
        m = row.max()
        total += -(row[lab] - m - math.log(np.exp(row - m).sum()))
    return total / len(labels)


def test_arcface_zero_margin_is_scaled_softmax_ce():
    rng = np.random.default_rng(14)
    cfg = MarginConfig(scale=10.0, margin=0.0)
    for _ in range(200):
        cos, labels = random_batch(rng)
        out = arcface_forward(cos, labels, cfg)
        assert abs(out.loss - softmax_ce_oracle(cfg.scale * cos, labels)) < 1e-12


def test_modulator_values():
    cfg = MarginConfig()
    for x in (-0.7, 0.0, 0.31, 1.0):
        assert abs(float(arcneg_modulator(x, x, cfg)) - 1.2) < 1e-15
    expected = 1.2 * math.exp(-0.5)
    assert abs(float(arcneg_modulator(1.0, 0.0, cfg)) - expected) < 1e-12
    # vectorized form agrees with scalar calls
    xs = np.array([0.1, 0.5, -0.3])
    got = arcneg_modulator(xs, 0.2, cfg)
    for x, g in zip(xs, got):
        assert abs(g - float(arcneg_modulator(float(x), 0.2, cfg))) < 1e-15


def test_label_smoothing_matches_manual_targets():
    rng = np.random.default_rng(15)
    cfg = MarginConfig(scale=8.0, margin=0.0, label_smooth_eps=0.2)
    cos, labels = random_batch(rng)
    out = arcface_forward(cos, labels, cfg)
    n, c = cos.shape
    p = np.full((n, c), 0.2 / c)
    p[np.arange(n), labels] += 0.8
    logits = cfg.scale * cos
    logp = logits - logits.max(axis=1, keepdims=True)
    logp = logp - np.log(np.exp(logp).sum(axis=1, keepdims=True))
    assert abs(out.loss - float(-(p * logp).sum() / n)) < 1e-12


def test_grad_chain_rules():
    rng = np.random.default_rng(16)
    cfg = MarginConfig(scale=8.0, margin=0.3)
    cos, labels = random_batch(rng)
    out = arcface_forward(cos, labels, cfg)
    w = rng.standard_normal((cos.shape[1], 5))
    f = rng.standard_normal((cos.shape[0], 5))
    assert np.array_equal(grad_embeddings(out, w), out.grad_cos @ w)
    assert np.array_equal(grad_anchors(out, f), out.grad_cos.T @ f)
    assert np.array_equal(loss_backward(out), out.grad_cos)


def test_input_validation():
    cfg = MarginConfig()
    with pytest.raises(InvalidLabel):
        arcface_forward(np.zeros((2, 3)), [0, 3], cfg)
    with pytest.raises(InvalidLabel):
        arcface_forward(np.zeros((2, 3)), [0], cfg)
    with pytest.raises(NonFiniteInput):
        arcface_forward(np.array([[np.nan, 0.0]]), [0], cfg)
    with pytest.raises(NonFiniteInput):
        arcface_forward(np.zeros(3), [0], cfg)


def test_margin_config_validation():
    with pytest.raises(ValueError):
        MarginConfig(scale=0.0)
    with pytest.raises(ValueError):
        MarginConfig(margin=math.pi / 2)
    with pytest.raises(ValueError):
        MarginConfig(neg_sigma=0.0)
    with pytest.raises(ValueError):
        MarginConfig(label_smooth_eps=1.0)
    with pytest.raises(ValueError):
        MarginConfig(loss="cosface")
