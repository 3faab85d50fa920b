"""Toy embedding model: hand-derived backward pass and checkpointing."""

import numpy as np
import pytest

from budgetface.core import SeededRng
from budgetface.losses import MarginConfig, arcface_forward
from budgetface.model import (BN_EPS, BN_MOMENTUM, Checkpoint, EmbeddingNet,
                              SgdMomentum, config_hash, load_checkpoint,
                              save_checkpoint)


def small_net(seed=60, keep_rate=1.0, dropout=0.0):
    return EmbeddingNet.init(5, 6, 4, 3, SeededRng(seed),
                             keep_rate=keep_rate, dropout=dropout)


def batch_loss(net, x, y, cfg):
    _, cos, cache = net.forward_train(x, SeededRng(0))
    out = arcface_forward(cos, y, cfg)
    return out, cache


def test_backward_matches_finite_differences():
    net = small_net()
    rng = np.random.default_rng(61)
    x = rng.standard_normal((4, 5))
    y = np.array([0, 1, 2, 0])
    cfg = MarginConfig(scale=8.0, margin=0.3)

    out, cache = batch_loss(net, x, y, cfg)
    grads = net.backward(out.grad_cos, cache)

    step = 1e-6
    worst = 0.0
    for key, param in net.params.items():
        flat = param.ravel()
        idx = rng.choice(flat.size, size=min(10, flat.size), replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            lp = batch_loss(net, x, y, cfg)[0].loss
            flat[i] = orig - step
            lm = batch_loss(net, x, y, cfg)[0].loss
            flat[i] = orig
            fd = (lp - lm) / (2 * step)
            an = grads[key].ravel()[i]
            worst = max(worst, abs(an - fd) / max(abs(an) + abs(fd), 1.0))
    assert worst < 1e-5


def test_embed_is_unit_norm_and_deterministic():
    net = small_net()
    rng = np.random.default_rng(63)
    x = rng.standard_normal((7, 5))
    e1 = net.embed(x)
    e2 = net.embed(x)
    assert np.allclose(np.linalg.norm(e1, axis=1), 1.0, atol=1e-12)
    assert np.array_equal(e1, e2)


def test_forward_train_updates_running_stats():
    net = small_net()
    rng = np.random.default_rng(63)
    x = rng.standard_normal((16, 5))
    old_mean = net.bn_mean.copy()
    old_var = net.bn_var.copy()
    _, _, cache = net.forward_train(x, SeededRng(1))
    z = cache["h"] @ net.params["W2"] + net.params["b2"]
    mu = z.mean(axis=0)
    var = z.var(axis=0)
    assert np.allclose(net.bn_mean,
                       (1 - BN_MOMENTUM) * old_mean + BN_MOMENTUM * mu,
                       atol=1e-12)
    assert np.allclose(net.bn_var,
                       (1 - BN_MOMENTUM) * old_var + BN_MOMENTUM * var,
                       atol=1e-12)


def test_train_batch_normalized_by_batch_stats():
    net = small_net()
    rng = np.random.default_rng(64)
    x = rng.standard_normal((32, 5))
    _, _, cache = net.forward_train(x, SeededRng(2))
    zn = cache["zn"]
    assert np.max(np.abs(zn.mean(axis=0))) < 1e-10
    assert np.max(np.abs(zn.var(axis=0) - 1.0)) < 1e-4  # up to BN_EPS


def test_stochastic_depth_branch():
    # keep_rate < 1 draws a Bernoulli gate; over many draws both states occur
    rng = np.random.default_rng(65)
    x = rng.standard_normal((4, 5))
    states = set()
    net = small_net(keep_rate=0.5)
    stream = SeededRng(3)
    for _ in range(50):
        _, _, cache = net.forward_train(x, stream)
        states.add(cache["depth_keep"])
    assert states == {0.0, 1.0}
    # eval path scales the residual branch by the keep rate instead
    h_eval = net.hidden(x)
    a = np.maximum(x @ net.params["W1"] + net.params["b1"], 0.0)
    r = a @ net.params["Wr"] + net.params["br"]
    assert np.allclose(h_eval, a + 0.5 * r, atol=1e-12)


def test_dropout_mask_applied_and_inverted():
    net = small_net(dropout=0.5)
    rng = np.random.default_rng(66)
    x = rng.standard_normal((8, 5))
    _, _, cache = net.forward_train(x, SeededRng(4))
    mask = cache["mask"]
    assert mask is not None
    assert set(np.unique(mask)).issubset({0.0, 2.0})  # inverted scaling 1/(1-p)


def test_sgd_momentum_step_matches_manual():
    params = {"w": np.array([1.0, -2.0])}
    opt = SgdMomentum(params, momentum=0.9, weight_decay=0.01)
    grads = {"w": np.array([0.5, 0.5])}
    opt.step(params, grads, lr=0.1)
    g = np.array([0.5, 0.5]) + 0.01 * np.array([1.0, -2.0])
    v = g
    expect = np.array([1.0, -2.0]) - 0.1 * v
    assert np.allclose(params["w"], expect, atol=1e-15)
    opt.step(params, grads, lr=0.1)
    opt.reset("w")
    assert np.all(opt.velocity["w"] == 0.0)


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    net = small_net()
    from budgetface.dynamics import BnStats
    ckpt = Checkpoint({k: v.copy() for k, v in net.params.items()},
                      BnStats(net.bn_mean, net.bn_var, eps=BN_EPS),
                      iteration=42, config_hash=config_hash("cfg"),
                      quality_w=np.arange(6.0), keep_rate=1.0, dropout=0.4)
    p1 = tmp_path / "a.bin"
    p2 = tmp_path / "b.bin"
    save_checkpoint(p1, ckpt)
    back = load_checkpoint(p1)
    save_checkpoint(p2, back)
    assert p1.read_bytes() == p2.read_bytes()
    assert back.iteration == 42
    assert back.keep_rate == 1.0 and back.dropout == 0.4
    for k in net.params:
        assert np.array_equal(back.params[k], net.params[k])
    assert np.array_equal(back.quality_w, np.arange(6.0))
    net2 = back.to_net()
    x = np.random.default_rng(67).standard_normal((3, 5))
    assert np.array_equal(net.embed(x), net2.embed(x))


def test_config_hash_stable_and_sensitive():
    assert config_hash("abc") == config_hash("abc")
    assert config_hash("abc") != config_hash("abd")
    assert len(config_hash("abc")) == 16
