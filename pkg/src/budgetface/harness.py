"""End-to-end desk-scale experiment driver.

Reads an INI-style config with sections [data] [loss] [schedule]
[aggregation] [eval] [output], trains the toy embedding model with the
margin losses and schedule, fits the linear quality regressor, and
evaluates TPR@FPR under image and video protocols. All randomness flows
from one root seed split per component, so identical configs give
byte-identical reports.
"""

from __future__ import annotations

import configparser
import csv
import io
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .core import SeededRng, normalize
from .dynamics import (BnStats, Schedule, adabn_recalibrate, anchor_finetune,
                       lr_at)
from .errors import DivergedLoss, NonFiniteInput
from .losses import MarginConfig, arcface_forward, arcnegface_forward
from .metrics import tpr_at_fpr, verification_pairs
from .model import (BN_EPS, Checkpoint, EmbeddingNet, SgdMomentum, config_hash,
                    save_checkpoint)
from .quality import FrameSet, aggregate, quality_regression_target
from .synth import SyntheticSpec, gen_framesets, gen_identities

DEFAULT_CONFIG = """\
[data]
num_identities = 200
num_test_identities = 50
samples_per_id = 20
input_dim = 64
signal_dim = 32
embed_dim = 16
hidden_dim = 64
noise_sigma = 0.3
corrupt_fraction = 0.4
blend_fraction = 0.25
sets_per_id = 4
seed = 0

[loss]
loss = arcface
scale = 16.0
margin = 0.3
neg_alpha = 1.2
neg_mu = 0.0
neg_sigma = 1.0
label_smooth_eps = 0.0

[schedule]
base_lr = 0.001
peak_lr = 0.05
warmup_iters = 300
total_iters = 3000
batch_size = 128
momentum = 0.9
weight_decay = 1e-5
dropout = 0.4
stochastic_depth_keep = 1.0
adabn = false
anchor_finetune = false

[aggregation]
policies = avg,weighted_sum,top1,qan_pp

[eval]
fpr_targets = 1e-2
losses = arcface,arcnegface
pairing = all

[output]
dir = out
"""


@dataclass
class TrainFlags:
    batch_size: int = 128
    momentum: float = 0.9
    weight_decay: float = 1e-5
    dropout: float = 0.4
    stochastic_depth_keep: float = 1.0
    adabn: bool = False
    anchor_finetune: bool = False


@dataclass
class ExperimentConfig:
    data: SyntheticSpec
    loss: MarginConfig
    schedule: Schedule
    flags: TrainFlags
    policies: List[str]
    fpr_targets: List[float]
    eval_losses: List[str]
    out_dir: str = "out"
    raw_text: str = ""

    @property
    def hash(self) -> str:
        return config_hash(self.raw_text)


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    cp.read_string(DEFAULT_CONFIG)
    cp.read_string(text)
    d = cp["data"]
    data = SyntheticSpec(
        num_identities=d.getint("num_identities"),
        num_test_identities=d.getint("num_test_identities"),
        samples_per_id=d.getint("samples_per_id"),
        input_dim=d.getint("input_dim"),
        signal_dim=d.getint("signal_dim", fallback=32),
        embed_dim=d.getint("embed_dim"),
        noise_sigma=d.getfloat("noise_sigma"),
        corrupt_fraction=d.getfloat("corrupt_fraction"),
        blend_fraction=d.getfloat("blend_fraction", fallback=0.5),
        sets_per_id=d.getint("sets_per_id"),
        seed=d.getint("seed"),
        hidden_dim=d.getint("hidden_dim", fallback=64),
    )
    lo = cp["loss"]
    loss = MarginConfig(
        scale=lo.getfloat("scale"),
        margin=lo.getfloat("margin"),
        neg_alpha=lo.getfloat("neg_alpha"),
        neg_mu=lo.getfloat("neg_mu"),
        neg_sigma=lo.getfloat("neg_sigma"),
        label_smooth_eps=lo.getfloat("label_smooth_eps"),
        loss=lo.get("loss"),
    )
    s = cp["schedule"]
    sched = Schedule(base_lr=s.getfloat("base_lr"), peak_lr=s.getfloat("peak_lr"),
                     warmup_iters=s.getint("warmup_iters"),
                     total_iters=s.getint("total_iters"))
    flags = TrainFlags(
        batch_size=s.getint("batch_size"),
        momentum=s.getfloat("momentum"),
        weight_decay=s.getfloat("weight_decay"),
        dropout=s.getfloat("dropout"),
        stochastic_depth_keep=s.getfloat("stochastic_depth_keep"),
        adabn=s.getboolean("adabn"),
        anchor_finetune=s.getboolean("anchor_finetune"),
    )
    policies = [p.strip() for p in cp["aggregation"]["policies"].split(",") if p.strip()]
    fprs = [float(x) for x in cp["eval"]["fpr_targets"].split(",") if x.strip()]
    losses = [x.strip() for x in cp["eval"]["losses"].split(",") if x.strip()]
    return ExperimentConfig(data, loss, sched, flags, policies, fprs, losses,
                            out_dir=cp["output"]["dir"], raw_text=text)


def _forward_loss(cos, labels, cfg: MarginConfig):
    if cfg.loss == "arcnegface":
        return arcnegface_forward(cos, labels, cfg)
    return arcface_forward(cos, labels, cfg)


def train(config: ExperimentConfig, train_set=None, rng: Optional[SeededRng] = None):
    """Train the toy model; returns (net, metrics_log) with rows (iter, lr, loss)."""
    rng = rng if rng is not None else SeededRng(config.data.seed)
    if train_set is None:
        train_set, _ = gen_identities(config.data, rng.split(0))

    net = EmbeddingNet.init(config.data.input_dim, config.data.hidden_dim,
                            config.data.embed_dim, config.data.num_identities,
                            rng.split(1),
                            keep_rate=config.flags.stochastic_depth_keep,
                            dropout=config.flags.dropout)
    opt = SgdMomentum(net.params, config.flags.momentum, config.flags.weight_decay)
    batch_rng = rng.split(2)
    noise_rng = rng.split(3)

    x, y = train_set.x, train_set.y
    n = x.shape[0]
    sched = config.schedule
    finetune_at = int(0.8 * sched.total_iters) if config.flags.anchor_finetune else -1
    log = []
    for it in range(sched.total_iters):
        idx = batch_rng.gen.choice(n, size=min(config.flags.batch_size, n),
                                   replace=False)
        _, cos, cache = net.forward_train(x[idx], noise_rng)
        try:
            out = _forward_loss(cos, y[idx], config.loss)
        except NonFiniteInput as exc:
            raise DivergedLoss(f"non-finite activations at iteration {it}") from exc
        if not np.isfinite(out.loss):
            raise DivergedLoss(f"non-finite loss at iteration {it}")
        grads = net.backward(out.grad_cos, cache)
        lr = lr_at(it, sched)
        opt.step(net.params, grads, lr)
        log.append((it, lr, out.loss))
        if it + 1 == finetune_at:
            feats = net.embed(x)
            new_anchors = anchor_finetune(feats, y, net.anchors())
            net.params["A"] = new_anchors.anchors.copy()
            opt.reset("A")
    return net, log


def quality_features(inputs) -> np.ndarray:
    """Per-frame features for the lightweight quality branch.

    Squared input coordinates (plus bias) expose the frame's energy profile,
    which is what distinguishes heavily corrupted frames; they carry no
    identity-specific direction, so the fit transfers to unseen identities.
    Hidden-layer features were tried and memorize training identities
    instead of generalizing.
    """
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    return np.hstack([x * x, np.ones((x.shape[0], 1))])


def fit_quality_regressor(net: EmbeddingNet, inputs, labels, ridge: float = 1.0):
    """Closed-form ridge regression of normalized quality targets.

    `inputs` should cover the quality range the regressor must predict;
    the experiment driver uses frame sets generated over the *training*
    identities (including their corrupted frames), whose targets come from
    the anchor-cosine ratio on the trained anchors.
    """
    targets, stats = quality_regression_target(net.embed(inputs),
                                               net.anchors(), labels)
    feats = quality_features(inputs)
    gram = feats.T @ feats + ridge * np.eye(feats.shape[1])
    w = np.linalg.solve(gram, feats.T @ targets)
    return w, stats


def predict_quality(w: np.ndarray, inputs) -> np.ndarray:
    q = quality_features(inputs) @ w
    return np.clip(q, 1e-6, 1.0 - 1e-6)


def _maybe_adabn(net: EmbeddingNet, config: ExperimentConfig, target_inputs):
    if not config.flags.adabn:
        return
    stats = adabn_recalibrate([net.pre_bn(target_inputs)],
                              BnStats(net.bn_mean, net.bn_var, eps=BN_EPS))
    net.bn_mean, net.bn_var = stats.mean, stats.var


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def run_experiment(config: ExperimentConfig):
    """Train each configured loss and report TPR@FPR rows.

    Returns (report_rows, artifacts); each row is
    (loss, policy, fpr_target, threshold, tpr) with policy "image" for
    the image protocol.
    """
    root = SeededRng(config.data.seed)
    train_set, test_set = gen_identities(config.data, root.split(0))
    framesets = gen_framesets(config.data, test_set.prototypes, root.split(4))
    # quality-regressor training data: frame sets over *training* identities,
    # so the regressor sees corrupted frames with known anchor-based targets
    qsets = gen_framesets(config.data, train_set.prototypes, root.split(5))
    qx = np.concatenate([fs.inputs for fs in qsets])
    qy = np.concatenate([np.full(fs.inputs.shape[0], fs.identity) for fs in qsets])

    rows = []
    artifacts = {}
    for i, loss_name in enumerate(config.eval_losses):
        cfg = ExperimentConfig(
            config.data,
            MarginConfig(**{**config.loss.__dict__, "loss": loss_name}),
            config.schedule, config.flags, config.policies,
            config.fpr_targets, [loss_name], config.out_dir, config.raw_text)
        net, log = train(cfg, train_set=train_set, rng=root.split(1))
        _maybe_adabn(net, config, test_set.x)

        # image protocol on held-out identities
        feats = net.embed(test_set.x)
        scores = verification_pairs(feats, test_set.y, "all")
        for fpr in config.fpr_targets:
            tpr, thr = tpr_at_fpr(scores, fpr)
            rows.append((loss_name, "image", fpr, thr, tpr))

        # video protocol
        qw, _ = fit_quality_regressor(net, qx, qy)
        embedded = []
        for fs in framesets:
            f = net.embed(fs.inputs)
            q = predict_quality(qw, fs.inputs)
            embedded.append((FrameSet(f, q, set_id=fs.set_id), fs.identity))
        for policy in config.policies:
            agg = np.stack([aggregate(fs, policy) for fs, _ in embedded])
            labels = np.array([ident for _, ident in embedded])
            vscores = verification_pairs(agg, labels, "all")
            for fpr in config.fpr_targets:
                tpr, thr = tpr_at_fpr(vscores, fpr)
                rows.append((loss_name, policy, fpr, thr, tpr))

        artifacts[loss_name] = {"net": net, "log": log, "quality_w": qw}
    return rows, artifacts


def report_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["loss", "policy", "fpr_target", "threshold", "tpr"])
    for loss_name, policy, fpr, thr, tpr in rows:
        w.writerow([loss_name, policy, _fmt(fpr), _fmt(thr), _fmt(tpr)])
    return buf.getvalue()


def metrics_csv(log) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iter", "lr", "loss"])
    for it, lr, loss in log:
        w.writerow([it, _fmt(lr), _fmt(loss)])
    return buf.getvalue()


def checkpoint_from(net: EmbeddingNet, config: ExperimentConfig, iteration: int,
                    quality_w=None) -> Checkpoint:
    return Checkpoint({k: v.copy() for k, v in net.params.items()},
                      BnStats(net.bn_mean.copy(), net.bn_var.copy(), eps=BN_EPS),
                      iteration, config.hash, quality_w=quality_w,
                      keep_rate=net.keep_rate, dropout=net.dropout)
