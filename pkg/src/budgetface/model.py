"""Toy feed-forward embedding model with hand-derived gradients.

Architecture: linear (input -> hidden), ReLU, residual linear block on
the hidden layer (the stochastic-depth target), linear (hidden -> embed),
1-D batch normalization (the AdaBN target), optional dropout, then L2
normalization onto the unit sphere. Class anchors are trained jointly and
renormalized on every use.

Everything is numpy float64; no autodiff.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .core import AnchorSet, SeededRng, normalize
from .dynamics import BnStats

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class EmbeddingNet:
    params: Dict[str, np.ndarray]
    bn_mean: np.ndarray
    bn_var: np.ndarray
    keep_rate: float = 1.0
    dropout: float = 0.0

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, embed_dim: int,
             num_classes: int, rng: SeededRng,
             keep_rate: float = 1.0, dropout: float = 0.0) -> "EmbeddingNet":
        g = rng.gen
        params = {
            "W1": g.standard_normal((input_dim, hidden_dim)) / np.sqrt(input_dim),
            "b1": np.zeros(hidden_dim),
            "Wr": g.standard_normal((hidden_dim, hidden_dim)) / np.sqrt(hidden_dim),
            "br": np.zeros(hidden_dim),
            "W2": g.standard_normal((hidden_dim, embed_dim)) / np.sqrt(hidden_dim),
            "b2": np.zeros(embed_dim),
            "A": g.standard_normal((num_classes, embed_dim)),
        }
        return cls(params, np.zeros(embed_dim), np.ones(embed_dim),
                   keep_rate=keep_rate, dropout=dropout)

    # -- forward -----------------------------------------------------------

    def hidden(self, x) -> np.ndarray:
        """Eval-mode hidden representation."""
        a = np.maximum(x @ self.params["W1"] + self.params["b1"], 0.0)
        r = a @ self.params["Wr"] + self.params["br"]
        return a + self.keep_rate * r

    def embed(self, x) -> np.ndarray:
        """Eval-mode unit embeddings using running BN statistics."""
        h = self.hidden(np.asarray(x, dtype=np.float64))
        z = h @ self.params["W2"] + self.params["b2"]
        zn = (z - self.bn_mean) / np.sqrt(self.bn_var + BN_EPS)
        return normalize(zn)

    def pre_bn(self, x) -> np.ndarray:
        """Eval-mode pre-BN activations (AdaBN recalibration input)."""
        h = self.hidden(np.asarray(x, dtype=np.float64))
        return h @ self.params["W2"] + self.params["b2"]

    def anchors(self) -> AnchorSet:
        return AnchorSet(normalize(self.params["A"]))

    def forward_train(self, x, rng: SeededRng):
        """Training-mode forward; returns (unit features, cos matrix, cache)."""
        p = self.params
        g = rng.gen
        x = np.asarray(x, dtype=np.float64)
        n = x.shape[0]

        h1 = x @ p["W1"] + p["b1"]
        a = np.maximum(h1, 0.0)
        r = a @ p["Wr"] + p["br"]
        depth_keep = 1.0 if self.keep_rate >= 1.0 else float(g.random() < self.keep_rate)
        h = a + depth_keep * r
        z = h @ p["W2"] + p["b2"]

        mu = z.mean(axis=0)
        zc = z - mu
        var = (zc * zc).mean(axis=0)
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        zn = zc * inv_std
        self.bn_mean = (1 - BN_MOMENTUM) * self.bn_mean + BN_MOMENTUM * mu
        self.bn_var = (1 - BN_MOMENTUM) * self.bn_var + BN_MOMENTUM * var

        if self.dropout > 0:
            mask = (g.random(zn.shape) >= self.dropout) / (1.0 - self.dropout)
            zd = zn * mask
        else:
            mask = None
            zd = zn

        # dropout can zero out an entire row; floor the norm so such a row
        # maps to the zero vector (cos 0 everywhere) instead of NaN
        norms = np.maximum(np.linalg.norm(zd, axis=1, keepdims=True), 1e-12)
        f = zd / norms

        anorm = np.linalg.norm(p["A"], axis=1, keepdims=True)
        w_hat = p["A"] / anorm
        cos = np.clip(f @ w_hat.T, -1.0, 1.0)

        cache = dict(x=x, h1=h1, a=a, depth_keep=depth_keep, h=h,
                     zc=zc, var=var, inv_std=inv_std, zn=zn, mask=mask,
                     zd=zd, norms=norms, f=f, w_hat=w_hat, anorm=anorm, n=n)
        return f, cos, cache

    def backward(self, grad_cos, cache) -> Dict[str, np.ndarray]:
        """Gradients of the loss wrt every parameter, given d(loss)/d(cos)."""
        p = self.params
        f, w_hat = cache["f"], cache["w_hat"]

        grad_f = grad_cos @ w_hat
        grad_w_hat = grad_cos.T @ f
        # through the per-row renormalizations
        ga = grad_w_hat - (grad_w_hat * w_hat).sum(axis=1, keepdims=True) * w_hat
        grad_A = ga / cache["anorm"]
        gz = grad_f - (grad_f * f).sum(axis=1, keepdims=True) * f
        grad_zd = gz / cache["norms"]

        if cache["mask"] is not None:
            grad_zn = grad_zd * cache["mask"]
        else:
            grad_zn = grad_zd

        # batch-norm backward (batch statistics)
        n = cache["n"]
        zc, inv_std = cache["zc"], cache["inv_std"]
        dvar = (grad_zn * zc).sum(axis=0) * (-0.5) * inv_std ** 3
        dmu = -(grad_zn.sum(axis=0)) * inv_std + dvar * (-2.0 / n) * zc.sum(axis=0)
        grad_z = grad_zn * inv_std + dvar * 2.0 * zc / n + dmu / n

        grad_W2 = cache["h"].T @ grad_z
        grad_b2 = grad_z.sum(axis=0)
        grad_h = grad_z @ p["W2"].T

        dk = cache["depth_keep"]
        grad_Wr = cache["a"].T @ (dk * grad_h)
        grad_br = dk * grad_h.sum(axis=0)
        grad_a = grad_h + dk * (grad_h @ p["Wr"].T)

        grad_h1 = grad_a * (cache["h1"] > 0)
        grad_W1 = cache["x"].T @ grad_h1
        grad_b1 = grad_h1.sum(axis=0)

        return {"W1": grad_W1, "b1": grad_b1, "Wr": grad_Wr, "br": grad_br,
                "W2": grad_W2, "b2": grad_b2, "A": grad_A}


class SgdMomentum:
    def __init__(self, params, momentum: float = 0.9, weight_decay: float = 1e-5):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads, lr: float) -> None:
        for k in params:
            g = grads[k] + self.weight_decay * params[k]
            self.velocity[k] = self.momentum * self.velocity[k] + g
            params[k] -= lr * self.velocity[k]

    def reset(self, key: str) -> None:
        self.velocity[key][...] = 0.0


# ---------------------------------------------------------------------------
# Deterministic checkpoint format: JSON manifest + raw little-endian bytes.
# (npz embeds zip timestamps, which breaks byte-identical round-trips.)


@dataclass
class Checkpoint:
    params: Dict[str, np.ndarray]
    bn: BnStats
    iteration: int
    config_hash: str
    quality_w: Optional[np.ndarray] = None
    keep_rate: float = 1.0
    dropout: float = 0.0

    def to_net(self) -> EmbeddingNet:
        return EmbeddingNet({k: v.copy() for k, v in self.params.items()},
                            self.bn.mean.copy(), self.bn.var.copy(),
                            keep_rate=self.keep_rate, dropout=self.dropout)


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    arrays = dict(ckpt.params)
    arrays["__bn_mean"] = ckpt.bn.mean
    arrays["__bn_var"] = ckpt.bn.var
    if ckpt.quality_w is not None:
        arrays["__quality_w"] = ckpt.quality_w
    manifest = {
        "iteration": ckpt.iteration,
        "config_hash": ckpt.config_hash,
        "bn_eps": ckpt.bn.eps,
        "keep_rate": ckpt.keep_rate,
        "dropout": ckpt.dropout,
        "arrays": {},
    }
    blob = b""
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        manifest["arrays"][name] = {"shape": list(arr.shape), "offset": len(blob)}
        blob += arr.tobytes()
    header = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        fh.write(blob)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        hlen = int.from_bytes(fh.read(8), "little")
        manifest = json.loads(fh.read(hlen).decode())
        blob = fh.read()
    arrays = {}
    for name, meta in manifest["arrays"].items():
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count,
                            offset=meta["offset"]).reshape(shape).copy()
        arrays[name] = arr
    bn = BnStats(arrays.pop("__bn_mean"), arrays.pop("__bn_var"),
                 eps=manifest["bn_eps"])
    quality_w = arrays.pop("__quality_w", None)
    return Checkpoint(arrays, bn, manifest["iteration"], manifest["config_hash"],
                      quality_w=quality_w, keep_rate=manifest["keep_rate"],
                      dropout=manifest["dropout"])
