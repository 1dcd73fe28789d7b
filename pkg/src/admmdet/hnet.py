"""ADMM-HNet: PS-ADMM with the ridge solve replaced by per-layer MLPs.

Each layer runs the plane sweep with frozen penalties, builds the feature
vector ``a = [a1; a2]`` with

    r  = y - H x
    a1 = H^T r / M + x
    a2 = rho (sum_i 2^i z_i - u)

and maps it through a one-hidden-layer ReLU network to the next ``x``.
Layers are trained greedily, each against the true symbols, then frozen.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _io
from .errors import ConfigError, DimensionError, NumericsError, ParameterError
from .linalg import RngStream, matvec, rmatvec
from .mimo import DatasetSpec, SystemConfig
from .psadmm import PenaltyParams, plane_sum, w_transform
from .psnet import TrainConfig, sgnlin

log = logging.getLogger(__name__)

DEFAULT_HIDDEN = 128


@dataclass
class MlpWeights:
    """``W1 (n, 2K)``, ``b1 (n,)``, ``W2 (K, n)``, ``b2 (K,)``."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        self.W1, self.b1, self.W2, self.b2 = (np.asarray(a, dtype=np.float64)
                                              for a in (self.W1, self.b1, self.W2, self.b2))
        n, d0 = self.W1.shape
        K = self.W2.shape[0]
        if d0 != 2 * K:
            raise DimensionError(f"input width {d0} must equal 2K = {2 * K}")
        if self.b1.shape != (n,) or self.W2.shape != (K, n) or self.b2.shape != (K,):
            raise DimensionError("inconsistent MLP parameter shapes")
        if n < 1:
            raise DimensionError("hidden width must be >= 1")

    @property
    def n(self):
        return self.W1.shape[0]

    @property
    def K(self):
        return self.W2.shape[0]

    @classmethod
    def glorot(cls, K, n, gen):
        """Uniform Glorot weights, zero biases."""
        lim1 = math.sqrt(6.0 / (2 * K + n))
        lim2 = math.sqrt(6.0 / (n + K))
        return cls(W1=gen.uniform(-lim1, lim1, size=(n, 2 * K)), b1=np.zeros(n),
                   W2=gen.uniform(-lim2, lim2, size=(K, n)), b2=np.zeros(K))

    def params(self):
        return (self.W1, self.b1, self.W2, self.b2)

    def to_dict(self):
        return {"W1": self.W1.tolist(), "b1": self.b1.tolist(),
                "W2": self.W2.tolist(), "b2": self.b2.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["W1"]), np.array(d["b1"]), np.array(d["W2"]), np.array(d["b2"]))


def residual(y, H, x):
    return y - matvec(H, x)


def feature_a1(H, r, x, M=None):
    """Matched-filter correction of ``x``: ``H^T r / M + x``."""
    if M is None:
        M = H.shape[-2]
    return rmatvec(H, r) / M + x


def feature_a2(z, u, rho):
    return rho * (plane_sum(z) - u)


def stack_features(a1, a2):
    if a1.shape != a2.shape:
        raise DimensionError(f"feature shapes differ: {a1.shape} vs {a2.shape}")
    return np.concatenate([a1, a2], axis=-1)


def mlp_forward(a, w):
    """Return ``(x_hat, t)`` with ``t = relu(W1 a + b1)``, ``x_hat = W2 t + b2``."""
    t = np.maximum(a @ w.W1.T + w.b1, 0.0)
    return t @ w.W2.T + w.b2, t


def mlp_backward(a, w, t, x_hat, s):
    """Gradients of ``mean_batch ||x_hat - s||^2`` w.r.t. the MLP parameters.

    Single vectors count as a batch of one.  The ReLU derivative at 0 is 0.
    """
    a2, t2, d = (np.atleast_2d(v) for v in (a, t, x_hat - s))
    d = d * (2.0 / d.shape[0])
    dt = (d @ w.W2) * (t2 > 0)
    return MlpWeights(W1=dt.T @ a2, b1=dt.sum(axis=0), W2=d.T @ t2, b2=d.sum(axis=0))


def hnet_dual_update(u, x_hat, z):
    return u + x_hat - plane_sum(z)


class MacCounter:
    """Tallies multiply-accumulates of matrix-vector products."""

    def __init__(self):
        self.macs = 0

    def add(self, rows, cols, batch=1):
        self.macs += rows * cols * batch


def flop_estimate(M, K, L, n):
    """Cost model ``MK + L (MK + 3Kn)``."""
    for name, v in (("M", M), ("K", K), ("n", n)):
        if v <= 0:
            raise ParameterError(f"{name} must be positive, got {v}")
    if L < 0:
        raise ParameterError(f"L must be non-negative, got {L}")
    return M * K + L * (M * K + 3 * K * n)


def _plane_sweep(x, z, u, theta):
    z = z.copy()
    for i in range(theta.q):
        z[i] = sgnlin(w_transform(i, x, z, u, theta))
    return z


def layer_features(y, H, x, z, u, theta):
    """Sweep the planes, then build the layer input ``a``; returns ``(a, z)``."""
    z = _plane_sweep(x, z, u, theta)
    r = residual(y, H, x)
    a = stack_features(feature_a1(H, r, x), feature_a2(z, u, theta.rho))
    return a, z


def initial_state(y, H, q):
    x = rmatvec(H, y) / H.shape[-2]
    return x, np.zeros((q,) + x.shape), np.zeros(x.shape)


@dataclass
class HnetModel:
    layers: list
    theta: PenaltyParams
    cfg: SystemConfig | None = None
    training_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.layers:
            raise ParameterError("model needs at least one layer")
        self.theta.require_feasible()
        K = self.layers[0].K
        for w in self.layers:
            if w.K != K or w.W1.shape[1] != 2 * K:
                raise DimensionError("all layers must share K with input width 2K")
        if self.cfg is not None and self.cfg.K != K:
            raise DimensionError(f"layer K = {K} but cfg.K = {self.cfg.K}")

    @property
    def L(self):
        return len(self.layers)

    @property
    def n(self):
        return self.layers[0].n

    def truncate(self, L):
        """The first ``L`` layers (a greedily trained prefix is itself a model)."""
        if not 1 <= L <= self.L:
            raise ParameterError(f"cannot truncate {self.L}-layer model to {L}")
        return HnetModel(self.layers[:L], self.theta, self.cfg, dict(self.training_meta))

    def detect(self, y, H):
        return detect_hnet(y, H, self)

    def to_dict(self):
        meta = dict(self.training_meta)
        if self.cfg is not None:
            meta.setdefault("mc", self.cfg.mc)
            meta.setdefault("kc", self.cfg.kc)
        return {"kind": "hnet", "q": self.theta.q, "L": self.L, "n": self.n,
                "theta": self.theta.to_dict(),
                "layers": [w.to_dict() for w in self.layers],
                "training_meta": meta}

    def dumps(self):
        return _io.dumps(self.to_dict())

    def save(self, path):
        _io.atomic_write(path, self.dumps())

    @classmethod
    def from_dict(cls, d):
        if d.get("kind") != "hnet":
            raise ConfigError(f"expected an hnet model, got kind={d.get('kind')!r}")
        theta = PenaltyParams.from_dict(d["theta"])
        if theta.q != int(d["q"]):
            raise ConfigError(f"q = {d['q']} but theta has {theta.q} planes")
        layers = [MlpWeights.from_dict(w) for w in d["layers"]]
        if len(layers) != int(d["L"]):
            raise ConfigError(f"L = {d['L']} but {len(layers)} layers stored")
        meta = d.get("training_meta", {})
        cfg = None
        if "mc" in meta and "kc" in meta:
            cfg = SystemConfig(mc=int(meta["mc"]), kc=int(meta["kc"]), q=theta.q, L=len(layers))
        return cls(layers=layers, theta=theta, cfg=cfg, training_meta=meta)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def detect_hnet(y, H, model, counter=None):
    """Run all layers of ``model``; returns the un-quantized ``x_L``.

    ``counter`` (a :class:`MacCounter`) tallies mat-vec multiply-accumulates.
    """
    y = np.asarray(y, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    theta = model.theta
    x, z, u = initial_state(y, H, theta.q)
    if counter is not None:
        M, K = H.shape[-2:]
        batch = int(np.prod(H.shape[:-2], dtype=np.int64))
        counter.add(M, K, batch)
    for w in model.layers:
        a, z = layer_features(y, H, x, z, u, theta)
        x, _ = mlp_forward(a, w)
        u = hnet_dual_update(u, x, z)
        if counter is not None:
            counter.add(M, K, 2 * batch)
            counter.add(w.n, 2 * K, batch)
            counter.add(K, w.n, batch)
    return x


def _mse(x, s):
    d = x - s
    return float(np.mean(np.sum(d * d, axis=-1)))


def train_layer(a, s, w, tc, gen):
    """Mini-batch SGD on one MLP; returns ``(weights, loss history)``.

    History holds the full-set loss before training and after each epoch.
    """
    n = a.shape[0]
    lr = tc.lr
    history = [_mse(mlp_forward(a, w)[0], s)]
    W1, b1, W2, b2 = (p.copy() for p in w.params())
    w = MlpWeights(W1, b1, W2, b2)
    for _ in range(tc.epochs):
        perm = gen.permutation(n)
        for start in range(0, n, tc.batch):
            idx = perm[start:start + tc.batch]
            ab, sb = a[idx], s[idx]
            xb, tb = mlp_forward(ab, w)
            g = mlp_backward(ab, w, tb, xb, sb)
            w.W1 -= lr * g.W1
            w.b1 -= lr * g.b1
            w.W2 -= lr * g.W2
            w.b2 -= lr * g.b2
        lr *= tc.lr_decay
        history.append(_mse(mlp_forward(a, w)[0], s))
        if not math.isfinite(history[-1]):
            break
    return w, history


def train_hnet(data, theta, tc, n, L, init_stream, cfg=None, callback=None):
    """Greedy layer-wise training.

    For every layer the whole training set is propagated through the frozen
    prefix once; the cached features then train that layer's MLP.
    """
    if isinstance(data, DatasetSpec):
        cfg = data.cfg
        batch = data.batch()
    else:
        batch = data
        if cfg is None:
            raise ParameterError("cfg is required when training from a SampleBatch")
    if theta.q != cfg.q:
        raise ParameterError(f"penalties have q = {theta.q}, system has q = {cfg.q}")
    theta.require_feasible()
    if L < 1 or n < 1:
        raise ParameterError(f"need L >= 1 and n >= 1, got L={L}, n={n}")
    y, H, s = batch.y, batch.H, batch.s
    x, z, u = initial_state(y, H, theta.q)
    layers, histories = [], []
    for ell in range(L):
        a, z = layer_features(y, H, x, z, u, theta)
        stream = init_stream.spawn(ell)
        w0 = MlpWeights.glorot(cfg.K, n, stream.spawn(0).generator())
        w, hist = train_layer(a, s, w0, tc, stream.spawn(1).generator())
        if not all(math.isfinite(v) for v in hist):
            raise NumericsError(f"non-finite loss while training layer {ell + 1}; "
                                f"last finite {[v for v in hist if math.isfinite(v)][-1:]}")
        layers.append(w)
        histories.append(hist)
        x, _ = mlp_forward(a, w)
        u = hnet_dual_update(u, x, z)
        if callback is not None:
            callback(ell, hist)
        log.debug("hnet layer %d loss %.6g -> %.6g", ell + 1, hist[0], hist[-1])
    meta = {"epochs": tc.epochs, "batch": tc.batch, "lr": tc.lr, "lr_decay": tc.lr_decay,
            "seed": init_stream.to_dict(), "layer_loss": histories}
    if isinstance(data, DatasetSpec):
        meta["dataset"] = data.to_dict()
    return HnetModel(layers=layers, theta=theta, cfg=cfg, training_meta=meta)
