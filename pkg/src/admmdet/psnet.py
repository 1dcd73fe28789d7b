"""ADMM-PSNet: PS-ADMM unfolded into L layers sharing one trainable theta.

theta = (alpha_1..alpha_q, rho) is learned by SGD on the mean squared
error of the final-layer estimate.  Gradients are central finite
differences over the q + 1 scalars.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _io
from .errors import ConfigError, NumericsError, ParameterError
from .linalg import RngStream, SpdFactor, rmatvec
from .mimo import DatasetSpec, SampleBatch, SystemConfig
from .psadmm import (
    FEASIBILITY_MARGIN,
    PenaltyParams,
    plane_sum,
    ridge_factor,
    u_update,
    w_transform,
    x_update,
)

log = logging.getLogger(__name__)

RHO_BOUNDS = (1e-3, 1e3)


def sgnlin(w):
    """Clipping activation ``min(max(-1, w), 1)``."""
    return np.minimum(np.maximum(-1.0, w), 1.0)


def _layer(H, y, x, z, u, theta, factor, hty):
    z = z.copy()
    for i in range(theta.q):
        z[i] = sgnlin(w_transform(i, x, z, u, theta))
    x = x_update(H, y, z, u, theta.rho, factor=factor, hty=hty)
    u = u_update(u, x, z)
    return x, z, u


def psnet_forward(y, H, theta, L, record=False, factor=None, hty=None):
    """Propagate through ``L`` unfolded layers from zero state.

    Returns ``(x_L, layers)`` where ``layers`` lists the per-layer
    estimates if ``record`` is set, else ``None``.
    """
    if L < 1:
        raise ParameterError(f"L must be >= 1, got {L}")
    theta.require_feasible()
    y = np.asarray(y, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    if factor is None:
        factor = ridge_factor(H, theta.rho)
    if hty is None:
        hty = rmatvec(H, y)
    x = np.zeros(hty.shape)
    u = np.zeros(hty.shape)
    z = np.zeros((theta.q,) + hty.shape)
    layers = [] if record else None
    for _ in range(L):
        x, z, u = _layer(H, y, x, z, u, theta, factor, hty)
        if record:
            layers.append(x)
    return x, layers


class _Prepared:
    """Gram matrices and matched-filter outputs of a batch, plus factor reuse."""

    def __init__(self, batch):
        self.batch = batch
        H = batch.H
        G = np.matmul(H.swapaxes(-1, -2), H)
        self.gram = np.tril(G) + np.tril(G, -1).swapaxes(-1, -2)
        self.hty = rmatvec(H, batch.y)
        self._factors = {}

    def factor(self, rho):
        f = self._factors.get(rho)
        if f is None:
            A = self.gram.copy()
            k = A.shape[-1]
            A[..., np.arange(k), np.arange(k)] += rho
            f = self._factors[rho] = SpdFactor(A)
        return f


def _loss(prep, theta, L):
    b = prep.batch
    x, _ = psnet_forward(b.y, b.H, theta, L, factor=prep.factor(theta.rho), hty=prep.hty)
    err = x - b.s
    return float(np.mean(np.sum(err * err, axis=-1)))


def psnet_loss(batch, theta, L):
    """Mean over samples of ``||x_L - s||^2`` (no quantization)."""
    if len(batch) == 0:
        raise ParameterError("empty batch")
    return _loss(_Prepared(batch), theta, L)


def grad_fd(theta, batch, L, h, loss_fn=None):
    """Central-difference gradient over ``(alpha_1..alpha_q, rho)``.

    The step for component ``c`` is ``h * max(1, |theta_c|)``; if a
    perturbation leaves the feasible set, the step is halved up to 10 times.
    ``loss_fn(theta)`` overrides the default batch loss.
    """
    if loss_fn is None:
        prep = batch if isinstance(batch, _Prepared) else _Prepared(batch)

        def loss_fn(t):
            return _loss(prep, t, L)

    vec = theta.as_vector()
    grad = np.empty_like(vec)
    for c in range(vec.size):
        step = h * max(1.0, abs(vec[c]))
        for _ in range(11):
            try:
                plus = PenaltyParams.from_vector(_bump(vec, c, step))
                minus = PenaltyParams.from_vector(_bump(vec, c, -step))
                plus.require_feasible()
                minus.require_feasible()
                break
            except ParameterError:
                step /= 2
        else:
            raise ParameterError(f"finite-difference step for component {c} leaves the feasible set")
        grad[c] = (loss_fn(plus) - loss_fn(minus)) / (2 * step)
    return grad


def _bump(vec, c, step):
    out = vec.copy()
    out[c] += step
    return out


def project_feasible(vec, q, guard=0.0):
    """Clamp ``(alpha, rho)`` back into the feasible set.

    ``guard`` keeps every component that distance inside its bounds, scaled
    like the finite-difference steps, so the next gradient evaluation is
    interior.
    """
    out = np.array(vec, dtype=np.float64)
    rho_guard = guard * max(1.0, abs(out[-1]))
    out[-1] = min(max(out[-1], RHO_BOUNDS[0] + rho_guard), RHO_BOUNDS[1] - rho_guard)
    rho_low = out[-1] - rho_guard
    for i in range(q):
        g = guard * max(1.0, abs(out[i]))
        hi = max((1.0 - FEASIBILITY_MARGIN) * 4**i * rho_low - g, 0.0)
        out[i] = min(max(out[i], min(g, hi)), hi)
    return out


@dataclass(frozen=True)
class TrainConfig:
    """SGD settings.  ``m`` samples, ``epochs`` passes, step ``lr`` decayed per epoch."""

    m: int = 2000
    epochs: int = 200
    batch: int = 200
    lr: float = 1e-3
    fd_step: float = 1e-3
    lr_decay: float = 0.999

    def __post_init__(self):
        for name in ("m", "epochs", "batch", "lr", "fd_step", "lr_decay"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)}")
        if self.batch > self.m:
            raise ParameterError(f"batch {self.batch} exceeds m = {self.m}")

    @classmethod
    def psnet_desk(cls):
        return cls(lr=0.2)

    @classmethod
    def psnet_full(cls):
        return cls(m=10_000, epochs=10_000, batch=1000)

    @classmethod
    def hnet_desk(cls):
        return cls(m=10_000, epochs=50, batch=32, lr=3e-3)

    @classmethod
    def hnet_full(cls):
        return cls(m=90_000, epochs=2000, batch=1024)


@dataclass
class PsnetModel:
    theta: PenaltyParams
    L: int
    cfg: SystemConfig | None = None
    training_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.L < 1:
            raise ParameterError(f"L must be >= 1, got {self.L}")
        self.theta.require_feasible()

    def detect(self, y, H, L=None):
        x, _ = psnet_forward(y, H, self.theta, self.L if L is None else L)
        return x

    def to_dict(self):
        meta = dict(self.training_meta)
        if self.cfg is not None:
            meta.setdefault("mc", self.cfg.mc)
            meta.setdefault("kc", self.cfg.kc)
        return {"kind": "psnet", "q": self.theta.q, "L": self.L,
                "rho": self.theta.rho, "alpha": list(self.theta.alpha),
                "training_meta": meta}

    def dumps(self):
        return _io.dumps(self.to_dict())

    def save(self, path):
        _io.atomic_write(path, self.dumps())

    @classmethod
    def from_dict(cls, d):
        if d.get("kind") != "psnet":
            raise ConfigError(f"expected a psnet model, got kind={d.get('kind')!r}")
        theta = PenaltyParams(tuple(d["alpha"]), d["rho"])
        if theta.q != int(d["q"]):
            raise ConfigError(f"q = {d['q']} but {theta.q} alpha values given")
        meta = d.get("training_meta", {})
        cfg = None
        if "mc" in meta and "kc" in meta:
            cfg = SystemConfig(mc=int(meta["mc"]), kc=int(meta["kc"]), q=theta.q, L=int(d["L"]))
        return cls(theta=theta, L=int(d["L"]), cfg=cfg, training_meta=meta)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def initial_theta(q, stream, rho_init=None):
    """Random interior-feasible start: rho ~ U[0.5, 2], alpha_i = 0.3 * 4^i rho."""
    rho = float(stream.generator().uniform(0.5, 2.0)) if rho_init is None else float(rho_init)
    return PenaltyParams.default(q, rho=rho)


def train_psnet(data, tc, init_stream, L, cfg=None, rho_init=None, callback=None):
    """End-to-end SGD on theta with finite-difference gradients.

    ``data`` is a :class:`DatasetSpec` or a prebuilt :class:`SampleBatch`
    (then ``cfg`` is required).
    Returns a :class:`PsnetModel` whose ``training_meta['loss_history']``
    holds the full-set loss before training and after every epoch.
    """
    if isinstance(data, DatasetSpec):
        cfg = data.cfg
        batch = data.batch()
    else:
        batch = data
        if cfg is None:
            raise ParameterError("cfg is required when training from a SampleBatch")
    if len(batch) < tc.batch:
        raise ParameterError(f"dataset has {len(batch)} samples, fewer than batch {tc.batch}")
    q = cfg.q
    theta = initial_theta(q, init_stream.spawn(0), rho_init)
    shuffle = init_stream.spawn(1).generator()
    full = _Prepared(batch)
    history = [_loss(full, theta, L)]
    theta_history = [theta.as_vector().tolist()]
    lr = tc.lr
    n = len(batch)
    for epoch in range(tc.epochs):
        perm = shuffle.permutation(n)
        for start in range(0, n - tc.batch + 1, tc.batch):
            idx = np.sort(perm[start:start + tc.batch])
            g = grad_fd(theta, _Prepared(batch[idx]), L, tc.fd_step)
            if not np.all(np.isfinite(g)):
                raise NumericsError(f"non-finite gradient at epoch {epoch}, theta={theta.as_vector().tolist()}, "
                                    f"batch start {start}")
            vec = project_feasible(theta.as_vector() - lr * g, q, guard=2 * tc.fd_step)
            theta = PenaltyParams.from_vector(vec)
        lr *= tc.lr_decay
        loss = _loss(full, theta, L)
        if not math.isfinite(loss):
            raise NumericsError(f"non-finite loss at epoch {epoch}, theta={theta.as_vector().tolist()}")
        history.append(loss)
        theta_history.append(theta.as_vector().tolist())
        if callback is not None:
            callback(epoch, theta, loss)
        log.debug("psnet epoch %d loss %.6g theta %s", epoch, loss, theta.as_vector())
    meta = {"epochs": tc.epochs, "initial_loss": history[0], "final_loss": history[-1],
            "seed": init_stream.to_dict(), "loss_history": history, "theta_history": theta_history}
    if isinstance(data, DatasetSpec):
        meta["dataset"] = data.to_dict()
    return PsnetModel(theta=theta, L=L, cfg=cfg, training_meta=meta)
