"""Penalized-sharing ADMM (PS-ADMM) detection with fixed penalties.

The relaxed problem is::

    min_{x, z}  1/2 ||y - H x||^2 - 1/2 sum_i alpha_i ||z_i||^2
    s.t.        x = sum_i 2^i z_i,   z_i in [-1, 1]^K

solved with scaled-form ADMM (scaled dual ``u = lambda / rho``).  Each
iteration is a Gauss-Seidel sweep over the planes, a ridge solve for ``x``
and a dual ascent step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DimensionError, ParameterError
from .linalg import SpdFactor, gram_plus_ridge, matvec, rmatvec, solve_spd

FEASIBILITY_MARGIN = 0.01
DEFAULT_RHO = 1.5
DEFAULT_ALPHA_FRACTION = 0.3

__all__ = [
    "DetectorState",
    "FactorCache",
    "PenaltyParams",
    "ResidualTrace",
    "augmented_lagrangian",
    "detect_mmse",
    "detect_psadmm",
    "detect_zf",
    "plane_sum",
    "project_box",
    "ridge_factor",
    "u_update",
    "w_transform",
    "x_update",
    "z_sweep",
]


@dataclass(frozen=True)
class PenaltyParams:
    """Penalties ``alpha`` (one per plane) and ADMM penalty ``rho``.

    Feasibility requires ``0 <= alpha[i] <= (1 - eps) * 4**i * rho`` so that
    every plane-update denominator ``4**i * rho - alpha[i]`` is positive.
    Construction only checks ``rho > 0`` and ``alpha >= 0``; the margin is
    enforced by :meth:`require_feasible` before any detector arithmetic.
    """

    alpha: tuple
    rho: float

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        object.__setattr__(self, "rho", float(self.rho))
        if not self.alpha:
            raise ParameterError("alpha must have at least one entry")
        if not (np.isfinite(self.rho) and self.rho > 0):
            raise ParameterError(f"rho must be positive, got {self.rho}")
        for i, a in enumerate(self.alpha):
            if not (np.isfinite(a) and a >= 0):
                raise ParameterError(f"alpha[{i}] must be non-negative, got {a}")

    @property
    def q(self):
        return len(self.alpha)

    @classmethod
    def default(cls, q, rho=DEFAULT_RHO, fraction=DEFAULT_ALPHA_FRACTION):
        return cls(tuple(fraction * 4**i * rho for i in range(q)), rho)

    def alpha_limit(self, i, eps=FEASIBILITY_MARGIN):
        return (1.0 - eps) * 4**i * self.rho

    def is_feasible(self, eps=FEASIBILITY_MARGIN):
        return all(a <= self.alpha_limit(i, eps) for i, a in enumerate(self.alpha))

    def require_feasible(self, eps=FEASIBILITY_MARGIN):
        for i, a in enumerate(self.alpha):
            if a > self.alpha_limit(i, eps):
                raise ParameterError(
                    f"alpha[{i}] = {a} exceeds (1-{eps})*4^{i}*rho = {self.alpha_limit(i, eps)}")

    @cached_property
    def coefficients(self):
        """Plane-update gains ``2**i rho / (4**i rho - alpha_i)``."""
        self.require_feasible()
        return tuple(2.0**i * self.rho / (4.0**i * self.rho - a)
                     for i, a in enumerate(self.alpha))

    def as_vector(self):
        return np.array(self.alpha + (self.rho,))

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=np.float64)
        return cls(tuple(v[:-1]), v[-1])

    def to_dict(self):
        return {"rho": self.rho, "alpha": list(self.alpha)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["alpha"]), d["rho"])


@dataclass
class DetectorState:
    x: np.ndarray
    u: np.ndarray
    z: np.ndarray
    iter: int = 0


@dataclass
class ResidualTrace:
    """Per-iteration primal residual norm and augmented Lagrangian value."""

    primal: list = field(default_factory=list)
    objective: list = field(default_factory=list)

    def __len__(self):
        return len(self.primal)


def plane_sum(z):
    """``sum_i 2**i * z[i]`` over the leading plane axis."""
    total = z[0].copy()
    for i in range(1, z.shape[0]):
        total += 2.0**i * z[i]
    return total


def project_box(v):
    """Euclidean projection onto ``[-1, 1]``."""
    return np.clip(v, -1.0, 1.0)


def w_transform(i, x, z, u, theta):
    """Pre-projection argument of the update of plane ``i`` (0-based).

    ``z`` must already hold the new values for planes below ``i`` and the
    old values for planes above ``i``.
    """
    if not 0 <= i < theta.q:
        raise ParameterError(f"plane index {i} outside 0..{theta.q - 1}")
    coef = theta.coefficients[i]
    v = x + u
    for j in range(z.shape[0]):
        if j != i:
            v = v - 2.0**j * z[j]
    return coef * v


def _sweep(x, z, u, theta, clamp):
    if z.shape[0] != theta.q:
        raise DimensionError(f"{z.shape[0]} planes given for q = {theta.q}")
    z = z.copy()
    for i in range(theta.q):
        z[i] = clamp(w_transform(i, x, z, u, theta))
    return z


def z_sweep(state, theta, x_ref):
    """Gauss-Seidel plane update in ascending order; returns the new planes."""
    return _sweep(x_ref, state.z, state.u, theta, project_box)


def ridge_factor(H, rho):
    """Cholesky factor of ``H.T H + rho I``."""
    return SpdFactor(gram_plus_ridge(H, rho))


def x_update(H, y, z, u, rho, factor=None, hty=None):
    """Solve ``(H.T H + rho I) x = H.T y + rho (sum_i 2^i z_i - u)``."""
    if factor is None:
        factor = ridge_factor(H, rho)
    if hty is None:
        hty = rmatvec(H, y)
    return factor.solve(hty + rho * (plane_sum(z) - u))


def u_update(u, x, z):
    return u + x - plane_sum(z)


def augmented_lagrangian(y, H, x, z, u, theta):
    """Value of the scaled-form augmented Lagrangian (``lambda = rho u``)."""
    r = y - matvec(H, x)
    gap = x - plane_sum(z)
    val = 0.5 * np.sum(r * r, axis=-1)
    for i, a in enumerate(theta.alpha):
        val = val - 0.5 * a * np.sum(z[i] * z[i], axis=-1)
    return val + theta.rho * np.sum(u * gap, axis=-1) + 0.5 * theta.rho * np.sum(gap * gap, axis=-1)


def detect_psadmm(y, H, theta, iters, record=True, factor=None):
    """Run ``iters`` PS-ADMM iterations from ``x = u = z = 0``.

    Returns ``(x, trace)``; ``trace`` is ``None`` when ``record`` is false.
    Works on single instances and on stacks (leading batch axes).
    """
    if iters < 1:
        raise ParameterError(f"iters must be >= 1, got {iters}")
    theta.require_feasible()
    y = np.asarray(y, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    if factor is None:
        factor = ridge_factor(H, theta.rho)
    hty = rmatvec(H, y)
    shape = hty.shape
    state = DetectorState(x=np.zeros(shape), u=np.zeros(shape), z=np.zeros((theta.q,) + shape))
    trace = ResidualTrace() if record else None
    for _ in range(iters):
        state.z = z_sweep(state, theta, state.x)
        state.x = x_update(H, y, state.z, state.u, theta.rho, factor=factor, hty=hty)
        state.u = u_update(state.u, state.x, state.z)
        state.iter += 1
        if record:
            gap = state.x - plane_sum(state.z)
            trace.primal.append(np.sqrt(np.sum(gap * gap, axis=-1)))
            trace.objective.append(augmented_lagrangian(y, H, state.x, state.z, state.u, theta))
    return state.x, trace


def detect_zf(y, H):
    """Least-squares estimate via the normal equations."""
    H = np.asarray(H, dtype=np.float64)
    G = np.matmul(H.swapaxes(-1, -2), H)
    G = np.tril(G) + np.tril(G, -1).swapaxes(-1, -2)
    return SpdFactor(G).solve(rmatvec(H, np.asarray(y, dtype=np.float64)))


def detect_mmse(y, H, sigma2r, es_real):
    """Linear MMSE estimate with ridge ``sigma2r / es_real``.

    ``es_real`` is the per-real-dimension symbol energy ``(4**q - 1) / 3``.
    """
    if sigma2r == 0:
        return detect_zf(y, H)
    return solve_spd(gram_plus_ridge(H, sigma2r / es_real), rmatvec(H, np.asarray(y, dtype=np.float64)))


class FactorCache:
    """Reuses ``H.T H + rho I`` factorizations for detections sharing ``H``.

    Keys are content hashes of ``H`` plus ``rho``; entries are immutable.
    Not thread-safe; give each worker its own cache.
    """

    def __init__(self, maxsize=64):
        self.maxsize = maxsize
        self._store = {}

    def get(self, H, rho):
        H = np.ascontiguousarray(H, dtype=np.float64)
        key = (H.shape, hash(H.tobytes()), float(rho))
        hit = self._store.get(key)
        if hit is None:
            if len(self._store) >= self.maxsize:
                self._store.pop(next(iter(self._store)))
            hit = self._store[key] = ridge_factor(H, rho)
        return hit

    def __len__(self):
        return len(self._store)
