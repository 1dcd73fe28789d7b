"""Dense real linear algebra and seeded random streams.

Every array routine accepts either a single instance (vectors ``(K,)``,
matrices ``(M, K)``) or a stack with leading batch axes (``(B, K)``,
``(B, M, K)``).  All arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

from .errors import DimensionError, ParameterError, SingularMatrixError

__all__ = [
    "RngStream",
    "SpdFactor",
    "cholesky",
    "gram_plus_ridge",
    "matvec",
    "rmatvec",
    "sample_gaussian",
    "solve_spd",
]


def matvec(A, x):
    """``A @ x`` for a single matrix or a stack of matrices."""
    if A.ndim == 2:
        return A @ x
    return np.matmul(A, x[..., None])[..., 0]


def rmatvec(A, x):
    """``A.T @ x`` for a single matrix or a stack of matrices."""
    if A.ndim == 2:
        return x @ A
    return np.matmul(x[..., None, :], A)[..., 0, :]


def gram_plus_ridge(H, rho):
    """Return ``H.T @ H + rho * I``.

    The result is made exactly symmetric by mirroring the lower triangle.
    """
    rho = float(rho)
    if not rho > 0:
        raise ParameterError(f"rho must be positive, got {rho}")
    H = np.asarray(H, dtype=np.float64)
    if H.ndim < 2:
        raise DimensionError(f"H must be at least 2-D, got shape {H.shape}")
    G = np.matmul(H.swapaxes(-1, -2), H)
    lower = np.tril(G)
    G = lower + np.tril(G, -1).swapaxes(-1, -2)
    k = G.shape[-1]
    G[..., np.arange(k), np.arange(k)] += rho
    return G


def _potrf(A):
    c, info = lapack.dpotrf(A, lower=1, clean=1)
    if info > 0:
        raise SingularMatrixError(info - 1)
    if info < 0:
        raise ValueError(f"dpotrf: illegal argument {-info}")
    return c


def cholesky(A):
    """Lower-triangular Cholesky factor of an SPD matrix or stack.

    Raises :class:`SingularMatrixError` naming the first non-positive pivot.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise DimensionError(f"expected square matrices, got shape {A.shape}")
    if A.ndim == 2:
        return _potrf(A)
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        flat = A.reshape(-1, *A.shape[-2:])
        for b, Ab in enumerate(flat):
            try:
                _potrf(Ab)
            except SingularMatrixError as err:
                raise SingularMatrixError(err.pivot, batch_index=b) from None
        raise


class SpdFactor:
    """Cholesky factorization of ``A`` reused across many right-hand sides.

    Single matrices are solved with LAPACK ``dpotrs``.  For stacks, the
    triangular factor is inverted once so that each solve is two batched
    triangular mat-vecs; ``A`` itself is never inverted.
    """

    def __init__(self, A):
        self.lower = cholesky(A)
        self.n = self.lower.shape[-1]
        if self.lower.ndim > 2:
            self._linv = np.linalg.inv(self.lower)
            self._linv_t = np.ascontiguousarray(self._linv.swapaxes(-1, -2))

    @property
    def batched(self):
        return self.lower.ndim > 2

    def solve(self, b):
        b = np.asarray(b, dtype=np.float64)
        if b.shape[-1] != self.n:
            raise DimensionError(f"rhs length {b.shape[-1]} != {self.n}")
        if not self.batched:
            x, info = lapack.dpotrs(self.lower, b, lower=1)
            if info != 0:
                raise ValueError(f"dpotrs: illegal argument {-info}")
            return x
        w = np.matmul(self._linv, b[..., None])
        return np.matmul(self._linv_t, w)[..., 0]


def solve_spd(A, b):
    """Solve ``A x = b`` for symmetric positive definite ``A``."""
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise DimensionError(f"expected square matrices, got shape {A.shape}")
    scale = max(1.0, float(np.max(np.abs(A))) if A.size else 1.0)
    if np.max(np.abs(A - A.swapaxes(-1, -2)), initial=0.0) > 1e-9 * scale:
        raise ParameterError("matrix is not symmetric within 1e-9 relative")
    return SpdFactor(A).solve(b)


@dataclass(frozen=True)
class RngStream:
    """Descriptor of an independent, replayable random stream.

    Draws come from a Philox counter-based generator keyed by
    ``(seed, stream_id, *branch)``.  ``spawn(i)`` derives child streams,
    so trial ``i`` of a sweep gets its own stream regardless of schedule.
    """

    seed: int
    stream_id: int = 0
    branch: tuple = ()

    def __post_init__(self):
        for v in (self.seed, self.stream_id, *self.branch):
            if not 0 <= int(v) < 2**64:
                raise ParameterError(f"stream keys must be 64-bit unsigned, got {v}")

    def spawn(self, index):
        return RngStream(self.seed, self.stream_id, self.branch + (int(index),))

    def generator(self):
        seq = np.random.SeedSequence(int(self.seed),
                                     spawn_key=(int(self.stream_id), *self.branch))
        return np.random.Generator(np.random.Philox(seq))

    def to_dict(self):
        return {"seed": int(self.seed), "stream_id": int(self.stream_id),
                "branch": list(self.branch)}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["seed"]), int(d.get("stream_id", 0)),
                   tuple(int(b) for b in d.get("branch", ())))


def sample_gaussian(stream, n, mean=0.0, std=1.0):
    """``n`` i.i.d. normal draws from ``stream`` (same stream, same draws)."""
    if std < 0:
        raise ParameterError(f"std must be non-negative, got {std}")
    if std == 0:
        return np.full(n, float(mean))
    return stream.generator().normal(mean, std, size=n)
