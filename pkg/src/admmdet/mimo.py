"""Real-valued MIMO system model for rectangular 4^q-QAM.

Symbols live on the unnormalized odd-integer grid {±1, ±3, ..., ±(2^q - 1)}
per real dimension, so that every symbol splits into q binary planes::

    s = z_1 + 2 z_2 + ... + 2^(q-1) z_q,   z_i in {-1, +1}

Planes are stored as an array of shape ``(q, ..., K)`` with plane ``i``
(0-based) carrying weight ``2**i``.

SNR is defined as E||H s||^2 / E||v||^2 = K_c * E_s / sigma_c^2, where
E_s = 2 (4^q - 1) / 3 is the mean complex symbol energy and sigma_c^2 the
complex noise variance per receive antenna.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import DimensionError, DomainError, ParameterError
from .linalg import RngStream, matvec

__all__ = [
    "DatasetSpec",
    "RealSample",
    "SampleBatch",
    "SnrPolicy",
    "SystemConfig",
    "alphabet",
    "awgn_transmit",
    "complex_to_real",
    "compose_symbols",
    "decompose_symbols",
    "generate_batch",
    "generate_channel",
    "generate_dataset",
    "generate_sample",
    "noise_variance",
    "plane_weights",
    "quantize",
    "symbol_energy",
    "symbol_error_rate",
    "symbol_errors",
]


@dataclass(frozen=True)
class SystemConfig:
    """Antenna counts, QAM exponent and layer count.

    ``mc``/``kc`` are complex receive/transmit antenna counts; the real
    model has ``M = 2 mc`` rows and ``K = 2 kc`` columns.
    """

    mc: int
    kc: int
    q: int
    L: int = 30

    def __post_init__(self):
        if not self.kc >= 1:
            raise ParameterError(f"kc must be >= 1, got {self.kc}")
        if not self.mc > self.kc:
            raise ParameterError(f"need mc > kc, got mc={self.mc}, kc={self.kc}")
        if not self.q >= 1:
            raise ParameterError(f"q must be >= 1, got {self.q}")
        if not self.L >= 1:
            raise ParameterError(f"L must be >= 1, got {self.L}")

    @property
    def M(self):
        return 2 * self.mc

    @property
    def K(self):
        return 2 * self.kc

    @property
    def order(self):
        return 4 ** self.q


def alphabet(q):
    """Real alphabet {-(2^q-1), ..., -1, 1, ..., 2^q-1} as float64."""
    return np.arange(-(2**q - 1), 2**q, 2, dtype=np.float64)


def plane_weights(q):
    return 2.0 ** np.arange(q)


def symbol_energy(q):
    """Mean energy of a complex 4^q-QAM symbol on the odd-integer grid."""
    return 2.0 * (4**q - 1) / 3.0


def noise_variance(snr_db, kc, q):
    """Per-real-component noise variance for a given SNR in dB."""
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    sigma_c2 = kc * symbol_energy(q) / 10.0 ** (snr_db / 10.0)
    return sigma_c2 / 2.0


def complex_to_real(Hc, yc=None):
    """Map a complex system to its real equivalent.

    ``H = [[Re, Im], [-Im, Re]]`` and ``y = [Re(y); Im(y)]``.  Returns ``H``
    alone if ``yc`` is omitted.
    """
    Hc = np.asarray(Hc)
    if Hc.ndim != 2:
        raise DimensionError(f"Hc must be 2-D, got shape {Hc.shape}")
    re, im = Hc.real.astype(np.float64), Hc.imag.astype(np.float64)
    H = np.block([[re, im], [-im, re]])
    if yc is None:
        return H
    yc = np.asarray(yc)
    if yc.shape != (Hc.shape[0],):
        raise DimensionError(f"yc shape {yc.shape} does not match Hc rows {Hc.shape[0]}")
    return H, np.concatenate([yc.real, yc.imag]).astype(np.float64)


def _channel(gen, mc, kc):
    parts = gen.standard_normal((2, mc, kc)) * math.sqrt(0.5)
    return parts[0] + 1j * parts[1]


def generate_channel(cfg, stream):
    """i.i.d. circular complex Gaussian channel, unit variance per entry."""
    return _channel(stream.generator(), cfg.mc, cfg.kc)


def compose_symbols(z):
    """Sum binary planes into symbols: ``sum_i 2**i * z[i]``."""
    z = np.asarray(z, dtype=np.float64)
    bad = np.flatnonzero(np.abs(z) != 1.0)
    if bad.size:
        raise DomainError(f"plane entries must be +-1; flat index {bad[0]} is {z.flat[bad[0]]}")
    return np.tensordot(plane_weights(z.shape[0]), z, axes=1)


def decompose_symbols(s, q):
    """Unique binary planes ``z`` (shape ``(q, *s.shape)``) with ``compose(z) == s``."""
    s = np.asarray(s, dtype=np.float64)
    top = 2**q - 1
    off = (np.abs(s) > top) | (np.mod(s, 2) != 1)
    if np.any(off):
        idx = np.flatnonzero(off)[0]
        raise DomainError(f"entry {idx} ({s.flat[idx]}) is not on the {4**q}-QAM grid")
    z = np.empty((q,) + s.shape)
    rest = s.copy()
    for i in range(q - 1, -1, -1):
        z[i] = np.where(rest > 0, 1.0, -1.0)
        rest -= 2.0**i * z[i]
    return z


def awgn_transmit(H, s, snr_db, stream, q):
    """``y = H s + v`` with real noise variance from :func:`noise_variance`."""
    H = np.asarray(H, dtype=np.float64)
    clean = matvec(H, np.asarray(s, dtype=np.float64))
    sigma2 = noise_variance(snr_db, H.shape[-1] // 2, q)
    if sigma2 == 0.0:
        return clean
    return clean + math.sqrt(sigma2) * stream.generator().standard_normal(clean.shape)


def quantize(x_hat, q):
    """Slice onto the odd-integer grid; exact ties go toward -inf."""
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if not np.all(np.isfinite(x_hat)):
        idx = np.flatnonzero(~np.isfinite(x_hat))[0]
        raise DomainError(f"non-finite estimate at index {idx}")
    k = np.ceil((x_hat - 1.0) / 2.0 - 0.5)
    top = 2**q - 1
    return np.clip(2.0 * k + 1.0, -top, top)


def symbol_errors(s_hat, s, kc):
    """Count complex symbols whose real or imaginary part is wrong."""
    s_hat = np.asarray(s_hat)
    s = np.asarray(s)
    if s_hat.shape != s.shape:
        raise DimensionError(f"shape mismatch {s_hat.shape} vs {s.shape}")
    if s.shape[-1] != 2 * kc:
        raise DimensionError(f"vector length {s.shape[-1]} != 2*kc = {2 * kc}")
    wrong = s_hat != s
    return int(np.count_nonzero(wrong[..., :kc] | wrong[..., kc:]))


def symbol_error_rate(s_hat, s, kc):
    s = np.asarray(s)
    total = s.size // 2
    return symbol_errors(s_hat, s, kc) / total


@dataclass(frozen=True)
class SnrPolicy:
    """Either a fixed SNR (``low == high``) or uniform on ``[low, high]`` dB."""

    low: float
    high: float

    def __post_init__(self):
        if self.high < self.low:
            raise ParameterError(f"empty SNR range [{self.low}, {self.high}]")

    @classmethod
    def fixed(cls, snr_db):
        return cls(float(snr_db), float(snr_db))

    @classmethod
    def uniform(cls, low, high):
        return cls(float(low), float(high))

    @property
    def is_fixed(self):
        return self.low == self.high


@dataclass(frozen=True)
class RealSample:
    y: np.ndarray
    H: np.ndarray
    s: np.ndarray
    snr_db: float
    seed: RngStream


def _draw(cfg, gen):
    """Channel, symbols and unit-variance noise, in that draw order."""
    H = complex_to_real(_channel(gen, cfg.mc, cfg.kc))
    s = 2.0 * gen.integers(0, 2**cfg.q, size=cfg.K) - (2**cfg.q - 1)
    noise = gen.standard_normal(cfg.M)
    return H, s, noise


def generate_sample(cfg, snr_policy, stream):
    gen = stream.generator()
    H, s, noise = _draw(cfg, gen)
    snr_db = snr_policy.low if snr_policy.is_fixed else float(gen.uniform(snr_policy.low, snr_policy.high))
    sigma = math.sqrt(noise_variance(snr_db, cfg.kc, cfg.q))
    y = H @ s + sigma * noise if sigma > 0 else H @ s
    return RealSample(y=y, H=H, s=s, snr_db=snr_db, seed=stream)


def generate_dataset(cfg, m, snr_policy, stream) -> Iterator[RealSample]:
    """Yield ``m`` samples; sample ``i`` is drawn from ``stream.spawn(i)``."""
    if m < 1:
        raise ParameterError(f"m must be >= 1, got {m}")
    for i in range(m):
        yield generate_sample(cfg, snr_policy, stream.spawn(i))


@dataclass
class SampleBatch:
    """Stacked samples: ``y (B, M)``, ``H (B, M, K)``, ``s (B, K)``, ``snr_db (B,)``."""

    y: np.ndarray
    H: np.ndarray
    s: np.ndarray
    snr_db: np.ndarray

    def __len__(self):
        return self.s.shape[0]

    def __getitem__(self, idx):
        return SampleBatch(self.y[idx], self.H[idx], self.s[idx], self.snr_db[idx])

    @classmethod
    def stack(cls, samples):
        samples = list(samples)
        return cls(
            y=np.stack([x.y for x in samples]),
            H=np.stack([x.H for x in samples]),
            s=np.stack([x.s for x in samples]),
            snr_db=np.array([x.snr_db for x in samples]),
        )


def generate_batch(cfg, m, snr_policy, stream, start=0):
    """Samples ``start .. start+m-1`` of the dataset, stacked."""
    return SampleBatch.stack(generate_sample(cfg, snr_policy, stream.spawn(start + i))
                             for i in range(m))


@dataclass(frozen=True)
class DatasetSpec:
    """Descriptor sufficient to regenerate a dataset bit-exactly."""

    cfg: SystemConfig
    m: int
    snr: SnrPolicy
    seed: int
    stream_id: int = 1
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def stream(self):
        return RngStream(self.seed, self.stream_id)

    def samples(self):
        return generate_dataset(self.cfg, self.m, self.snr, self.stream)

    def batch(self):
        return generate_batch(self.cfg, self.m, self.snr, self.stream)

    def to_dict(self):
        d = {"mc": self.cfg.mc, "kc": self.cfg.kc, "q": self.cfg.q}
        if self.snr.is_fixed:
            d["snr_db"] = self.snr.low
        else:
            d["snr_range"] = [self.snr.low, self.snr.high]
        d.update({"m": self.m, "seed": self.seed})
        if self.stream_id != 1:
            d["stream_id"] = self.stream_id
        return d

    @classmethod
    def from_dict(cls, d):
        known = {"mc", "kc", "q", "snr_db", "snr_range", "m", "seed", "stream_id"}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown dataset keys: {sorted(unknown)}")
        if ("snr_db" in d) == ("snr_range" in d):
            raise ParameterError("dataset needs exactly one of 'snr_db' or 'snr_range'")
        snr = SnrPolicy.fixed(d["snr_db"]) if "snr_db" in d else SnrPolicy.uniform(*d["snr_range"])
        cfg = SystemConfig(mc=int(d["mc"]), kc=int(d["kc"]), q=int(d["q"]))
        return cls(cfg=cfg, m=int(d["m"]), snr=snr, seed=int(d["seed"]),
                   stream_id=int(d.get("stream_id", 1)))
