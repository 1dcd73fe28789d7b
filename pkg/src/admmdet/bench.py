"""Monte-Carlo SER sweeps, layer sweeps, runtime benchmarks and export.

Trial ``j`` of a sweep draws its channel, symbols and unit-variance noise
from ``RngStream(seed, EVAL_STREAM).spawn(j)``.  The same draws are reused
at every SNR point (noise is rescaled) and by every detector in a
comparison, so gaps between curves are paired.
"""

from __future__ import annotations

import csv
import io
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _io
from .errors import ConfigError, ParameterError
from .hnet import HnetModel, detect_hnet
from .linalg import RngStream
from .mimo import SystemConfig, _draw, noise_variance, quantize, symbol_errors
from .psadmm import PenaltyParams, detect_mmse, detect_psadmm, detect_zf
from .psnet import PsnetModel, psnet_forward

EVAL_STREAM = 2
CSV_HEADER = ["detector", "snr_db", "trials", "symbol_errors", "ser", "ci_low", "ci_high", "seed"]
RUNTIME_HEADER = ["detector", "mean_s", "std_s", "repetitions"]
MIN_REPETITIONS = 100
DETECTORS = ("oracle", "zf", "mmse", "psadmm", "psnet", "hnet")


@dataclass
class Detector:
    """A named estimator ``fn(y, H, sigma2r, s) -> x_hat`` (un-quantized).

    Only the oracle looks at ``s``.  Inputs may be single instances or stacks.
    """

    name: str
    fn: Callable

    def __call__(self, y, H, sigma2r, s=None):
        return self.fn(y, H, sigma2r, s)


def resolve_detector(kind, cfg, model=None, theta=None, iters=None, name=None):
    """Build a :class:`Detector`.

    ``model`` is a loaded model or a path to one (``psnet``/``hnet``);
    ``psadmm`` uses ``theta`` (default penalties if omitted) for ``iters``
    iterations (default ``cfg.L``).
    """
    if kind not in DETECTORS:
        raise ConfigError(f"unknown detector {kind!r}; choose from {', '.join(DETECTORS)}")
    if isinstance(model, (str, os.PathLike)):
        if not os.path.exists(model):
            raise ConfigError(f"model file not found: {model}")
        model = (PsnetModel if kind == "psnet" else HnetModel).load(model)
    name = name or kind
    es_real = (4**cfg.q - 1) / 3.0
    if kind == "oracle":
        return Detector(name, lambda y, H, s2, s: np.array(s, dtype=np.float64))
    if kind == "zf":
        return Detector(name, lambda y, H, s2, s: detect_zf(y, H))
    if kind == "mmse":
        return Detector(name, lambda y, H, s2, s: detect_mmse(y, H, s2, es_real))
    if kind == "psadmm":
        theta = theta or PenaltyParams.default(cfg.q)
        if theta.q != cfg.q:
            raise ConfigError(f"penalties have q = {theta.q}, config has q = {cfg.q}")
        tau = iters or cfg.L
        return Detector(name, lambda y, H, s2, s: detect_psadmm(y, H, theta, tau, record=False)[0])
    if model is None:
        raise ConfigError(f"detector {kind!r} requires a model")
    if kind == "psnet":
        if not isinstance(model, PsnetModel):
            raise ConfigError("psnet detector needs a psnet model")
        if model.theta.q != cfg.q:
            raise ConfigError(f"model has q = {model.theta.q}, config has q = {cfg.q}")
        depth = iters or model.L
        return Detector(name, lambda y, H, s2, s: psnet_forward(y, H, model.theta, depth)[0])
    if not isinstance(model, HnetModel):
        raise ConfigError("hnet detector needs an hnet model")
    if model.theta.q != cfg.q:
        raise ConfigError(f"model has q = {model.theta.q}, config has q = {cfg.q}")
    if model.layers[0].K != cfg.K:
        raise ConfigError(f"model has K = {model.layers[0].K}, config has K = {cfg.K}")
    if iters is not None:
        model = model.truncate(iters)
    return Detector(name, lambda y, H, s2, s: detect_hnet(y, H, model))


def wilson_interval(errors, n, z=1.959963984540054):
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ParameterError("need at least one trial")
    p = errors / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    lo = 0.0 if errors == 0 else min(p, centre - half)
    hi = 1.0 if errors == n else max(p, centre + half)
    return lo, hi


@dataclass(frozen=True)
class SerPoint:
    snr_db: float
    trials: int
    symbol_errors: int
    symbols: int

    @property
    def ser(self):
        return self.symbol_errors / self.symbols

    @property
    def interval(self):
        return wilson_interval(self.symbol_errors, self.symbols)


@dataclass
class SerCurve:
    detector: str
    points: list
    seed: int

    def ser(self):
        return np.array([p.ser for p in self.points])

    def at(self, snr_db):
        for p in self.points:
            if p.snr_db == snr_db:
                return p
        raise KeyError(snr_db)


@dataclass(frozen=True)
class SweepSpec:
    detector: str
    cfg: SystemConfig
    snr_grid: tuple
    trials: int
    seed: int
    model: object = None
    theta: PenaltyParams | None = None
    iters: int | None = None
    chunk: int = 2000

    def __post_init__(self):
        object.__setattr__(self, "snr_grid", tuple(float(s) for s in self.snr_grid))
        if self.trials < 1:
            raise ParameterError(f"trials must be >= 1, got {self.trials}")
        if not self.snr_grid:
            raise ParameterError("SNR grid is empty")
        if any(b <= a for a, b in zip(self.snr_grid, self.snr_grid[1:])):
            raise ParameterError("SNR grid must be strictly increasing")

    def resolve(self):
        return resolve_detector(self.detector, self.cfg, self.model, self.theta, self.iters)


def _trials(cfg, seed, start, stop):
    root = RngStream(seed, EVAL_STREAM)
    draws = [_draw(cfg, root.spawn(j).generator()) for j in range(start, stop)]
    H = np.stack([d[0] for d in draws])
    s = np.stack([d[1] for d in draws])
    noise = np.stack([d[2] for d in draws])
    return H, s, noise


def _run_chunk(detectors, cfg, snr_grid, seed, start, stop):
    H, s, noise = _trials(cfg, seed, start, stop)
    clean = np.matmul(H, s[..., None])[..., 0]
    counts = np.zeros((len(detectors), len(snr_grid)), dtype=np.int64)
    for k, snr in enumerate(snr_grid):
        sigma2 = noise_variance(snr, cfg.kc, cfg.q)
        y = clean + math.sqrt(sigma2) * noise if sigma2 > 0 else clean
        for d, det in enumerate(detectors):
            x = det(y, H, sigma2, s)
            counts[d, k] = symbol_errors(quantize(x, cfg.q), s, cfg.kc)
    return counts


def compare_detectors(detectors, cfg, snr_grid, trials, seed, chunk=2000, threads=1):
    """Paired SER curves for several detectors on identical trial streams."""
    snr_grid = tuple(float(s) for s in snr_grid)
    if not detectors:
        raise ParameterError("no detectors given")
    bounds = [(a, min(a + chunk, trials)) for a in range(0, trials, chunk)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda b: _run_chunk(detectors, cfg, snr_grid, seed, *b), bounds))
    else:
        parts = [_run_chunk(detectors, cfg, snr_grid, seed, *b) for b in bounds]
    counts = np.sum(parts, axis=0)
    curves = []
    for d, det in enumerate(detectors):
        points = [SerPoint(snr, trials, int(counts[d, k]), trials * cfg.kc)
                  for k, snr in enumerate(snr_grid)]
        curves.append(SerCurve(det.name, points, seed))
    return curves


def ser_sweep(spec, threads=1, detector=None):
    """SER curve for one detector; ``detector`` overrides ``spec.detector``."""
    det = detector if detector is not None else spec.resolve()
    return compare_detectors([det], spec.cfg, spec.snr_grid, spec.trials, spec.seed,
                             chunk=spec.chunk, threads=threads)[0]


def layer_sweep(spec, layer_counts, threads=1):
    """One curve per depth, all on the same trial stream."""
    if spec.detector not in ("psnet", "hnet"):
        raise ConfigError(f"layer sweep needs psnet or hnet, got {spec.detector!r}")
    spec.resolve()
    dets = [resolve_detector(spec.detector, spec.cfg, spec.model, iters=L,
                             name=f"{spec.detector}-L{L}") for L in layer_counts]
    curves = compare_detectors(dets, spec.cfg, spec.snr_grid, spec.trials, spec.seed,
                               chunk=spec.chunk, threads=threads)
    return dict(zip(layer_counts, curves))


@dataclass(frozen=True)
class RuntimeRow:
    detector: str
    mean_s: float
    std_s: float
    repetitions: int


def runtime_bench(detectors, cfg, repetitions, warmup=10, snr_db=10.0, seed=0):
    """Mean wall-clock seconds per single-instance detection.

    Detectors run round-robin on identical instances; the first ``warmup``
    instances are not timed.
    """
    if repetitions < MIN_REPETITIONS:
        raise ParameterError(f"repetitions must be >= {MIN_REPETITIONS}, got {repetitions}")
    if warmup < 0:
        raise ParameterError(f"warmup must be >= 0, got {warmup}")
    sigma2 = noise_variance(snr_db, cfg.kc, cfg.q)
    root = RngStream(seed, EVAL_STREAM + 1)
    times = np.zeros((len(detectors), repetitions))
    for j in range(warmup + repetitions):
        H, s, noise = _draw(cfg, root.spawn(j).generator())
        y = H @ s + math.sqrt(sigma2) * noise
        for d, det in enumerate(detectors):
            t0 = time.perf_counter()
            det(y, H, sigma2, s)
            dt = time.perf_counter() - t0
            if j >= warmup:
                times[d, j - warmup] = dt
    return [RuntimeRow(det.name, float(times[d].mean()), float(times[d].std()), repetitions)
            for d, det in enumerate(detectors)]


def _curves_csv(curves):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for c in curves:
        for p in c.points:
            lo, hi = p.interval
            w.writerow([c.detector, repr(p.snr_db), p.trials, p.symbol_errors,
                        repr(p.ser), repr(lo), repr(hi), c.seed])
    return buf.getvalue()


def _curves_svg(curves):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "admmdet", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4.5))
        for c in curves:
            snr = [p.snr_db for p in c.points]
            ser = [p.ser if p.ser > 0 else np.nan for p in c.points]
            ax.semilogy(snr, ser, marker="o", label=c.detector)
        ax.set_xlabel("SNR (dB)")
        ax.set_ylabel("SER")
        ax.grid(True, which="both", alpha=0.3)
        ax.legend()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    return buf.getvalue()


def export_results(curves, path, format=None):
    """Write curves as CSV (schema ``CSV_HEADER``) or as an SVG plot."""
    curves = list(curves)
    if not curves or not any(c.points for c in curves):
        raise ParameterError("nothing to export: curve list is empty")
    format = format or os.path.splitext(os.fspath(path))[1].lstrip(".").lower()
    if format == "csv":
        text = _curves_csv(curves)
    elif format == "svg":
        text = _curves_svg(curves)
    else:
        raise ParameterError(f"unsupported export format {format!r}")
    try:
        _io.atomic_write(path, text)
    except OSError as err:
        raise OSError(f"could not write {path}: {err}") from err
    return path


def parse_results(path, kc=None):
    """Inverse of the CSV export.

    The schema has no symbol count; it is ``trials * kc`` when ``kc`` is
    given, otherwise recovered from ``ser`` (or from the Wilson bound when
    no errors were counted).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != CSV_HEADER:
        raise ConfigError(f"{path}: header does not match {','.join(CSV_HEADER)}")
    curves = {}
    for r in rows[1:]:
        det, snr, trials, errors, _ser, _lo, _hi, seed = r
        c = curves.setdefault(det, SerCurve(det, [], int(seed)))
        c.points.append((float(snr), int(trials), int(errors), float(_ser), float(_hi)))
    out = []
    for c in curves.values():
        pts = []
        for snr, trials, errors, ser, hi in c.points:
            symbols = trials * kc if kc else _symbols(errors, ser, hi)
            pts.append(SerPoint(snr, trials, errors, symbols))
        out.append(SerCurve(c.detector, pts, c.seed))
    return out


def _symbols(errors, ser, hi):
    if errors > 0:
        return int(round(errors / ser))
    # zero errors: the upper bound is z^2 / (n + z^2)
    z2 = 1.959963984540054 ** 2
    return int(round(z2 / hi - z2))


def export_runtime(rows, path):
    if not rows:
        raise ParameterError("nothing to export: runtime table is empty")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RUNTIME_HEADER)
    for r in rows:
        w.writerow([r.detector, repr(r.mean_s), repr(r.std_s), r.repetitions])
    _io.atomic_write(path, buf.getvalue())
    return path
