"""Command-line front end.

Every command reads one JSON config file; ``--seed`` and ``--threads``
override it.  Exit codes: 0 success, 2 configuration error, 3 runtime or
numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import re
import sys
import zipfile
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import _io
from .bench import (
    DETECTORS,
    compare_detectors,
    export_results,
    export_runtime,
    layer_sweep,
    resolve_detector,
    runtime_bench,
    SweepSpec,
)
from .errors import ConfigError, NumericsError, ParameterError, SingularMatrixError
from .hnet import DEFAULT_HIDDEN, HnetModel, train_hnet
from .linalg import RngStream
from .mimo import DatasetSpec, SnrPolicy, SystemConfig
from .psnet import PsnetModel, TrainConfig, train_psnet

log = logging.getLogger("admmdet")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
TRAIN_STREAM, INIT_STREAM = 1, 3


@dataclass
class RunConfig:
    """Validated contents of a config file.  ``None`` means command default."""

    mc: int
    kc: int
    q: int
    L: int = 30
    n: int = DEFAULT_HIDDEN
    rho_init: float | None = None
    lr: float | None = None
    lr_decay: float = 0.999
    epochs: int | None = None
    batch: int | None = None
    samples: int | None = None
    fd_step: float = 1e-3
    snr_db_grid: tuple = (0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0)
    trials: int = 20_000
    seed: int = 0

    REQUIRED = ("mc", "kc", "q")
    INTS = ("mc", "kc", "q", "L", "n", "epochs", "batch", "samples", "trials", "seed")
    FLOATS = ("rho_init", "lr", "lr_decay", "fd_step")

    @property
    def system(self):
        return SystemConfig(mc=self.mc, kc=self.kc, q=self.q, L=self.L)

    @property
    def train_snr(self):
        return SnrPolicy.uniform(min(self.snr_db_grid), max(self.snr_db_grid))

    def train_config(self, kind):
        base = TrainConfig.psnet_full() if kind == "psnet" else TrainConfig.hnet_full()
        m = self.samples or base.m
        return TrainConfig(m=m, epochs=self.epochs or base.epochs,
                           batch=min(self.batch or base.batch, m),
                           lr=self.lr or base.lr, fd_step=self.fd_step, lr_decay=self.lr_decay)


def _line_of(text, key):
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def load_config(path, overrides=None):
    """Parse and validate a config file; errors name the key and its line."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"{path}: cannot read config: {err.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}:{err.lineno}:{err.colno}: invalid JSON: {err.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}:1: config must be a JSON object")
    raw.update(overrides or {})

    def where(key):
        line = _line_of(text, key)
        return f"{path}:{line}" if line else str(path)

    known = {f.name for f in fields(RunConfig)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{where(key)}: unknown key {key!r}")
    for key in RunConfig.REQUIRED:
        if key not in raw:
            raise ConfigError(f"{path}: missing required key {key!r}")
    values = {}
    for key, v in raw.items():
        if v is None and key in ("rho_init", "lr", "epochs", "batch", "samples"):
            values[key] = None
        elif key in RunConfig.INTS:
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"{where(key)}: {key!r} must be an integer, got {v!r}")
            if v < (0 if key == "seed" else 1):
                raise ConfigError(f"{where(key)}: {key!r} out of range: {v}")
            values[key] = v
        elif key in RunConfig.FLOATS:
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
                raise ConfigError(f"{where(key)}: {key!r} must be a positive number, got {v!r}")
            values[key] = float(v)
        elif key == "snr_db_grid":
            if (not isinstance(v, list) or not v
                    or not all(isinstance(s, (int, float)) and not isinstance(s, bool) for s in v)):
                raise ConfigError(f"{where(key)}: 'snr_db_grid' must be a non-empty list of numbers")
            grid = tuple(float(s) for s in v)
            if any(b <= a for a, b in zip(grid, grid[1:])):
                raise ConfigError(f"{where(key)}: 'snr_db_grid' must be strictly increasing")
            values[key] = grid
    cfg = RunConfig(**values)
    try:
        cfg.system
    except ParameterError as err:
        raise ConfigError(f"{path}: {err}") from None
    return cfg


def _overrides(args):
    out = {}
    if getattr(args, "seed", None) is not None:
        out["seed"] = args.seed
    return out


def _loss_csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _npz_bytes(arrays):
    """Deterministic ``.npz`` (fixed zip timestamps)."""
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            member = io.BytesIO()
            np.save(member, arr, allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0)), member.getvalue())
    return buf.getvalue()


def dataset_spec(cfg, kind):
    tc = cfg.train_config(kind)
    return DatasetSpec(cfg=cfg.system, m=tc.m, snr=cfg.train_snr, seed=cfg.seed, stream_id=TRAIN_STREAM)


def cmd_gen_data(args):
    cfg = load_config(args.config, _overrides(args))
    spec = dataset_spec(cfg, args.kind)
    out = Path(args.out)
    _io.atomic_write(out / "dataset.json", _io.dumps(spec.to_dict()))
    if not args.descriptor_only:
        b = spec.batch()
        _io.atomic_write(out / "dataset.npz",
                         _npz_bytes({"y": b.y, "H": b.H, "s": b.s, "snr_db": b.snr_db}))
    return EXIT_OK


def cmd_train_psnet(args):
    cfg = load_config(args.config, _overrides(args))
    tc = cfg.train_config("psnet")
    spec = dataset_spec(cfg, "psnet")
    model = train_psnet(spec, tc, RngStream(cfg.seed, INIT_STREAM), cfg.L, rho_init=cfg.rho_init)
    out = Path(args.out)
    model.save(out / "psnet.json")
    meta = model.training_meta
    q = cfg.q
    header = ["epoch", "loss", "rho"] + [f"alpha_{i + 1}" for i in range(q)]
    rows = [[e, repr(loss), repr(th[-1])] + [repr(a) for a in th[:-1]]
            for e, (loss, th) in enumerate(zip(meta["loss_history"], meta["theta_history"]))]
    _io.atomic_write(out / "psnet_loss.csv", _loss_csv(header, rows))
    log.info("psnet trained: loss %.6g -> %.6g", meta["initial_loss"], meta["final_loss"])
    return EXIT_OK


def cmd_train_hnet(args):
    cfg = load_config(args.config, _overrides(args))
    try:
        penalties = PsnetModel.load(args.penalties)
    except OSError as err:
        raise ConfigError(f"{args.penalties}: cannot read penalties file: {err.strerror}") from None
    except (KeyError, ValueError) as err:
        raise ConfigError(f"{args.penalties}: not a psnet model: {err}") from None
    if penalties.theta.q != cfg.q:
        raise ConfigError(f"penalties file has q = {penalties.theta.q} but config has q = {cfg.q}")
    tc = cfg.train_config("hnet")
    spec = dataset_spec(cfg, "hnet")
    model = train_hnet(spec, penalties.theta, tc, cfg.n, cfg.L, RngStream(cfg.seed, INIT_STREAM))
    out = Path(args.out)
    model.save(out / "hnet.json")
    rows = [[layer + 1, e, repr(v)]
            for layer, hist in enumerate(model.training_meta["layer_loss"])
            for e, v in enumerate(hist)]
    _io.atomic_write(out / "hnet_loss.csv", _loss_csv(["layer", "epoch", "loss"], rows))
    return EXIT_OK


def _penalty_source(args):
    if args.penalties:
        return PsnetModel.load(args.penalties).theta
    return None


def cmd_eval(args):
    cfg = load_config(args.config, _overrides(args))
    system = cfg.system
    kinds = args.detector.split(",")
    for k in kinds:
        if k not in DETECTORS:
            raise ConfigError(f"unknown detector {k!r}; choose from {', '.join(DETECTORS)}")
    needs_model = [k for k in kinds if k in ("psnet", "hnet")]
    if needs_model and not args.model:
        raise ConfigError(f"detector {needs_model[0]!r} requires --model")
    if args.model and not needs_model:
        raise ConfigError(f"--model given but detector {args.detector!r} takes none")
    if len(needs_model) > 1:
        raise ConfigError("at most one model-based detector per eval run")
    theta = _penalty_source(args)
    out = Path(args.out)
    if args.layers:
        if len(kinds) != 1 or kinds[0] not in ("psnet", "hnet"):
            raise ConfigError("--layers needs exactly one psnet or hnet detector")
        Ls = [int(v) for v in args.layers.split(",")]
        spec = SweepSpec(kinds[0], system, cfg.snr_db_grid, cfg.trials, cfg.seed, model=args.model)
        curves = list(layer_sweep(spec, Ls, threads=args.threads).values())
    else:
        dets = [resolve_detector(k, system, args.model if k in ("psnet", "hnet") else None,
                                 theta=theta if k == "psadmm" else None) for k in kinds]
        curves = compare_detectors(dets, system, cfg.snr_db_grid, cfg.trials, cfg.seed,
                                   threads=args.threads)
    export_results(curves, out / "results.csv", "csv")
    if args.plot:
        export_results(curves, out / "results.svg", "svg")
    return EXIT_OK


def cmd_bench(args):
    cfg = load_config(args.config, _overrides(args))
    system = cfg.system
    models = {"psnet": args.psnet_model, "hnet": args.hnet_model}
    dets = []
    for k in args.detectors.split(","):
        if k in models and not models[k]:
            raise ConfigError(f"detector {k!r} requires --{k}-model")
        dets.append(resolve_detector(k, system, models.get(k)))
    rows = runtime_bench(dets, system, args.repetitions, warmup=args.warmup, seed=cfg.seed)
    export_runtime(rows, Path(args.out) / "runtime.csv")
    for r in rows:
        print(f"{r.detector:8s} {r.mean_s:.6f} s  (sd {r.std_s:.6f}, n={r.repetitions})")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="admmdet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help="JSON config file")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--threads", type=int, default=1, help="worker pool cap")

    sp = sub.add_parser("gen-data", help="materialize a training dataset")
    common(sp)
    sp.add_argument("--kind", choices=("psnet", "hnet"), default="psnet",
                    help="which training-set size default to use")
    sp.add_argument("--descriptor-only", action="store_true")
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train-psnet", help="learn the penalty parameters")
    common(sp)
    sp.set_defaults(func=cmd_train_psnet)

    sp = sub.add_parser("train-hnet", help="layer-wise MLP training")
    common(sp)
    sp.add_argument("--penalties", required=True, help="trained psnet model file")
    sp.set_defaults(func=cmd_train_hnet)

    sp = sub.add_parser("eval", help="SER-vs-SNR sweep")
    common(sp)
    sp.add_argument("--detector", required=True,
                    help=f"one of {', '.join(DETECTORS)}; comma list for a paired comparison")
    sp.add_argument("--model", help="model file for psnet/hnet")
    sp.add_argument("--penalties", help="psnet model whose penalties the psadmm detector uses")
    sp.add_argument("--layers", help="comma-separated layer counts for a layer sweep")
    sp.add_argument("--plot", action="store_true", help="also write results.svg")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("bench", help="per-detection runtime table")
    common(sp)
    sp.add_argument("--detectors", required=True, help="comma-separated detector list")
    sp.add_argument("--psnet-model")
    sp.add_argument("--hnet-model")
    sp.add_argument("--repetitions", type=int, default=1000)
    sp.add_argument("--warmup", type=int, default=10)
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ParameterError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericsError, SingularMatrixError, FloatingPointError) as err:
        print(f"runtime error: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as err:
        print(f"runtime error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
