"""Massive-MIMO detection with PS-ADMM and its deep-unfolded variants."""

from .bench import SerCurve, SweepSpec, compare_detectors, layer_sweep, resolve_detector, runtime_bench, ser_sweep
from .hnet import HnetModel, MlpWeights, detect_hnet, flop_estimate, train_hnet
from .linalg import RngStream, gram_plus_ridge, sample_gaussian, solve_spd
from .mimo import DatasetSpec, SnrPolicy, SystemConfig, generate_batch, quantize, symbol_error_rate
from .psadmm import PenaltyParams, detect_mmse, detect_psadmm, detect_zf
from .psnet import PsnetModel, TrainConfig, psnet_forward, train_psnet

__version__ = "0.1.0"
