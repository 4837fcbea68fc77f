"""Continual spectrogram classification with a recursive analytic head.

A small pre-norm transformer encodes fixed-size spectrogram clips; class
knowledge lives in a ridge-style classifier updated in closed form as
sessions arrive. Early sessions may adapt the backbone through low-rank
adapters, gated by representation drift and constrained to stay out of
the subspace earlier sessions occupied; past the sample budget the
backbone freezes and only the analytic head keeps learning.
"""

import os as _os

# BLAS threading perturbs summation order; pin before numpy ever loads.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    _os.environ.setdefault(_var, "1")

__version__ = "0.1.0"

from .adapters import LoraAdapter, LoraBank, LoraSite, unlearned_weights
from .analytic import AnalyticClassifier, batch_ridge
from .backbone import BackboneConfig, BackboneWeights, encode, features, \
    forward, init_pretrained, lora_sites, pretrain_surrogate
from .bench import AccuracyMatrix, METHODS, NcmClassifier, RunResult, \
    avg_accuracy, bwt, forgetting, plasticity, representation_shift, \
    run_continual
from .boundary import MaskSpec, RegConfig
from .config import AnalyticConfig, BenchConfig, PretrainConfig, RunConfig, \
    load_config, parse_config
from .data import DatasetSpec, SessionData, SessionPlan, \
    default_fine_benchmark, gen_synthetic, make_plan, split_sessions
from .errors import ConfigError, DataError, NumericalError, PaceError, \
    ShapeError, StateError
from .fsa import FsaConfig, linear_cka, select_tune_boundary
from .msa import MsaConfig, compute_t3, project_gradient, stage_for

__all__ = [
    "AccuracyMatrix", "AnalyticClassifier", "AnalyticConfig",
    "BackboneConfig", "BackboneWeights", "BenchConfig", "ConfigError",
    "DataError", "DatasetSpec", "FsaConfig", "LoraAdapter", "LoraBank",
    "LoraSite", "MaskSpec", "METHODS", "MsaConfig", "NcmClassifier",
    "NumericalError", "PaceError", "PretrainConfig", "RegConfig",
    "RunConfig", "RunResult", "SessionData", "SessionPlan", "ShapeError",
    "StateError", "avg_accuracy", "batch_ridge", "bwt", "compute_t3",
    "default_fine_benchmark", "encode", "features", "forgetting", "forward",
    "gen_synthetic", "init_pretrained", "linear_cka", "load_config",
    "lora_sites", "make_plan", "parse_config", "plasticity",
    "pretrain_surrogate", "project_gradient", "representation_shift",
    "run_continual", "select_tune_boundary", "split_sessions", "stage_for",
    "unlearned_weights",
]
