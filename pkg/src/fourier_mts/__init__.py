"""Fourier-Transformer classification of multivariate time series.

Numpy-only reverse-mode autodiff, FFT kernels, the model, its training loop,
module ablation/pruning/stacking sweeps and Pareto analysis.
"""

from .autodiff import GradTape, Tensor
from .data import TimeSeriesDataset, load_ts, parse_ts, serialize_ts, synth_dataset
from .estimator import FourierTransformerClassifier
from .exceptions import (
    ConfigurationError,
    ContractError,
    DataError,
    DimensionError,
    FourierMTSError,
    ParseError,
    TrainingError,
)
from .model import Model, ModelConfig, ModuleKind, build_model, param_count
from .pareto import ParetoPoint, pareto_front
from .training import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "GradTape",
    "Tensor",
    "TimeSeriesDataset",
    "load_ts",
    "parse_ts",
    "serialize_ts",
    "synth_dataset",
    "FourierTransformerClassifier",
    "ConfigurationError",
    "ContractError",
    "DataError",
    "DimensionError",
    "FourierMTSError",
    "ParseError",
    "TrainingError",
    "Model",
    "ModelConfig",
    "ModuleKind",
    "build_model",
    "param_count",
    "ParetoPoint",
    "pareto_front",
    "TrainConfig",
    "evaluate",
    "train",
]
