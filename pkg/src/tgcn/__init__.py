"""Temporal graph convolutional networks (TGCN) for structural time series.

A structural time series is a ``(T, p)`` signal on the ``p`` nodes of a
graph.  The model turns it into a log-magnitude spectrogram, runs stacked
spatio-temporal convolutions whose weights are shared across nodes, and
predicts one logit per sample, so a trained model accepts any graph.
"""

from .errors import (ChecksumError, ConfigError, DimensionError, DivergenceError, FormatError,
                     GraphError, TgcnError, UnrecordedTensorError, VersionError)
from .graph import Adjacency, from_edges, reachability, validate
from .model import ArchitectureConfig, Block, TgcnModel, build, load_model, named_config, save_model
from .stft import StftSpec, stft_log_magnitude
from .tensor import Tape, Tensor

__version__ = "0.1.0"

__all__ = [
    "Adjacency", "ArchitectureConfig", "Block", "ChecksumError", "ConfigError", "DimensionError",
    "DivergenceError", "FormatError", "GraphError", "StftSpec", "Tape", "Tensor", "TgcnError",
    "TgcnModel", "UnrecordedTensorError", "VersionError", "build", "from_edges", "load_model",
    "named_config", "reachability", "save_model", "stft_log_magnitude", "validate",
]
