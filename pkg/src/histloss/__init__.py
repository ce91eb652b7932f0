"""Histogram-based (HL-Gauss) regression losses for energy/force models."""

from .codec import BinGrid, EncodeConfig, decode_expectation, encode_target, entropy, make_grid
from .losses import LossConfig, combined_loss, cross_entropy, softmax_with_temperature

__version__ = "0.1.0"

__all__ = [
    "BinGrid",
    "EncodeConfig",
    "LossConfig",
    "combined_loss",
    "cross_entropy",
    "decode_expectation",
    "encode_target",
    "entropy",
    "make_grid",
    "softmax_with_temperature",
    "__version__",
]
