"""Compressed-image super-resolution with shifted-window cosine attention, in numpy."""
from .model import ModelConfig, Swin2SR, count_macs, count_params, preset
from .tensor import Tensor, no_grad

__all__ = ["ModelConfig", "Swin2SR", "Tensor", "count_macs", "count_params", "no_grad", "preset"]
__version__ = "0.1.0"
