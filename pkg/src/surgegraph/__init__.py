"""Spatio-temporal graph network for storm-surge forecast bias correction.

The package learns the offset between physics-model water-level forecasts and
gauge observations across a network of coastal stations, then applies the
predicted offsets to correct future forecasts.
"""

__version__ = "0.1.0"

from . import errors
from .numerics import Adam, Tape, Tensor, backward

__all__ = ["Adam", "Tape", "Tensor", "backward", "errors", "__version__"]
