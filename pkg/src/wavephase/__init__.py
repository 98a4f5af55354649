"""Spectral band decomposition of embedding sequences and harmonic gluing of window sections."""

from ._accel import backend
from .errors import (
    ConfigError,
    FormatError,
    InvalidArgument,
    SolverError,
    TrainingDivergence,
    WavePhaseError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "FormatError",
    "InvalidArgument",
    "SolverError",
    "TrainingDivergence",
    "WavePhaseError",
    "backend",
]
