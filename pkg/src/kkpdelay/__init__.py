"""Damped, time-delayed Kawahara-Kadomtsev-Petviashvili-II simulator and decay certificates."""

from kkpdelay.params import (
    CoefficientSpec,
    FeedbackParams,
    ParamSet,
    PhysParams,
    Rect,
    SimConfig,
    ValidationError,
    validate,
)
from kkpdelay.grid import Grid

__all__ = [
    "CoefficientSpec",
    "FeedbackParams",
    "Grid",
    "ParamSet",
    "PhysParams",
    "Rect",
    "SimConfig",
    "ValidationError",
    "validate",
]

__version__ = "0.1.0"
