"""Quadric fitting to oriented points and multi-quadric detection by local null-space voting."""

from . import fitting, nullspace, quadric
from .errors import QuadricError
from .fitting import FitResult, fit_approx, fit_full, fit_sphere, fit_taubin
from .quadric import QuadricClass, algebraic_distance, classify, gradient, normalize

__all__ = [
    "FitResult",
    "QuadricClass",
    "QuadricError",
    "algebraic_distance",
    "classify",
    "fit_approx",
    "fit_full",
    "fit_sphere",
    "fit_taubin",
    "fitting",
    "gradient",
    "normalize",
    "nullspace",
    "quadric",
]

__version__ = "0.1.0"
