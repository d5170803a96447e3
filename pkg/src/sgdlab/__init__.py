"""Numerical lab for vanilla SGD on single- and multi-index models."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AllCoefficientsVanish,
    AssumptionViolated,
    DegenerateGradient,
    DegreeTooLarge,
    DimensionMismatch,
    InsufficientData,
    LabError,
    NonFinite,
    ParseError,
    ValidationError,
)

__all__ = [
    "__version__",
    "AllCoefficientsVanish",
    "AssumptionViolated",
    "DegenerateGradient",
    "DegreeTooLarge",
    "DimensionMismatch",
    "InsufficientData",
    "LabError",
    "NonFinite",
    "ParseError",
    "ValidationError",
]
