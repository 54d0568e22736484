"""chaingrad: derivatives of Markov chain performance measures.

Exact operator-based derivatives on finite state spaces, Lyapunov and
minorization certificate verification, and likelihood-ratio Monte Carlo
estimators for general-state-space chains, with a G/G/1 Pareto queue
case study.
"""

__version__ = "0.1.0"

from . import families, gg1, kernels, matio, mc, random_horizon, stationary
from .errors import (
    ChaingradError,
    ContractionError,
    DimensionMismatch,
    ModelError,
    NumericalError,
    SchemaError,
    TruncationError,
)
from .kernels import (
    FiniteFunction,
    FiniteKernel,
    FiniteMeasure,
    StateSpace,
    WeightFunction,
)

__all__ = [
    "ChaingradError",
    "ContractionError",
    "DimensionMismatch",
    "FiniteFunction",
    "FiniteKernel",
    "FiniteMeasure",
    "ModelError",
    "NumericalError",
    "SchemaError",
    "StateSpace",
    "TruncationError",
    "WeightFunction",
    "families",
    "gg1",
    "kernels",
    "matio",
    "mc",
    "random_horizon",
    "stationary",
]
