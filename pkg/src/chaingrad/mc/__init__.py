"""Monte Carlo layer: recursions, likelihood-ratio estimators, RNG streams.

Hot loops run in a compiled extension when built, with a bit-identical
pure-Python fallback (see ``_backend``); ``benchmarks/bench_backends.py``
compares the two.
"""

from ._backend import HAVE_COMPILED, backend_name, default_backend_name, get_backend
from .embed import induced_family, linear_pmf, quadratic_pmf, random_tabular_model
from .estimators import (
    DEFAULT_CAP,
    DerivativeEstimate,
    RecursionLyapunovReport,
    SimPath,
    check_recursion_lyapunov,
    estimate_gamma_regenerative,
    estimate_stationary_derivative,
    estimate_stationary_mean,
    estimate_u_star,
    estimate_u_star_derivative,
    simulate_path,
)
from .recursion import (
    InterarrivalSpec,
    LindleyRecursion,
    PayoffSpec,
    StochasticRecursion,
    TabularRecursion,
    Uniforms,
)
from .rng import BLOCK, RngStream

__all__ = [
    "BLOCK",
    "DEFAULT_CAP",
    "HAVE_COMPILED",
    "DerivativeEstimate",
    "InterarrivalSpec",
    "LindleyRecursion",
    "PayoffSpec",
    "RecursionLyapunovReport",
    "RngStream",
    "SimPath",
    "StochasticRecursion",
    "TabularRecursion",
    "Uniforms",
    "backend_name",
    "check_recursion_lyapunov",
    "default_backend_name",
    "estimate_gamma_regenerative",
    "estimate_stationary_derivative",
    "estimate_stationary_mean",
    "estimate_u_star",
    "estimate_u_star_derivative",
    "get_backend",
    "induced_family",
    "linear_pmf",
    "quadratic_pmf",
    "random_tabular_model",
    "simulate_path",
]
