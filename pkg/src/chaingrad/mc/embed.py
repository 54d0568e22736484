"""Exact embedding of finite-alphabet recursions as finite kernel families.

A tabular recursion with update table U and letter pmf rho(theta) induces
the transition kernel

    P(theta, x, y) = sum_{j : U[x, j] = y} rho_j(theta),

whose density relative to theta0 and all theta-derivatives are exact
rational expressions in the pmf and its derivatives.  This is the bridge
that lets Monte Carlo estimators be validated against the exact
finite-state solvers on literally the same model.
"""

from __future__ import annotations

import numpy as np

from ..errors import ModelError
from ..families import ParamKernelFamily
from ..kernels import FiniteKernel, StateSpace
from .recursion import TabularRecursion

__all__ = ["induced_family", "linear_pmf", "quadratic_pmf", "random_tabular_model"]


def _letter_matrix(table: np.ndarray, n_states: int):
    """indicator[x, y, j] summed representation: list over letters of
    (x -> y) incidence, kept as an (L, n, n) stack."""
    n, L = table.shape
    stack = np.zeros((L, n_states, n_states))
    for j in range(L):
        stack[j, np.arange(n), table[:, j]] = 1.0
    return stack


def induced_family(rec: TabularRecursion, labels=None) -> ParamKernelFamily:
    """The exact kernel family generated by a tabular recursion."""
    table = rec.update_table
    n = rec.n_states
    stack = _letter_matrix(table, n)

    def mix(weights) -> np.ndarray:
        return np.tensordot(np.asarray(weights, dtype=float), stack, axes=(0, 0))

    base_entries = mix(rec.pmf0)
    space = StateSpace(labels if labels is not None else tuple(range(n)))
    base = FiniteKernel(space, base_entries)
    support = base_entries > 0.0
    safe_base = np.where(support, base_entries, 1.0)

    def density(theta: float) -> np.ndarray:
        return np.where(support, mix(rec.pmf_at(theta)) / safe_base, 1.0)

    def make_score(k: int):
        deriv_fn = rec.pmf_derivatives[k]

        def score(theta: float) -> np.ndarray:
            return np.where(support, mix(deriv_fn(theta)) / safe_base, 0.0)

        return score

    scores = [make_score(k) for k in range(len(rec.pmf_derivatives))]
    return ParamKernelFamily(
        base,
        rec.theta0,
        rec.eps,
        rec.interval,
        density=density,
        score=scores[0],
        higher_scores=tuple(scores[1:]),
    )


def linear_pmf(base_probs, direction, theta0: float):
    """rho(theta) = rho0 + (theta - theta0) d with sum d = 0.

    Returns (pmf, derivatives) callables; derivatives beyond the first are
    identically zero, so scores of every order are exact.
    """
    rho0 = np.asarray(base_probs, dtype=float)
    d = np.asarray(direction, dtype=float)
    if rho0.shape != d.shape:
        raise ModelError("pmf direction must match base shape")
    if abs(d.sum()) > 1e-12:
        raise ModelError("pmf direction must sum to zero")
    zero = np.zeros_like(rho0)

    def pmf(theta: float) -> np.ndarray:
        return rho0 + (theta - theta0) * d

    def d1(theta: float) -> np.ndarray:
        return d

    def d2(theta: float) -> np.ndarray:
        return zero

    def d3(theta: float) -> np.ndarray:
        return zero

    return pmf, (d1, d2, d3)


def quadratic_pmf(base_probs, direction1, direction2, theta0: float):
    """rho(theta) = rho0 + s d1 + s^2 d2, s = theta - theta0."""
    rho0 = np.asarray(base_probs, dtype=float)
    d1v = np.asarray(direction1, dtype=float)
    d2v = np.asarray(direction2, dtype=float)
    for d in (d1v, d2v):
        if d.shape != rho0.shape or abs(d.sum()) > 1e-12:
            raise ModelError("pmf directions must match shape and sum to zero")
    zero = np.zeros_like(rho0)

    def pmf(theta: float) -> np.ndarray:
        s = theta - theta0
        return rho0 + s * d1v + (s * s) * d2v

    def d1(theta: float) -> np.ndarray:
        return d1v + 2.0 * (theta - theta0) * d2v

    def d2(theta: float) -> np.ndarray:
        return 2.0 * d2v

    def d3(theta: float) -> np.ndarray:
        return zero

    return pmf, (d1, d2, d3)


def random_tabular_model(
    np_rng: np.random.Generator,
    n_states: int,
    n_letters: int = 6,
    theta0: float = 0.5,
    eps: float = 0.1,
    quadratic: bool = False,
) -> TabularRecursion:
    """Random well-posed tabular recursion for oracle-agreement tests.

    The pmf stays strictly positive on [theta0 - 2 eps, theta0 + 2 eps] by
    construction, so the induced family passes its density checks.
    """
    table = np_rng.integers(0, n_states, size=(n_states, n_letters))
    rho0 = np_rng.uniform(0.5, 1.5, size=n_letters)
    rho0 /= rho0.sum()
    d1 = np_rng.uniform(-1.0, 1.0, size=n_letters)
    d1 -= d1.mean()
    scale = 0.25 * float(np.min(rho0)) / max(float(np.max(np.abs(d1))) * 2 * eps, 1e-12)
    d1 *= min(1.0, scale)
    if quadratic:
        d2 = np_rng.uniform(-1.0, 1.0, size=n_letters)
        d2 -= d2.mean()
        scale2 = 0.25 * float(np.min(rho0)) / max(float(np.max(np.abs(d2))) * (2 * eps) ** 2, 1e-12)
        d2 *= min(1.0, scale2)
        pmf, derivs = quadratic_pmf(rho0, d1, d2, theta0)
    else:
        pmf, derivs = linear_pmf(rho0, d1, theta0)
    return TabularRecursion(
        table, pmf, derivs, theta0, eps,
        interval=(theta0 - 2 * eps, theta0 + 2 * eps),
    )
