"""Finite-state kernels, weighted norms, and resolvent solves.

Functions live in a weighted sup-norm ``||h||_w = max_x |h(x)|/w(x)`` with
``w >= 1``; kernels carry the induced operator norm and measures the dual
norm.  On a finite space the operator norm has the closed form

    |||Q|||_w = max_x sum_y |Q(x,y)| w(y) / w(x),

which is what :func:`operator_norm` computes (the equivalence with the
sup-over-h definition is property-tested, not assumed).

Everything here is immutable after construction; operations are pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import ContractionError, DimensionMismatch, ModelError, NumericalError

STOCHASTIC_TOL = 1e-12
# A norm must clear 1 by this margin to count as a contraction: repeated
# matrix powers of a norm-1 kernel accumulate rounding dust below 1.
CONTRACTION_MARGIN = 1e-12

__all__ = [
    "StateSpace",
    "WeightFunction",
    "FiniteKernel",
    "FiniteFunction",
    "FiniteMeasure",
    "weighted_sup_norm",
    "operator_norm",
    "measure_norm",
    "compose",
    "apply",
    "apply_measure",
    "pair",
    "contraction_power",
    "resolvent_solve",
    "ResolventSolver",
]


def _frozen_array(values, ndim, name):
    arr = np.array(values, dtype=float)
    if arr.ndim != ndim:
        raise ModelError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ModelError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class StateSpace:
    """An ordered finite set of state labels."""

    labels: tuple

    def __init__(self, labels: Sequence):
        labels = tuple(labels)
        if len(labels) == 0:
            raise ModelError("state space must contain at least one state")
        if len(set(labels)) != len(labels):
            raise ModelError("state labels must be distinct")
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return len(self.labels)

    def index(self, label) -> int:
        return self.labels.index(label)

    @classmethod
    def of_size(cls, n: int) -> "StateSpace":
        return cls(tuple(range(n)))


def _check_same_space(a, b):
    if a.space.size != b.space.size or a.space.labels != b.space.labels:
        raise DimensionMismatch(
            f"objects live on different state spaces "
            f"({a.space.size} vs {b.space.size} states)"
        )


@dataclass(frozen=True)
class WeightFunction:
    """Weight w: S -> [1, inf) defining the norms."""

    space: StateSpace
    values: np.ndarray = field(repr=False)

    def __init__(self, space: StateSpace, values):
        arr = _frozen_array(values, 1, "weight values")
        if arr.shape[0] != space.size:
            raise DimensionMismatch("weight length does not match state space")
        if np.any(arr < 1.0):
            raise ModelError("weights must be >= 1 everywhere")
        object.__setattr__(self, "space", space)
        object.__setattr__(self, "values", arr)

    @classmethod
    def ones(cls, space: StateSpace) -> "WeightFunction":
        return cls(space, np.ones(space.size))


@dataclass(frozen=True)
class FiniteFunction:
    space: StateSpace
    values: np.ndarray = field(repr=False)

    def __init__(self, space: StateSpace, values):
        arr = _frozen_array(values, 1, "function values")
        if arr.shape[0] != space.size:
            raise DimensionMismatch("function length does not match state space")
        object.__setattr__(self, "space", space)
        object.__setattr__(self, "values", arr)


@dataclass(frozen=True)
class FiniteMeasure:
    space: StateSpace
    weights: np.ndarray = field(repr=False)

    def __init__(self, space: StateSpace, weights):
        arr = _frozen_array(weights, 1, "measure weights")
        if arr.shape[0] != space.size:
            raise DimensionMismatch("measure length does not match state space")
        object.__setattr__(self, "space", space)
        object.__setattr__(self, "weights", arr)

    def is_probability(self, tol: float = STOCHASTIC_TOL) -> bool:
        return bool(
            np.all(self.weights >= -tol) and abs(self.weights.sum() - 1.0) <= tol
        )

    def total_mass(self) -> float:
        return float(self.weights.sum())


@dataclass(frozen=True)
class FiniteKernel:
    """Square matrix kernel: rows are source states, columns targets."""

    space: StateSpace
    entries: np.ndarray = field(repr=False)
    signed: bool = False

    def __init__(self, space: StateSpace, entries, signed: bool = False):
        arr = _frozen_array(entries, 2, "kernel entries")
        if arr.shape != (space.size, space.size):
            raise DimensionMismatch(
                f"kernel shape {arr.shape} does not match state space of size {space.size}"
            )
        if not signed and np.any(arr < 0.0):
            raise ModelError("non-signed kernel has negative entries")
        object.__setattr__(self, "space", space)
        object.__setattr__(self, "entries", arr)
        object.__setattr__(self, "signed", bool(signed))

    def is_stochastic(self, tol: float = STOCHASTIC_TOL) -> bool:
        if self.signed and np.any(self.entries < 0.0):
            return False
        return bool(np.max(np.abs(self.entries.sum(axis=1) - 1.0)) <= tol)

    @classmethod
    def identity(cls, space: StateSpace) -> "FiniteKernel":
        return cls(space, np.eye(space.size))


def weighted_sup_norm(h: FiniteFunction, w: WeightFunction) -> float:
    """max_x |h(x)| / w(x)."""
    _check_same_space(h, w)
    return float(np.max(np.abs(h.values) / w.values))


def operator_norm(Q: FiniteKernel, w: WeightFunction) -> float:
    """Weighted absolute row-sum norm |||Q|||_w."""
    _check_same_space(Q, w)
    return float(np.max((np.abs(Q.entries) @ w.values) / w.values))


def measure_norm(eta: FiniteMeasure, w: WeightFunction) -> float:
    """Dual norm sum_x |eta(x)| w(x)."""
    _check_same_space(eta, w)
    return float(np.abs(eta.weights) @ w.values)


def compose(Q1: FiniteKernel, Q2: FiniteKernel) -> FiniteKernel:
    _check_same_space(Q1, Q2)
    return FiniteKernel(Q1.space, Q1.entries @ Q2.entries, signed=Q1.signed or Q2.signed)


def apply(Q: FiniteKernel, h: FiniteFunction) -> FiniteFunction:
    """(Qh)(x) = sum_y Q(x,y) h(y)."""
    _check_same_space(Q, h)
    return FiniteFunction(Q.space, Q.entries @ h.values)


def apply_measure(eta: FiniteMeasure, Q: FiniteKernel) -> FiniteMeasure:
    """(eta Q)(y) = sum_x eta(x) Q(x,y) -- measures act on the left."""
    _check_same_space(eta, Q)
    return FiniteMeasure(Q.space, eta.weights @ Q.entries)


def pair(eta: FiniteMeasure, h: FiniteFunction) -> float:
    """eta h = sum_x eta(x) h(x)."""
    _check_same_space(eta, h)
    return float(eta.weights @ h.values)


def contraction_power(
    Q: FiniteKernel, w: WeightFunction, m_max: int = 64
) -> Optional[int]:
    """Smallest m <= m_max with |||Q^m|||_w < 1, or None if none found.

    None is inconclusive, not a proof of non-contraction: report it, never
    treat it silently as a refuted hypothesis.  The comparison demands a
    margin of CONTRACTION_MARGIN below 1 so rounding dust on a norm-1
    kernel cannot fake a certificate.
    """
    _check_same_space(Q, w)
    if m_max < 1:
        raise ModelError("m_max must be >= 1")
    power = Q.entries
    for m in range(1, m_max + 1):
        norm = float(np.max((np.abs(power) @ w.values) / w.values))
        if norm < 1.0 - CONTRACTION_MARGIN:
            return m
        if not np.all(np.isfinite(power)):
            return None
        power = power @ Q.entries
    return None


def _contraction_norms(Q: FiniteKernel, w: WeightFunction, m_max: int):
    """Norms |||Q^m|||_w for m = 1..m_max (diagnostics for refusals)."""
    norms = []
    power = Q.entries
    for _ in range(m_max):
        norms.append(float(np.max((np.abs(power) @ w.values) / w.values)))
        power = power @ Q.entries
        if not np.all(np.isfinite(power)):
            break
    return norms


class ResolventSolver:
    """LU-backed application of G = (I - K)^{-1} and its transpose.

    Factorizes once; every derivative order afterwards is a cheap
    triangular solve.  Construction refuses (with diagnostic norms) when
    no power K^m up to ``m_max`` is a w-contraction.
    """

    def __init__(self, K: FiniteKernel, w: WeightFunction, m_max: int = 64):
        _check_same_space(K, w)
        m = contraction_power(K, w, m_max)
        if m is None:
            raise ContractionError(
                f"no m <= {m_max} has |||K^m|||_w < 1 (inconclusive); "
                f"|||K^m|||_w for small m: {_contraction_norms(K, w, min(m_max, 6))}",
                norms=_contraction_norms(K, w, min(m_max, 6)),
                condition="operator contraction |||K^m|||_w < 1 for some m",
            )
        self.kernel = K
        self.weight = w
        self.contraction_order = m
        system = np.eye(K.space.size) - K.entries
        try:
            self._lu = scipy.linalg.lu_factor(system)
        except (scipy.linalg.LinAlgError, ValueError) as exc:
            raise NumericalError(f"(I - K) factorization failed: {exc}") from exc
        if not np.all(np.isfinite(self._lu[0])):
            raise NumericalError("(I - K) factorization produced non-finite factors")

    def apply(self, values: np.ndarray) -> np.ndarray:
        """G f, i.e. solve (I - K) u = f."""
        return scipy.linalg.lu_solve(self._lu, np.asarray(values, dtype=float))

    def apply_measure(self, weights: np.ndarray) -> np.ndarray:
        """eta G, i.e. solve (I - K)^T x = eta^T."""
        return scipy.linalg.lu_solve(
            self._lu, np.asarray(weights, dtype=float), trans=1
        )

    def matrix(self) -> np.ndarray:
        """Dense G = (I - K)^{-1} (column-by-column solve)."""
        return self.apply(np.eye(self.kernel.space.size))


def resolvent_solve(
    K: FiniteKernel, f: FiniteFunction, w: WeightFunction, m_max: int = 64
) -> FiniteFunction:
    """Solve (I - K) u = f, i.e. u = G f with G the Neumann series sum."""
    _check_same_space(K, f)
    solver = ResolventSolver(K, w, m_max=m_max)
    u = solver.apply(f.values)
    if not np.all(np.isfinite(u)):
        raise NumericalError("resolvent solve produced non-finite values")
    return FiniteFunction(K.space, u)
