"""Stochastic recursions X_{n+1} = r(X_n, Z_{n+1}) with parameterized noise.

The parameter enters only through the noise law, via a density ratio
p(theta, z) relative to the theta0 law (so p(theta0, z) = 1) and its
score p'(theta, z).  A generic recursion is a bundle of pure callables;
the two structured subclasses (finite-alphabet and Lindley/Pareto) carry
plain arrays that the hot-loop backends consume directly.

Samplers receive a block-buffered uniform source (``.take()`` for a
uniform, ``.gen`` for the underlying generator) and must draw through it
exclusively so runs are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import exp, log
from typing import Any, Callable, Optional

import numpy as np

from ..errors import ModelError
from ._loops_py import INTER_DET, INTER_EXP, INTER_TAB, _Uniforms

__all__ = [
    "Uniforms",
    "PayoffSpec",
    "StochasticRecursion",
    "TabularRecursion",
    "LindleyRecursion",
    "InterarrivalSpec",
]

Uniforms = _Uniforms


@dataclass(frozen=True)
class PayoffSpec:
    """Reward f, discount exponent g, and the interior-set indicator.

    ``from_arrays`` builds the tabular form (state = index) that the
    compiled kernels need; the callables stay available either way.
    """

    reward: Callable[[Any], float]
    discount: Callable[[Any], float]
    interior: Callable[[Any], bool]
    f_values: Optional[np.ndarray] = None
    g_values: Optional[np.ndarray] = None
    interior_mask: Optional[np.ndarray] = None

    @classmethod
    def from_arrays(cls, f_values, g_values, interior_mask) -> "PayoffSpec":
        f = np.ascontiguousarray(f_values, dtype=float)
        g = np.ascontiguousarray(g_values, dtype=float)
        mask = np.ascontiguousarray(interior_mask, dtype=np.uint8)
        if not (f.shape == g.shape == mask.shape):
            raise ModelError("payoff arrays must share one shape")
        return cls(
            reward=lambda x: float(f[x]),
            discount=lambda x: float(g[x]),
            interior=lambda x: bool(mask[x]),
            f_values=f,
            g_values=g,
            interior_mask=mask,
        )

    @property
    def tabular(self) -> bool:
        return self.f_values is not None


@dataclass(frozen=True)
class StochasticRecursion:
    """Generic noise-driven recursion; all callables must be pure."""

    update: Callable[[Any, Any], Any]
    sampler: Callable[[Uniforms], Any]
    density_ratio: Callable[[float, Any], float]
    score: Callable[[float, Any], float]
    theta0: float
    eps: float
    score_envelope: Optional[Callable[[Any], float]] = None

    def score0(self, z) -> float:
        return self.score(self.theta0, z)

    def envelope_of(self, z, grid_points: int = 33) -> float:
        """sup over the theta band of |p'(theta, z)| (grid fallback)."""
        if self.score_envelope is not None:
            return self.score_envelope(z)
        grid = np.linspace(self.theta0 - self.eps, self.theta0 + self.eps, grid_points)
        return max(abs(self.score(float(t), z)) for t in grid)


def _as_generic(update, sampler, density_ratio, score, theta0, eps, score_envelope):
    return dict(
        update=update,
        sampler=sampler,
        density_ratio=density_ratio,
        score=score,
        theta0=theta0,
        eps=eps,
        score_envelope=score_envelope,
    )


class TabularRecursion(StochasticRecursion):
    """Finite states, finite noise alphabet with a theta-dependent pmf.

    ``update_table[x, j]`` is the next state when letter j is drawn;
    letters are drawn by inverse CDF of the theta0 pmf.  ``pmf`` and
    ``pmf_derivatives[k]`` are callables theta -> (L,) arrays giving the
    letter distribution and its theta-derivatives; the letter score is
    pmf'(theta, j) / pmf(theta0, j).
    """

    def __init__(self, update_table, pmf, pmf_derivatives, theta0, eps,
                 interval=(-np.inf, np.inf)):
        table = np.ascontiguousarray(update_table, dtype=np.int_)
        if table.ndim != 2:
            raise ModelError("update table must be 2-dimensional (states x letters)")
        n, L = table.shape
        if np.any(table < 0) or np.any(table >= n):
            raise ModelError("update table entries must be valid state indices")
        pmf0 = np.asarray(pmf(theta0), dtype=float)
        if pmf0.shape != (L,) or np.any(pmf0 <= 0.0) or abs(pmf0.sum() - 1.0) > 1e-12:
            raise ModelError(
                "pmf at theta0 must be a strictly positive letter distribution"
            )
        derivs = tuple(pmf_derivatives)
        if not derivs:
            raise ModelError("at least the first pmf derivative is required")
        scores0 = np.asarray(derivs[0](theta0), dtype=float) / pmf0
        cum0 = np.cumsum(pmf0)

        self.n_states = n
        self.n_letters = L
        self.update_table = table
        self.pmf_fn = pmf
        self.pmf_derivatives = derivs
        self.pmf0 = pmf0
        self.cum0 = np.ascontiguousarray(cum0)
        self.letter_scores = np.ascontiguousarray(scores0)
        self.interval = (float(interval[0]), float(interval[1]))

        def sampler(uni: Uniforms) -> int:
            u = uni.take()
            j = 0
            while j < L - 1 and u >= float(cum0[j]):
                j += 1
            return j

        def update(x, j):
            return int(table[x, j])

        def density_ratio(theta: float, j) -> float:
            return float(np.asarray(pmf(theta), dtype=float)[j] / pmf0[j])

        def score(theta: float, j) -> float:
            return float(np.asarray(derivs[0](theta), dtype=float)[j] / pmf0[j])

        super().__init__(
            **_as_generic(update, sampler, density_ratio, score,
                          float(theta0), float(eps), None)
        )

    def pmf_at(self, theta: float) -> np.ndarray:
        out = np.asarray(self.pmf_fn(theta), dtype=float)
        if np.any(out < 0.0) or abs(out.sum() - 1.0) > 1e-10:
            raise ModelError(f"pmf at theta={theta} is not a distribution")
        return out

    def letter_score_envelope(self, grid_points: int = 65) -> np.ndarray:
        """Per-letter sup over the band of |pmf'(theta, j)| / pmf0(j)."""
        grid = np.linspace(self.theta0 - self.eps, self.theta0 + self.eps, grid_points)
        acc = np.zeros(self.n_letters)
        for t in grid:
            np.maximum(acc, np.abs(np.asarray(self.pmf_derivatives[0](float(t)), dtype=float)), out=acc)
        return acc / self.pmf0


@dataclass(frozen=True)
class InterarrivalSpec:
    """Interarrival distribution: exponential(rate), deterministic(value),
    or tabulated(values, probs)."""

    kind: str
    rate: float = 0.0
    value: float = 0.0
    values: tuple = ()
    probs: tuple = ()

    @classmethod
    def exponential(cls, rate: float) -> "InterarrivalSpec":
        if rate <= 0:
            raise ModelError("exponential rate must be positive")
        return cls(kind="exponential", rate=float(rate))

    @classmethod
    def deterministic(cls, value: float) -> "InterarrivalSpec":
        if value <= 0:
            raise ModelError("deterministic interarrival must be positive")
        return cls(kind="deterministic", value=float(value))

    @classmethod
    def tabulated(cls, values, probs) -> "InterarrivalSpec":
        values = tuple(float(v) for v in values)
        probs = tuple(float(p) for p in probs)
        if len(values) != len(probs) or not values:
            raise ModelError("tabulated spec needs matching nonempty values/probs")
        if any(v < 0 for v in values) or any(p <= 0 for p in probs):
            raise ModelError("tabulated values must be >= 0 with positive probs")
        if abs(sum(probs) - 1.0) > 1e-12:
            raise ModelError("tabulated probabilities must sum to 1")
        return cls(kind="tabulated", values=values, probs=probs)

    @property
    def mean(self) -> float:
        if self.kind == "exponential":
            return 1.0 / self.rate
        if self.kind == "deterministic":
            return self.value
        return float(np.dot(self.values, self.probs))

    def encode(self):
        """(kind code, scalar, cumprobs, values) for the loop kernels."""
        if self.kind == "exponential":
            return INTER_EXP, self.rate, np.zeros(0), np.zeros(0)
        if self.kind == "deterministic":
            return INTER_DET, self.value, np.zeros(0), np.zeros(0)
        cum = np.cumsum(np.asarray(self.probs, dtype=float))
        return INTER_TAB, 0.0, np.ascontiguousarray(cum), np.ascontiguousarray(
            np.asarray(self.values, dtype=float)
        )


class LindleyRecursion(StochasticRecursion):
    """Waiting-time recursion W' = max(W + V - chi, 0), Pareto service.

    The service-time tail at scale parameter theta is (1 + theta v)^(-alpha);
    theta moves only the service distribution, so the noise score is the
    Pareto scale score in V.  Noise records are (V, chi) pairs.
    """

    def __init__(self, alpha, theta0, interarrival: InterarrivalSpec, eps):
        alpha = float(alpha)
        theta0 = float(theta0)
        if alpha <= 1.0:
            raise ModelError("Pareto shape must exceed 1 for a finite mean")
        if theta0 <= 0.0:
            raise ModelError("Pareto scale parameter must be positive")
        if not 0.0 < eps < theta0:
            raise ModelError("score band must satisfy 0 < eps < theta0")
        self.alpha = alpha
        self.interarrival = interarrival
        m_exp = -1.0 / alpha
        ap1 = alpha + 1.0
        kind, a, cum, vals = interarrival.encode()
        self._encoded = (kind, a, cum, vals)
        L = cum.shape[0]

        def sampler(uni: Uniforms):
            v = ((1.0 - uni.take()) ** m_exp - 1.0) / theta0
            if kind == INTER_EXP:
                chi = -log(1.0 - uni.take()) / a
            elif kind == INTER_DET:
                chi = a
            else:
                u = uni.take()
                j = 0
                while j < L - 1 and u >= float(cum[j]):
                    j += 1
                chi = float(vals[j])
            return (v, chi)

        def update(w, z):
            w = w + z[0] - z[1]
            return w if w > 0.0 else 0.0

        def density_ratio(theta: float, z) -> float:
            v = z[0]
            return (theta / theta0) * ((1.0 + theta * v) / (1.0 + theta0 * v)) ** (-ap1)

        def score(theta: float, z) -> float:
            v = z[0]
            return density_ratio(theta, z) * (1.0 / theta - ap1 * v / (1.0 + theta * v))

        super().__init__(
            **_as_generic(update, sampler, density_ratio, score,
                          theta0, float(eps), None)
        )

    def encoded(self):
        """(alpha, theta0, kind, a, cum, vals) for the loop kernels."""
        kind, a, cum, vals = self._encoded
        return self.alpha, self.theta0, kind, a, cum, vals

    @property
    def service_mean(self) -> float:
        return 1.0 / (self.theta0 * (self.alpha - 1.0))

    @property
    def drift_mean(self) -> float:
        """E[V - chi] at theta0; negative iff the queue is stable."""
        return self.service_mean - self.interarrival.mean
