"""Parameterized kernel families: densities, scores, and envelopes.

A family is a nonnegative base kernel at theta0 together with a density
field k(theta, x, y) relative to it (so K(theta, x, y) =
k(theta, x, y) * base(x, y) on the support of the base) and the score
field k'(theta, x, y).  Densities and scores are supplied as callables of
theta returning full matrices; they must be pure, since the package may
evaluate them concurrently and caches nothing on their behalf.

Envelope matrices dominate |k^{(j)}(theta, x, y)| over the band
|theta - theta0| <= eps; by default they are computed on a uniform
theta-grid, and a caller-supplied closed form overrides the grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, ModelError
from .kernels import (
    FiniteKernel,
    StateSpace,
    WeightFunction,
    contraction_power,
)

DEFAULT_ENVELOPE_GRID = 65

__all__ = [
    "ParamKernelFamily",
    "EnvelopeMatrix",
    "eval_kernel",
    "score_kernel",
    "derivative_kernel",
    "envelope",
    "check_remark_conditions",
    "RemarkReport",
    "recenter",
    "score_mean_diagnostic",
]

MatrixFn = Callable[[float], np.ndarray]


@dataclass(frozen=True)
class EnvelopeMatrix:
    """Entrywise bound on |k^{(order)}(theta, x, y)| over the theta-band."""

    values: np.ndarray = field(repr=False)
    order: int
    grid_points: int  # 0 when a closed form was supplied

    def __init__(self, values, order, grid_points):
        arr = np.array(values, dtype=float)
        if np.any(arr < 0.0) or not np.all(np.isfinite(arr)):
            raise ModelError("envelope entries must be finite and nonnegative")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "order", int(order))
        object.__setattr__(self, "grid_points", int(grid_points))


class ParamKernelFamily:
    """Base kernel at theta0 plus density/score fields over Lambda = (a, b).

    Parameters
    ----------
    base : FiniteKernel
        Nonnegative kernel K(theta0).
    theta0, eps : float
        Center and band radius; [theta0 - eps, theta0 + eps] must sit
        inside ``interval``.
    interval : (float, float)
        The open parameter interval Lambda.
    density : callable theta -> (n, n) array
        k(theta, ., .); must be identically 1 on the support at theta0.
    score : callable theta -> (n, n) array
        k'(theta, ., .).
    higher_scores : sequence of callables, optional
        k''(theta), k'''(theta), ... for higher-order derivatives.
    envelopes : dict {order: array or callable()}, optional
        Closed-form envelope overrides per derivative order (order 0 is
        the density itself).
    check_grid : int
        Number of grid points used to validate k >= 0 over the band at
        construction.
    """

    def __init__(
        self,
        base: FiniteKernel,
        theta0: float,
        eps: float,
        interval,
        density: MatrixFn,
        score: MatrixFn,
        higher_scores: Sequence[MatrixFn] = (),
        envelopes: Optional[dict] = None,
        check_grid: int = 9,
    ):
        if base.signed and np.any(base.entries < 0.0):
            raise ModelError("family base kernel must be nonnegative")
        a, b = float(interval[0]), float(interval[1])
        if not (a < theta0 < b):
            raise ModelError("theta0 must lie inside the open interval Lambda")
        if eps <= 0:
            raise ModelError("band radius eps must be positive")
        if not (a < theta0 - eps and theta0 + eps < b):
            raise ModelError("[theta0 - eps, theta0 + eps] must sit inside Lambda")
        self.base = base
        self.space = base.space
        self.theta0 = float(theta0)
        self.eps = float(eps)
        self.interval = (a, b)
        self._density = density
        self._score = score
        self._higher = tuple(higher_scores)
        self._envelopes = dict(envelopes) if envelopes else {}
        self.support = base.entries > 0.0
        self.support.setflags(write=False)

        d0 = self._eval_matrix(density, self.theta0, "density")
        if np.max(np.abs(d0[self.support] - 1.0), initial=0.0) > 1e-12:
            raise ModelError("density at theta0 must be identically 1 on the support")
        for theta in np.linspace(theta0 - eps, theta0 + eps, check_grid):
            d = self._eval_matrix(density, float(theta), "density")
            if np.any(d[self.support] < 0.0):
                raise ModelError(
                    f"density negative at theta={theta}: not a genuine density family"
                )

    def _eval_matrix(self, fn, theta, what) -> np.ndarray:
        out = np.asarray(fn(theta), dtype=float)
        if out.shape != self.base.entries.shape:
            raise DimensionMismatch(
                f"{what} callable returned shape {out.shape}, expected {self.base.entries.shape}"
            )
        if not np.all(np.isfinite(out[self.support])):
            raise ModelError(f"{what} non-finite on the support at theta={theta}")
        return out

    @property
    def max_order(self) -> int:
        """Highest derivative order with a supplied score field."""
        return 1 + len(self._higher)

    def contains(self, theta: float) -> bool:
        return self.interval[0] < theta < self.interval[1]

    def density_at(self, theta: float) -> np.ndarray:
        return self._eval_matrix(self._density, theta, "density")

    def score_at(self, theta: float, order: int = 1) -> np.ndarray:
        """k^{(order)}(theta, ., .) as a matrix (order >= 1)."""
        if order < 1:
            raise ModelError("score order must be >= 1")
        if order == 1:
            return self._eval_matrix(self._score, theta, "score")
        if order - 2 >= len(self._higher):
            raise ModelError(
                f"order-{order} derivative requested but only {self.max_order} supplied"
            )
        return self._eval_matrix(self._higher[order - 2], theta, f"order-{order} score")

    def derivative_field_at(self, theta: float, order: int) -> np.ndarray:
        """k^{(order)}(theta): the density itself for order 0, else the score."""
        if order == 0:
            return self.density_at(theta)
        return self.score_at(theta, order)

    @classmethod
    def constant(cls, base: FiniteKernel, theta0=0.0, eps=0.5, interval=(-1.0, 1.0)):
        """Family with no theta dependence (density 1, score 0)."""
        n = base.space.size
        ones = np.ones((n, n))
        zeros = np.zeros((n, n))
        return cls(
            base,
            theta0,
            eps,
            interval,
            density=lambda theta: ones,
            score=lambda theta: zeros,
            higher_scores=(lambda theta: zeros, lambda theta: zeros),
        )


def eval_kernel(family: ParamKernelFamily, theta: float) -> FiniteKernel:
    """K(theta) = k(theta) * base entrywise; exactly the base at theta0."""
    if not family.contains(theta):
        raise ModelError(
            f"theta={theta} outside the family interval {family.interval}"
        )
    if theta == family.theta0:
        return family.base
    dens = family.density_at(theta)
    if np.any(dens[family.support] < 0.0):
        raise ModelError(f"density negative at theta={theta}")
    entries = np.where(family.support, family.base.entries * dens, 0.0)
    return FiniteKernel(family.space, entries)


def derivative_kernel(family: ParamKernelFamily, order: int = 1) -> FiniteKernel:
    """Signed kernel K^{(order)}(theta0) = k^{(order)}(theta0) * base."""
    sc = family.score_at(family.theta0, order)
    entries = np.where(family.support, family.base.entries * sc, 0.0)
    return FiniteKernel(family.space, entries, signed=True)


def score_kernel(family: ParamKernelFamily) -> FiniteKernel:
    """K'(theta0): first-order case of :func:`derivative_kernel`."""
    return derivative_kernel(family, order=1)


def envelope(
    family: ParamKernelFamily,
    order: int = 1,
    grid_points: int = DEFAULT_ENVELOPE_GRID,
) -> EnvelopeMatrix:
    """Entrywise sup of |k^{(order)}| over the band, on a uniform grid.

    A closed-form envelope registered on the family wins over the grid.
    Odd ``grid_points`` keeps theta0 itself on the grid.
    """
    override = family._envelopes.get(order)
    if override is not None:
        values = np.asarray(override() if callable(override) else override, dtype=float)
        return EnvelopeMatrix(np.where(family.support, values, 0.0), order, 0)
    if grid_points < 3:
        raise ModelError("envelope grid needs at least 3 points")
    grid = np.linspace(family.theta0 - family.eps, family.theta0 + family.eps, grid_points)
    acc = np.zeros_like(family.base.entries)
    for theta in grid:
        vals = np.abs(family.derivative_field_at(float(theta), order))
        if not np.all(np.isfinite(vals[family.support])):
            raise ModelError(f"non-finite order-{order} field at theta={theta}")
        np.maximum(acc, vals, out=acc)
    return EnvelopeMatrix(np.where(family.support, acc, 0.0), order, grid_points)


@dataclass(frozen=True)
class RemarkReport:
    """Verification report for the sufficient conditions behind the
    operator-route derivative theorem (contraction, interior envelope
    integrals, boundary envelope integrals)."""

    contraction_ok: bool
    contraction_m: Optional[int]
    contraction_norm: float
    interior_ok: bool
    interior_margins: tuple  # per order 0..n: max_x of the weighted integral
    boundary_ok: bool
    boundary_margins: tuple

    @property
    def all_ok(self) -> bool:
        return self.contraction_ok and self.interior_ok and self.boundary_ok

    def to_dict(self) -> dict:
        return {
            "contraction": {
                "ok": self.contraction_ok,
                "m": self.contraction_m,
                "norm_at_m": self.contraction_norm,
            },
            "interior_integrals": {
                "ok": self.interior_ok,
                "max_by_order": list(self.interior_margins),
            },
            "boundary_integrals": {
                "ok": self.boundary_ok,
                "max_by_order": list(self.boundary_margins),
            },
        }


def check_remark_conditions(
    problem,
    w: WeightFunction,
    n: int = 1,
    m_max: int = 64,
    grid_points: int = DEFAULT_ENVELOPE_GRID,
) -> RemarkReport:
    """Report-only check of the three derivative sufficient conditions.

    ``problem`` is a random-horizon target problem (see
    :mod:`chaingrad.random_horizon`); ``w`` is a weight on its interior
    set.  The three parts: (i) some power of the interior kernel at theta0
    is a w-contraction; (ii) for each order j <= n, the weighted interior
    envelope integral max_x sum_y omega^{(j)}(x,y) (w(y)/w(x)) K(theta0,x,y)
    is finite (its value is reported); (iii) the boundary analogue with
    (1 + omega~^{(j)}) |f(y)| / w(x).  On a finite space (ii)/(iii) can
    only fail through non-finite envelopes; the margins are the point.
    """
    K0 = problem.interior_kernel(problem.family.theta0)
    if w.space.size != K0.space.size:
        raise DimensionMismatch("weight must live on the interior set")
    m = contraction_power(K0, w, m_max)
    if m is not None:
        power = np.linalg.matrix_power(K0.entries, m)
        norm_at_m = float(np.max((np.abs(power) @ w.values) / w.values))
    else:
        norm_at_m = float(np.max((np.abs(K0.entries) @ w.values) / w.values))

    interior, boundary = [], []
    interior_ok = boundary_ok = True
    f_abs_out = np.abs(problem.reward.values[problem.exterior_idx])
    K0_bdry = problem.boundary_kernel(problem.family.theta0)
    for order in range(0, n + 1):
        try:
            om = problem.interior_envelope(order, grid_points=grid_points).values
            val = float(np.max((om * K0.entries) @ w.values / w.values))
        except ModelError:
            val, ok = float("inf"), False
            interior_ok = False
        interior.append(val)
        if problem.exterior_idx.size:
            try:
                om_b = problem.boundary_envelope(order, grid_points=grid_points).values
                val_b = float(np.max(((1.0 + om_b) * K0_bdry) @ f_abs_out / w.values))
            except ModelError:
                val_b = float("inf")
                boundary_ok = False
        else:
            val_b = 0.0
        boundary.append(val_b)

    return RemarkReport(
        contraction_ok=m is not None,
        contraction_m=m,
        contraction_norm=norm_at_m,
        interior_ok=interior_ok,
        interior_margins=tuple(interior),
        boundary_ok=boundary_ok,
        boundary_margins=tuple(boundary),
    )


def recenter(family: ParamKernelFamily, new_theta0: float,
             eps: Optional[float] = None) -> ParamKernelFamily:
    """The same theta-family re-expressed relative to a new base point.

    The new base kernel is K(new_theta0) and the new density is
    k(theta) / k(new_theta0); derivative fields divide the same way.
    Used to evaluate derivative formulas away from the original theta0
    (e.g. finite-difference cross-checks of higher orders).
    """
    if not family.contains(new_theta0):
        raise ModelError("new base point must lie inside the family interval")
    new_base = eval_kernel(family, new_theta0)
    ref = family.density_at(new_theta0)
    support = family.support
    safe_ref = np.where(support & (ref != 0.0), ref, 1.0)

    def density(theta: float) -> np.ndarray:
        return np.where(support, family.density_at(theta) / safe_ref, 1.0)

    def make_score(order: int):
        def score(theta: float) -> np.ndarray:
            return np.where(support, family.score_at(theta, order) / safe_ref, 0.0)

        return score

    if eps is None:
        a, b = family.interval
        eps = 0.9 * min(new_theta0 - a, b - new_theta0)
    return ParamKernelFamily(
        new_base,
        new_theta0,
        eps,
        family.interval,
        density=density,
        score=make_score(1),
        higher_scores=tuple(
            make_score(order) for order in range(2, family.max_order + 1)
        ),
    )


def score_mean_diagnostic(family: ParamKernelFamily) -> np.ndarray:
    """Row sums of the score kernel: zero for stochastic density families.

    Differentiating the row normalization of a stochastic family gives
    zero row sums for K'; discounted (non-normalized) kernels need not
    satisfy this, so treat nonzero values as a warning, not an error.
    """
    return score_kernel(family).entries.sum(axis=1)
