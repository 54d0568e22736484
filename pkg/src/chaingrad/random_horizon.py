"""Random-horizon discounted expectations on finite chains, exactly.

The target quantity is the expected discounted reward accumulated until
the chain first leaves an interior set C, plus a terminal reward at the
exit state.  With K(theta, x, y) = exp(g(x)) P(theta, x, y) restricted to
C x C and

    f~(theta, x) = f(x) + sum_{y outside C} exp(g(x)) P(theta, x, y) f(y),

the value solves (I - K(theta)) u = f~(theta), and derivatives in theta
follow from repeated solves against the same factorization:

    u^{(l)} = G ( f~^{(l)} + sum_{j<l} C(l, j) K^{(l-j)} u^{(j)} ),

with G = (I - K(theta0))^{-1}.  This module also verifies the drift
certificates that guarantee those derivatives exist on general spaces,
reports the induced bounds |u^{(l)}| <= v_l, and exposes the comparison
bound sum_n Q^n f <= v behind them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, ModelError, NumericalError
from .families import DEFAULT_ENVELOPE_GRID, EnvelopeMatrix, ParamKernelFamily, envelope
from .kernels import (
    FiniteFunction,
    FiniteKernel,
    FiniteMeasure,
    ResolventSolver,
    StateSpace,
    WeightFunction,
)

__all__ = [
    "TargetProblem",
    "LyapunovCertificateRH",
    "build_tilde_f",
    "compute_u_star",
    "derivative_u_star",
    "higher_derivatives",
    "measure_derivative",
    "occupancy_measure",
    "signed_measure_representation",
    "verify_lyapunov_rh",
    "RandomHorizonCertReport",
    "comparison_bound_check",
    "ComparisonBoundReport",
    "suggest_lyapunov_rh",
]


class TargetProblem:
    """Reward f, discount exponent g, interior set C, and the kernel family.

    ``family`` lives on the full space S; the interior/boundary kernels,
    scores, and envelopes are slices of it (the discount factor exp(g(x))
    multiplies rows, so the density field relative to the theta0 kernel is
    unchanged by discounting).

    ``interior`` may be given as state labels or integer indices.  An
    empty exterior (C = S) is legal and models the infinite-horizon
    discounted case.
    """

    def __init__(
        self,
        family: ParamKernelFamily,
        interior,
        reward: FiniteFunction,
        discount_exponent: Optional[FiniteFunction] = None,
    ):
        self.family = family
        space = family.space
        if reward.space.labels != space.labels:
            raise DimensionMismatch("reward must live on the family's state space")
        self.reward = reward
        if discount_exponent is None:
            discount_exponent = FiniteFunction(space, np.zeros(space.size))
        if discount_exponent.space.labels != space.labels:
            raise DimensionMismatch("discount exponent must live on the family's state space")
        self.discount_exponent = discount_exponent
        exp_g = np.exp(discount_exponent.values)
        if not np.all(np.isfinite(exp_g)):
            raise ModelError("exp(g) overflows")

        idx = []
        for state in interior:
            if isinstance(state, (int, np.integer)) and not isinstance(state, bool):
                i = int(state)
                if not 0 <= i < space.size:
                    raise ModelError(f"interior index {i} out of range")
            else:
                i = space.index(state)
            idx.append(i)
        if not idx:
            raise ModelError("interior set C must be nonempty")
        if len(set(idx)) != len(idx):
            raise ModelError("interior set contains duplicates")
        self.interior_idx = np.array(sorted(idx), dtype=np.intp)
        mask = np.zeros(space.size, dtype=bool)
        mask[self.interior_idx] = True
        self.exterior_idx = np.flatnonzero(~mask)
        self.interior_space = StateSpace([space.labels[i] for i in self.interior_idx])
        self._exp_g_interior = exp_g[self.interior_idx]

    # -- kernel slices ---------------------------------------------------

    def _full_kernel(self, theta: float) -> np.ndarray:
        from .families import eval_kernel

        return eval_kernel(self.family, theta).entries

    def interior_kernel(self, theta: float) -> FiniteKernel:
        """K(theta) on C x C, discount included."""
        P = self._full_kernel(theta)
        block = P[np.ix_(self.interior_idx, self.interior_idx)]
        return FiniteKernel(
            self.interior_space, self._exp_g_interior[:, None] * block
        )

    def boundary_kernel(self, theta: float) -> np.ndarray:
        """K(theta) on C x C^c as a rectangular array."""
        P = self._full_kernel(theta)
        block = P[np.ix_(self.interior_idx, self.exterior_idx)]
        return self._exp_g_interior[:, None] * block

    def interior_derivative_kernel(self, order: int = 1) -> FiniteKernel:
        """K^{(order)}(theta0) on C x C (signed)."""
        sc = self.family.score_at(self.family.theta0, order)
        full = np.where(self.family.support, self.family.base.entries * sc, 0.0)
        block = full[np.ix_(self.interior_idx, self.interior_idx)]
        return FiniteKernel(
            self.interior_space, self._exp_g_interior[:, None] * block, signed=True
        )

    def boundary_derivative_kernel(self, order: int = 1) -> np.ndarray:
        sc = self.family.score_at(self.family.theta0, order)
        full = np.where(self.family.support, self.family.base.entries * sc, 0.0)
        block = full[np.ix_(self.interior_idx, self.exterior_idx)]
        return self._exp_g_interior[:, None] * block

    def interior_envelope(self, order: int = 1, grid_points: int = DEFAULT_ENVELOPE_GRID) -> EnvelopeMatrix:
        env = envelope(self.family, order=order, grid_points=grid_points)
        return EnvelopeMatrix(
            env.values[np.ix_(self.interior_idx, self.interior_idx)],
            order,
            env.grid_points,
        )

    def boundary_envelope(self, order: int = 1, grid_points: int = DEFAULT_ENVELOPE_GRID) -> EnvelopeMatrix:
        env = envelope(self.family, order=order, grid_points=grid_points)
        return EnvelopeMatrix(
            env.values[np.ix_(self.interior_idx, self.exterior_idx)],
            order,
            env.grid_points,
        )

    # -- boundary-augmented reward ----------------------------------------

    def tilde_f(self, theta: float) -> np.ndarray:
        vals = self.reward.values[self.interior_idx].copy()
        if self.exterior_idx.size:
            vals += self.boundary_kernel(theta) @ self.reward.values[self.exterior_idx]
        return vals

    def tilde_f_derivative(self, order: int = 1) -> np.ndarray:
        if not self.exterior_idx.size:
            return np.zeros(self.interior_idx.size)
        return self.boundary_derivative_kernel(order) @ self.reward.values[self.exterior_idx]

    def r_tilde_eps(self, grid_points: int = DEFAULT_ENVELOPE_GRID) -> np.ndarray:
        """sum_{y in C^c} omega~_eps(x,y) |f(y)| K(theta0, x, y)."""
        if not self.exterior_idx.size:
            return np.zeros(self.interior_idx.size)
        om = self.boundary_envelope(1, grid_points=grid_points).values
        return (om * self.boundary_kernel(self.family.theta0)) @ np.abs(
            self.reward.values[self.exterior_idx]
        )


def build_tilde_f(problem: TargetProblem, theta: float) -> FiniteFunction:
    """Boundary-augmented reward f~(theta) on the interior space."""
    if not problem.family.contains(theta):
        raise ModelError(f"theta={theta} outside the family interval")
    return FiniteFunction(problem.interior_space, problem.tilde_f(theta))


def _solver(problem: TargetProblem, theta: float, w: WeightFunction, m_max: int) -> ResolventSolver:
    return ResolventSolver(problem.interior_kernel(theta), w, m_max=m_max)


def compute_u_star(
    problem: TargetProblem, theta: float, w: WeightFunction, m_max: int = 64
) -> FiniteFunction:
    """Solve (I - K(theta)) u = f~(theta) after the contraction check."""
    if not problem.family.contains(theta):
        raise ModelError(f"theta={theta} outside the family interval")
    solver = _solver(problem, theta, w, m_max)
    u = solver.apply(problem.tilde_f(theta))
    if not np.all(np.isfinite(u)):
        raise NumericalError("u* solve produced non-finite values")
    return FiniteFunction(problem.interior_space, u)


def higher_derivatives(
    problem: TargetProblem, w: WeightFunction, n: int, m_max: int = 64
) -> list:
    """Derivatives u^{(1)}, ..., u^{(n)} at theta0 by the linear recursion.

    Each order reuses the LU factorization of (I - K(theta0)); the user
    must have supplied score fields up to order n.
    """
    if n < 1:
        raise ModelError("derivative order must be >= 1")
    if n > problem.family.max_order:
        raise ModelError(
            f"order {n} requested but family supplies scores up to order "
            f"{problem.family.max_order}"
        )
    theta0 = problem.family.theta0
    solver = _solver(problem, theta0, w, m_max)
    us = [solver.apply(problem.tilde_f(theta0))]
    K_derivs = {}
    out = []
    for l in range(1, n + 1):
        rhs = problem.tilde_f_derivative(l)
        for j in range(l):
            order = l - j
            if order not in K_derivs:
                K_derivs[order] = problem.interior_derivative_kernel(order).entries
            rhs = rhs + math.comb(l, j) * (K_derivs[order] @ us[j])
        u_l = solver.apply(rhs)
        us.append(u_l)
        out.append(FiniteFunction(problem.interior_space, u_l))
    return out


def derivative_u_star(
    problem: TargetProblem, w: WeightFunction, m_max: int = 64
) -> FiniteFunction:
    """First derivative of u* at theta0: G (K' u* + f~')."""
    return higher_derivatives(problem, w, 1, m_max=m_max)[0]


def occupancy_measure(
    problem: TargetProblem,
    theta: float,
    w: WeightFunction,
    mu: FiniteMeasure,
    m_max: int = 64,
) -> FiniteMeasure:
    """nu(theta) = mu G(theta): discounted occupancy of the interior set."""
    if mu.space.labels != problem.interior_space.labels:
        raise DimensionMismatch("initial measure must live on the interior space")
    solver = _solver(problem, theta, w, m_max)
    return FiniteMeasure(problem.interior_space, solver.apply_measure(mu.weights))


def measure_derivative(
    mu_family,
    problem: TargetProblem,
    w: WeightFunction,
    m_max: int = 64,
) -> FiniteMeasure:
    """Derivative of nu(theta) = mu(theta) G(theta) at theta0.

    ``mu_family`` is the pair (mu(theta0), mu'(theta0)) of measures on C.
    Uses nu' = mu' G + nu K' G with nu = mu G.
    """
    mu0, mu_prime = mu_family
    for m in (mu0, mu_prime):
        if m.space.labels != problem.interior_space.labels:
            raise DimensionMismatch("initial-measure family must live on the interior space")
    solver = _solver(problem, problem.family.theta0, w, m_max)
    nu = solver.apply_measure(mu0.weights)
    K_prime = problem.interior_derivative_kernel(1).entries
    nu_prime = solver.apply_measure(mu_prime.weights + nu @ K_prime)
    return FiniteMeasure(problem.interior_space, nu_prime)


def signed_measure_representation(
    problem: TargetProblem, w: WeightFunction, x, m_max: int = 64
) -> FiniteMeasure:
    """The signed measure nu'(x, .) on S representing d/dtheta at state x.

    Pairing it with the reward reproduces the u* derivative at x for any
    reward (its total mass is in general nonzero).  The interior block is
    (G K' G)(x, .); the exterior block carries both the direct boundary
    score term (G K'_bdry)(x, .) and the interior block pushed one step
    out through the theta0 boundary kernel, (G K' G K_bdry)(x, .) -- the
    latter is what makes the pairing exact when rewards sit on C^c.
    """
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        pos = int(np.searchsorted(problem.interior_idx, int(x)))
        if pos >= problem.interior_idx.size or problem.interior_idx[pos] != int(x):
            raise ModelError(f"state index {x} is not in the interior set")
    else:
        pos = problem.interior_space.index(x)
    solver = _solver(problem, problem.family.theta0, w, m_max)
    e_x = np.zeros(problem.interior_idx.size)
    e_x[pos] = 1.0
    row_G = solver.apply_measure(e_x)
    K_prime = problem.interior_derivative_kernel(1).entries
    interior_part = solver.apply_measure(row_G @ K_prime)
    weights = np.zeros(problem.family.space.size)
    weights[problem.interior_idx] = interior_part
    if problem.exterior_idx.size:
        Kb0 = problem.boundary_kernel(problem.family.theta0)
        Kb_prime = problem.boundary_derivative_kernel(1)
        weights[problem.exterior_idx] = interior_part @ Kb0 + row_G @ Kb_prime
    return FiniteMeasure(problem.family.space, weights)


# -- Lyapunov certificates ------------------------------------------------


@dataclass(frozen=True)
class LyapunovCertificateRH:
    """Nonnegative functions v_0, ..., v_n on C certifying derivatives to
    order n; ``eps`` defaults to the family band radius."""

    vees: tuple
    eps: Optional[float] = None

    def __init__(self, vees: Sequence, eps: Optional[float] = None):
        arrs = []
        for v in vees:
            arr = np.array(v.values if isinstance(v, FiniteFunction) else v, dtype=float)
            if np.any(arr < 0.0) or not np.all(np.isfinite(arr)):
                raise ModelError("certificate functions must be finite and nonnegative")
            arr.setflags(write=False)
            arrs.append(arr)
        if not arrs:
            raise ModelError("certificate needs at least v0")
        object.__setattr__(self, "vees", tuple(arrs))
        object.__setattr__(self, "eps", None if eps is None else float(eps))

    @property
    def order(self) -> int:
        return len(self.vees) - 1


@dataclass(frozen=True)
class RandomHorizonCertReport:
    """Per-state, per-grid-theta slack tables for the drift inequalities.

    ``slacks[l]`` has shape (n_grid, |C|); the order-0 table is the value
    inequality, order l >= 1 the derivative inequalities.  ``passed``
    requires every slack nonnegative.  ``bound_predictions[l]`` is v_l,
    the certified bound on |u^{(l)}|; ``continuity_value`` is the interior
    envelope integral against the top v, whose finiteness backs continuity
    of the top derivative.
    """

    theta_grid: np.ndarray
    states: tuple
    slacks: tuple  # tuple of (n_grid, n_states) arrays, index = order
    min_slack_by_order: tuple
    min_slack_at_theta0: tuple
    passed: bool
    bound_predictions: tuple
    continuity_value: float
    r_tilde: np.ndarray

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "theta_grid": [float(t) for t in self.theta_grid],
            "min_slack_by_order": [float(v) for v in self.min_slack_by_order],
            "min_slack_at_theta0": [float(v) for v in self.min_slack_at_theta0],
            "continuity_value": self.continuity_value,
            "bound_predictions": [
                [float(v) for v in arr] for arr in self.bound_predictions
            ],
        }

    def slack_rows(self):
        """Iterate (order, theta, state_label, slack) rows for CSV output."""
        for order, table in enumerate(self.slacks):
            for gi, theta in enumerate(self.theta_grid):
                for si, state in enumerate(self.states):
                    yield order, float(theta), state, float(table[gi, si])


def verify_lyapunov_rh(
    problem: TargetProblem,
    cert: LyapunovCertificateRH,
    theta_grid=None,
    grid_points: int = 21,
    envelope_grid: int = DEFAULT_ENVELOPE_GRID,
) -> RandomHorizonCertReport:
    """Check the value and derivative drift inequalities on a theta-grid.

    Order 0 at each grid theta:   K(theta) v0 <= v0 - |f~(theta)|.
    Order l >= 1 at each grid theta:

        K(theta) v_l <= v_l - sum_{j<l} C(l,j) (omega^{(l-j)} . K(theta)) v_j
                            - (omega~^{(l)} . K(theta)) |f|  on C^c,

    which at theta = theta0 and l = 1 is the basic first-derivative drift
    condition.  The grid covers [theta0 - eps, theta0 + eps]; the
    inequalities are only verified there, which is as far as finite data
    can certify the required neighborhood.
    """
    n_states = problem.interior_idx.size
    for v in cert.vees:
        if v.shape[0] != n_states:
            raise DimensionMismatch("certificate functions must live on the interior set")
    eps = cert.eps if cert.eps is not None else problem.family.eps
    if eps > problem.family.eps + 1e-15:
        raise ModelError("certificate band exceeds the family envelope band")
    theta0 = problem.family.theta0
    if theta_grid is None:
        theta_grid = np.linspace(theta0 - eps, theta0 + eps, grid_points)
    theta_grid = np.asarray(theta_grid, dtype=float)
    if not np.any(np.abs(theta_grid - theta0) <= 1e-15):
        theta_grid = np.sort(np.append(theta_grid, theta0))
    i0 = int(np.argmin(np.abs(theta_grid - theta0)))

    n_orders = cert.order
    om = {
        j: problem.interior_envelope(j, grid_points=envelope_grid).values
        for j in range(1, n_orders + 1)
    }
    if problem.exterior_idx.size:
        om_b = {
            j: problem.boundary_envelope(j, grid_points=envelope_grid).values
            for j in range(1, n_orders + 1)
        }
        f_abs_out = np.abs(problem.reward.values[problem.exterior_idx])
    else:
        om_b, f_abs_out = {}, None

    slacks = [np.zeros((theta_grid.size, n_states)) for _ in range(n_orders + 1)]
    for gi, theta in enumerate(theta_grid):
        K = problem.interior_kernel(float(theta)).entries
        ftilde = problem.tilde_f(float(theta))
        slacks[0][gi] = cert.vees[0] - K @ cert.vees[0] - np.abs(ftilde)
        if problem.exterior_idx.size and n_orders >= 1:
            Kb = problem.boundary_kernel(float(theta))
        for l in range(1, n_orders + 1):
            burden = np.zeros(n_states)
            for j in range(l):
                burden += math.comb(l, j) * ((om[l - j] * K) @ cert.vees[j])
            if problem.exterior_idx.size:
                burden += (om_b[l] * Kb) @ f_abs_out
            slacks[l][gi] = cert.vees[l] - K @ cert.vees[l] - burden

    min_by_order = tuple(float(t.min()) for t in slacks)
    min_at_theta0 = tuple(float(t[i0].min()) for t in slacks)
    if n_orders >= 1:
        K0 = problem.interior_kernel(theta0).entries
        continuity_value = float(np.max((om[n_orders] * K0) @ cert.vees[n_orders]))
    else:
        continuity_value = 0.0
    return RandomHorizonCertReport(
        theta_grid=theta_grid,
        states=problem.interior_space.labels,
        slacks=tuple(slacks),
        min_slack_by_order=min_by_order,
        min_slack_at_theta0=min_at_theta0,
        passed=bool(min(min_by_order) >= 0.0),
        bound_predictions=tuple(v.copy() for v in cert.vees),
        continuity_value=continuity_value,
        r_tilde=problem.r_tilde_eps(grid_points=envelope_grid),
    )


@dataclass(frozen=True)
class ComparisonBoundReport:
    applicable: bool
    holds: bool
    n_terms: int
    converged: bool
    max_violation: float
    series: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "applicable": self.applicable,
            "holds": self.holds,
            "n_terms": self.n_terms,
            "converged": self.converged,
            "max_violation": self.max_violation,
        }


def comparison_bound_check(
    Q: FiniteKernel,
    f: FiniteFunction,
    v: FiniteFunction,
    increment_tol: float = 1e-12,
    max_terms: int = 100_000,
) -> ComparisonBoundReport:
    """Check the comparison bound: Qv <= v - f implies sum_n Q^n f <= v.

    Applicability (the drift hypothesis) is checked first; if it fails the
    report says inapplicable instead of asserting anything.  The series is
    truncated when the running term falls below ``increment_tol`` in sup
    norm or after ``max_terms`` terms.
    """
    if Q.signed and np.any(Q.entries < 0.0):
        raise ModelError("comparison bound requires a nonnegative kernel")
    if np.any(f.values < 0.0) or np.any(v.values < 0.0):
        raise ModelError("comparison bound requires nonnegative f and v")
    drift = Q.entries @ v.values - (v.values - f.values)
    applicable = bool(np.max(drift) <= 1e-12 * max(1.0, float(np.max(v.values))))
    if not applicable:
        return ComparisonBoundReport(
            False, False, 0, False, float("nan"), np.zeros_like(f.values)
        )
    total = f.values.copy()
    term = f.values.copy()
    converged = False
    n = 0
    for n in range(1, max_terms + 1):
        term = Q.entries @ term
        total += term
        if float(np.max(np.abs(term))) < increment_tol:
            converged = True
            break
    violation = float(np.max(total - v.values))
    tol = 1e-10 * max(1.0, float(np.max(v.values)))
    return ComparisonBoundReport(
        True, bool(violation <= tol), n, converged, violation, total
    )


def suggest_lyapunov_rh(
    problem: TargetProblem,
    w: WeightFunction,
    margin: float = 0.1,
    grid_points: int = 21,
    m_max: int = 64,
):
    """Heuristic certificate proposal (v0, v1); verify before trusting.

    v0 inflates the exact solution for the band-maximal |f~| (the value
    function itself satisfies the order-0 inequality with equality at
    theta0), and v1 inflates the resolvent applied to the envelope burden
    that v0 induces.  Both can still fail on the band; run
    :func:`verify_lyapunov_rh` on the result.
    """
    theta0, eps = problem.family.theta0, problem.family.eps
    solver = _solver(problem, theta0, w, m_max)
    grid = np.linspace(theta0 - eps, theta0 + eps, grid_points)
    f_worst = np.max(np.abs(np.stack([problem.tilde_f(float(t)) for t in grid])), axis=0)
    v0 = (1.0 + margin) * solver.apply(f_worst)
    om = problem.interior_envelope(1).values
    K0 = problem.interior_kernel(theta0).entries
    burden = (om * K0) @ v0 + problem.r_tilde_eps()
    v1 = (1.0 + margin) * solver.apply(burden)
    return LyapunovCertificateRH([np.maximum(v0, 0.0), np.maximum(v1, 0.0)], eps=eps)
