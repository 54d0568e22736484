"""Stationary distributions, Poisson solves, and their theta-derivatives.

Everything routes through the fundamental system (I - P + Pi), where
Pi(x, .) = pi: it is invertible when P has a unique stationary law, it
solves Poisson's equation (I - P) g = f - pi f with the normalization
pi g = 0 built in, and it gives the stationary derivative

    pi'(theta0) = pi(theta0) P'(theta0) (I - P(theta0) + Pi(theta0))^{-1}

together with the recursion for higher orders.  The drift checkers verify
the geometric-ergodicity certificate and the kappa-drift certificate that
replace these linear-algebra facts on general state spaces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.sparse.csgraph import connected_components

from .errors import DimensionMismatch, ModelError, NumericalError
from .families import DEFAULT_ENVELOPE_GRID, ParamKernelFamily, envelope, eval_kernel
from .kernels import (
    FiniteFunction,
    FiniteKernel,
    FiniteMeasure,
    WeightFunction,
)

__all__ = [
    "StationaryCertificate",
    "MinorizationCertificate",
    "GeometricDriftCertificate",
    "stationary_distribution",
    "FundamentalSolver",
    "poisson_solve",
    "stationary_measure_derivative",
    "stationary_functional_derivative",
    "higher_stationary_derivatives",
    "check_minorization",
    "check_geometric_drift",
    "GeometricDriftReport",
    "check_subgeometric_drift",
    "SubgeometricDriftReport",
]

_PI_RESIDUAL_TOL = 1e-12
_POISSON_RESIDUAL_TOL = 1e-10


def _recurrent_classes(P: np.ndarray):
    """Strongly connected components with no outgoing edge (support graph)."""
    support = (P > 0.0).astype(np.int8)
    n_comp, labels = connected_components(support, directed=True, connection="strong")
    closed = []
    for c in range(n_comp):
        members = np.flatnonzero(labels == c)
        outside = np.ones(P.shape[0], dtype=bool)
        outside[members] = False
        if not np.any(P[np.ix_(members, np.flatnonzero(outside))] > 0.0):
            closed.append(members)
    return closed


def stationary_distribution(P: FiniteKernel) -> FiniteMeasure:
    """Solve pi P = pi, sum pi = 1 for the unique stationary law.

    Refuses reducible chains with several recurrent classes (naming them);
    transient states get mass zero automatically.  Solved by replacing one
    balance equation with the normalization, then verified to residual
    1e-12.
    """
    if not P.is_stochastic():
        raise ModelError("stationary_distribution requires a stochastic kernel")
    n = P.space.size
    classes = _recurrent_classes(P.entries)
    if len(classes) > 1:
        names = [[P.space.labels[i] for i in members] for members in classes]
        raise ModelError(
            f"chain is reducible with {len(classes)} recurrent classes: {names}"
        )
    A = P.entries.T - np.eye(n)
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        pi = scipy.linalg.solve(A, b)
    except scipy.linalg.LinAlgError as exc:
        raise NumericalError(f"stationary solve failed: {exc}") from exc
    pi = np.where(np.abs(pi) < 1e-15, 0.0, pi)
    residual = float(np.max(np.abs(pi @ P.entries - pi)))
    if residual > _PI_RESIDUAL_TOL or abs(pi.sum() - 1.0) > _PI_RESIDUAL_TOL:
        raise NumericalError(
            f"stationary residual {residual:.3e} exceeds {_PI_RESIDUAL_TOL}"
        )
    return FiniteMeasure(P.space, pi)


class FundamentalSolver:
    """LU-backed solves against (I - P + Pi) and its transpose."""

    def __init__(self, P: FiniteKernel, pi: Optional[FiniteMeasure] = None):
        if pi is None:
            pi = stationary_distribution(P)
        if pi.space.labels != P.space.labels:
            raise DimensionMismatch("pi and P must share a state space")
        self.kernel = P
        self.pi = pi
        n = P.space.size
        M = np.eye(n) - P.entries + np.tile(pi.weights, (n, 1))
        try:
            self._lu = scipy.linalg.lu_factor(M)
        except (scipy.linalg.LinAlgError, ValueError) as exc:
            raise NumericalError(f"(I - P + Pi) factorization failed: {exc}") from exc

    def poisson(self, f: np.ndarray) -> np.ndarray:
        """g with (I - P) g = f - pi f and pi g = 0."""
        f = np.asarray(f, dtype=float)
        f_c = f - float(self.pi.weights @ f)
        g = scipy.linalg.lu_solve(self._lu, f_c)
        residual = float(np.max(np.abs(g - self.kernel.entries @ g - f_c)))
        norm_check = abs(float(self.pi.weights @ g))
        scale = max(1.0, float(np.max(np.abs(f))))
        if residual > _POISSON_RESIDUAL_TOL * scale or norm_check > _POISSON_RESIDUAL_TOL * scale:
            raise NumericalError(
                f"Poisson residual {residual:.3e} / normalization {norm_check:.3e} "
                f"exceed tolerance"
            )
        return g

    def apply_measure(self, eta: np.ndarray) -> np.ndarray:
        """eta (I - P + Pi)^{-1}."""
        return scipy.linalg.lu_solve(self._lu, np.asarray(eta, dtype=float), trans=1)


def poisson_solve(P: FiniteKernel, pi: FiniteMeasure, f: FiniteFunction) -> FiniteFunction:
    """Solution g of Poisson's equation for f, normalized to pi g = 0."""
    if f.space.labels != P.space.labels:
        raise DimensionMismatch("f must live on the kernel's state space")
    solver = FundamentalSolver(P, pi)
    return FiniteFunction(P.space, solver.poisson(f.values))


def _check_stochastic_family(family: ParamKernelFamily):
    if not family.base.is_stochastic():
        raise ModelError("stationary derivatives require a stochastic family")


def higher_stationary_derivatives(family: ParamKernelFamily, n: int) -> list:
    """pi^{(1)}, ..., pi^{(n)} at theta0 via the fundamental-solve recursion.

    pi^{(l)} = ( sum_{j<l} C(l, j) pi^{(j)} P^{(l-j)} ) (I - P + Pi)^{-1},
    with pi^{(0)} = pi.  Each order's total mass must vanish (derivative of
    pi(theta) S = 1); that is checked to 1e-10 and enforced exactly.
    """
    _check_stochastic_family(family)
    if n < 1:
        raise ModelError("derivative order must be >= 1")
    if n > family.max_order:
        raise ModelError(
            f"order {n} requested but family supplies scores up to order {family.max_order}"
        )
    P0 = family.base
    solver = FundamentalSolver(P0)
    pis = [solver.pi.weights]
    P_derivs = {}
    out = []
    for l in range(1, n + 1):
        rhs = np.zeros(P0.space.size)
        for j in range(l):
            order = l - j
            if order not in P_derivs:
                sc = family.score_at(family.theta0, order)
                P_derivs[order] = np.where(family.support, P0.entries * sc, 0.0)
            rhs += math.comb(l, j) * (pis[j] @ P_derivs[order])
        d = solver.apply_measure(rhs)
        mass = float(d.sum())
        if abs(mass) > 1e-10 * max(1.0, float(np.max(np.abs(d)))):
            raise NumericalError(
                f"order-{l} stationary derivative has total mass {mass:.3e}; "
                f"the family's score rows do not sum to zero"
            )
        pis.append(d)
        out.append(FiniteMeasure(P0.space, d))
    return out


def stationary_measure_derivative(family: ParamKernelFamily) -> FiniteMeasure:
    """pi'(theta0) = pi P' (I - P + Pi)^{-1} as a signed measure."""
    return higher_stationary_derivatives(family, 1)[0]


def stationary_functional_derivative(
    family: ParamKernelFamily, f: FiniteFunction, cross_check_tol: float = 1e-10
) -> float:
    """d/dtheta of pi(theta) f at theta0 via the Poisson route.

    Computes pi P' (Gamma f) and cross-checks it against the measure route
    pi' f; a disagreement beyond tolerance means the family is broken
    (score rows not summing to zero) and raises.
    """
    _check_stochastic_family(family)
    if f.space.labels != family.space.labels:
        raise DimensionMismatch("f must live on the family's state space")
    solver = FundamentalSolver(family.base)
    g = solver.poisson(f.values)
    from .families import score_kernel

    P_prime = score_kernel(family).entries
    alpha_prime = float(solver.pi.weights @ (P_prime @ g))
    measure_route = float(
        stationary_measure_derivative(family).weights @ f.values
    )
    scale = max(1.0, abs(alpha_prime))
    if abs(alpha_prime - measure_route) > cross_check_tol * scale:
        raise NumericalError(
            f"Poisson route {alpha_prime!r} and measure route {measure_route!r} "
            f"disagree beyond {cross_check_tol}"
        )
    return alpha_prime


# -- certificates ----------------------------------------------------------


@dataclass(frozen=True)
class MinorizationCertificate:
    """P^power(theta, x, .) >= lam * phi(.) for x in the small set."""

    power: int
    lam: float
    phi: FiniteMeasure

    def __post_init__(self):
        if self.power < 1:
            raise ModelError("minorization power must be >= 1")
        if not 0.0 < self.lam <= 1.0:
            raise ModelError("minorization constant must lie in (0, 1]")
        if not self.phi.is_probability(tol=1e-9):
            raise ModelError("phi must be a probability measure")


def check_minorization(
    family: ParamKernelFamily,
    small_set,
    power_max: int = 8,
    theta_grid=None,
    grid_points: int = 21,
) -> Optional[MinorizationCertificate]:
    """Search for a uniform minorization over the small set and theta-band.

    For each power up to ``power_max``, takes the entrywise minimum of
    P^n(theta, x, .) over x in the set and theta on the grid; the first
    power whose minimum has positive total mass lam yields the certificate
    with phi the normalized minimum.  None means inconclusive up to
    power_max, not disproof.
    """
    _check_stochastic_family(family)
    theta0, eps = family.theta0, family.eps
    if theta_grid is None:
        theta_grid = np.linspace(theta0 - eps, theta0 + eps, grid_points)
    idx = []
    for state in small_set:
        if isinstance(state, (int, np.integer)) and not isinstance(state, bool):
            idx.append(int(state))
        else:
            idx.append(family.space.index(state))
    if not idx:
        raise ModelError("small set must be nonempty")
    idx = np.array(sorted(set(idx)), dtype=np.intp)

    powers = {}
    for theta in theta_grid:
        powers[float(theta)] = eval_kernel(family, float(theta)).entries
    current = {t: m.copy() for t, m in powers.items()}
    for n in range(1, power_max + 1):
        floor = None
        for t, mat in current.items():
            rows_min = mat[idx].min(axis=0)
            floor = rows_min if floor is None else np.minimum(floor, rows_min)
        lam = float(floor.sum())
        if lam > 0.0:
            return MinorizationCertificate(
                power=n, lam=lam, phi=FiniteMeasure(family.space, floor / lam)
            )
        if n < power_max:
            current = {t: mat @ powers[t] for t, mat in current.items()}
    return None


@dataclass(frozen=True)
class GeometricDriftCertificate:
    """(P w)(x) <= r w(x) + c I(x in A)."""

    w: WeightFunction
    r: float
    c: float
    small_set: tuple

    def __post_init__(self):
        if not 0.0 < self.r < 1.0:
            raise ModelError("geometric drift rate r must lie in (0, 1)")
        if self.c <= 0.0:
            raise ModelError("drift constant c must be positive")


@dataclass(frozen=True)
class GeometricDriftReport:
    slack: np.ndarray = field(repr=False)
    passed: bool
    min_slack: float
    states: tuple

    def to_dict(self) -> dict:
        return {"passed": self.passed, "min_slack": self.min_slack}


def check_geometric_drift(P: FiniteKernel, cert: GeometricDriftCertificate) -> GeometricDriftReport:
    """Per-state slack r w(x) + c I(x in A) - (P w)(x); pass iff all >= 0.

    Paired with a minorization certificate this is the geometric-ergodicity
    package that guarantees a differentiable stationary law for a smooth
    family.
    """
    if cert.w.space.labels != P.space.labels:
        raise DimensionMismatch("certificate weight must live on the kernel space")
    in_A = np.zeros(P.space.size)
    for state in cert.small_set:
        if isinstance(state, (int, np.integer)) and not isinstance(state, bool):
            in_A[int(state)] = 1.0
        else:
            in_A[P.space.index(state)] = 1.0
    slack = cert.r * cert.w.values + cert.c * in_A - P.entries @ cert.w.values
    return GeometricDriftReport(
        slack=slack,
        passed=bool(np.min(slack) >= 0.0),
        min_slack=float(np.min(slack)),
        states=P.space.labels,
    )


@dataclass(frozen=True)
class StationaryCertificate:
    """kappa-drift certificate for differentiability without geometric
    ergodicity: functions q, v0, v1 >= 0, constants c0, c1 > 0, a small
    set A, and kappa with kappa(x) >= x and kappa(x)/x increasing off to
    the right edge of the data (checked on the attained range)."""

    q: np.ndarray
    v0: np.ndarray
    v1: np.ndarray
    kappa: Callable[[float], float]
    small_set: tuple
    c0: float
    c1: float
    eps: Optional[float] = None

    def __init__(self, q, v0, v1, kappa, small_set, c0, c1, eps=None):
        arrays = {}
        for name, v in (("q", q), ("v0", v0), ("v1", v1)):
            arr = np.array(v.values if isinstance(v, FiniteFunction) else v, dtype=float)
            if np.any(arr < 0.0) or not np.all(np.isfinite(arr)):
                raise ModelError(f"certificate function {name} must be finite and nonnegative")
            arr.setflags(write=False)
            arrays[name] = arr
        if c0 <= 0 or c1 <= 0:
            raise ModelError("c0 and c1 must be positive")
        object.__setattr__(self, "q", arrays["q"])
        object.__setattr__(self, "v0", arrays["v0"])
        object.__setattr__(self, "v1", arrays["v1"])
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "small_set", tuple(small_set))
        object.__setattr__(self, "c0", float(c0))
        object.__setattr__(self, "c1", float(c1))
        object.__setattr__(self, "eps", None if eps is None else float(eps))


def power_kappa(rho: float) -> Callable[[float], float]:
    """kappa(x) = x**rho, the default family of drift-modulating maps."""
    if rho <= 1.0:
        raise ModelError("power kappa needs exponent > 1 for kappa(x)/x to grow")

    def kappa(x: float) -> float:
        return float(x) ** rho

    return kappa


@dataclass(frozen=True)
class SubgeometricDriftReport:
    """Slack tables and implied bounds for the kappa-drift certificate.

    ``slack_value``/``slack_deriv`` have shape (n_grid, n_states) and hold
    the order-0 and order-1 drift slacks.  On passing instances the report
    also carries the exact stationary check pi(theta) q <= c0 per grid
    theta, the fitted Poisson growth constant a with |Gamma f| <= a (v0 + 1),
    and the implied derivative bound a * c1.
    """

    theta_grid: np.ndarray
    states: tuple
    slack_value: np.ndarray = field(repr=False)
    slack_deriv: np.ndarray = field(repr=False)
    passed: bool
    min_slack_value: float
    min_slack_deriv: float
    kappa_ok: bool
    kappa_range: tuple
    pi_q_by_theta: np.ndarray
    pi_q_bound_ok: bool
    sup_v0_on_A: float
    fitted_a: float
    derivative_bound: float
    alpha_prime: Optional[float]
    boundary_state: Optional[object]
    boundary_slack_value: Optional[float]
    boundary_slack_deriv: Optional[float]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "min_slack_value": self.min_slack_value,
            "min_slack_deriv": self.min_slack_deriv,
            "kappa_ok": self.kappa_ok,
            "kappa_range": list(self.kappa_range),
            "pi_q_by_theta": [float(v) for v in self.pi_q_by_theta],
            "pi_q_bound_ok": self.pi_q_bound_ok,
            "sup_v0_on_A": self.sup_v0_on_A,
            "fitted_a": self.fitted_a,
            "derivative_bound": self.derivative_bound,
            "alpha_prime": self.alpha_prime,
            "boundary_state": self.boundary_state,
            "boundary_slack_value": self.boundary_slack_value,
            "boundary_slack_deriv": self.boundary_slack_deriv,
        }

    def slack_rows(self):
        for gi, theta in enumerate(self.theta_grid):
            for si, state in enumerate(self.states):
                yield float(theta), state, float(self.slack_value[gi, si]), float(
                    self.slack_deriv[gi, si]
                )


def check_subgeometric_drift(
    family: ParamKernelFamily,
    cert: StationaryCertificate,
    theta_grid=None,
    grid_points: int = 21,
    f: Optional[FiniteFunction] = None,
    envelope_grid: int = DEFAULT_ENVELOPE_GRID,
    boundary_state=None,
    kappa_grid: int = 33,
) -> SubgeometricDriftReport:
    """Verify the kappa-drift pair of inequalities on a theta-grid.

    Order 0:  P(theta) v0 <= v0 - (q or 1, whichever larger) + c0 I(A).
    Order 1:  P(theta) v1 <= v1
                  - kappa( sum_y (1 or omega_eps(x,y)) (v0(y)+1) P(theta,x,y) )
                  + c1 I(A).

    kappa is validated on a log-spaced grid spanning the inner-integral
    values actually attained (kappa(x) >= x, kappa(x)/x nondecreasing);
    the report states that range.  On finite chains the implied stationary
    bound pi(theta) q <= c0 is evaluated exactly, the Poisson growth
    constant a is fitted as max |Gamma f| / (v0 + 1) (f defaults to q,
    clipped into the admissible band |f| <= q or 1), and the derivative
    bound a * c1 is compared against the exact alpha'(theta0).

    ``boundary_state`` singles out one state (e.g. the top of a truncated
    chain) whose slacks are reported separately and excluded from the
    pass/fail minimum, since truncation rewrites that row.
    """
    _check_stochastic_family(family)
    n = family.space.size
    for arr in (cert.q, cert.v0, cert.v1):
        if arr.shape[0] != n:
            raise DimensionMismatch("certificate functions must live on the family space")
    eps = cert.eps if cert.eps is not None else family.eps
    if eps > family.eps + 1e-15:
        raise ModelError("certificate band exceeds the family envelope band")
    theta0 = family.theta0
    if theta_grid is None:
        theta_grid = np.linspace(theta0 - eps, theta0 + eps, grid_points)
    theta_grid = np.asarray(theta_grid, dtype=float)

    in_A = np.zeros(n)
    a_idx = []
    for state in cert.small_set:
        if isinstance(state, (int, np.integer)) and not isinstance(state, bool):
            i = int(state)
        else:
            i = family.space.index(state)
        in_A[i] = 1.0
        a_idx.append(i)
    if not a_idx:
        raise ModelError("small set must be nonempty")

    if boundary_state is None:
        b_idx = None
    elif isinstance(boundary_state, (int, np.integer)) and not isinstance(boundary_state, bool):
        b_idx = int(boundary_state)
    else:
        b_idx = family.space.index(boundary_state)

    om = envelope(family, order=1, grid_points=envelope_grid).values
    weighting = np.maximum(1.0, om)
    q_or_one = np.maximum(cert.q, 1.0)

    slack_value = np.zeros((theta_grid.size, n))
    slack_deriv = np.zeros((theta_grid.size, n))
    pi_q = np.zeros(theta_grid.size)
    inner_values = []
    for gi, theta in enumerate(theta_grid):
        P = eval_kernel(family, float(theta))
        slack_value[gi] = cert.v0 - P.entries @ cert.v0 - q_or_one + cert.c0 * in_A
        inner = (weighting * P.entries) @ (cert.v0 + 1.0)
        inner_values.append(inner)
        kappa_of_inner = np.array([cert.kappa(float(v)) for v in inner])
        slack_deriv[gi] = cert.v1 - P.entries @ cert.v1 - kappa_of_inner + cert.c1 * in_A
        pi_q[gi] = float(stationary_distribution(P).weights @ cert.q)

    inner_all = np.concatenate(inner_values)
    lo, hi = float(np.min(inner_all)), float(np.max(inner_all))
    lo = max(lo, 1e-12)
    kappa_ok = True
    grid = np.geomspace(lo, max(hi, lo * (1 + 1e-9)), kappa_grid)
    ratios = []
    for x in grid:
        kx = float(cert.kappa(float(x)))
        if kx < x - 1e-9 * max(1.0, x):
            kappa_ok = False
        ratios.append(kx / x)
    if np.any(np.diff(ratios) < -1e-9 * max(1.0, max(np.abs(ratios)))):
        kappa_ok = False

    if b_idx is None:
        use = np.ones(n, dtype=bool)
        boundary_sv = boundary_sd = None
    else:
        use = np.ones(n, dtype=bool)
        use[b_idx] = False
        boundary_sv = float(slack_value[:, b_idx].min())
        boundary_sd = float(slack_deriv[:, b_idx].min())
    min_sv = float(slack_value[:, use].min())
    min_sd = float(slack_deriv[:, use].min())
    passed = bool(min_sv >= 0.0 and min_sd >= 0.0 and kappa_ok)

    pi_q_ok = bool(np.max(pi_q) <= cert.c0 + 1e-12 * max(1.0, cert.c0))

    if f is None:
        f_vals = cert.q.copy()
    else:
        if f.space.labels != family.space.labels:
            raise DimensionMismatch("f must live on the family space")
        f_vals = np.clip(f.values, -q_or_one, q_or_one)
    solver = FundamentalSolver(family.base)
    g = solver.poisson(f_vals)
    fitted_a = float(np.max(np.abs(g) / (cert.v0 + 1.0)))
    derivative_bound = fitted_a * cert.c1
    try:
        alpha_prime = stationary_functional_derivative(
            family, FiniteFunction(family.space, f_vals)
        )
    except (NumericalError, ModelError):
        alpha_prime = None

    return SubgeometricDriftReport(
        theta_grid=theta_grid,
        states=family.space.labels,
        slack_value=slack_value,
        slack_deriv=slack_deriv,
        passed=passed,
        min_slack_value=min_sv,
        min_slack_deriv=min_sd,
        kappa_ok=kappa_ok,
        kappa_range=(lo, hi),
        pi_q_by_theta=pi_q,
        pi_q_bound_ok=pi_q_ok,
        sup_v0_on_A=float(np.max(cert.v0[np.array(a_idx, dtype=np.intp)])),
        fitted_a=fitted_a,
        derivative_bound=derivative_bound,
        alpha_prime=alpha_prime,
        boundary_state=None if b_idx is None else family.space.labels[b_idx],
        boundary_slack_value=boundary_sv,
        boundary_slack_deriv=boundary_sd,
    )
