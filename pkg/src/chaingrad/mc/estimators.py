"""Monte Carlo estimators for path expectations and their theta-derivatives.

Every estimator returns a :class:`DerivativeEstimate` whose standard error
is the sample standard deviation over independent replicates divided by
sqrt(n).  Structured recursions (tabular, Lindley) dispatch to the
selected loop backend; generic recursions run the reference Python loop
over their callables.  Replicate aggregation uses numpy's pairwise
summation in a fixed order, so results do not depend on how work would be
scheduled across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

from ..errors import ModelError, TruncationError
from ._backend import backend_name, get_backend
from .recursion import (
    LindleyRecursion,
    PayoffSpec,
    StochasticRecursion,
    TabularRecursion,
    Uniforms,
)
from .rng import RngStream

DEFAULT_CAP = 10_000_000

__all__ = [
    "DerivativeEstimate",
    "SimPath",
    "simulate_path",
    "estimate_u_star",
    "estimate_u_star_derivative",
    "estimate_stationary_mean",
    "estimate_gamma_regenerative",
    "estimate_stationary_derivative",
    "check_recursion_lyapunov",
    "RecursionLyapunovReport",
]


@dataclass(frozen=True)
class DerivativeEstimate:
    point: float
    std_error: float
    n_samples: int
    method: str
    diagnostics: dict = field(default_factory=dict)

    def agrees_with(self, value: float, k: float = 3.0) -> bool:
        """|point - value| <= k * std_error."""
        return abs(self.point - value) <= k * self.std_error


def _estimate(samples, method, **diag) -> DerivativeEstimate:
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0]
    point = float(np.mean(samples)) if n else 0.0
    se = float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return DerivativeEstimate(point, se, n, method, dict(diag))


@dataclass(frozen=True)
class SimPath:
    states: list
    noises: list

    def __len__(self) -> int:
        return len(self.states)


def simulate_path(
    rec: StochasticRecursion,
    x0,
    stop,
    rng: RngStream,
    cap: int = DEFAULT_CAP,
) -> SimPath:
    """Run one path until the stopping rule, retaining states and noises.

    ``stop`` is either an integer horizon (that many transitions) or a
    predicate on states (stop on the first state satisfying it, the start
    included).  Hitting ``cap`` raises a truncation error carrying the
    partial path.
    """
    uni = Uniforms(rng.generator())
    states = [x0]
    noises = []
    x = x0
    if isinstance(stop, (int, np.integer)):
        horizon = int(stop)
        if horizon < 0:
            raise ModelError("horizon must be nonnegative")
        steps = 0
        while steps < horizon:
            z = rec.sampler(uni)
            x = rec.update(x, z)
            noises.append(z)
            states.append(x)
            steps += 1
            if steps >= cap:
                raise TruncationError(
                    f"path cap {cap} reached", partial=SimPath(states, noises)
                )
        return SimPath(states, noises)
    steps = 0
    while not stop(x):
        z = rec.sampler(uni)
        x = rec.update(x, z)
        noises.append(z)
        states.append(x)
        steps += 1
        if steps >= cap:
            raise TruncationError(
                f"path cap {cap} reached before stopping set", partial=SimPath(states, noises)
            )
    return SimPath(states, noises)


def _require_tabular_payoff(payoff: PayoffSpec):
    if not payoff.tabular:
        raise ModelError("tabular recursions need an array-based payoff spec")


def estimate_u_star(
    rec: StochasticRecursion,
    payoff: PayoffSpec,
    x0,
    n_paths: int,
    rng: RngStream,
    cap: int = DEFAULT_CAP,
    backend=None,
) -> DerivativeEstimate:
    """Sample mean of the discounted payoff to first exit from C."""
    if isinstance(rec, TabularRecursion):
        _require_tabular_payoff(payoff)
        bk = get_backend(backend)
        payoffs = bk.tabular_u_star(
            rec.update_table,
            rec.cum0,
            payoff.f_values,
            np.exp(payoff.g_values),
            payoff.interior_mask,
            int(x0),
            int(n_paths),
            rng.generator(),
            cap,
        )
        return _estimate(payoffs, "mc-u-star", backend=backend_name(bk))
    uni = Uniforms(rng.generator())
    payoffs = np.empty(n_paths)
    for i in range(n_paths):
        x = x0
        disc = 1.0
        acc = 0.0
        steps = 0
        while True:
            if not payoff.interior(x):
                acc += disc * payoff.reward(x)
                break
            acc += disc * payoff.reward(x)
            disc *= math.exp(payoff.discount(x))
            x = rec.update(x, rec.sampler(uni))
            steps += 1
            if steps >= cap:
                raise TruncationError(f"path cap {cap} reached before exit")
        payoffs[i] = acc
    return _estimate(payoffs, "mc-u-star", backend="generic")


def estimate_u_star_derivative(
    rec: StochasticRecursion,
    payoff: PayoffSpec,
    x0,
    n_paths: int,
    rng: RngStream,
    cap: int = DEFAULT_CAP,
    backend=None,
) -> DerivativeEstimate:
    """Likelihood-ratio derivative of the discounted payoff.

    Per path, each transition's score at theta0 multiplies the discounted
    reward accrued from that transition onward (terminal reward included);
    unbiasedness is validated against the exact finite-state solver rather
    than assumed.
    """
    if isinstance(rec, TabularRecursion):
        _require_tabular_payoff(payoff)
        bk = get_backend(backend)
        derivs = bk.tabular_u_star_deriv(
            rec.update_table,
            rec.cum0,
            rec.letter_scores,
            payoff.f_values,
            np.exp(payoff.g_values),
            payoff.interior_mask,
            int(x0),
            int(n_paths),
            rng.generator(),
            cap,
        )
        return _estimate(derivs, "mc-u-star-deriv", backend=backend_name(bk))
    uni = Uniforms(rng.generator())
    theta0 = rec.theta0
    out = np.empty(n_paths)
    for i in range(n_paths):
        x = x0
        if not payoff.interior(x):
            out[i] = 0.0
            continue
        disc = 1.0
        scores = []
        rewards = []
        steps = 0
        while True:
            disc *= math.exp(payoff.discount(x))
            z = rec.sampler(uni)
            scores.append(rec.score(theta0, z))
            x = rec.update(x, z)
            steps += 1
            if steps >= cap:
                raise TruncationError(f"path cap {cap} reached before exit")
            if payoff.interior(x):
                rewards.append(disc * payoff.reward(x))
            else:
                terminal = disc * payoff.reward(x)
                break
        tail = terminal
        deriv = scores[-1] * tail
        for mi in range(len(scores) - 2, -1, -1):
            tail += rewards[mi]
            deriv += scores[mi] * tail
        out[i] = deriv
    return _estimate(out, "mc-u-star-deriv", backend="generic")


def _ratio_estimate(lengths, fsums, method, **diag) -> DerivativeEstimate:
    lengths = np.asarray(lengths, dtype=float)
    fsums = np.asarray(fsums, dtype=float)
    n = lengths.shape[0]
    mean_len = float(np.mean(lengths))
    point = float(np.sum(fsums) / np.sum(lengths))
    centered = fsums - point * lengths
    se = (
        float(np.std(centered, ddof=1) / (math.sqrt(n) * mean_len)) if n > 1 else 0.0
    )
    return _estimate_like(point, se, n, method, mean_cycle_length=mean_len, **diag)


def _estimate_like(point, se, n, method, **diag) -> DerivativeEstimate:
    return DerivativeEstimate(point, se, int(n), method, dict(diag))


def _lindley_args(rec: LindleyRecursion):
    return rec.encoded()


def estimate_stationary_mean(
    rec: StochasticRecursion,
    f: Callable[[Any], float],
    regen,
    x0,
    n_cycles: int,
    rng: RngStream,
    cap: int = DEFAULT_CAP,
    backend=None,
    p_exponent: Optional[float] = None,
    trunc_m: float = math.inf,
) -> DerivativeEstimate:
    """Regenerative ratio estimate of the stationary mean of f.

    Cycles are split at visits to the regeneration atom (``regen``: a
    state index for tabular recursions, ignored for Lindley where the atom
    is W = 0, or a predicate for generic recursions).  The point estimate
    is (sum of cycle sums) / (sum of cycle lengths); the standard error is
    the delta-method error of that ratio.  For Lindley recursions f is
    fixed to min(w**p, m) with p = ``p_exponent``.
    """
    if isinstance(rec, LindleyRecursion):
        if p_exponent is None:
            raise ModelError("Lindley stationary mean needs p_exponent")
        bk = get_backend(backend)
        alpha, theta0, kind, a, cum, vals = _lindley_args(rec)
        lengths, fsums = bk.lindley_ratio_cycles(
            alpha, theta0, kind, a, cum, vals,
            int(n_cycles), float(p_exponent), float(trunc_m), rng.generator(), cap,
        )
        return _ratio_estimate(lengths, fsums, "regenerative-ratio",
                               backend=backend_name(bk))
    if isinstance(rec, TabularRecursion):
        bk = get_backend(backend)
        fvals = np.array([f(x) for x in range(rec.n_states)], dtype=float)
        lengths, fsums = bk.tabular_ratio_cycles(
            rec.update_table, rec.cum0, fvals, int(regen), int(x0),
            int(n_cycles), rng.generator(), cap,
        )
        return _ratio_estimate(lengths, fsums, "regenerative-ratio",
                               backend=backend_name(bk))
    uni = Uniforms(rng.generator())
    x = x0
    steps = 0
    while not regen(x):
        x = rec.update(x, rec.sampler(uni))
        steps += 1
        if steps >= cap:
            raise TruncationError(f"no regeneration within {cap} steps")
    lengths = np.empty(n_cycles)
    fsums = np.empty(n_cycles)
    for i in range(n_cycles):
        s = 0.0
        tau = 0
        while True:
            s += f(x)
            tau += 1
            x = rec.update(x, rec.sampler(uni))
            if regen(x):
                break
            if tau >= cap:
                raise TruncationError(f"regeneration cycle exceeded {cap} steps")
        lengths[i] = float(tau)
        fsums[i] = s
    return _ratio_estimate(lengths, fsums, "regenerative-ratio", backend="generic")


def _pi_f_value(pi_f_estimate):
    if isinstance(pi_f_estimate, DerivativeEstimate):
        return pi_f_estimate.point, pi_f_estimate.std_error
    value, se = pi_f_estimate
    return float(value), float(se)


def estimate_gamma_regenerative(
    rec: StochasticRecursion,
    f: Callable[[Any], float],
    regen,
    pi_f_estimate,
    x,
    n_cycles: int,
    rng: RngStream,
    cap: int = DEFAULT_CAP,
    backend=None,
    p_exponent: Optional[float] = None,
    trunc_m: float = math.inf,
) -> DerivativeEstimate:
    """Regenerative estimate of the Poisson solution at x.

    Averages sum_{j < tau} (f(X_j) - pi_f_hat) over independent cycles
    started at x; the plug-in pi_f estimate biases each cycle by about
    SE(pi_f_hat) * E tau, reported as diagnostics['plug_in_bias'].  The
    cycle normalization differs from pi g = 0 by a constant, so compare
    differences g(x) - g(x'), which are normalization-free.
    """
    pi_f, pi_f_se = _pi_f_value(pi_f_estimate)
    if isinstance(rec, LindleyRecursion):
        if p_exponent is None:
            raise ModelError("Lindley gamma estimation needs p_exponent")
        bk = get_backend(backend)
        alpha, theta0, kind, a, cum, vals = _lindley_args(rec)
        gsums, lengths = bk.lindley_gamma_cycles(
            alpha, theta0, kind, a, cum, vals,
            float(x), int(n_cycles), float(p_exponent), float(trunc_m),
            pi_f, rng.generator(), cap,
        )
        label = backend_name(bk)
    elif isinstance(rec, TabularRecursion):
        bk = get_backend(backend)
        fvals = np.array([f(s) for s in range(rec.n_states)], dtype=float)
        gsums, lengths = bk.tabular_gamma_cycles(
            rec.update_table, rec.cum0, fvals, int(regen), int(x),
            int(n_cycles), pi_f, rng.generator(), cap,
        )
        label = backend_name(bk)
    else:
        uni = Uniforms(rng.generator())
        gsums = np.empty(n_cycles)
        lengths = np.empty(n_cycles)
        for i in range(n_cycles):
            state = x
            gsum = 0.0
            tau = 0
            while True:
                gsum += f(state) - pi_f
                tau += 1
                state = rec.update(state, rec.sampler(uni))
                if regen(state):
                    break
                if tau >= cap:
                    raise TruncationError(f"regeneration cycle exceeded {cap} steps")
            gsums[i] = gsum
            lengths[i] = float(tau)
        label = "generic"
    mean_tau = float(np.mean(lengths))
    est = _estimate(gsums, "gamma-regenerative", backend=label)
    diag = dict(est.diagnostics)
    diag.update(mean_cycle_length=mean_tau, plug_in_bias=pi_f_se * mean_tau)
    return DerivativeEstimate(est.point, est.std_error, est.n_samples, est.method, diag)


def estimate_stationary_derivative(
    rec: StochasticRecursion,
    f: Callable[[Any], float],
    regen,
    n_outer: int,
    n_cycles: int,
    warmup: int,
    rng: RngStream,
    x0=None,
    inner_cycles: int = 1,
    cap: int = DEFAULT_CAP,
    backend=None,
    p_exponent: Optional[float] = None,
    trunc_m: float = math.inf,
) -> DerivativeEstimate:
    """Two-phase nested estimator of d/dtheta of the stationary mean of f.

    Phase 1 estimates pi f by the regenerative ratio over ``n_cycles``
    cycles.  Phase 2 runs ``n_outer`` independent replicates: warm up from
    the regeneration atom for ``warmup`` transitions, take one more
    transition recording its noise score, then estimate the Poisson
    solution at the landing state from ``inner_cycles`` regenerative
    cycles; the replicate's sample is score times that estimate.  The
    plug-in and warmup biases are not corrected, only reported
    (diagnostics: pi_f, pi_f_se, inner_bias, warmup).
    """
    if x0 is None:
        x0 = 0 if isinstance(rec, TabularRecursion) else 0.0
    pi_est = estimate_stationary_mean(
        rec, f, regen, x0, n_cycles, rng.child(0), cap=cap, backend=backend,
        p_exponent=p_exponent, trunc_m=trunc_m,
    )
    pi_f, pi_f_se = pi_est.point, pi_est.std_error
    gen = rng.child(1).generator()
    if isinstance(rec, LindleyRecursion):
        bk = get_backend(backend)
        alpha, theta0, kind, a, cum, vals = _lindley_args(rec)
        samples, diag_arr = bk.lindley_stationary_deriv(
            alpha, theta0, kind, a, cum, vals,
            float(p_exponent), float(trunc_m), pi_f,
            int(n_outer), int(warmup), int(inner_cycles), gen, cap,
        )
        label = backend_name(bk)
    elif isinstance(rec, TabularRecursion):
        bk = get_backend(backend)
        fvals = np.array([f(s) for s in range(rec.n_states)], dtype=float)
        samples, diag_arr = bk.tabular_stationary_deriv(
            rec.update_table, rec.cum0, rec.letter_scores, fvals, int(regen),
            int(x0), pi_f, int(n_outer), int(warmup), int(inner_cycles), gen, cap,
        )
        label = backend_name(bk)
    else:
        uni = Uniforms(gen)
        theta0 = rec.theta0
        samples = np.empty(n_outer)
        sum_abs_score = 0.0
        sum_tau = 0.0
        n_inner_total = 0
        for i in range(n_outer):
            x = x0
            for _ in range(warmup):
                x = rec.update(x, rec.sampler(uni))
            z = rec.sampler(uni)
            score = rec.score(theta0, z)
            y = rec.update(x, z)
            gacc = 0.0
            for _ in range(inner_cycles):
                state = y
                gsum = 0.0
                tau = 0
                while True:
                    gsum += f(state) - pi_f
                    tau += 1
                    state = rec.update(state, rec.sampler(uni))
                    if regen(state):
                        break
                    if tau >= cap:
                        raise TruncationError(
                            f"regeneration cycle exceeded {cap} steps"
                        )
                gacc += gsum
                sum_tau += float(tau)
                n_inner_total += 1
            samples[i] = score * (gacc / inner_cycles)
            sum_abs_score += abs(score)
        diag_arr = np.array([sum_abs_score, sum_tau, float(n_inner_total)])
        label = "generic"
    mean_abs_score = float(diag_arr[0]) / n_outer
    mean_inner_tau = float(diag_arr[1]) / max(1.0, float(diag_arr[2]))
    est = _estimate(samples, "lr-stationary-deriv", backend=label)
    diag = dict(est.diagnostics)
    diag.update(
        pi_f=pi_f,
        pi_f_se=pi_f_se,
        mean_abs_score=mean_abs_score,
        mean_inner_tau=mean_inner_tau,
        inner_bias=mean_abs_score * pi_f_se * mean_inner_tau,
        warmup=warmup,
    )
    return DerivativeEstimate(est.point, est.std_error, est.n_samples, est.method, diag)


# -- Monte Carlo drift checking ---------------------------------------------


@dataclass(frozen=True)
class ProbeResult:
    state: Any
    theta: float
    slack: float
    std_error: float
    verdict: str  # pass / fail / inconclusive


@dataclass(frozen=True)
class RecursionLyapunovReport:
    value_rows: tuple  # ProbeResult per (probe, theta) for the value drift
    deriv_rows: tuple  # ProbeResult per probe for the envelope drift
    n_mc: int

    @property
    def verdict(self) -> str:
        verdicts = {r.verdict for r in self.value_rows} | {
            r.verdict for r in self.deriv_rows
        }
        if "fail" in verdicts:
            return "fail"
        if "inconclusive" in verdicts:
            return "inconclusive"
        return "pass"

    def to_dict(self) -> dict:
        def rows(rs):
            return [
                {
                    "state": r.state,
                    "theta": r.theta,
                    "slack": r.slack,
                    "std_error": r.std_error,
                    "verdict": r.verdict,
                }
                for r in rs
            ]

        return {
            "verdict": self.verdict,
            "n_mc": self.n_mc,
            "value_drift": rows(self.value_rows),
            "derivative_drift": rows(self.deriv_rows),
        }


def _verdict(slack: float, se: float) -> str:
    if slack > 3.0 * se:
        return "pass"
    if slack < -3.0 * se:
        return "fail"
    return "inconclusive"


def check_recursion_lyapunov(
    rec: StochasticRecursion,
    v0: Callable[[Any], float],
    v1: Callable[[Any], float],
    payoff: PayoffSpec,
    theta_grid,
    n_mc: int,
    probes,
    rng: RngStream,
) -> RecursionLyapunovReport:
    """Monte Carlo check of the recursion-form drift inequalities.

    At each probe state x and band theta, estimates the slack of the value
    drift  E[v0(r(x,Z)) p(theta,Z); r(x,Z) in C] <= v0(x) - |f~(theta,x)|
    and of the envelope drift for v1 (theta-free, using the score
    envelope sup |p'| over the band).  The discount factor exp(g(x))
    multiplies the one-step expectations.  A probe passes when the slack
    exceeds 3 standard errors, fails below -3, and is inconclusive when 0
    sits within 3 SE.
    """
    theta_grid = np.asarray(theta_grid, dtype=float)
    uni = Uniforms(rng.generator())
    value_rows = []
    deriv_rows = []
    for x in probes:
        zs = [rec.sampler(uni) for _ in range(n_mc)]
        ys = [rec.update(x, z) for z in zs]
        ins = np.array([payoff.interior(y) for y in ys], dtype=bool)
        v0y = np.array([v0(y) if ins[i] else 0.0 for i, y in enumerate(ys)])
        v1y = np.array([v1(y) if ins[i] else 0.0 for i, y in enumerate(ys)])
        fy = np.array([0.0 if ins[i] else payoff.reward(y) for i, y in enumerate(ys)])
        env = np.array([rec.envelope_of(z) for z in zs])
        eg = math.exp(payoff.discount(x))
        fx = payoff.reward(x)

        for theta in theta_grid:
            pw = np.array([rec.density_ratio(float(theta), z) for z in zs])
            a = eg * v0y * pw
            b = eg * fy * pw
            mean_a, se_a = float(np.mean(a)), float(np.std(a, ddof=1) / math.sqrt(n_mc))
            mean_b, se_b = float(np.mean(b)), float(np.std(b, ddof=1) / math.sqrt(n_mc))
            slack = v0(x) - abs(fx + mean_b) - mean_a
            se = math.sqrt(se_a**2 + se_b**2)
            value_rows.append(
                ProbeResult(x, float(theta), slack, se, _verdict(slack, se))
            )

        c = eg * (v1y + v0y * env + np.abs(fy) * env)
        mean_c, se_c = float(np.mean(c)), float(np.std(c, ddof=1) / math.sqrt(n_mc))
        slack1 = v1(x) - mean_c
        deriv_rows.append(ProbeResult(x, rec.theta0, slack1, se_c, _verdict(slack1, se_c)))
    return RecursionLyapunovReport(tuple(value_rows), tuple(deriv_rows), n_mc)
