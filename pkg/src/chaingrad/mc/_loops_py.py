"""Pure-Python twin of the compiled Monte Carlo core.

Every function here has a bit-identical counterpart in ``_loops.pyx``:
same block-uniform consumption protocol (see :mod:`chaingrad.mc.rng`),
same expression trees, same accumulation order.  Keep the two files in
lockstep; the cross-backend equality tests enforce it.

State-dependent quantities are converted to plain Python floats before
arithmetic so both backends evaluate through the platform libm.
"""

from __future__ import annotations

from math import log

import numpy as np

from ..errors import TruncationError
from .rng import BLOCK

INTER_EXP = 0
INTER_DET = 1
INTER_TAB = 2


class _Uniforms:
    """Block-buffered uniform supply; the tail of the last block is
    discarded when the owning kernel returns."""

    __slots__ = ("gen", "block", "pos")

    def __init__(self, gen):
        self.gen = gen
        self.block = gen.random(BLOCK)
        self.pos = 0

    def take(self) -> float:
        if self.pos == BLOCK:
            self.block = self.gen.random(BLOCK)
            self.pos = 0
        u = float(self.block[self.pos])
        self.pos += 1
        return u


# -- G/G/1 (Lindley) kernels ------------------------------------------------


class _Lindley:
    """Scalar stepping of W' = max(W + V - chi, 0) with Pareto service.

    Uniform consumption per step: one draw for V, then one draw for chi
    unless interarrivals are deterministic.
    """

    __slots__ = ("alpha", "theta0", "kind", "a", "cum", "vals", "m_exp",
                 "inv_theta0", "ap1", "L")

    def __init__(self, alpha, theta0, kind, a, cum, vals):
        self.alpha = float(alpha)
        self.theta0 = float(theta0)
        self.kind = int(kind)
        self.a = float(a)
        self.cum = np.asarray(cum, dtype=float)
        self.vals = np.asarray(vals, dtype=float)
        self.m_exp = -1.0 / float(alpha)
        self.inv_theta0 = 1.0 / float(theta0)
        self.ap1 = float(alpha) + 1.0
        self.L = int(self.cum.shape[0])

    def draw_service(self, u: float) -> float:
        return ((1.0 - u) ** self.m_exp - 1.0) / self.theta0

    def draw_interarrival(self, uni: _Uniforms) -> float:
        if self.kind == INTER_EXP:
            return -log(1.0 - uni.take()) / self.a
        if self.kind == INTER_DET:
            return self.a
        u = uni.take()
        j = 0
        while j < self.L - 1 and u >= float(self.cum[j]):
            j += 1
        return float(self.vals[j])

    def step(self, w: float, uni: _Uniforms) -> float:
        v = self.draw_service(uni.take())
        chi = self.draw_interarrival(uni)
        w = w + v - chi
        if w < 0.0:
            w = 0.0
        return w

    def score0(self, v: float) -> float:
        return self.inv_theta0 - self.ap1 * v / (1.0 + self.theta0 * v)

    def density_ratio(self, theta: float, v: float) -> float:
        base = (1.0 + theta * v) / (1.0 + self.theta0 * v)
        return (theta / self.theta0) * base ** (-self.ap1)


def _f_trunc(w: float, p: float, m: float) -> float:
    fw = w ** p
    if fw > m:
        fw = m
    return fw


def lindley_ratio_cycles(alpha, theta0, kind, a, cum, vals,
                         n_cycles, p, trunc_m, gen, cap):
    """Consecutive regeneration cycles (atom {0}) of one path from 0.

    Returns (lengths, fsums): per-cycle length tau and per-cycle sum of
    min(W_j^p, m) over j = 0..tau-1.
    """
    model = _Lindley(alpha, theta0, kind, a, cum, vals)
    uni = _Uniforms(gen)
    p = float(p)
    trunc_m = float(trunc_m)
    lengths = np.empty(n_cycles)
    fsums = np.empty(n_cycles)
    w = 0.0
    for i in range(n_cycles):
        s = 0.0
        tau = 0
        while True:
            s += _f_trunc(w, p, trunc_m)
            tau += 1
            w = model.step(w, uni)
            if w == 0.0:
                break
            if tau >= cap:
                raise TruncationError(f"regeneration cycle exceeded {cap} steps")
        lengths[i] = float(tau)
        fsums[i] = s
    return lengths, fsums


def _gamma_cycle(model, uni, start, p, trunc_m, pi_f_hat, cap):
    """One regenerative estimate of the Poisson solution at ``start``."""
    w = start
    gsum = 0.0
    tau = 0
    while True:
        gsum += _f_trunc(w, p, trunc_m) - pi_f_hat
        tau += 1
        w = model.step(w, uni)
        if w == 0.0:
            break
        if tau >= cap:
            raise TruncationError(f"regeneration cycle exceeded {cap} steps")
    return gsum, tau


def lindley_gamma_cycles(alpha, theta0, kind, a, cum, vals,
                         start_x, n_cycles, p, trunc_m, pi_f_hat, gen, cap):
    """Independent cycle estimates of Gamma f_{p;m}(start_x)."""
    model = _Lindley(alpha, theta0, kind, a, cum, vals)
    uni = _Uniforms(gen)
    p, trunc_m, pi_f_hat = float(p), float(trunc_m), float(pi_f_hat)
    start_x = float(start_x)
    gsums = np.empty(n_cycles)
    lengths = np.empty(n_cycles)
    for i in range(n_cycles):
        gsum, tau = _gamma_cycle(model, uni, start_x, p, trunc_m, pi_f_hat, cap)
        gsums[i] = gsum
        lengths[i] = float(tau)
    return gsums, lengths


def lindley_stationary_deriv(alpha, theta0, kind, a, cum, vals,
                             p, trunc_m, pi_f_hat, n_outer, warmup,
                             inner_cycles, gen, cap):
    """Score-times-Poisson samples for the stationary derivative.

    Per replicate: warm up from 0, take one more transition recording the
    service score, then estimate the Poisson solution at the new state by
    ``inner_cycles`` regenerative cycles.  Returns (samples, diag) with
    diag = [sum |score|, sum inner tau, number of inner cycles].
    """
    model = _Lindley(alpha, theta0, kind, a, cum, vals)
    uni = _Uniforms(gen)
    p, trunc_m, pi_f_hat = float(p), float(trunc_m), float(pi_f_hat)
    samples = np.empty(n_outer)
    sum_abs_score = 0.0
    sum_tau = 0.0
    n_inner_total = 0
    for i in range(n_outer):
        w = 0.0
        for _ in range(warmup):
            w = model.step(w, uni)
        v = model.draw_service(uni.take())
        chi = model.draw_interarrival(uni)
        score = model.score0(v)
        w1 = w + v - chi
        if w1 < 0.0:
            w1 = 0.0
        gacc = 0.0
        for _ in range(inner_cycles):
            gsum, tau = _gamma_cycle(model, uni, w1, p, trunc_m, pi_f_hat, cap)
            gacc += gsum
            sum_tau += float(tau)
            n_inner_total += 1
        gbar = gacc / inner_cycles
        samples[i] = score * gbar
        sum_abs_score += abs(score)
    diag = np.array([sum_abs_score, sum_tau, float(n_inner_total)])
    return samples, diag


def lindley_crn_batches(alpha, theta0, h, kind, a, cum, vals,
                        p, warmup, n_batches, batch_len, gen):
    """Coupled runs at theta0 +/- h sharing all uniforms.

    The same uniform drives both service draws (V is monotone in theta, so
    the coupling is the scale coupling), and the same uniform drives both
    interarrivals.  Returns per-batch means of (W_plus^p - W_minus^p).
    """
    model = _Lindley(alpha, theta0, kind, a, cum, vals)
    uni = _Uniforms(gen)
    h = float(h)
    p = float(p)
    theta_p = model.theta0 + h
    theta_m = model.theta0 - h
    wp = 0.0
    wm = 0.0
    means = np.empty(n_batches)
    total_steps = warmup + n_batches * batch_len
    batch_acc = 0.0
    in_batch = 0
    bi = 0
    for t in range(total_steps):
        u = uni.take()
        pow_term = (1.0 - u) ** model.m_exp - 1.0
        vp = pow_term / theta_p
        vm = pow_term / theta_m
        chi = model.draw_interarrival(uni)
        wp = wp + vp - chi
        if wp < 0.0:
            wp = 0.0
        wm = wm + vm - chi
        if wm < 0.0:
            wm = 0.0
        if t >= warmup:
            batch_acc += wp ** p - wm ** p
            in_batch += 1
            if in_batch == batch_len:
                means[bi] = batch_acc / batch_len
                bi += 1
                batch_acc = 0.0
                in_batch = 0
    return means


def lindley_onestep_probe(alpha, theta0, kind, a, cum, vals,
                          p, trunc_m, pi_f_hat, x_grid, thetas,
                          n_mc, inner_cycles, gen, cap):
    """Welford moments of (density ratio at theta - 1) * Gamma-hat samples.

    For each sample, one (V, chi) pair is shared across the whole x-grid
    and theta-grid (common random numbers); the inner regenerative
    estimate is refreshed per x.  Returns (mean, M2, count) arrays of
    shape (len(x_grid), len(thetas)).
    """
    model = _Lindley(alpha, theta0, kind, a, cum, vals)
    uni = _Uniforms(gen)
    p, trunc_m, pi_f_hat = float(p), float(trunc_m), float(pi_f_hat)
    x_grid = np.asarray(x_grid, dtype=float)
    thetas = np.asarray(thetas, dtype=float)
    nx, nh = x_grid.shape[0], thetas.shape[0]
    mean = np.zeros((nx, nh))
    m2 = np.zeros((nx, nh))
    for i in range(n_mc):
        v = model.draw_service(uni.take())
        chi = model.draw_interarrival(uni)
        for xi in range(nx):
            x = float(x_grid[xi])
            w1 = x + v - chi
            if w1 < 0.0:
                w1 = 0.0
            gacc = 0.0
            for _ in range(inner_cycles):
                gsum, _tau = _gamma_cycle(model, uni, w1, p, trunc_m, pi_f_hat, cap)
                gacc += gsum
            gbar = gacc / inner_cycles
            for hi in range(nh):
                wgt = model.density_ratio(float(thetas[hi]), v) - 1.0
                val = wgt * gbar
                delta = val - float(mean[xi, hi])
                mean[xi, hi] = float(mean[xi, hi]) + delta / (i + 1)
                m2[xi, hi] = float(m2[xi, hi]) + delta * (val - float(mean[xi, hi]))
    return mean, m2, n_mc


# -- finite-alphabet (tabular) kernels ---------------------------------------


def _draw_letter(cum, L, uni):
    u = uni.take()
    j = 0
    while j < L - 1 and u >= float(cum[j]):
        j += 1
    return j


def tabular_u_star(table, cum0, f, expg, interior, x0, n_paths, gen, cap):
    """Discounted payoff to first exit, per path."""
    uni = _Uniforms(gen)
    L = int(cum0.shape[0])
    payoffs = np.empty(n_paths)
    for i in range(n_paths):
        x = int(x0)
        disc = 1.0
        acc = 0.0
        steps = 0
        while True:
            if not interior[x]:
                acc += disc * float(f[x])
                break
            acc += disc * float(f[x])
            disc *= float(expg[x])
            x = int(table[x, _draw_letter(cum0, L, uni)])
            steps += 1
            if steps >= cap:
                raise TruncationError(f"path exceeded {cap} steps before exit")
        payoffs[i] = acc
    return payoffs


def tabular_u_star_deriv(table, cum0, scores0, f, expg, interior,
                         x0, n_paths, gen, cap):
    """Score-weighted reward-to-go samples of the payoff derivative.

    Per path: each transition's score multiplies the discounted reward
    accrued from that step onward, terminal reward included.
    """
    uni = _Uniforms(gen)
    L = int(cum0.shape[0])
    out = np.empty(n_paths)
    for i in range(n_paths):
        x = int(x0)
        if not interior[x]:
            out[i] = 0.0
            continue
        disc = 1.0
        scores = []
        rewards = []
        steps = 0
        while True:
            disc *= float(expg[x])
            j = _draw_letter(cum0, L, uni)
            scores.append(float(scores0[j]))
            x = int(table[x, j])
            steps += 1
            if steps >= cap:
                raise TruncationError(f"path exceeded {cap} steps before exit")
            if interior[x]:
                rewards.append(disc * float(f[x]))
            else:
                terminal = disc * float(f[x])
                break
        tail = terminal
        deriv = scores[-1] * tail
        for mi in range(len(scores) - 2, -1, -1):
            tail += rewards[mi]
            deriv += scores[mi] * tail
        out[i] = deriv
    return out


def tabular_ratio_cycles(table, cum0, fvals, regen_state, x0,
                         n_cycles, gen, cap):
    """Consecutive regeneration cycles (atom regen_state) from x0."""
    uni = _Uniforms(gen)
    L = int(cum0.shape[0])
    lengths = np.empty(n_cycles)
    fsums = np.empty(n_cycles)
    x = int(x0)
    steps = 0
    while x != regen_state:
        x = int(table[x, _draw_letter(cum0, L, uni)])
        steps += 1
        if steps >= cap:
            raise TruncationError(f"no regeneration within {cap} steps")
    for i in range(n_cycles):
        s = 0.0
        tau = 0
        while True:
            s += float(fvals[x])
            tau += 1
            x = int(table[x, _draw_letter(cum0, L, uni)])
            if x == regen_state:
                break
            if tau >= cap:
                raise TruncationError(f"regeneration cycle exceeded {cap} steps")
        lengths[i] = float(tau)
        fsums[i] = s
    return lengths, fsums


def _tabular_gamma_cycle(table, cum0, L, fvals, regen_state, start, pi_f_hat,
                         uni, cap):
    x = int(start)
    gsum = 0.0
    tau = 0
    while True:
        gsum += float(fvals[x]) - pi_f_hat
        tau += 1
        x = int(table[x, _draw_letter(cum0, L, uni)])
        if x == regen_state:
            break
        if tau >= cap:
            raise TruncationError(f"regeneration cycle exceeded {cap} steps")
    return gsum, tau


def tabular_gamma_cycles(table, cum0, fvals, regen_state, start_x,
                         n_cycles, pi_f_hat, gen, cap):
    """Independent cycle estimates of the Poisson solution at start_x."""
    uni = _Uniforms(gen)
    L = int(cum0.shape[0])
    pi_f_hat = float(pi_f_hat)
    gsums = np.empty(n_cycles)
    lengths = np.empty(n_cycles)
    for i in range(n_cycles):
        gsum, tau = _tabular_gamma_cycle(
            table, cum0, L, fvals, regen_state, start_x, pi_f_hat, uni, cap
        )
        gsums[i] = gsum
        lengths[i] = float(tau)
    return gsums, lengths


def tabular_stationary_deriv(table, cum0, scores0, fvals, regen_state, x0,
                             pi_f_hat, n_outer, warmup, inner_cycles, gen, cap):
    """Tabular analogue of :func:`lindley_stationary_deriv`."""
    uni = _Uniforms(gen)
    L = int(cum0.shape[0])
    pi_f_hat = float(pi_f_hat)
    samples = np.empty(n_outer)
    sum_abs_score = 0.0
    sum_tau = 0.0
    n_inner_total = 0
    for i in range(n_outer):
        x = int(x0)
        for _ in range(warmup):
            x = int(table[x, _draw_letter(cum0, L, uni)])
        j = _draw_letter(cum0, L, uni)
        score = float(scores0[j])
        y = int(table[x, j])
        gacc = 0.0
        for _ in range(inner_cycles):
            gsum, tau = _tabular_gamma_cycle(
                table, cum0, L, fvals, regen_state, y, pi_f_hat, uni, cap
            )
            gacc += gsum
            sum_tau += float(tau)
            n_inner_total += 1
        samples[i] = score * (gacc / inner_cycles)
        sum_abs_score += abs(score)
    diag = np.array([sum_abs_score, sum_tau, float(n_inner_total)])
    return samples, diag
