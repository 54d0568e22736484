# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled Monte Carlo core.

Bit-identical twin of ``_loops_py``: same block-uniform protocol, same
expression trees, same accumulation order.  Any change here must be
mirrored there (the cross-backend equality tests compare outputs exactly).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, log, pow

from chaingrad.errors import TruncationError
from chaingrad.mc.rng import BLOCK

cnp.import_array()

cdef Py_ssize_t _BLOCK = BLOCK

cdef int INTER_EXP = 0
cdef int INTER_DET = 1
cdef int INTER_TAB = 2


cdef class _Uniforms:
    cdef object gen
    cdef double[::1] block
    cdef Py_ssize_t pos

    def __init__(self, gen):
        self.gen = gen
        self.block = gen.random(_BLOCK)
        self.pos = 0

    cdef inline double take(self):
        if self.pos == _BLOCK:
            self.block = self.gen.random(_BLOCK)
            self.pos = 0
        cdef double u = self.block[self.pos]
        self.pos += 1
        return u


cdef class _Lindley:
    cdef public double alpha, theta0, a, m_exp, inv_theta0, ap1
    cdef public int kind
    cdef double[::1] cum
    cdef double[::1] vals
    cdef Py_ssize_t L

    def __init__(self, alpha, theta0, kind, a, cum, vals):
        self.alpha = alpha
        self.theta0 = theta0
        self.kind = kind
        self.a = a
        self.cum = np.ascontiguousarray(cum, dtype=np.float64)
        self.vals = np.ascontiguousarray(vals, dtype=np.float64)
        self.m_exp = -1.0 / self.alpha
        self.inv_theta0 = 1.0 / self.theta0
        self.ap1 = self.alpha + 1.0
        self.L = self.cum.shape[0]

    cdef inline double draw_service(self, double u):
        return (pow(1.0 - u, self.m_exp) - 1.0) / self.theta0

    cdef inline double draw_interarrival(self, _Uniforms uni):
        cdef double u
        cdef Py_ssize_t j
        if self.kind == INTER_EXP:
            return -log(1.0 - uni.take()) / self.a
        if self.kind == INTER_DET:
            return self.a
        u = uni.take()
        j = 0
        while j < self.L - 1 and u >= self.cum[j]:
            j += 1
        return self.vals[j]

    cdef inline double step(self, double w, _Uniforms uni):
        cdef double v = self.draw_service(uni.take())
        cdef double chi = self.draw_interarrival(uni)
        w = w + v - chi
        if w < 0.0:
            w = 0.0
        return w

    cdef inline double score0(self, double v):
        return self.inv_theta0 - self.ap1 * v / (1.0 + self.theta0 * v)

    cdef inline double density_ratio(self, double theta, double v):
        cdef double base = (1.0 + theta * v) / (1.0 + self.theta0 * v)
        return (theta / self.theta0) * pow(base, -self.ap1)


cdef inline double _f_trunc(double w, double p, double m):
    cdef double fw = pow(w, p)
    if fw > m:
        fw = m
    return fw


def lindley_ratio_cycles(alpha, theta0, kind, a, cum, vals,
                         n_cycles, p, trunc_m, gen, cap):
    cdef _Lindley model = _Lindley(alpha, theta0, kind, a, cum, vals)
    cdef _Uniforms uni = _Uniforms(gen)
    cdef double pp = p
    cdef double mm = trunc_m
    cdef long long ncap = cap
    cdef Py_ssize_t n = n_cycles
    lengths_arr = np.empty(n)
    fsums_arr = np.empty(n)
    cdef double[::1] lengths = lengths_arr
    cdef double[::1] fsums = fsums_arr
    cdef double w = 0.0
    cdef double s
    cdef long long tau
    cdef Py_ssize_t i
    for i in range(n):
        s = 0.0
        tau = 0
        while True:
            s += _f_trunc(w, pp, mm)
            tau += 1
            w = model.step(w, uni)
            if w == 0.0:
                break
            if tau >= ncap:
                raise TruncationError(f"regeneration cycle exceeded {cap} steps")
        lengths[i] = <double>tau
        fsums[i] = s
    return lengths_arr, fsums_arr


cdef double _gamma_cycle(_Lindley model, _Uniforms uni, double start,
                         double p, double trunc_m, double pi_f_hat,
                         long long cap, long long* tau_out) except? -1e308:
    cdef double w = start
    cdef double gsum = 0.0
    cdef long long tau = 0
    while True:
        gsum += _f_trunc(w, p, trunc_m) - pi_f_hat
        tau += 1
        w = model.step(w, uni)
        if w == 0.0:
            break
        if tau >= cap:
            raise TruncationError(f"regeneration cycle exceeded {cap} steps")
    tau_out[0] = tau
    return gsum


def lindley_gamma_cycles(alpha, theta0, kind, a, cum, vals,
                         start_x, n_cycles, p, trunc_m, pi_f_hat, gen, cap):
    cdef _Lindley model = _Lindley(alpha, theta0, kind, a, cum, vals)
    cdef _Uniforms uni = _Uniforms(gen)
    cdef double pp = p
    cdef double mm = trunc_m
    cdef double pf = pi_f_hat
    cdef double sx = start_x
    cdef long long ncap = cap
    cdef Py_ssize_t n = n_cycles
    gsums_arr = np.empty(n)
    lengths_arr = np.empty(n)
    cdef double[::1] gsums = gsums_arr
    cdef double[::1] lengths = lengths_arr
    cdef long long tau
    cdef Py_ssize_t i
    for i in range(n):
        gsums[i] = _gamma_cycle(model, uni, sx, pp, mm, pf, ncap, &tau)
        lengths[i] = <double>tau
    return gsums_arr, lengths_arr


def lindley_stationary_deriv(alpha, theta0, kind, a, cum, vals,
                             p, trunc_m, pi_f_hat, n_outer, warmup,
                             inner_cycles, gen, cap):
    cdef _Lindley model = _Lindley(alpha, theta0, kind, a, cum, vals)
    cdef _Uniforms uni = _Uniforms(gen)
    cdef double pp = p
    cdef double mm = trunc_m
    cdef double pf = pi_f_hat
    cdef long long ncap = cap
    cdef Py_ssize_t n = n_outer
    cdef Py_ssize_t nw = warmup
    cdef Py_ssize_t nin = inner_cycles
    samples_arr = np.empty(n)
    cdef double[::1] samples = samples_arr
    cdef double sum_abs_score = 0.0
    cdef double sum_tau = 0.0
    cdef long long n_inner_total = 0
    cdef double w, v, chi, score, w1, gacc, gbar
    cdef long long tau
    cdef Py_ssize_t i, t, k
    for i in range(n):
        w = 0.0
        for t in range(nw):
            w = model.step(w, uni)
        v = model.draw_service(uni.take())
        chi = model.draw_interarrival(uni)
        score = model.score0(v)
        w1 = w + v - chi
        if w1 < 0.0:
            w1 = 0.0
        gacc = 0.0
        for k in range(nin):
            gacc += _gamma_cycle(model, uni, w1, pp, mm, pf, ncap, &tau)
            sum_tau += <double>tau
            n_inner_total += 1
        gbar = gacc / <double>nin
        samples[i] = score * gbar
        sum_abs_score += fabs(score)
    diag = np.array([sum_abs_score, sum_tau, <double>n_inner_total])
    return samples_arr, diag


def lindley_crn_batches(alpha, theta0, h, kind, a, cum, vals,
                        p, warmup, n_batches, batch_len, gen):
    cdef _Lindley model = _Lindley(alpha, theta0, kind, a, cum, vals)
    cdef _Uniforms uni = _Uniforms(gen)
    cdef double hh = h
    cdef double pp = p
    cdef double theta_p = model.theta0 + hh
    cdef double theta_m = model.theta0 - hh
    cdef Py_ssize_t nw = warmup
    cdef Py_ssize_t nb = n_batches
    cdef Py_ssize_t bl = batch_len
    means_arr = np.empty(nb)
    cdef double[::1] means = means_arr
    cdef double wp = 0.0
    cdef double wm = 0.0
    cdef double batch_acc = 0.0
    cdef Py_ssize_t in_batch = 0
    cdef Py_ssize_t bi = 0
    cdef Py_ssize_t total_steps = nw + nb * bl
    cdef double u, pow_term, vp, vm, chi
    cdef Py_ssize_t t
    for t in range(total_steps):
        u = uni.take()
        pow_term = pow(1.0 - u, model.m_exp) - 1.0
        vp = pow_term / theta_p
        vm = pow_term / theta_m
        chi = model.draw_interarrival(uni)
        wp = wp + vp - chi
        if wp < 0.0:
            wp = 0.0
        wm = wm + vm - chi
        if wm < 0.0:
            wm = 0.0
        if t >= nw:
            batch_acc += pow(wp, pp) - pow(wm, pp)
            in_batch += 1
            if in_batch == bl:
                means[bi] = batch_acc / <double>bl
                bi += 1
                batch_acc = 0.0
                in_batch = 0
    return means_arr


def lindley_onestep_probe(alpha, theta0, kind, a, cum, vals,
                          p, trunc_m, pi_f_hat, x_grid, thetas,
                          n_mc, inner_cycles, gen, cap):
    cdef _Lindley model = _Lindley(alpha, theta0, kind, a, cum, vals)
    cdef _Uniforms uni = _Uniforms(gen)
    cdef double pp = p
    cdef double mm = trunc_m
    cdef double pf = pi_f_hat
    cdef long long ncap = cap
    cdef double[::1] xs = np.ascontiguousarray(x_grid, dtype=np.float64)
    cdef double[::1] ths = np.ascontiguousarray(thetas, dtype=np.float64)
    cdef Py_ssize_t nx = xs.shape[0]
    cdef Py_ssize_t nh = ths.shape[0]
    cdef Py_ssize_t n = n_mc
    cdef Py_ssize_t nin = inner_cycles
    mean_arr = np.zeros((nx, nh))
    m2_arr = np.zeros((nx, nh))
    cdef double[:, ::1] mean = mean_arr
    cdef double[:, ::1] m2 = m2_arr
    cdef double v, chi, x, w1, gacc, gbar, wgt, val, delta
    cdef long long tau
    cdef Py_ssize_t i, xi, hi, k
    for i in range(n):
        v = model.draw_service(uni.take())
        chi = model.draw_interarrival(uni)
        for xi in range(nx):
            x = xs[xi]
            w1 = x + v - chi
            if w1 < 0.0:
                w1 = 0.0
            gacc = 0.0
            for k in range(nin):
                gacc += _gamma_cycle(model, uni, w1, pp, mm, pf, ncap, &tau)
            gbar = gacc / <double>nin
            for hi in range(nh):
                wgt = model.density_ratio(ths[hi], v) - 1.0
                val = wgt * gbar
                delta = val - mean[xi, hi]
                mean[xi, hi] = mean[xi, hi] + delta / <double>(i + 1)
                m2[xi, hi] = m2[xi, hi] + delta * (val - mean[xi, hi])
    return mean_arr, m2_arr, n_mc


# -- finite-alphabet (tabular) kernels ---------------------------------------


cdef inline Py_ssize_t _draw_letter(double[::1] cum, Py_ssize_t L, _Uniforms uni):
    cdef double u = uni.take()
    cdef Py_ssize_t j = 0
    while j < L - 1 and u >= cum[j]:
        j += 1
    return j


def tabular_u_star(table, cum0, f, expg, interior, x0, n_paths, gen, cap):
    cdef long[:, ::1] tab = np.ascontiguousarray(table, dtype=np.int_)
    cdef double[::1] cum = np.ascontiguousarray(cum0, dtype=np.float64)
    cdef double[::1] fv = np.ascontiguousarray(f, dtype=np.float64)
    cdef double[::1] eg = np.ascontiguousarray(expg, dtype=np.float64)
    cdef cnp.uint8_t[::1] inter = np.ascontiguousarray(interior, dtype=np.uint8)
    cdef _Uniforms uni = _Uniforms(gen)
    cdef Py_ssize_t L = cum.shape[0]
    cdef Py_ssize_t n = n_paths
    cdef long long ncap = cap
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, x
    cdef double disc, acc
    cdef long long steps
    for i in range(n):
        x = x0
        disc = 1.0
        acc = 0.0
        steps = 0
        while True:
            if not inter[x]:
                acc += disc * fv[x]
                break
            acc += disc * fv[x]
            disc *= eg[x]
            x = tab[x, _draw_letter(cum, L, uni)]
            steps += 1
            if steps >= ncap:
                raise TruncationError(f"path exceeded {cap} steps before exit")
        out[i] = acc
    return out_arr


def tabular_u_star_deriv(table, cum0, scores0, f, expg, interior,
                         x0, n_paths, gen, cap):
    cdef long[:, ::1] tab = np.ascontiguousarray(table, dtype=np.int_)
    cdef double[::1] cum = np.ascontiguousarray(cum0, dtype=np.float64)
    cdef double[::1] sc0 = np.ascontiguousarray(scores0, dtype=np.float64)
    cdef double[::1] fv = np.ascontiguousarray(f, dtype=np.float64)
    cdef double[::1] eg = np.ascontiguousarray(expg, dtype=np.float64)
    cdef cnp.uint8_t[::1] inter = np.ascontiguousarray(interior, dtype=np.uint8)
    cdef _Uniforms uni = _Uniforms(gen)
    cdef Py_ssize_t L = cum.shape[0]
    cdef Py_ssize_t n = n_paths
    cdef long long ncap = cap
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t buf_size = 1024
    sc_buf_arr = np.empty(buf_size)
    rw_buf_arr = np.empty(buf_size)
    cdef double[::1] sc_buf = sc_buf_arr
    cdef double[::1] rw_buf = rw_buf_arr
    cdef Py_ssize_t i, x, j, m, n_rw, mi
    cdef double disc, terminal, tail, deriv
    for i in range(n):
        x = x0
        if not inter[x]:
            out[i] = 0.0
            continue
        disc = 1.0
        m = 0
        n_rw = 0
        while True:
            disc *= eg[x]
            j = _draw_letter(cum, L, uni)
            if m == buf_size:
                buf_size *= 2
                new_sc = np.empty(buf_size)
                new_rw = np.empty(buf_size)
                new_sc[: m] = sc_buf_arr[: m]
                new_rw[: m] = rw_buf_arr[: m]
                sc_buf_arr, rw_buf_arr = new_sc, new_rw
                sc_buf, rw_buf = sc_buf_arr, rw_buf_arr
            sc_buf[m] = sc0[j]
            x = tab[x, j]
            m += 1
            if m >= ncap:
                raise TruncationError(f"path exceeded {cap} steps before exit")
            if inter[x]:
                rw_buf[n_rw] = disc * fv[x]
                n_rw += 1
            else:
                terminal = disc * fv[x]
                break
        tail = terminal
        deriv = sc_buf[m - 1] * tail
        for mi in range(m - 2, -1, -1):
            tail += rw_buf[mi]
            deriv += sc_buf[mi] * tail
        out[i] = deriv
    return out_arr


def tabular_ratio_cycles(table, cum0, fvals, regen_state, x0,
                         n_cycles, gen, cap):
    cdef long[:, ::1] tab = np.ascontiguousarray(table, dtype=np.int_)
    cdef double[::1] cum = np.ascontiguousarray(cum0, dtype=np.float64)
    cdef double[::1] fv = np.ascontiguousarray(fvals, dtype=np.float64)
    cdef _Uniforms uni = _Uniforms(gen)
    cdef Py_ssize_t L = cum.shape[0]
    cdef Py_ssize_t n = n_cycles
    cdef Py_ssize_t r0 = regen_state
    cdef long long ncap = cap
    lengths_arr = np.empty(n)
    fsums_arr = np.empty(n)
    cdef double[::1] lengths = lengths_arr
    cdef double[::1] fsums = fsums_arr
    cdef Py_ssize_t x = x0
    cdef long long steps = 0
    cdef long long tau
    cdef double s
    cdef Py_ssize_t i
    while x != r0:
        x = tab[x, _draw_letter(cum, L, uni)]
        steps += 1
        if steps >= ncap:
            raise TruncationError(f"no regeneration within {cap} steps")
    for i in range(n):
        s = 0.0
        tau = 0
        while True:
            s += fv[x]
            tau += 1
            x = tab[x, _draw_letter(cum, L, uni)]
            if x == r0:
                break
            if tau >= ncap:
                raise TruncationError(f"regeneration cycle exceeded {cap} steps")
        lengths[i] = <double>tau
        fsums[i] = s
    return lengths_arr, fsums_arr


cdef double _tabular_gamma_cycle(long[:, ::1] tab, double[::1] cum,
                                 Py_ssize_t L, double[::1] fv,
                                 Py_ssize_t r0, Py_ssize_t start,
                                 double pi_f_hat, _Uniforms uni,
                                 long long cap, long long* tau_out) except? -1e308:
    cdef Py_ssize_t x = start
    cdef double gsum = 0.0
    cdef long long tau = 0
    while True:
        gsum += fv[x] - pi_f_hat
        tau += 1
        x = tab[x, _draw_letter(cum, L, uni)]
        if x == r0:
            break
        if tau >= cap:
            raise TruncationError(f"regeneration cycle exceeded {cap} steps")
    tau_out[0] = tau
    return gsum


def tabular_gamma_cycles(table, cum0, fvals, regen_state, start_x,
                         n_cycles, pi_f_hat, gen, cap):
    cdef long[:, ::1] tab = np.ascontiguousarray(table, dtype=np.int_)
    cdef double[::1] cum = np.ascontiguousarray(cum0, dtype=np.float64)
    cdef double[::1] fv = np.ascontiguousarray(fvals, dtype=np.float64)
    cdef _Uniforms uni = _Uniforms(gen)
    cdef Py_ssize_t L = cum.shape[0]
    cdef Py_ssize_t n = n_cycles
    cdef Py_ssize_t r0 = regen_state
    cdef Py_ssize_t sx = start_x
    cdef double pf = pi_f_hat
    cdef long long ncap = cap
    gsums_arr = np.empty(n)
    lengths_arr = np.empty(n)
    cdef double[::1] gsums = gsums_arr
    cdef double[::1] lengths = lengths_arr
    cdef long long tau
    cdef Py_ssize_t i
    for i in range(n):
        gsums[i] = _tabular_gamma_cycle(tab, cum, L, fv, r0, sx, pf, uni, ncap, &tau)
        lengths[i] = <double>tau
    return gsums_arr, lengths_arr


def tabular_stationary_deriv(table, cum0, scores0, fvals, regen_state, x0,
                             pi_f_hat, n_outer, warmup, inner_cycles, gen, cap):
    cdef long[:, ::1] tab = np.ascontiguousarray(table, dtype=np.int_)
    cdef double[::1] cum = np.ascontiguousarray(cum0, dtype=np.float64)
    cdef double[::1] sc0 = np.ascontiguousarray(scores0, dtype=np.float64)
    cdef double[::1] fv = np.ascontiguousarray(fvals, dtype=np.float64)
    cdef _Uniforms uni = _Uniforms(gen)
    cdef Py_ssize_t L = cum.shape[0]
    cdef Py_ssize_t n = n_outer
    cdef Py_ssize_t nw = warmup
    cdef Py_ssize_t nin = inner_cycles
    cdef Py_ssize_t r0 = regen_state
    cdef double pf = pi_f_hat
    cdef long long ncap = cap
    samples_arr = np.empty(n)
    cdef double[::1] samples = samples_arr
    cdef double sum_abs_score = 0.0
    cdef double sum_tau = 0.0
    cdef long long n_inner_total = 0
    cdef Py_ssize_t i, t, k, x, j, y
    cdef double score, gacc
    cdef long long tau
    for i in range(n):
        x = x0
        for t in range(nw):
            x = tab[x, _draw_letter(cum, L, uni)]
        j = _draw_letter(cum, L, uni)
        score = sc0[j]
        y = tab[x, j]
        gacc = 0.0
        for k in range(nin):
            gacc += _tabular_gamma_cycle(tab, cum, L, fv, r0, y, pf, uni, ncap, &tau)
            sum_tau += <double>tau
            n_inner_total += 1
        samples[i] = score * (gacc / <double>nin)
        sum_abs_score += fabs(score)
    diag = np.array([sum_abs_score, sum_tau, <double>n_inner_total])
    return samples_arr, diag
