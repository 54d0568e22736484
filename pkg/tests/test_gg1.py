"""G/G/1 Pareto case study: sampling, oracle, experiments, drift, probe."""

import math

import numpy as np
import pytest

from chaingrad.errors import ModelError
from chaingrad.families import eval_kernel, score_kernel
from chaingrad.gg1 import (
    GG1Budget,
    GG1Model,
    appendix_bound_probe,
    density_mean_check,
    discretize_gg1,
    gg1_drift_verification,
    lindley_path,
    mg1_oracle,
    pareto_cdf,
    pareto_sample,
    pareto_score,
    run_gg1_derivative_experiment,
    score_mean_check,
    tabulated_from_exponential,
)
from chaingrad.mc import InterarrivalSpec, RngStream, estimate_stationary_mean


def mm1_model(alpha=5.0, theta0=1.0, lam=1.0, p=1.0, eps=0.1):
    return GG1Model(
        alpha=alpha,
        theta0=theta0,
        interarrival=InterarrivalSpec.exponential(lam),
        p_exponent=p,
        eps=eps,
    )


class TestParetoSampling:
    def test_transform_at_zero_uniform(self):
        # U = 0 maps to V = 0 under the inverse CDF
        model = mm1_model()
        v = ((1.0 - 0.0) ** (-1.0 / model.alpha) - 1.0) / model.theta0
        assert v == 0.0

    def test_mean_within_three_se(self):
        model = mm1_model(alpha=5.0, theta0=1.0)
        n = 1_000_000
        v = pareto_sample(model, RngStream(1), n)
        se = v.std(ddof=1) / math.sqrt(n)
        assert abs(v.mean() - model.service_mean()) <= 3 * se

    def test_tail_probabilities(self):
        model = mm1_model()
        n = 400_000
        v = pareto_sample(model, RngStream(2), n)
        for point in (1.0, 5.0, 10.0):
            target = (1.0 + model.theta0 * point) ** (-model.alpha)
            phat = float(np.mean(v > point))
            se = math.sqrt(target * (1 - target) / n)
            assert abs(phat - target) <= 3 * se

    def test_kolmogorov_smirnov(self):
        model = mm1_model()
        n = 100_000
        v = np.sort(pareto_sample(model, RngStream(3), n))
        cdf = pareto_cdf(model, v)
        grid = np.arange(1, n + 1) / n
        ks = max(np.max(np.abs(grid - cdf)), np.max(np.abs(grid - 1.0 / n - cdf)))
        assert ks <= 1.63 / math.sqrt(n)


class TestParetoScore:
    def test_density_ratio_one_at_base(self):
        model = mm1_model()
        for v in (0.0, 0.7, 13.0):
            ratio, _ = pareto_score(model, model.theta0, v)
            assert ratio == 1.0

    def test_score_formula_at_theta0(self):
        model = mm1_model()
        v = 2.0
        _, s = pareto_score(model, model.theta0, v)
        expected = 1.0 / model.theta0 - (model.alpha + 1.0) * v / (
            1.0 + model.theta0 * v
        )
        assert s == pytest.approx(expected, abs=1e-15)

    def test_log_density_finite_difference(self):
        # p'/p must equal d/dtheta log p at 20 random (theta, v) points
        model = mm1_model()
        rng = np.random.default_rng(4)
        h = 1e-6
        for _ in range(20):
            theta = float(rng.uniform(0.5, 1.5))
            v = float(rng.uniform(0.0, 10.0))
            rp, sp = pareto_score(model, theta + h, v)
            rm, sm = pareto_score(model, theta - h, v)
            ratio, score = pareto_score(model, theta, v)
            fd_log = (math.log(rp) - math.log(rm)) / (2 * h)
            assert abs(fd_log - score / ratio) <= 1e-8

    def test_score_has_mean_zero(self):
        model = mm1_model()
        n = 1_000_000
        v = pareto_sample(model, RngStream(5), n)
        _, s = pareto_score(model, model.theta0, v)
        se = s.std(ddof=1) / math.sqrt(n)
        assert abs(s.mean()) <= 3 * se

    def test_density_mean_one_in_band(self):
        model = mm1_model()
        est = density_mean_check(model, model.theta0 + model.eps, 400_000, RngStream(6))
        assert abs(est.point - 1.0) <= 3 * est.std_error
        est0 = score_mean_check(model, 400_000, RngStream(7))
        assert abs(est0.point) <= 3 * est0.std_error


class TestLindleyPath:
    def test_retains_draws(self):
        model = mm1_model()
        w, v, chi = lindley_path(model, 0.0, 50, RngStream(8))
        assert len(w) == 51 and len(v) == 50 and len(chi) == 50
        recomputed = [0.0]
        for k in range(50):
            recomputed.append(max(recomputed[-1] + v[k] - chi[k], 0.0))
        assert np.array_equal(w, np.array(recomputed))

    def test_regeneration_produces_exact_zeros(self):
        model = mm1_model()
        w, _, _ = lindley_path(model, 5.0, 4000, RngStream(9))
        assert np.any(w == 0.0)

    def test_cycle_mean_stabilizes(self):
        # regenerative consistency: disjoint halves agree within noise
        model = mm1_model()
        rec = model.recursion()
        a = estimate_stationary_mean(rec, None, None, 0.0, 40_000, RngStream(10),
                                     p_exponent=1.0)
        b = estimate_stationary_mean(rec, None, None, 0.0, 40_000, RngStream(11),
                                     p_exponent=1.0)
        t = abs(a.point - b.point) / math.hypot(a.std_error, b.std_error)
        assert t < 3.0

    def test_cycle_blocks_are_iid_like(self):
        # two-sample t-statistic for cycle sums over disjoint blocks
        model = mm1_model()
        from chaingrad.mc import get_backend

        bk = get_backend()
        args = model.recursion().encoded()
        gen = RngStream(12).generator()
        lengths, fsums = bk.lindley_ratio_cycles(*args, 20_000, 1.0, math.inf, gen, 10**7)
        half = 10_000
        a, b = fsums[:half], fsums[half:]
        t = (a.mean() - b.mean()) / math.sqrt(a.var(ddof=1) / half + b.var(ddof=1) / half)
        assert abs(t) < 3.0


class TestMG1Oracle:
    def test_known_values(self):
        # alpha=5, theta0=1, lam=1: E V = 1/4, E V^2 = 1/6, rho = 1/4,
        # E W = (1/6)/(2 * 3/4) = 1/9
        model = mm1_model(alpha=5.0, theta0=1.0, lam=1.0)
        ew, dew = mg1_oracle(model)
        assert ew == pytest.approx(1.0 / 9.0, abs=1e-15)
        assert dew < 0.0

    def test_derivative_matches_finite_difference_of_formula(self):
        lam, alpha = 0.8, 6.0

        def mean_wait(theta):
            ev2 = 2.0 / (theta**2 * (alpha - 1) * (alpha - 2))
            rho = lam / (theta * (alpha - 1))
            return lam * ev2 / (2 * (1 - rho))

        model = mm1_model(alpha=alpha, theta0=1.2, lam=lam)
        _, dew = mg1_oracle(model)
        h = 1e-6
        fd = (mean_wait(1.2 + h) - mean_wait(1.2 - h)) / (2 * h)
        assert dew == pytest.approx(fd, rel=1e-8)

    def test_small_lambda_limit(self):
        model = mm1_model(alpha=5.0, theta0=1.0, lam=1e-9)
        ew, _ = mg1_oracle(model)
        assert ew <= 1e-8

    def test_unstable_rejected(self):
        with pytest.raises(ModelError):
            # rho = lam * E V >= 1 is already rejected by the model itself
            mm1_model(alpha=2.5, theta0=0.5, lam=2.0)

    def test_requires_exponential(self):
        model = GG1Model(
            alpha=5.0, theta0=1.0,
            interarrival=InterarrivalSpec.deterministic(1.0),
        )
        with pytest.raises(ModelError):
            mg1_oracle(model)


class TestDerivativeExperiment:
    def test_agrees_with_oracle_and_fd(self):
        model = mm1_model()
        budget = GG1Budget(
            n_pi_cycles=60_000, n_outer=60_000, warmup=128, inner_cycles=1,
            fd_steps=600_000, fd_warmup=20_000, fd_batches=64,
        )
        report = run_gg1_derivative_experiment(model, budget, RngStream(13))
        assert report.oracle_derivative is not None
        assert report.agrees_with_oracle
        assert report.agrees_with_fd
        assert report.lr.std_error > 0

    def test_derivative_range_guard(self):
        model = mm1_model(alpha=2.5, p=1.0, lam=0.5)
        with pytest.raises(ModelError):
            run_gg1_derivative_experiment(model, GG1Budget(), RngStream(14))


class TestAppendixProbe:
    def test_zero_offset_column_is_exactly_zero(self):
        # h = 0 means the reweighting factor p(theta0, V) - 1 = 0 identically
        model = mm1_model()
        probe = appendix_bound_probe(
            model, [0.0, 0.01], [0.0, 5.0], truncation_m=1e6, n_mc=2000,
            rng=RngStream(15), n_pi_cycles=5000,
        )
        hi0 = int(np.argmin(probe.h_grid))
        assert np.all(probe.estimates[:, hi0] == 0.0)
        assert np.all(probe.std_errors[:, hi0] == 0.0)

    def test_linear_template_and_stability(self):
        model = mm1_model()
        probe = appendix_bound_probe(
            model, [0.02, 0.01, 0.005], [0.0, 5.0, 20.0, 80.0],
            truncation_m=1e6, n_mc=120_000, rng=RngStream(16),
            n_pi_cycles=120_000, inner_cycles=2,
        )
        # the fitted template bounds every cell by construction
        scale = probe.h_grid[None, :] * (probe.x_grid[:, None] ** model.p_exponent + 1.0)
        assert np.all(
            np.abs(probe.estimates)
            <= probe.d_fit * scale + 3.0 * probe.std_errors + 1e-15
        )
        assert probe.h_stability_ratio <= 2.0
        assert probe.x_stability_ratio <= 2.0
        assert probe.stable

    def test_truncation_parameter_reaches_kernel(self):
        model = mm1_model()
        tiny = appendix_bound_probe(
            model, [0.01], [5.0], truncation_m=0.0, n_mc=2000,
            rng=RngStream(17), n_pi_cycles=2000,
        )
        # f_{p;0} = 0 everywhere: all estimates exactly zero
        assert np.all(tiny.estimates == 0.0)


class TestDriftVerification:
    def test_recipe_constants_pass(self):
        model = mm1_model()
        report = gg1_drift_verification(model, x_max=300.0, n_x=40)
        assert report.passed_value and report.passed_deriv
        assert report.c >= 1.0
        assert report.tail_decreasing
        # the normalized drift approaches a1 (p+1) sup_theta (E V - E chi),
        # which the recipe pins at -2
        assert report.value_curve[-1] == pytest.approx(-2.0, abs=0.4)

    def test_zero_a1_fails(self):
        model = mm1_model()
        report = gg1_drift_verification(model, a1=0.0, x_max=100.0, n_x=24)
        assert not report.passed_value

    def test_exponent_window_enforced(self):
        model = mm1_model()
        with pytest.raises(ModelError):
            gg1_drift_verification(model, r_exponent=3.5)  # r + 2 >= alpha
        with pytest.raises(ModelError):
            gg1_drift_verification(model, r_exponent=0.5)  # r <= p

    def test_needs_moment_headroom(self):
        model = mm1_model(alpha=2.9, lam=0.5)
        with pytest.raises(ModelError):
            gg1_drift_verification(model)

    def test_deterministic_interarrivals_supported(self):
        model = GG1Model(
            alpha=5.0, theta0=1.0,
            interarrival=InterarrivalSpec.deterministic(0.6),
        )
        report = gg1_drift_verification(model, x_max=200.0, n_x=32)
        assert report.passed


class TestDiscretization:
    def _family(self, inter=None, n=25, x_max=12.0):
        model = GG1Model(
            alpha=5.0, theta0=1.0,
            interarrival=inter or InterarrivalSpec.deterministic(0.6),
        )
        return model, discretize_gg1(model, np.linspace(0.0, x_max, n))

    def test_rows_renormalize_near_theta0(self):
        model, fam = self._family()
        for theta in (model.theta0, model.theta0 + 0.01, model.theta0 - 0.05):
            P = eval_kernel(fam, theta)
            assert np.max(np.abs(P.entries.sum(axis=1) - 1.0)) <= 1e-9

    def test_tabulated_exponential_rows_renormalize(self):
        model, fam = self._family(inter=tabulated_from_exponential(1.0, 48))
        P = eval_kernel(fam, model.theta0 + 0.01)
        assert np.max(np.abs(P.entries.sum(axis=1) - 1.0)) <= 1e-9

    def test_score_rows_sum_to_zero(self):
        _, fam = self._family()
        from chaingrad.families import score_mean_diagnostic

        assert np.max(np.abs(score_mean_diagnostic(fam))) <= 1e-6

    def test_score_matches_finite_difference(self):
        model, fam = self._family()
        h = 1e-5
        fd = (
            eval_kernel(fam, model.theta0 + h).entries
            - eval_kernel(fam, model.theta0 - h).entries
        ) / (2 * h)
        assert np.allclose(score_kernel(fam).entries, fd, atol=1e-8)

    def test_exponential_requires_tabulation(self):
        model = mm1_model()
        with pytest.raises(ModelError):
            discretize_gg1(model, np.linspace(0.0, 10.0, 11))

    def test_stationary_mean_close_to_pk(self):
        # the discretized tabulated-exponential chain approximates M/G/1
        model = GG1Model(
            alpha=5.0, theta0=1.0, interarrival=tabulated_from_exponential(1.0, 64),
        )
        fam = discretize_gg1(model, np.linspace(0.0, 40.0, 400))
        from chaingrad.stationary import stationary_distribution

        pi = stationary_distribution(fam.base)
        grid = np.array([float(lab) for lab in fam.space.labels])
        mean_wait = float(pi.weights @ grid)
        oracle, _ = mg1_oracle(mm1_model())
        assert mean_wait == pytest.approx(oracle, abs=0.02)
