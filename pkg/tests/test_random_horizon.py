"""Exact random-horizon values, derivatives, measures, and certificates."""

import numpy as np
import pytest

from chaingrad.errors import ContractionError, ModelError
from chaingrad.families import recenter
from chaingrad.kernels import (
    FiniteFunction,
    FiniteKernel,
    FiniteMeasure,
    StateSpace,
    WeightFunction,
)
from chaingrad.random_horizon import (
    LyapunovCertificateRH,
    TargetProblem,
    build_tilde_f,
    comparison_bound_check,
    compute_u_star,
    derivative_u_star,
    higher_derivatives,
    measure_derivative,
    occupancy_measure,
    signed_measure_representation,
    suggest_lyapunov_rh,
    verify_lyapunov_rh,
)

from helpers import hitting_time_problem, random_problem, unit_weight


class TestTildeF:
    def test_zero_outside_reward(self):
        problem, _, f, _ = random_problem(np.random.default_rng(1))
        f2 = f.copy()
        f2[problem.exterior_idx] = 0.0
        problem2 = TargetProblem(
            problem.family,
            problem.interior_idx.tolist(),
            FiniteFunction(problem.family.space, f2),
            problem.discount_exponent,
        )
        ft = build_tilde_f(problem2, 0.5)
        assert ft.values == pytest.approx(f2[problem.interior_idx])

    def test_hitting_time_setup_gives_ones(self):
        # g = 0, f = 1 on C, f = 0 outside: the one-step reward is 1
        problem = hitting_time_problem()
        ft = build_tilde_f(problem, 0.52)
        assert ft.values == pytest.approx([1.0])

    def test_exit_probability_one_step_enumeration(self):
        # g = 0, f = 0 on C, f = indicator of a target exit state:
        # f~(x) = P(theta, x, target)
        rng = np.random.default_rng(2)
        problem, _, _, _ = random_problem(rng, n_states=6, n_exit=2, discounted=False)
        space = problem.family.space
        target = int(problem.exterior_idx[0])
        f = np.zeros(space.size)
        f[target] = 1.0
        problem2 = TargetProblem(
            problem.family, problem.interior_idx.tolist(), FiniteFunction(space, f)
        )
        theta = 0.47
        from chaingrad.families import eval_kernel

        P = eval_kernel(problem.family, theta).entries
        expected = P[problem.interior_idx, target]
        assert build_tilde_f(problem2, theta).values == pytest.approx(expected)


class TestComputeUStar:
    def test_hitting_time_oracle(self):
        # E[geometric(theta)] = 1/theta; at theta = 0.5 the value is 2
        problem = hitting_time_problem(0.5)
        u = compute_u_star(problem, 0.5, unit_weight(problem))
        assert u.values[0] == pytest.approx(2.0, abs=1e-12)
        u6 = compute_u_star(problem, 0.52, unit_weight(problem))
        assert u6.values[0] == pytest.approx(1.0 / 0.52, abs=1e-12)

    def test_zero_reward(self):
        problem, _, _, _ = random_problem(np.random.default_rng(3))
        space = problem.family.space
        problem2 = TargetProblem(
            problem.family,
            problem.interior_idx.tolist(),
            FiniteFunction(space, np.zeros(space.size)),
            problem.discount_exponent,
        )
        u = compute_u_star(problem2, 0.5, unit_weight(problem2))
        assert np.max(np.abs(u.values)) <= 1e-14

    def test_fixed_point_identity(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            problem, _, _, _ = random_problem(rng)
            w = unit_weight(problem)
            theta = float(rng.uniform(0.46, 0.54))
            u = compute_u_star(problem, theta, w)
            K = problem.interior_kernel(theta).entries
            residual = u.values - problem.tilde_f(theta) - K @ u.values
            assert np.max(np.abs(residual)) <= 1e-10

    def test_infinite_horizon_discounted_vs_truncated_series(self):
        # C = S (no exit), strictly negative discount exponent
        rng = np.random.default_rng(5)
        rec_problem, _, _, _ = random_problem(rng, n_states=5, n_exit=1)
        fam = rec_problem.family
        space = fam.space
        f = rng.uniform(0.0, 1.0, size=space.size)
        g = np.full(space.size, -0.3)
        problem = TargetProblem(
            fam, list(range(space.size)), FiniteFunction(space, f),
            FiniteFunction(space, g),
        )
        w = WeightFunction.ones(problem.interior_space)
        u = compute_u_star(problem, 0.5, w)
        K = problem.interior_kernel(0.5).entries
        total = np.zeros(space.size)
        term = problem.tilde_f(0.5)
        N = 60
        for _ in range(N + 1):
            total += term
            term = K @ term
        norm_K = float(np.max(np.abs(K).sum(axis=1)))
        tail = norm_K ** (N + 1) / (1 - norm_K) * np.max(np.abs(problem.tilde_f(0.5)))
        assert np.max(np.abs(u.values - total)) <= tail + 1e-12

    def test_contraction_refusal(self):
        # undiscounted chain with no exit: row sums 1, never contracting
        rng = np.random.default_rng(6)
        problem, _, _, _ = random_problem(rng, n_states=5, n_exit=1, discounted=False)
        fam = problem.family
        space = fam.space
        full = TargetProblem(
            fam, list(range(space.size)),
            FiniteFunction(space, np.ones(space.size)),
        )
        with pytest.raises(ContractionError):
            compute_u_star(full, 0.5, WeightFunction.ones(full.interior_space), m_max=16)


class TestDerivatives:
    def test_constant_family_zero_derivative(self):
        problem = hitting_time_problem()
        from chaingrad.families import ParamKernelFamily

        const = ParamKernelFamily.constant(
            problem.family.base, theta0=0.5, eps=0.05, interval=(0.0, 1.0)
        )
        problem2 = TargetProblem(const, ["in"], problem.reward)
        d = derivative_u_star(problem2, unit_weight(problem2))
        assert np.max(np.abs(d.values)) == 0.0

    def test_hitting_time_first_derivative(self):
        # d(1/theta)/dtheta = -1/theta^2 = -4 at theta0 = 0.5
        problem = hitting_time_problem(0.5)
        d = derivative_u_star(problem, unit_weight(problem))
        assert d.values[0] == pytest.approx(-4.0, abs=1e-12)

    def test_hitting_time_higher_orders(self):
        # 1/theta differentiates to 2/theta^3 = 16 and -6/theta^4 = -96
        problem = hitting_time_problem(0.5)
        derivs = higher_derivatives(problem, unit_weight(problem), 3)
        assert derivs[0].values[0] == pytest.approx(-4.0, abs=1e-12)
        assert derivs[1].values[0] == pytest.approx(16.0, abs=1e-10)
        assert derivs[2].values[0] == pytest.approx(-96.0, abs=1e-9)

    def test_order_one_is_bitwise_equal(self):
        problem, _, _, _ = random_problem(np.random.default_rng(7))
        w = unit_weight(problem)
        d1 = derivative_u_star(problem, w)
        ds = higher_derivatives(problem, w, 1)
        assert np.array_equal(d1.values, ds[0].values)

    def test_matches_central_difference_with_richardson(self):
        rng = np.random.default_rng(8)
        for _ in range(5):
            problem, _, _, _ = random_problem(rng, n_states=6, n_exit=2)
            w = unit_weight(problem)
            d = derivative_u_star(problem, w).values
            h = 1e-4
            fd = (
                compute_u_star(problem, 0.5 + h, w).values
                - compute_u_star(problem, 0.5 - h, w).values
            ) / (2 * h)
            tol = np.maximum(1e-6, 1e-4 * np.abs(d))
            assert np.all(np.abs(d - fd) <= tol)
            errors = []
            for hh in (2e-3, 1e-3):
                fd_h = (
                    compute_u_star(problem, 0.5 + hh, w).values
                    - compute_u_star(problem, 0.5 - hh, w).values
                ) / (2 * hh)
                errors.append(np.max(np.abs(fd_h - d)))
            assert 3.0 <= errors[0] / errors[1] <= 5.0

    def test_second_order_matches_difference_of_first(self):
        rng = np.random.default_rng(9)
        problem, _, _, _ = random_problem(rng, n_states=7, n_exit=2, quadratic=True)
        w = unit_weight(problem)
        d2 = higher_derivatives(problem, w, 2)[1].values
        h = 1e-4

        def first_deriv_at(theta):
            fam_r = recenter(problem.family, theta)
            problem_r = TargetProblem(
                fam_r, problem.interior_idx.tolist(), problem.reward,
                problem.discount_exponent,
            )
            return derivative_u_star(problem_r, w).values

        fd = (first_deriv_at(0.5 + h) - first_deriv_at(0.5 - h)) / (2 * h)
        assert np.all(np.abs(d2 - fd) <= np.maximum(1e-5, 1e-4 * np.abs(d2)))

    def test_missing_higher_scores_rejected(self):
        problem, _, _, _ = random_problem(np.random.default_rng(10))
        with pytest.raises(ModelError):
            higher_derivatives(problem, unit_weight(problem), 5)


class TestMeasureDerivative:
    def _mu_family(self, problem, rng):
        n = problem.interior_idx.size
        mu0 = rng.uniform(0, 1, size=n)
        mu0 /= mu0.sum()
        dmu = rng.uniform(-1, 1, size=n)
        dmu -= dmu.mean()
        return (
            FiniteMeasure(problem.interior_space, mu0),
            FiniteMeasure(problem.interior_space, dmu),
        )

    def test_constant_everything_gives_zero(self):
        problem = hitting_time_problem()
        from chaingrad.families import ParamKernelFamily

        const = ParamKernelFamily.constant(
            problem.family.base, theta0=0.5, eps=0.05, interval=(0.0, 1.0)
        )
        problem2 = TargetProblem(const, ["in"], problem.reward)
        mu0 = FiniteMeasure(problem2.interior_space, [1.0])
        dmu = FiniteMeasure(problem2.interior_space, [0.0])
        out = measure_derivative((mu0, dmu), problem2, unit_weight(problem2))
        assert np.max(np.abs(out.weights)) == 0.0

    def test_duality_identity(self):
        # product rule on mu G f~ asserted numerically
        rng = np.random.default_rng(11)
        problem, _, _, _ = random_problem(rng, n_states=6, n_exit=2)
        w = unit_weight(problem)
        mu0, dmu = self._mu_family(problem, rng)
        theta0 = problem.family.theta0
        nu = occupancy_measure(problem, theta0, w, mu0)
        nu_prime = measure_derivative((mu0, dmu), problem, w)
        u = compute_u_star(problem, theta0, w)
        du = derivative_u_star(problem, w)
        ft = problem.tilde_f(theta0)
        dft = problem.tilde_f_derivative(1)
        lhs = float(nu_prime.weights @ ft + nu.weights @ dft)
        rhs = float(mu0.weights @ du.values + dmu.weights @ u.values)
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)

    def test_against_finite_difference(self):
        rng = np.random.default_rng(12)
        problem, _, _, _ = random_problem(rng, n_states=6, n_exit=2)
        w = unit_weight(problem)
        mu0, dmu = self._mu_family(problem, rng)
        theta0 = problem.family.theta0
        h = 1e-4

        def nu_at(theta):
            mu_theta = FiniteMeasure(
                problem.interior_space, mu0.weights + (theta - theta0) * dmu.weights
            )
            return occupancy_measure(problem, theta, w, mu_theta).weights

        fd = (nu_at(theta0 + h) - nu_at(theta0 - h)) / (2 * h)
        out = measure_derivative((mu0, dmu), problem, w).weights
        assert np.allclose(out, fd, atol=1e-6, rtol=1e-4)


class TestSignedMeasure:
    def test_constant_family_zero(self):
        problem = hitting_time_problem()
        from chaingrad.families import ParamKernelFamily

        const = ParamKernelFamily.constant(
            problem.family.base, theta0=0.5, eps=0.05, interval=(0.0, 1.0)
        )
        problem2 = TargetProblem(const, ["in"], problem.reward)
        nu = signed_measure_representation(problem2, unit_weight(problem2), "in")
        assert np.max(np.abs(nu.weights)) == 0.0

    def test_pairing_reproduces_derivative(self):
        rng = np.random.default_rng(13)
        problem, _, _, _ = random_problem(rng, n_states=5, n_exit=2)
        w = unit_weight(problem)
        x = int(problem.interior_idx[1])
        nu = signed_measure_representation(problem, w, x)
        for _ in range(5):
            f = rng.normal(size=problem.family.space.size)
            problem_f = TargetProblem(
                problem.family,
                problem.interior_idx.tolist(),
                FiniteFunction(problem.family.space, f),
                problem.discount_exponent,
            )
            d = derivative_u_star(problem_f, w)
            pos = int(np.searchsorted(problem.interior_idx, x))
            paired = float(nu.weights @ f)
            assert paired == pytest.approx(d.values[pos], rel=1e-10, abs=1e-10)

    def test_total_mass_generally_nonzero(self):
        rng = np.random.default_rng(14)
        problem, _, _, _ = random_problem(rng, n_states=5, n_exit=2)
        nu = signed_measure_representation(
            problem, unit_weight(problem), int(problem.interior_idx[0])
        )
        assert abs(nu.total_mass()) > 1e-8


class TestLyapunovRH:
    def test_zero_reward_zero_certificate(self):
        problem, _, _, _ = random_problem(np.random.default_rng(15))
        space = problem.family.space
        problem0 = TargetProblem(
            problem.family,
            problem.interior_idx.tolist(),
            FiniteFunction(space, np.zeros(space.size)),
            problem.discount_exponent,
        )
        n = problem0.interior_idx.size
        cert = LyapunovCertificateRH([np.zeros(n), np.zeros(n)])
        report = verify_lyapunov_rh(problem0, cert)
        assert report.passed
        assert report.min_slack_by_order == (0.0, 0.0)

    def test_hitting_time_certificate(self):
        # (1-theta) v0 <= v0 - 1 for all band theta needs v0 >= 1/(theta0-eps)
        theta0, eps = 0.5, 0.05
        problem = hitting_time_problem(theta0, eps)
        v0 = 1.0 / (theta0 - eps) + 1e-9
        v1 = 7.6  # envelope/theta worst case: omega v0 (1-theta)/theta at 0.45
        report = verify_lyapunov_rh(problem, LyapunovCertificateRH([[v0], [v1]]))
        assert report.passed
        too_small = 1.0 / (theta0 - eps) - 1e-3
        report_bad = verify_lyapunov_rh(
            problem, LyapunovCertificateRH([[too_small], [v1]])
        )
        assert not report_bad.passed

    def test_derivative_bound_on_passing_instance(self):
        problem = hitting_time_problem(0.5, 0.05)
        cert = LyapunovCertificateRH([[1.0 / 0.45 + 1e-9], [7.6]])
        report = verify_lyapunov_rh(problem, cert)
        assert report.passed
        d = derivative_u_star(problem, unit_weight(problem))
        assert np.all(np.abs(d.values) <= report.bound_predictions[1])

    def test_suggested_certificate_verifies_on_narrow_band(self):
        problem = hitting_time_problem(0.5, 0.02)
        w = unit_weight(problem)
        cert = suggest_lyapunov_rh(problem, w)
        report = verify_lyapunov_rh(problem, cert)
        assert report.passed


class TestComparisonBound:
    def test_zero_f_trivially_holds(self):
        space = StateSpace.of_size(3)
        Q = FiniteKernel(space, np.full((3, 3), 0.2))
        f = FiniteFunction(space, np.zeros(3))
        v = FiniteFunction(space, np.ones(3))
        report = comparison_bound_check(Q, f, v)
        assert report.applicable and report.holds

    def test_geometric_equality_case(self):
        # Q = 0.5 I, f = 1, v = 2: the series sums to exactly v
        space = StateSpace.of_size(2)
        Q = FiniteKernel(space, 0.5 * np.eye(2))
        f = FiniteFunction(space, np.ones(2))
        v = FiniteFunction(space, np.full(2, 2.0))
        report = comparison_bound_check(Q, f, v)
        assert report.applicable and report.holds
        assert report.series == pytest.approx([2.0, 2.0], abs=1e-11)

    def test_constructed_certificates(self):
        rng = np.random.default_rng(16)
        for _ in range(20):
            n = int(rng.integers(2, 8))
            space = StateSpace.of_size(n)
            Q = rng.uniform(0, 1, size=(n, n))
            Q *= rng.uniform(0.3, 0.9) / Q.sum(axis=1, keepdims=True)
            f = rng.uniform(0, 1, size=n)
            exact = np.linalg.solve(np.eye(n) - Q, f)
            # a Q-superharmonic nonnegative slack keeps the drift valid
            slack = np.linalg.solve(np.eye(n) - Q, rng.uniform(0, 1, size=n))
            report = comparison_bound_check(
                FiniteKernel(space, Q),
                FiniteFunction(space, f),
                FiniteFunction(space, exact + slack),
            )
            assert report.applicable and report.holds

    def test_inapplicable_is_reported_not_asserted(self):
        space = StateSpace.of_size(2)
        Q = FiniteKernel(space, np.eye(2))
        f = FiniteFunction(space, np.ones(2))
        v = FiniteFunction(space, np.ones(2))
        report = comparison_bound_check(Q, f, v)
        assert not report.applicable and not report.holds
