"""Parameterized kernel families: densities, scores, envelopes, diagnostics."""

import numpy as np
import pytest

from chaingrad.errors import ModelError
from chaingrad.families import (
    ParamKernelFamily,
    envelope,
    eval_kernel,
    recenter,
    score_kernel,
    score_mean_diagnostic,
)
from chaingrad.kernels import FiniteFunction, FiniteKernel, StateSpace, WeightFunction
from chaingrad.cli import two_state_family


def scalar_density_family(theta0=1.0, eps=0.25):
    """k(theta, x, y) = theta / theta0 on the support."""
    space = StateSpace.of_size(3)
    rng = np.random.default_rng(8)
    base = FiniteKernel(space, rng.uniform(0.1, 1.0, size=(3, 3)))
    ones = np.ones((3, 3))

    def density(theta):
        return (theta / theta0) * ones

    def score(theta):
        return ones / theta0

    return ParamKernelFamily(
        base, theta0, eps, (0.5 * theta0, 2.0 * theta0), density, score
    )


class TestEvalKernel:
    def test_base_point_bit_exact(self):
        fam = two_state_family(0.3, 0.3, 0.05)
        K = eval_kernel(fam, 0.3)
        assert np.array_equal(K.entries, fam.base.entries)

    def test_scalar_density_doubles_base(self):
        fam = scalar_density_family()
        K = eval_kernel(fam, 2.0 * fam.theta0 * 0.999)
        assert np.allclose(K.entries, 1.998 * fam.base.entries)

    def test_outside_interval_rejected(self):
        fam = scalar_density_family()
        with pytest.raises(ModelError):
            eval_kernel(fam, 10.0)

    def test_negative_density_rejected_at_construction(self):
        space = StateSpace.of_size(2)
        base = FiniteKernel(space, np.full((2, 2), 0.5))
        ones = np.ones((2, 2))
        with pytest.raises(ModelError):
            ParamKernelFamily(
                base, 0.0, 0.5, (-1.0, 1.0),
                density=lambda t: ones * (1.0 + 4.0 * t),
                score=lambda t: 4.0 * ones,
            )


class TestScoreKernel:
    def test_constant_family_zero(self):
        space = StateSpace.of_size(2)
        base = FiniteKernel(space, np.full((2, 2), 0.5))
        fam = ParamKernelFamily.constant(base)
        assert np.array_equal(score_kernel(fam).entries, np.zeros((2, 2)))

    def test_scalar_density_score(self):
        fam = scalar_density_family(theta0=2.0)
        expected = fam.base.entries / 2.0
        assert np.allclose(score_kernel(fam).entries, expected, rtol=1e-14)

    def test_two_state_hand_differentiated(self):
        # P(theta) = [[1-theta, theta], [q, 1-q]] gives P'(theta0) = [[-1, 1], [0, 0]]
        fam = two_state_family(q=0.4, theta0=0.3, eps=0.05)
        Kp = score_kernel(fam)
        assert np.allclose(Kp.entries, [[-1.0, 1.0], [0.0, 0.0]], atol=1e-14)

    def test_score_matches_central_difference(self):
        fam = two_state_family(q=0.4, theta0=0.3, eps=0.05)
        h = 1e-6
        fd = (eval_kernel(fam, 0.3 + h).entries - eval_kernel(fam, 0.3 - h).entries) / (2 * h)
        assert np.allclose(score_kernel(fam).entries, fd, atol=1e-9)

    def test_finite_difference_richardson(self):
        # second-order convergence: halving h shrinks the FD error ~4x
        space = StateSpace.of_size(2)
        base = FiniteKernel(space, np.full((2, 2), 0.5))
        theta0 = 1.0
        ones = np.ones((2, 2))
        fam = ParamKernelFamily(
            base, theta0, 0.4, (0.1, 3.0),
            density=lambda t: ones * (t / theta0) ** 3,
            score=lambda t: ones * 3.0 * t**2 / theta0**3,
        )
        errors = []
        for h in (1e-3, 5e-4):
            fd = (fam.density_at(theta0 + h) - fam.density_at(theta0 - h)) / (2 * h)
            errors.append(np.max(np.abs(fd - fam.score_at(theta0))))
        assert errors[0] / errors[1] == pytest.approx(4.0, rel=0.05)


class TestEnvelope:
    def test_constant_family_zero(self):
        space = StateSpace.of_size(2)
        fam = ParamKernelFamily.constant(FiniteKernel(space, np.full((2, 2), 0.5)))
        assert np.array_equal(envelope(fam).values, np.zeros((2, 2)))

    def test_monotone_score_maximized_at_left_endpoint(self):
        # k'(theta) = 1/theta with theta0 = 1, eps = 0.5: sup = 1/0.5 = 2
        space = StateSpace.of_size(2)
        base = FiniteKernel(space, np.full((2, 2), 0.5))
        ones = np.ones((2, 2))
        fam = ParamKernelFamily(
            base, 1.0, 0.5, (0.25, 4.0),
            density=lambda t: ones * (1.0 + np.log(t)),
            score=lambda t: ones / t,
        )
        env = envelope(fam, grid_points=65)
        assert np.allclose(env.values, 2.0, rtol=1e-12)

    def test_dominates_score_at_theta0(self):
        fam = two_state_family(0.3, 0.3, 0.05)
        env = envelope(fam, grid_points=65)  # odd grid keeps theta0 on it
        assert np.all(env.values + 1e-15 >= np.abs(fam.score_at(fam.theta0)))

    def test_envelope_dominates_score_kernel(self):
        fam = two_state_family(0.25, 0.45, 0.1)
        env = envelope(fam)
        Kp = score_kernel(fam)
        assert np.all(np.abs(Kp.entries) <= env.values * fam.base.entries + 1e-12)

    def test_closed_form_override(self):
        space = StateSpace.of_size(2)
        base = FiniteKernel(space, np.full((2, 2), 0.5))
        ones = np.ones((2, 2))
        fam = ParamKernelFamily(
            base, 1.0, 0.5, (0.25, 4.0),
            density=lambda t: ones * t,
            score=lambda t: ones,
            envelopes={1: 7.0 * np.ones((2, 2))},
        )
        env = envelope(fam)
        assert env.grid_points == 0
        assert np.all(env.values == 7.0)


class TestScoreMeanDiagnostic:
    def test_constant_family_zeros(self):
        space = StateSpace.of_size(3)
        P = np.full((3, 3), 1.0 / 3.0)
        fam = ParamKernelFamily.constant(FiniteKernel(space, P))
        assert np.array_equal(score_mean_diagnostic(fam), np.zeros(3))

    def test_two_state_rows_sum_to_zero(self):
        # differentiating unit row sums forces zero score-kernel row sums
        fam = two_state_family(0.3, 0.3, 0.05)
        assert np.allclose(score_mean_diagnostic(fam), 0.0, atol=1e-14)


class TestRecenter:
    def test_recentred_base_matches_eval(self):
        fam = two_state_family(0.4, 0.3, 0.05)
        fam2 = recenter(fam, 0.35)
        assert np.allclose(fam2.base.entries, eval_kernel(fam, 0.35).entries)

    def test_recentred_derivative_is_consistent(self):
        fam = two_state_family(0.4, 0.3, 0.05)
        fam2 = recenter(fam, 0.35)
        # K'(0.35) of the recentred family must equal d/dtheta eval_kernel
        h = 1e-6
        fd = (eval_kernel(fam, 0.35 + h).entries - eval_kernel(fam, 0.35 - h).entries) / (2 * h)
        assert np.allclose(score_kernel(fam2).entries, fd, atol=1e-9)


class TestBandValidation:
    def test_band_must_sit_inside_interval(self):
        space = StateSpace.of_size(2)
        base = FiniteKernel(space, np.full((2, 2), 0.5))
        ones = np.ones((2, 2))
        with pytest.raises(ModelError):
            ParamKernelFamily(
                base, 0.9, 0.2, (0.0, 1.0),
                density=lambda t: ones, score=lambda t: 0.0 * ones,
            )
