"""Weighted norms, kernel calculus, and resolvent solves.

Derived expectations are computed by independent oracles (entry
enumeration, random-h maximization, truncated Neumann sums) and frozen.
"""

import numpy as np
import pytest

from chaingrad.errors import ContractionError, DimensionMismatch, ModelError
from chaingrad.kernels import (
    FiniteFunction,
    FiniteKernel,
    FiniteMeasure,
    StateSpace,
    WeightFunction,
    apply,
    apply_measure,
    compose,
    contraction_power,
    measure_norm,
    operator_norm,
    pair,
    resolvent_solve,
    weighted_sup_norm,
)

S2 = StateSpace(("a", "b"))


def _wrap(space, Q=None, h=None, eta=None, w=None):
    out = []
    if Q is not None:
        out.append(FiniteKernel(space, Q, signed=True))
    if h is not None:
        out.append(FiniteFunction(space, h))
    if eta is not None:
        out.append(FiniteMeasure(space, eta))
    if w is not None:
        out.append(WeightFunction(space, w))
    return out[0] if len(out) == 1 else tuple(out)


def _random_instance(rng, n=None, signed=True):
    n = n or int(rng.integers(1, 9))
    space = StateSpace.of_size(n)
    Q = rng.normal(size=(n, n)) if signed else rng.uniform(0, 1, size=(n, n))
    w = WeightFunction(space, 1.0 + rng.uniform(0, 4, size=n))
    return space, FiniteKernel(space, Q, signed=True), w


class TestWeightedSupNorm:
    def test_zero_function(self):
        h, w = _wrap(S2, h=[0.0, 0.0], w=[1.0, 7.0])
        assert weighted_sup_norm(h, w) == 0.0

    def test_ratio_one_when_h_equals_w(self):
        h, w = _wrap(S2, h=[1.5, 4.0], w=[1.5, 4.0])
        assert weighted_sup_norm(h, w) == 1.0

    def test_enumeration_oracle(self):
        # ratios 3/1 and 4/2: the max is 3
        h, w = _wrap(S2, h=[3.0, -4.0], w=[1.0, 2.0])
        assert weighted_sup_norm(h, w) == 3.0

    def test_dimension_mismatch(self):
        h = FiniteFunction(S2, [1.0, 2.0])
        w = WeightFunction(StateSpace.of_size(3), [1.0, 1.0, 1.0])
        with pytest.raises(DimensionMismatch):
            weighted_sup_norm(h, w)


class TestOperatorNorm:
    def test_identity(self):
        Q, w = _wrap(S2, Q=np.eye(2), w=[1.0, 3.0])
        assert operator_norm(Q, w) == 1.0

    def test_stochastic_with_unit_weight(self):
        Q = FiniteKernel(S2, [[0.3, 0.7], [0.5, 0.5]])
        assert operator_norm(Q, WeightFunction.ones(S2)) == 1.0

    def test_weighted_row_sum_oracle(self):
        # row 1: (0.5*1 + 0.25*2)/1 = 1.0; row 2: (0.1 + 0.4)/2 = 0.25
        Q, w = _wrap(S2, Q=[[0.5, -0.25], [0.1, 0.2]], w=[1.0, 2.0])
        assert operator_norm(Q, w) == pytest.approx(1.0, abs=1e-15)

    def test_matches_sup_over_h(self):
        # the closed form must dominate random unit-norm h and be attained
        # by the sign-pattern h(y) = sign(Q(x*, y)) w(y)
        rng = np.random.default_rng(42)
        for _ in range(100):
            space, Q, w = _random_instance(rng)
            norm = operator_norm(Q, w)
            best = 0.0
            for _ in range(1000):
                h = rng.normal(size=space.size)
                h = h / weighted_sup_norm(FiniteFunction(space, h), w)
                val = weighted_sup_norm(apply(Q, FiniteFunction(space, h)), w)
                best = max(best, val)
            assert best <= norm + 1e-12
            x_star = int(
                np.argmax((np.abs(Q.entries) @ w.values) / w.values)
            )
            h_star = np.sign(Q.entries[x_star]) * w.values
            attained = weighted_sup_norm(apply(Q, FiniteFunction(space, h_star)), w)
            assert attained == pytest.approx(norm, rel=1e-12, abs=1e-12)


class TestMeasureNorm:
    def test_zero(self):
        eta, w = _wrap(S2, eta=[0.0, 0.0], w=[1.0, 5.0])
        assert measure_norm(eta, w) == 0.0

    def test_probability_total_mass(self):
        eta = FiniteMeasure(S2, [0.25, 0.75])
        assert measure_norm(eta, WeightFunction.ones(S2)) == 1.0

    def test_weighted_oracle(self):
        # 0.5 * 1 + 0.5 * 3 = 2
        eta, w = _wrap(S2, eta=[0.5, -0.5], w=[1.0, 3.0])
        assert measure_norm(eta, w) == 2.0


class TestCalculus:
    def test_compose_identity(self):
        rng = np.random.default_rng(0)
        space, Q, _ = _random_instance(rng, n=4)
        I = FiniteKernel(space, np.eye(4))
        assert np.array_equal(compose(I, Q).entries, Q.entries)

    def test_apply_row_sums(self):
        Q = FiniteKernel(S2, [[0.2, 0.3], [0.4, 0.1]])
        ones = FiniteFunction(S2, [1.0, 1.0])
        assert apply(Q, ones).values == pytest.approx([0.5, 0.5])

    def test_pair_point_mass(self):
        h = FiniteFunction(S2, [3.5, -1.0])
        delta = FiniteMeasure(S2, [1.0, 0.0])
        assert pair(delta, h) == 3.5

    def test_measure_acts_left(self):
        rng = np.random.default_rng(3)
        space, Q, _ = _random_instance(rng, n=5)
        eta = FiniteMeasure(space, rng.normal(size=5))
        out = apply_measure(eta, Q)
        assert out.weights == pytest.approx(eta.weights @ Q.entries)

    def test_submultiplicativity(self):
        rng = np.random.default_rng(7)
        for _ in range(300):
            space, Q1, w = _random_instance(rng)
            Q2 = FiniteKernel(space, rng.normal(size=(space.size, space.size)), signed=True)
            lhs = operator_norm(compose(Q1, Q2), w)
            rhs = operator_norm(Q1, w) * operator_norm(Q2, w)
            assert lhs <= rhs + 1e-12 * max(1.0, rhs)

    def test_bound_chain(self):
        rng = np.random.default_rng(11)
        for _ in range(300):
            space, Q, w = _random_instance(rng)
            h = FiniteFunction(space, rng.normal(size=space.size))
            eta = FiniteMeasure(space, rng.normal(size=space.size))
            tol = 1e-12
            assert weighted_sup_norm(apply(Q, h), w) <= operator_norm(Q, w) * weighted_sup_norm(h, w) + tol
            assert measure_norm(apply_measure(eta, Q), w) <= measure_norm(eta, w) * operator_norm(Q, w) + tol
            assert abs(pair(eta, h)) <= measure_norm(eta, w) * weighted_sup_norm(h, w) + tol


class TestContractionPower:
    def test_half_identity(self):
        space = StateSpace.of_size(3)
        Q = FiniteKernel(space, 0.5 * np.eye(3))
        assert contraction_power(Q, WeightFunction.ones(space)) == 1

    def test_identity_inconclusive(self):
        space = StateSpace.of_size(2)
        Q = FiniteKernel(space, np.eye(2))
        assert contraction_power(Q, WeightFunction.ones(space), m_max=32) is None

    def test_power_two_oracle(self):
        # |||Q||| = 1.2, |||Q^2||| = 0.48 by direct matrix powers
        Q = FiniteKernel(S2, [[0.0, 1.2], [0.4, 0.0]])
        w = WeightFunction.ones(S2)
        assert operator_norm(Q, w) == pytest.approx(1.2)
        Q2 = compose(Q, Q)
        assert operator_norm(Q2, w) == pytest.approx(0.48)
        assert contraction_power(Q, w) == 2

    def test_one_state_space(self):
        space = StateSpace.of_size(1)
        Q = FiniteKernel(space, [[0.9]])
        assert contraction_power(Q, WeightFunction.ones(space)) == 1


class TestResolvent:
    def test_zero_kernel(self):
        space = StateSpace.of_size(3)
        K = FiniteKernel(space, np.zeros((3, 3)))
        f = FiniteFunction(space, [1.0, -2.0, 3.0])
        u = resolvent_solve(K, f, WeightFunction.ones(space))
        assert u.values == pytest.approx(f.values)

    def test_scaled_identity_geometric_series(self):
        space = StateSpace.of_size(2)
        for c in (0.5, -0.7):
            K = FiniteKernel(space, c * np.eye(2), signed=True)
            f = FiniteFunction(space, [2.0, 1.0])
            u = resolvent_solve(K, f, WeightFunction.ones(space))
            assert u.values == pytest.approx(f.values / (1.0 - c), rel=1e-14)

    def test_truncated_neumann_oracle(self):
        rng = np.random.default_rng(21)
        space = StateSpace.of_size(6)
        w = WeightFunction.ones(space)
        for _ in range(20):
            Q = rng.uniform(0, 1, size=(6, 6))
            Q *= 0.9 / Q.sum(axis=1, keepdims=True)
            K = FiniteKernel(space, Q)
            f = FiniteFunction(space, np.ones(6))
            u = resolvent_solve(K, f, w)
            N = 40
            partial = np.zeros(6)
            term = f.values.copy()
            for _ in range(N + 1):
                partial += term
                term = Q @ term
            bound = 0.9 ** (N + 1) * np.max(np.abs(u.values))
            assert np.max(np.abs(u.values - partial)) <= bound + 1e-12

    def test_resolvent_identity_randomized(self):
        rng = np.random.default_rng(33)
        for _ in range(200):
            n = int(rng.integers(1, 10))
            space = StateSpace.of_size(n)
            Q = rng.normal(size=(n, n))
            Q *= 0.8 / max(np.abs(Q).sum(axis=1).max(), 1e-9)
            K = FiniteKernel(space, Q, signed=True)
            f = FiniteFunction(space, rng.normal(size=n))
            u = resolvent_solve(K, f, WeightFunction.ones(space))
            residual = u.values - Q @ u.values - f.values
            assert np.max(np.abs(residual)) <= 1e-10

    def test_refusal_with_diagnostics(self):
        space = StateSpace.of_size(2)
        K = FiniteKernel(space, np.eye(2))
        f = FiniteFunction(space, [1.0, 1.0])
        with pytest.raises(ContractionError) as err:
            resolvent_solve(K, f, WeightFunction.ones(space), m_max=8)
        assert err.value.norms  # diagnostic norms attached
        assert "contraction" in (err.value.condition or "")


class TestValidation:
    def test_weights_below_one_rejected(self):
        with pytest.raises(ModelError):
            WeightFunction(S2, [0.5, 1.0])

    def test_negative_entries_need_signed_flag(self):
        with pytest.raises(ModelError):
            FiniteKernel(S2, [[-0.1, 0.2], [0.0, 0.1]])

    def test_duplicate_labels_rejected(self):
        with pytest.raises(ModelError):
            StateSpace(("x", "x"))

    def test_stochastic_check(self):
        P = FiniteKernel(S2, [[0.4, 0.6], [0.2, 0.8]])
        assert P.is_stochastic()
        Q = FiniteKernel(S2, [[0.4, 0.5], [0.2, 0.8]])
        assert not Q.is_stochastic()

    def test_immutability(self):
        Q = FiniteKernel(S2, [[0.4, 0.6], [0.2, 0.8]])
        with pytest.raises(ValueError):
            Q.entries[0, 0] = 1.0
