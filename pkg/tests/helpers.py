"""Shared fixtures: closed-form chains and random well-posed instances."""

import numpy as np

from chaingrad.families import ParamKernelFamily
from chaingrad.kernels import FiniteFunction, FiniteKernel, StateSpace, WeightFunction
from chaingrad.mc import TabularRecursion, linear_pmf, quadratic_pmf
from chaingrad.mc.embed import induced_family
from chaingrad.random_horizon import TargetProblem


def hitting_time_family(theta0=0.5, eps=0.05):
    """Absorbing chain: stay in state 0 w.p. 1-theta, exit to state 1 w.p.
    theta (absorbing).  E[hitting time of 1 from 0] = 1/theta."""
    space = StateSpace(("in", "out"))
    base = FiniteKernel(space, [[1.0 - theta0, theta0], [0.0, 1.0]])
    zeros = np.zeros((2, 2))

    def density(theta):
        return np.array([[(1.0 - theta) / (1.0 - theta0), theta / theta0], [1.0, 1.0]])

    score = np.array([[-1.0 / (1.0 - theta0), 1.0 / theta0], [0.0, 0.0]])
    return ParamKernelFamily(
        base, theta0, eps, (0.0, 1.0),
        density=density,
        score=lambda t: score,
        higher_scores=(lambda t: zeros, lambda t: zeros),
    )


def hitting_time_problem(theta0=0.5, eps=0.05):
    fam = hitting_time_family(theta0, eps)
    reward = FiniteFunction(fam.space, [1.0, 0.0])
    return TargetProblem(fam, ["in"], reward)


def exit_recursion(np_rng, n_states, n_exit, n_letters=6, theta0=0.5, eps=0.05,
                   exit_weight=2.0, quadratic=False):
    """Random tabular recursion whose letter 0 always jumps into the exit
    block (last n_exit states, absorbing), guaranteeing contraction of the
    interior kernel in one step."""
    interior = n_states - n_exit
    table = np_rng.integers(0, n_states, size=(n_states, n_letters))
    table[:, 0] = np_rng.integers(interior, n_states, size=n_states)
    table[interior:, :] = np.arange(interior, n_states)[:, None].repeat(n_letters, axis=1)
    rho0 = np_rng.uniform(0.5, 1.5, size=n_letters)
    rho0[0] = exit_weight
    rho0 /= rho0.sum()
    d1 = np_rng.uniform(-1.0, 1.0, size=n_letters)
    d1 -= d1.mean()
    d1 *= 0.2 * float(np.min(rho0)) / max(float(np.max(np.abs(d1))) * 2 * eps, 1e-12)
    if quadratic:
        d2 = np_rng.uniform(-1.0, 1.0, size=n_letters)
        d2 -= d2.mean()
        d2 *= 0.2 * float(np.min(rho0)) / max(float(np.max(np.abs(d2))) * (2 * eps) ** 2, 1e-12)
        pmf, derivs = quadratic_pmf(rho0, d1, d2, theta0)
    else:
        pmf, derivs = linear_pmf(rho0, d1, theta0)
    return TabularRecursion(
        table, pmf, derivs, theta0, eps, interval=(theta0 - 2 * eps, theta0 + 2 * eps)
    )


def random_problem(np_rng, n_states=8, n_exit=2, quadratic=False, theta0=0.5,
                   eps=0.05, discounted=True):
    """(problem, recursion, payoff arrays): a random contracting instance."""
    rec = exit_recursion(np_rng, n_states, n_exit, theta0=theta0, eps=eps,
                         quadratic=quadratic)
    fam = induced_family(rec)
    interior = n_states - n_exit
    f = np_rng.uniform(-1.0, 1.0, size=n_states)
    g = -np_rng.uniform(0.0, 0.2, size=n_states) if discounted else np.zeros(n_states)
    problem = TargetProblem(
        fam,
        list(range(interior)),
        FiniteFunction(fam.space, f),
        FiniteFunction(fam.space, g),
    )
    return problem, rec, f, g


def unit_weight(problem):
    return WeightFunction.ones(problem.interior_space)
