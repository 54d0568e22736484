"""Config-driven command line front end.

Usage: ``chaingrad <kind> <config.yaml> [--seed N] [--out-dir DIR]``

The subcommand names the experiment kind and must match the config's
``kind`` field.  Configs are YAML with a strict schema (unknown keys are
rejected).  Outputs land in the out directory: deterministic CSV bodies
(17 significant digits, byte-identical across reruns of the same config
and seed), a human-readable ``summary.txt``, and ``run.json`` with the
config hash, package version, wall time, and an output manifest (the one
file allowed to differ between reruns).

Exit codes: 0 success, 2 config/schema violation, 3 model refusal (failed
precondition, e.g. an inconclusive contraction check), 4 numerical
failure, 5 simulation truncation cap.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import yaml

try:
    import jsonschema
except ImportError:  # pragma: no cover
    jsonschema = None

from . import __version__, families, random_horizon, stationary
from .errors import (
    ChaingradError,
    ContractionError,
    DimensionMismatch,
    ModelError,
    NumericalError,
    SchemaError,
    TruncationError,
)
from .gg1 import (
    GG1Budget,
    GG1Model,
    appendix_bound_probe,
    discretize_gg1,
    gg1_drift_verification,
    run_gg1_derivative_experiment,
)
from .kernels import (
    FiniteFunction,
    FiniteKernel,
    FiniteMeasure,
    StateSpace,
    WeightFunction,
    operator_norm,
)
from .matio import format_float
from .mc import (
    InterarrivalSpec,
    PayoffSpec,
    RngStream,
    TabularRecursion,
    estimate_stationary_derivative,
    estimate_stationary_mean,
    estimate_u_star,
    estimate_u_star_derivative,
    linear_pmf,
)

KINDS = (
    "norm",
    "rh-solve",
    "rh-deriv",
    "stat-deriv",
    "lyapunov-check",
    "minorization",
    "mc-estimate",
    "gg1",
    "delta-ci",
)

EXIT_SCHEMA = 2
EXIT_REFUSAL = 3
EXIT_NUMERICAL = 4
EXIT_TRUNCATION = 5


# -- schema -------------------------------------------------------------------

_NUM = {"type": "number"}
_INT = {"type": "integer", "minimum": 0}
_VEC = {"type": "array", "items": _NUM, "minItems": 1}
_MAT = {"type": "array", "items": _VEC, "minItems": 1}

_INTERARRIVAL = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["exponential", "deterministic", "tabulated"]},
        "rate": _NUM,
        "value": _NUM,
        "values": _VEC,
        "probs": _VEC,
        "tabulate": {"type": "integer", "minimum": 2},
    },
}

_FAMILY = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["two-state", "pareto-scale", "tabulated"]},
        "q": _NUM,
        "theta0": _NUM,
        "eps": _NUM,
        "alpha": _NUM,
        "p": _NUM,
        "interarrival": _INTERARRIVAL,
        "grid_max": _NUM,
        "grid_size": {"type": "integer", "minimum": 2},
        "theta_grid": _VEC,
        "base": _MAT,
        "densities": {"type": "array", "items": _MAT},
    },
}

_PROBLEM = {
    "type": "object",
    "additionalProperties": False,
    "required": ["family", "interior", "reward"],
    "properties": {
        "family": _FAMILY,
        "interior": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
        "reward": _VEC,
        "discount": _VEC,
    },
}

_GG1 = {
    "type": "object",
    "additionalProperties": False,
    "required": ["alpha", "theta0", "interarrival"],
    "properties": {
        "alpha": _NUM,
        "theta0": _NUM,
        "p": _NUM,
        "eps": _NUM,
        "interarrival": _INTERARRIVAL,
    },
}

_COMMON = {
    "kind": {"enum": list(KINDS)},
    "seed": {"type": "integer"},
    "out_dir": {"type": "string"},
}


def _schema(required, extra):
    props = dict(_COMMON)
    props.update(extra)
    return {
        "type": "object",
        "additionalProperties": False,
        "required": ["kind"] + required,
        "properties": props,
    }


SCHEMAS = {
    "norm": _schema(
        [],
        {
            "kernel": _MAT,
            "signed": {"type": "boolean"},
            "family": _FAMILY,
            "weight": _VEC,
        },
    ),
    "rh-solve": _schema(
        ["problem"],
        {"problem": _PROBLEM, "weight": _VEC, "theta": _NUM, "m_max": _INT},
    ),
    "rh-deriv": _schema(
        ["problem"],
        {"problem": _PROBLEM, "weight": _VEC, "order": {"type": "integer", "minimum": 1}, "m_max": _INT},
    ),
    "stat-deriv": _schema(
        ["family", "f"],
        {
            "family": _FAMILY,
            "f": _VEC,
            "order": {"type": "integer", "minimum": 1},
            "sweep": {"type": "array", "items": _NUM},
        },
    ),
    "lyapunov-check": _schema(
        ["check"],
        {
            "check": {"enum": ["random-horizon", "geometric", "subgeometric"]},
            "problem": _PROBLEM,
            "certificate": {
                "type": "object",
                "additionalProperties": False,
                "properties": {
                    "v": {"type": "array", "items": _VEC, "minItems": 1},
                    "eps": _NUM,
                    "w": _VEC,
                    "r": _NUM,
                    "c": _NUM,
                    "small_set": {"type": "array", "items": {"type": "integer"}},
                    "q": _VEC,
                    "v0": _VEC,
                    "v1": _VEC,
                    "kappa_rho": _NUM,
                    "c0": _NUM,
                    "c1": _NUM,
                },
            },
            "family": _FAMILY,
            "kernel": _MAT,
            "theta_grid_points": {"type": "integer", "minimum": 2},
        },
    ),
    "minorization": _schema(
        ["family", "small_set"],
        {
            "family": _FAMILY,
            "small_set": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
            "power_max": {"type": "integer", "minimum": 1},
        },
    ),
    "mc-estimate": _schema(
        ["estimator", "model"],
        {
            "estimator": {
                "enum": ["u-star", "u-star-deriv", "stationary-mean", "stationary-deriv"]
            },
            "model": {
                "type": "object",
                "additionalProperties": False,
                "required": ["kind"],
                "properties": {
                    "kind": {"enum": ["tabular", "gg1"]},
                    "table": {"type": "array", "items": {"type": "array", "items": {"type": "integer"}}},
                    "pmf0": _VEC,
                    "direction": _VEC,
                    "theta0": _NUM,
                    "eps": _NUM,
                    "gg1": _GG1,
                },
            },
            "payoff": {
                "type": "object",
                "additionalProperties": False,
                "properties": {"reward": _VEC, "discount": _VEC, "interior": {"type": "array", "items": {"type": "integer"}}},
            },
            "x0": {"type": "integer"},
            "regen": {"type": "integer"},
            "f": _VEC,
            "budgets": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 1},
            "n_cycles": {"type": "integer", "minimum": 2},
            "warmup": _INT,
            "inner_cycles": {"type": "integer", "minimum": 1},
            "cap": {"type": "integer", "minimum": 1},
        },
    ),
    "gg1": _schema(
        ["gg1"],
        {
            "gg1": _GG1,
            "budget": {
                "type": "object",
                "additionalProperties": False,
                "properties": {
                    "n_pi_cycles": {"type": "integer", "minimum": 2},
                    "n_outer": {"type": "integer", "minimum": 2},
                    "warmup": _INT,
                    "inner_cycles": {"type": "integer", "minimum": 1},
                    "fd_steps": {"type": "integer", "minimum": 2},
                    "fd_warmup": _INT,
                    "fd_batches": {"type": "integer", "minimum": 2},
                },
            },
            "h_fd": _NUM,
            "probe": {
                "type": "object",
                "additionalProperties": False,
                "properties": {
                    "enable": {"type": "boolean"},
                    "h_list": _VEC,
                    "x_grid": _VEC,
                    "truncation_m": _NUM,
                    "n_mc": {"type": "integer", "minimum": 2},
                    "n_pi_cycles": {"type": "integer", "minimum": 2},
                },
            },
            "drift": {
                "type": "object",
                "additionalProperties": False,
                "properties": {
                    "enable": {"type": "boolean"},
                    "x_max": _NUM,
                    "n_x": {"type": "integer", "minimum": 4},
                    "r_exponent": _NUM,
                    "a1": _NUM,
                    "a2": _NUM,
                    "c": _NUM,
                },
            },
        },
    ),
    "delta-ci": _schema(
        ["alpha_hat", "grad_hat", "c_hat", "n", "delta"],
        {
            "alpha_hat": _NUM,
            "grad_hat": _NUM,
            "c_hat": {"type": "number", "minimum": 0},
            "n": {"type": "integer", "minimum": 1},
            "delta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        },
    ),
}


def validate_config(config) -> dict:
    if not isinstance(config, dict):
        raise SchemaError("config must be a mapping")
    kind = config.get("kind")
    if kind not in KINDS:
        raise SchemaError(f"unknown or missing kind {kind!r}; expected one of {KINDS}")
    if jsonschema is None:  # pragma: no cover
        raise SchemaError("jsonschema is required to validate configs")
    try:
        jsonschema.validate(config, SCHEMAS[kind])
    except jsonschema.ValidationError as exc:
        raise SchemaError(f"config rejected: {exc.message}") from exc
    return config


# -- model builders -----------------------------------------------------------


def build_interarrival(block) -> InterarrivalSpec:
    kind = block["kind"]
    if kind == "exponential":
        return InterarrivalSpec.exponential(block["rate"])
    if kind == "deterministic":
        return InterarrivalSpec.deterministic(block["value"])
    return InterarrivalSpec.tabulated(block["values"], block["probs"])


def two_state_family(q: float, theta0: float, eps: float) -> families.ParamKernelFamily:
    """P(theta) = [[1-theta, theta], [q, 1-q]], the workhorse closed-form
    example (stationary law (q, theta)/(q+theta))."""
    if not (0.0 < q < 1.0 and 0.0 < theta0 < 1.0):
        raise ModelError("two-state family needs q, theta0 in (0, 1)")
    base = FiniteKernel(StateSpace(("a", "b")), [[1.0 - theta0, theta0], [q, 1.0 - q]])
    zeros = np.zeros((2, 2))
    score_mat = np.array([[-1.0 / (1.0 - theta0), 1.0 / theta0], [0.0, 0.0]])

    def density(theta: float) -> np.ndarray:
        return np.array(
            [[(1.0 - theta) / (1.0 - theta0), theta / theta0], [1.0, 1.0]]
        )

    return families.ParamKernelFamily(
        base,
        theta0,
        eps,
        (0.0, 1.0),
        density=density,
        score=lambda theta: score_mat,
        higher_scores=(lambda theta: zeros, lambda theta: zeros),
    )


def tabulated_family(theta_grid, base_entries, densities, eps) -> families.ParamKernelFamily:
    """Family given by density matrices on a theta-grid.

    Densities interpolate linearly in theta; the score at any theta is the
    local central difference of the tabulated matrices (kink-smoothing at
    grid points).  theta0 is the middle grid point and must carry the
    all-ones density.
    """
    grid = np.asarray(theta_grid, dtype=float)
    if grid.ndim != 1 or grid.size < 3 or grid.size % 2 == 0:
        raise ModelError("theta_grid must have odd length >= 3")
    if np.any(np.diff(grid) <= 0):
        raise ModelError("theta_grid must be strictly increasing")
    mats = np.asarray(densities, dtype=float)
    if mats.shape[0] != grid.size:
        raise ModelError("densities must match the theta grid")
    i0 = grid.size // 2
    theta0 = float(grid[i0])
    if eps is None or eps <= 0.0:
        eps = 0.25 * float(grid[-1] - grid[0])
    space = StateSpace(tuple(range(mats.shape[1])))
    base = FiniteKernel(space, base_entries)

    def density(theta: float) -> np.ndarray:
        i = int(np.clip(np.searchsorted(grid, theta) - 1, 0, grid.size - 2))
        t = (theta - grid[i]) / (grid[i + 1] - grid[i])
        return (1.0 - t) * mats[i] + t * mats[i + 1]

    def score(theta: float) -> np.ndarray:
        i = int(np.clip(np.searchsorted(grid, theta), 1, grid.size - 2))
        return (mats[i + 1] - mats[i - 1]) / (grid[i + 1] - grid[i - 1])

    return families.ParamKernelFamily(
        base, theta0, float(eps), (float(grid[0]), float(grid[-1])),
        density=density, score=score,
    )


def build_family(block) -> families.ParamKernelFamily:
    kind = block["kind"]
    if kind == "two-state":
        return two_state_family(block["q"], block["theta0"], block.get("eps", 0.05))
    if kind == "pareto-scale":
        inter_block = dict(block["interarrival"])
        tabulate = inter_block.pop("tabulate", None)
        inter = build_interarrival(inter_block)
        if inter.kind == "exponential":
            from .gg1 import tabulated_from_exponential

            inter = tabulated_from_exponential(inter.rate, tabulate or 32)
        model = GG1Model(
            alpha=block["alpha"],
            theta0=block["theta0"],
            interarrival=inter,
            p_exponent=block.get("p", 1.0),
            eps=block.get("eps", 0.0),
        )
        grid = np.linspace(0.0, block.get("grid_max", 20.0), block.get("grid_size", 40))
        return discretize_gg1(model, grid)
    if kind == "tabulated":
        return tabulated_family(
            block["theta_grid"], block["base"], block["densities"], block.get("eps", 0.0)
        )
    raise SchemaError(f"unknown family kind {kind!r}")


def build_problem(block) -> random_horizon.TargetProblem:
    fam = build_family(block["family"])
    reward = FiniteFunction(fam.space, block["reward"])
    discount = (
        FiniteFunction(fam.space, block["discount"]) if "discount" in block else None
    )
    return random_horizon.TargetProblem(fam, block["interior"], reward, discount)


def build_tabular_recursion(block) -> TabularRecursion:
    pmf, derivs = linear_pmf(block["pmf0"], block["direction"], block["theta0"])
    eps = block.get("eps", 0.05)
    theta0 = block["theta0"]
    return TabularRecursion(
        np.asarray(block["table"], dtype=np.int_), pmf, derivs, theta0, eps,
        interval=(theta0 - 2 * eps, theta0 + 2 * eps),
    )


def build_gg1_model(block) -> GG1Model:
    return GG1Model(
        alpha=block["alpha"],
        theta0=block["theta0"],
        interarrival=build_interarrival(block["interarrival"]),
        p_exponent=block.get("p", 1.0),
        eps=block.get("eps", 0.0),
    )


# -- output helpers -----------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format_float(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (np.floating,)):
        return format_float(float(value))
    return str(value)


class _Outputs:
    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.files = []
        self.summary_lines = []

    def write_csv(self, name: str, header, rows):
        path = self.out_dir / name
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
        self.files.append(path)
        return path

    def write_json(self, name: str, payload):
        path = self.out_dir / name
        path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")
        self.files.append(path)
        return path

    def say(self, line: str):
        self.summary_lines.append(line)


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _weight_for(space, block_weight) -> WeightFunction:
    if block_weight is None:
        return WeightFunction.ones(space)
    return WeightFunction(space, block_weight)


# -- kind runners --------------------------------------------------------------


def _run_norm(config, out: _Outputs, rng):
    if "kernel" in config:
        entries = np.asarray(config["kernel"], dtype=float)
        space = StateSpace(tuple(range(entries.shape[0])))
        kernel = FiniteKernel(space, entries, signed=config.get("signed", True))
    elif "family" in config:
        kernel = build_family(config["family"]).base
        space = kernel.space
    else:
        raise SchemaError("norm needs a kernel or a family")
    w = _weight_for(kernel.space, config.get("weight"))
    value = operator_norm(kernel, w)
    out.say(f"operator_norm = {_fmt(value)}")
    out.write_csv("norm.csv", ["quantity", "value"], [("operator_norm", value)])


def _run_rh_solve(config, out: _Outputs, rng):
    problem = build_problem(config["problem"])
    w = _weight_for(problem.interior_space, config.get("weight"))
    theta = config.get("theta", problem.family.theta0)
    u = random_horizon.compute_u_star(problem, theta, w, m_max=config.get("m_max", 64))
    out.say(f"u_star solved at theta = {_fmt(theta)} on {u.space.size} states")
    out.write_csv(
        "u_star.csv",
        ["state", "value"],
        [(lab, val) for lab, val in zip(u.space.labels, u.values)],
    )


def _run_rh_deriv(config, out: _Outputs, rng):
    problem = build_problem(config["problem"])
    w = _weight_for(problem.interior_space, config.get("weight"))
    order = config.get("order", 1)
    derivs = random_horizon.higher_derivatives(
        problem, w, order, m_max=config.get("m_max", 64)
    )
    u = random_horizon.compute_u_star(problem, problem.family.theta0, w)
    header = ["state", "value"] + [f"order{k}" for k in range(1, order + 1)]
    rows = []
    for i, lab in enumerate(u.space.labels):
        rows.append([lab, u.values[i]] + [d.values[i] for d in derivs])
    out.say(f"derivatives of orders 1..{order} at theta0")
    out.write_csv("u_star_derivs.csv", header, rows)


def _run_stat_deriv(config, out: _Outputs, rng):
    fam = build_family(config["family"])
    f = FiniteFunction(fam.space, config["f"])
    order = config.get("order", 1)
    pi = stationary.stationary_distribution(fam.base)
    derivs = stationary.higher_stationary_derivatives(fam, order)
    alpha_prime = stationary.stationary_functional_derivative(fam, f)
    measure_route = float(derivs[0].weights @ f.values)
    out.say(f"alpha'(theta0) = {_fmt(alpha_prime)}")
    out.write_csv(
        "stationary.csv",
        ["state", "pi"] + [f"pi_deriv{k}" for k in range(1, order + 1)],
        [
            [lab, pi.weights[i]] + [d.weights[i] for d in derivs]
            for i, lab in enumerate(fam.space.labels)
        ],
    )
    out.write_csv(
        "alpha_prime.csv",
        ["route", "value"],
        [
            ("poisson", alpha_prime),
            ("measure", measure_route),
            ("discrepancy", alpha_prime - measure_route),
        ],
    )
    sweep = config.get("sweep", None)
    if sweep is not None:
        rows = []
        for theta in sweep:
            P = families.eval_kernel(fam, float(theta))
            rows.append((float(theta), stationary.stationary_distribution(P).weights @ f.values))
        out.write_csv("alpha_sweep.csv", ["theta", "alpha"], rows)


def _run_lyapunov_check(config, out: _Outputs, rng):
    mode = config["check"]
    cert_block = config.get("certificate", {})
    if mode == "random-horizon":
        problem = build_problem(config["problem"])
        cert = random_horizon.LyapunovCertificateRH(
            cert_block["v"], eps=cert_block.get("eps")
        )
        report = random_horizon.verify_lyapunov_rh(
            problem, cert, grid_points=config.get("theta_grid_points", 21)
        )
        out.say(f"random-horizon certificate passed = {report.passed}")
        out.write_json("report.json", report.to_dict())
        out.write_csv(
            "slacks.csv",
            ["order", "theta", "state", "slack"],
            list(report.slack_rows()),
        )
        return
    if mode == "geometric":
        if "family" in config:
            kernel = build_family(config["family"]).base
        else:
            entries = np.asarray(config["kernel"], dtype=float)
            kernel = FiniteKernel(StateSpace(tuple(range(entries.shape[0]))), entries)
        cert = stationary.GeometricDriftCertificate(
            w=WeightFunction(kernel.space, cert_block["w"]),
            r=cert_block["r"],
            c=cert_block["c"],
            small_set=tuple(cert_block.get("small_set", [])),
        )
        report = stationary.check_geometric_drift(kernel, cert)
        out.say(f"geometric drift passed = {report.passed}")
        out.write_json("report.json", report.to_dict())
        out.write_csv(
            "slacks.csv",
            ["state", "slack"],
            list(zip(report.states, report.slack)),
        )
        return
    fam = build_family(config["family"])
    cert = stationary.StationaryCertificate(
        q=cert_block["q"],
        v0=cert_block["v0"],
        v1=cert_block["v1"],
        kappa=stationary.power_kappa(cert_block.get("kappa_rho", 1.5)),
        small_set=tuple(cert_block.get("small_set", [])),
        c0=cert_block["c0"],
        c1=cert_block["c1"],
    )
    report = stationary.check_subgeometric_drift(
        fam, cert, grid_points=config.get("theta_grid_points", 9)
    )
    out.say(f"subgeometric drift passed = {report.passed}")
    out.write_json("report.json", report.to_dict())
    out.write_csv(
        "slacks.csv",
        ["theta", "state", "value_slack", "deriv_slack"],
        list(report.slack_rows()),
    )


def _run_minorization(config, out: _Outputs, rng):
    fam = build_family(config["family"])
    cert = stationary.check_minorization(
        fam, config["small_set"], power_max=config.get("power_max", 8)
    )
    if cert is None:
        out.say("minorization: inconclusive up to power_max")
        out.write_csv("minorization.csv", ["power", "lambda"], [])
        return
    out.say(f"minorization found at power {cert.power} with lambda = {_fmt(cert.lam)}")
    out.write_csv("minorization.csv", ["power", "lambda"], [(cert.power, cert.lam)])
    out.write_csv(
        "phi.csv",
        ["state", "mass"],
        list(zip(cert.phi.space.labels, cert.phi.weights)),
    )


def _estimate_rows(estimates, seed):
    return [
        (e.method, e.point, e.std_error, e.n_samples, seed)
        for e in estimates
    ]


def _run_mc_estimate(config, out: _Outputs, rng):
    seed = config.get("seed", 0)
    model_block = config["model"]
    cap = config.get("cap", 10_000_000)
    estimates = []
    budgets = config.get("budgets", [100_000])
    if model_block["kind"] == "tabular":
        rec = build_tabular_recursion(model_block)
        estimator = config["estimator"]
        if estimator in ("u-star", "u-star-deriv"):
            pay_block = config["payoff"]
            mask = np.zeros(rec.n_states, dtype=np.uint8)
            mask[np.asarray(pay_block["interior"], dtype=int)] = 1
            payoff = PayoffSpec.from_arrays(
                pay_block["reward"],
                pay_block.get("discount", np.zeros(rec.n_states)),
                mask,
            )
            fn = estimate_u_star if estimator == "u-star" else estimate_u_star_derivative
            for bi, n in enumerate(budgets):
                estimates.append(
                    fn(rec, payoff, config.get("x0", 0), int(n), rng.child(bi), cap=cap)
                )
        else:
            fvals = np.asarray(config["f"], dtype=float)
            f = lambda x: float(fvals[x])  # noqa: E731
            regen = config.get("regen", 0)
            for bi, n in enumerate(budgets):
                if estimator == "stationary-mean":
                    estimates.append(
                        estimate_stationary_mean(
                            rec, f, regen, config.get("x0", 0), int(n),
                            rng.child(bi), cap=cap,
                        )
                    )
                else:
                    estimates.append(
                        estimate_stationary_derivative(
                            rec, f, regen,
                            n_outer=int(n),
                            n_cycles=config.get("n_cycles", int(n)),
                            warmup=config.get("warmup", 64),
                            rng=rng.child(bi),
                            x0=config.get("x0", 0),
                            inner_cycles=config.get("inner_cycles", 1),
                            cap=cap,
                        )
                    )
    else:
        model = build_gg1_model(model_block["gg1"])
        rec = model.recursion()
        estimator = config["estimator"]
        if estimator not in ("stationary-mean", "stationary-deriv"):
            raise SchemaError("gg1 models support the stationary estimators only")
        for bi, n in enumerate(budgets):
            if estimator == "stationary-mean":
                estimates.append(
                    estimate_stationary_mean(
                        rec, None, None, 0.0, int(n), rng.child(bi),
                        cap=cap, p_exponent=model.p_exponent,
                    )
                )
            else:
                estimates.append(
                    estimate_stationary_derivative(
                        rec, None, None,
                        n_outer=int(n),
                        n_cycles=config.get("n_cycles", int(n)),
                        warmup=config.get("warmup", 128),
                        rng=rng.child(bi),
                        x0=0.0,
                        inner_cycles=config.get("inner_cycles", 1),
                        cap=cap,
                        p_exponent=model.p_exponent,
                    )
                )
    out.write_csv(
        "estimates.csv",
        ["method", "point", "std_error", "n", "seed"],
        _estimate_rows(estimates, seed),
    )
    if len(budgets) > 1:
        out.write_csv(
            "se_vs_budget.csv",
            ["n", "std_error"],
            [(e.n_samples, e.std_error) for e in estimates],
        )
    for e in estimates:
        out.say(
            f"{e.method}: {_fmt(e.point)} +/- {_fmt(e.std_error)} (n = {e.n_samples})"
        )


def _run_gg1(config, out: _Outputs, rng):
    seed = config.get("seed", 0)
    model = build_gg1_model(config["gg1"])
    budget = GG1Budget(**config.get("budget", {}))
    report = run_gg1_derivative_experiment(
        model, budget, rng.child(0), h_fd=config.get("h_fd")
    )
    rows = [
        ("lr-stationary-deriv", report.lr.point, report.lr.std_error,
         report.lr.n_samples, seed),
        ("crn-finite-difference", report.fd_point, report.fd_std_error,
         budget.fd_steps, seed),
    ]
    if report.oracle_derivative is not None:
        rows.append(("pk-oracle", report.oracle_derivative, 0.0, 0, seed))
    out.write_csv(
        "derivative.csv", ["method", "point", "std_error", "n", "seed"], rows
    )
    out.write_json("gg1_report.json", report.to_dict())
    out.say(
        f"lr derivative = {_fmt(report.lr.point)} +/- {_fmt(report.lr.std_error)}; "
        f"fd = {_fmt(report.fd_point)} +/- {_fmt(report.fd_std_error)}"
    )
    if report.oracle_derivative is not None:
        out.say(f"oracle derivative = {_fmt(report.oracle_derivative)}")
    drift_block = config.get("drift", {"enable": True})
    if drift_block.get("enable", True):
        drift = gg1_drift_verification(
            model,
            a1=drift_block.get("a1"),
            a2=drift_block.get("a2"),
            c=drift_block.get("c"),
            r_exponent=drift_block.get("r_exponent"),
            x_max=drift_block.get("x_max", 200.0),
            n_x=drift_block.get("n_x", 48),
        )
        out.write_csv(
            "drift_slack.csv",
            ["x", "value_slack", "deriv_slack"],
            list(drift.curve_rows()),
        )
        out.write_json("drift_report.json", drift.to_dict())
        out.say(f"drift verification passed = {drift.passed} (c = {_fmt(drift.c)})")
    probe_block = config.get("probe", {"enable": False})
    if probe_block.get("enable", False):
        probe = appendix_bound_probe(
            model,
            probe_block.get("h_list", [0.02, 0.01, 0.005]),
            probe_block.get("x_grid", [0.0, 5.0, 20.0, 80.0]),
            truncation_m=probe_block.get("truncation_m", 1e6),
            n_mc=probe_block.get("n_mc", 200_000),
            rng=rng.child(5),
            n_pi_cycles=probe_block.get("n_pi_cycles", 200_000),
        )
        rows = []
        for xi, x in enumerate(probe.x_grid):
            for hi, h in enumerate(probe.h_grid):
                rows.append(
                    (x, h, probe.estimates[xi, hi], probe.std_errors[xi, hi],
                     probe.d_cells[xi, hi])
                )
        out.write_csv(
            "probe.csv", ["x", "h", "estimate", "std_error", "d_cell"], rows
        )
        out.write_json("probe_report.json", probe.to_dict())
        out.say(
            f"probe fitted d = {_fmt(probe.d_fit)}; stable = {probe.stable}"
        )


def _run_delta_ci(config, out: _Outputs, rng):
    interval = delta_ci(
        config["alpha_hat"], config["grad_hat"], config["c_hat"],
        config["n"], config["delta"],
    )
    lo, hi = interval
    out.say(f"CI = [{_fmt(lo)}, {_fmt(hi)}]")
    out.write_csv(
        "ci.csv",
        ["alpha_hat", "lo", "hi", "half_width", "n", "delta"],
        [(config["alpha_hat"], lo, hi, 0.5 * (hi - lo), config["n"], config["delta"])],
    )


def delta_ci(alpha_hat: float, grad_hat: float, c_hat: float, n: int, delta: float):
    """Asymptotic 100(1-delta)% interval for a plug-in performance value.

    Half-width z * sigma / sqrt(n) with sigma = sqrt(grad^2 C) and z the
    standard normal (1 - delta/2) quantile.  Refuses a zero variance
    (grad^2 C must be positive for the limit law to be nondegenerate).
    """
    from scipy.stats import norm

    if not (0.0 < delta < 1.0):
        raise ModelError("confidence level delta must lie in (0, 1)")
    if n < 1:
        raise ModelError("sample size must be positive")
    var = grad_hat * grad_hat * c_hat
    if var <= 0.0:
        raise ModelError(
            "delta-method variance grad^2 * C must be positive; "
            "a zero gradient or covariance gives a degenerate limit"
        )
    z = float(norm.ppf(1.0 - delta / 2.0))
    half = z * math.sqrt(var) / math.sqrt(n)
    return alpha_hat - half, alpha_hat + half


_RUNNERS = {
    "norm": _run_norm,
    "rh-solve": _run_rh_solve,
    "rh-deriv": _run_rh_deriv,
    "stat-deriv": _run_stat_deriv,
    "lyapunov-check": _run_lyapunov_check,
    "minorization": _run_minorization,
    "mc-estimate": _run_mc_estimate,
    "gg1": _run_gg1,
    "delta-ci": _run_delta_ci,
}


def config_hash(config: dict) -> str:
    """Hash of the experiment identity: everything except where outputs go."""
    identity = {k: v for k, v in config.items() if k != "out_dir"}
    return hashlib.sha256(
        json.dumps(identity, sort_keys=True).encode("utf-8")
    ).hexdigest()


def run(config: dict, out_dir=None, seed=None) -> dict:
    """Validate, dispatch, and write outputs; returns the run record."""
    config = validate_config(config)
    if seed is not None:
        config = dict(config, seed=int(seed))
    if out_dir is not None:
        config = dict(config, out_dir=str(out_dir))
    out_path = Path(config.get("out_dir", "out"))
    out_path.mkdir(parents=True, exist_ok=True)
    outputs = _Outputs(out_path)
    rng = RngStream(config.get("seed", 0))
    started = time.perf_counter()
    _RUNNERS[config["kind"]](config, outputs, rng)
    wall = time.perf_counter() - started
    summary = out_path / "summary.txt"
    summary.write_text("".join(line + "\n" for line in outputs.summary_lines))
    manifest = []
    for path in outputs.files + [summary]:
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        manifest.append({"path": path.name, "sha256": digest})
    record = {
        "kind": config["kind"],
        "config_hash": config_hash(config),
        "artifact_version": __version__,
        "seed": config.get("seed", 0),
        "wall_time_s": wall,
        "outputs": manifest,
    }
    (out_path / "run.json").write_text(json.dumps(record, indent=2) + "\n")
    return record


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="chaingrad",
        description="Markov chain performance-measure derivatives: exact solves, "
        "certificate checks, Monte Carlo experiments.",
    )
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run a {kind} experiment from a config file")
        p.add_argument("config", help="path to the YAML config")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out-dir", default=None, help="override config out_dir")
    args = parser.parse_args(argv)

    try:
        try:
            with open(args.config) as fh:
                config = yaml.safe_load(fh)
        except (OSError, yaml.YAMLError) as exc:
            raise SchemaError(f"cannot read config: {exc}") from exc
        if isinstance(config, dict) and config.get("kind") != args.kind:
            raise SchemaError(
                f"config kind {config.get('kind')!r} does not match subcommand {args.kind!r}"
            )
        record = run(config, out_dir=args.out_dir, seed=args.seed)
    except SchemaError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (ContractionError, ModelError, DimensionMismatch) as exc:
        condition = getattr(exc, "condition", None)
        suffix = f" [violated: {condition}]" if condition else ""
        print(f"refused: {exc}{suffix}", file=sys.stderr)
        return EXIT_REFUSAL
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except TruncationError as exc:
        print(f"truncation cap hit: {exc}", file=sys.stderr)
        return EXIT_TRUNCATION
    print(json.dumps(record, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
