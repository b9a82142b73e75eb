"""Named, parameterised reproductions of the worked examples.

Every demo is a function of a flat parameter dict. :data:`DEMOS` maps each
name to its defaults and runner, and the CLI records the merged parameters
so that any run can be repeated exactly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import beta as beta_dist
from scipy.stats import gamma as gamma_dist

from .fpt import (CENSOR_WARN, BoundarySpec, FPTProblem, MCConfig, default_start, standard_theta_grid,
                  simulate_fpt, solve_fpt)
from .grid import Grid1D, GridFunction, l1_distance, normalize_to_density
from .kernels import ExponentialRate, NormalLocation, Reflected, build_matrix
from .mixing import (KDEConfig, SampleData, data_grids, estimate_mixing, kde,
                     rule_of_thumb_bandwidth, sample_scenario, scenario)
from .solver import ProblemSpec, SolverResult, StoppingRule, mixture, solve
from .transforms import shift_transform, split_kernel_transform


@dataclass
class RunOutput:
    """What a run writes: named CSV tables plus diagnostics."""

    result: SolverResult
    tables: dict[str, tuple[GridFunction, tuple[str, str]]] = field(default_factory=dict)
    mass_diagnostics: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    samples: dict[str, np.ndarray] = field(default_factory=dict)


def _rule(params: dict) -> StoppingRule:
    return StoppingRule(int(params["max_iter"]), float(params["tol_div"]), float(params["tol_diff"]))


# -- Pareto / gamma mixture of exponentials ---------------------------------

def pareto_problem(a: float = 5.0, theta_max: float = 50.0, theta_nodes: int = 2001,
                   x_max: float = 20.0, x_nodes: int = 2001):
    """Pareto target ``a (x+1)^-(a+1)``, exponential kernel, half-Cauchy start.

    Returns the problem, the gamma(a) truth on the theta-grid and the
    untruncated Pareto density on the x-grid.
    """
    tg = Grid1D.uniform(0.0, theta_max, theta_nodes)
    xg = Grid1D.uniform(0.0, x_max, x_nodes)
    km = build_matrix(ExponentialRate(), xg, tg)
    pareto = xg.tabulate(lambda x: a * (x + 1.0) ** -(a + 1.0))
    p0 = normalize_to_density(tg.tabulate(lambda t: 2.0 / (np.pi * (1.0 + t * t))))
    truth = normalize_to_density(tg.tabulate(lambda t: gamma_dist.pdf(t, a)))
    return ProblemSpec(km, normalize_to_density(pareto), p0), truth, pareto


def run_pareto(params: dict) -> RunOutput:
    problem, truth, pareto = pareto_problem(params["a"], params["theta_max"], params["theta_nodes"],
                                            params["x_max"], params["x_nodes"])
    res = solve(problem, _rule(params), renormalize=params["renormalize"])
    return RunOutput(
        res,
        {"p_final": (res.p_final, ("theta", "p")),
         "p_true": (truth, ("theta", "p_true")),
         "f_final": (res.f_final, ("x", "f")),
         "f_target": (pareto, ("x", "f_target"))},
        summary={"l1_p_vs_gamma": l1_distance(res.p_final, truth),
                 "l1_f_vs_pareto": l1_distance(res.f_final, pareto)},
    )


# -- smooth mixing-density estimation ---------------------------------------

def run_scenario(name: str, params: dict) -> RunOutput:
    sc = scenario(name, n=params["n"], theta_nodes=params["theta_nodes"])
    data = sample_scenario(sc, params["seed"])
    bw = params["bandwidth"]
    cfg = KDEConfig(sc.x_grid, bw)
    res = estimate_mixing(data, sc.kernel, sc.theta_grid, cfg, _rule(params),
                          method=params["method"], renormalize=params["renormalize"])
    truth_f = sc.true_mixture()
    fh = normalize_to_density(kde(data, cfg))
    return RunOutput(
        res,
        {"p_final": (res.p_final, ("theta", "p")),
         "p_true": (sc.true_mixing, ("theta", "p_true")),
         "f_final": (res.f_final, ("x", "f")),
         "f_kde": (fh, ("x", "f_kde")),
         "f_true": (truth_f, ("x", "f_true"))},
        summary={"bandwidth": cfg.resolve(data),
                 "l1_f_final_vs_kde": l1_distance(res.f_final, fh),
                 "l1_kde_vs_true": l1_distance(fh, truth_f),
                 "l1_p_vs_true": l1_distance(res.p_final, sc.true_mixing)},
        samples={"data": data.observations},
    )


def run_galaxy(params: dict) -> RunOutput:
    """Normal location mixture fitted to a user-supplied univariate sample."""
    if not params.get("data"):
        raise ValueError("the galaxy demo needs --data (a single-column CSV of observations)")
    data = SampleData.from_csv(params["data"])
    return fit_location_mixture(data, params)


def fit_location_mixture(data: SampleData, params: dict) -> RunOutput:
    h = rule_of_thumb_bandwidth(data) if params["bandwidth"] == "rule-of-thumb" else float(params["bandwidth"])
    sigma = h if params["sigma"] == "auto" else float(params["sigma"])
    tg, xg = data_grids(data, h, sigma, params["theta_nodes"], params["x_nodes"])
    res = estimate_mixing(data, NormalLocation(sigma), tg, KDEConfig(xg, h), _rule(params),
                          method=params["method"], renormalize=params["renormalize"])
    tables = {"p_final": (res.p_final, ("theta", "p")), "f_final": (res.f_final, ("x", "f"))}
    if res.target is not None:
        tables["f_kde"] = (res.target, ("x", "f_kde"))
    return RunOutput(res, tables, summary={"bandwidth": h, "sigma": sigma, "n": data.n})


# -- first passage times ----------------------------------------------------

def run_fpt_demo(params: dict) -> RunOutput:
    boundary = BoundarySpec(params["a"], params["b"], params["boundary"], params["gamma"])
    return run_fpt_problem(boundary, params)


def run_fpt_problem(boundary: BoundarySpec, params: dict) -> RunOutput:
    """Solve, back-transform and optionally cross-check against simulated paths."""
    tg = standard_theta_grid(params["theta_spacing"], params["theta_nodes"])
    problem = FPTProblem(boundary, tg, MCConfig(params["N"], params["seed"], params["resample"]),
                         default_start(tg, params["p0_rate"]))
    out = solve_fpt(problem, _rule(params))
    run = RunOutput(
        out.tilde,
        {"tilde_p": (out.tilde.p_final, ("theta", "tilde_p")), "p": (out.p, ("theta", "p")),
         "p_cdf": (out.cdf(), ("theta", "cdf"))},
        mass_diagnostics={"p_mass": out.mass, "tilde_p_mass": out.tilde.p_final.mass()},
    )
    if params["paths"] > 0:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            sample = simulate_fpt(boundary, params["paths"], params["dt"], params["t_max"],
                                  params["seed"], bridge=params["bridge"])
        cdf = out.cdf()
        run.summary["sup_cdf_distance"] = sample.ks_distance(lambda t: np.interp(t, cdf.nodes, cdf.values))
        run.summary["censored_fraction"] = sample.censored_fraction
        run.summary["correction_factor"] = sample.correction_factor
        run.samples["hitting_times"] = np.where(np.isfinite(sample.times), sample.times, np.nan)
        if sample.censored_fraction > CENSOR_WARN:
            run.warnings.append(f"{sample.censored_fraction:.1%} of simulated paths censored at "
                                f"t_max={params['t_max']:g}")
    return run


# -- signed solutions and signed kernels ------------------------------------

def _beta(a, b):
    return lambda t: beta_dist.pdf(t, a, b)


SIGNED_TRUTHS: dict[str, Callable] = {
    "signed-1": lambda t: _beta(2, 5)(t) - _beta(4, 1)(t),
    "signed-2": lambda t: _beta(10, 1)(t) - _beta(1, 10)(t),
    "genkernel-1": lambda t: _beta(2, 3)(t) - _beta(3, 2)(t),
    "genkernel-2": lambda t: _beta(2, 7)(t) + _beta(3, 4)(t) - 1.0,
}


def signed_problem(name: str, sigma: float = 0.05, theta_nodes: int = 201,
                   x_nodes: int | None = None):
    """Grids, kernel matrices, truth and quadrature-generated ``f`` for a signed example.

    Shift examples use a positive normal kernel on ``x in [-0.3, 1.3]``;
    split examples use ``phi_s(x - theta) - phi_s(x + theta)`` on the
    symmetric ``x in [-1.3, 1.3]`` so that both parts are fully resolved.
    """
    tg = Grid1D.uniform(0.0, 1.0, theta_nodes)
    truth = tg.tabulate(SIGNED_TRUTHS[name])
    plus = NormalLocation(sigma)
    if name.startswith("signed"):
        xg = Grid1D.uniform(-0.3, 1.3, x_nodes or 641)
        kp = build_matrix(plus, xg, tg)
        return truth, kp, None, mixture(kp, truth)
    xg = Grid1D.uniform(-1.3, 1.3, x_nodes or 1041)
    kp = build_matrix(plus, xg, tg)
    km = build_matrix(Reflected(plus), xg, tg)
    f = GridFunction(xg, mixture(kp, truth).values - mixture(km, truth).values)
    return truth, kp, km, f


def solve_signed(name: str, t, rule: StoppingRule, renormalize: bool = True, **grid):
    truth, kp, km, f = signed_problem(name, **grid)
    if km is None:
        tp = shift_transform(kp, f, t)
    else:
        tp = split_kernel_transform(kp, km, f, t)
    res = solve(tp.canonical, rule, renormalize=renormalize)
    details = tp.recover_details(res)
    return truth, f, tp, res, details


def run_signed(name: str, params: dict) -> RunOutput:
    truth, f, tp, res, details = solve_signed(
        name, params["t"], _rule(params), params["renormalize"],
        sigma=params["sigma"], theta_nodes=params["theta_nodes"])
    p = details["p"]
    summary = {"t": tp.t, "scale": tp.scale, "l1_p_vs_true": l1_distance(p, truth)}
    if "delta_l1" in details:
        summary["split_delta_l1"] = details["delta_l1"]
        summary["split_relative_delta"] = details["relative_delta"]
    return RunOutput(
        res,
        {"p_final": (p, ("theta", "p")), "p_true": (truth, ("theta", "p_true")),
         "f": (f, ("x", "f")), "canonical_p": (res.p_final, ("theta", "q"))},
        summary=summary,
        warnings=list(tp.warnings) + list(details["warnings"]),
    )


# -- registry ---------------------------------------------------------------

_SOLVER = {"renormalize": True}
_MIX = {**_SOLVER, "n": 300, "theta_nodes": 401, "bandwidth": "rule-of-thumb", "method": "kde",
        "max_iter": 500, "tol_div": 0.0, "tol_diff": 1e-5}
_SIGNED = {**_SOLVER, "t": 50.0, "sigma": 0.05, "theta_nodes": 201, "tol_div": 0.0, "tol_diff": 0.0}


@dataclass(frozen=True)
class Demo:
    name: str
    description: str
    defaults: dict
    runner: Callable[[dict], RunOutput]
    exact_quadrature: bool = True


DEMOS: dict[str, Demo] = {d.name: d for d in [
    Demo("pareto", "Pareto target as a gamma mixture of exponentials",
         {**_SOLVER, "a": 5.0, "theta_max": 50.0, "theta_nodes": 2001, "x_max": 20.0, "x_nodes": 2001,
          "max_iter": 200, "tol_div": 0.0, "tol_diff": 0.0},
         run_pareto),
    Demo("galaxy", "normal location mixture for a univariate sample (needs data)",
         {**_SOLVER, "data": None, "sigma": "auto", "bandwidth": "rule-of-thumb", "method": "kde",
          "theta_nodes": 401, "x_nodes": 1001, "max_iter": 25, "tol_div": 0.0, "tol_diff": 0.0},
         run_galaxy),
    Demo("deconv-1", "normal deconvolution, beta(5,5) mixing", dict(_MIX),
         lambda p: run_scenario("deconv-1", p)),
    Demo("deconv-2", "normal deconvolution, two-bump mixing", dict(_MIX),
         lambda p: run_scenario("deconv-2", p)),
    Demo("scale-1", "normal scale mixture, inverse-gamma mixing", dict(_MIX),
         lambda p: run_scenario("scale-1", p)),
    Demo("scale-2", "normal scale mixture, exponential mixing", dict(_MIX),
         lambda p: run_scenario("scale-2", p)),
    Demo("fpt-sqrt", "first passage over 1 + 0.1 sqrt(t)",
         {"a": 1.0, "b": 0.1, "boundary": "sqrt", "gamma": 0.5, "theta_spacing": 0.05,
          "theta_nodes": 1000, "p0_rate": 0.01, "N": 5000, "resample": True,
          "max_iter": 200, "tol_div": 0.0, "tol_diff": 0.0,
          "paths": 0, "dt": 1e-3, "t_max": 50.0, "bridge": True},
         run_fpt_demo, exact_quadrature=False),
    Demo("signed-1", "signed solution, shift transform", {**_SIGNED, "max_iter": 10},
         lambda p: run_signed("signed-1", p)),
    Demo("signed-2", "signed solution, shift transform", {**_SIGNED, "max_iter": 10},
         lambda p: run_signed("signed-2", p)),
    Demo("genkernel-1", "signed kernel, split transform", {**_SIGNED, "max_iter": 5},
         lambda p: run_signed("genkernel-1", p)),
    Demo("genkernel-2", "signed kernel, split transform", {**_SIGNED, "max_iter": 5},
         lambda p: run_signed("genkernel-2", p)),
]}


def run_demo(name: str, params: dict | None = None, seed: int = 0) -> RunOutput:
    """Run a demo with ``params`` merged over its defaults."""
    demo = DEMOS[name]
    merged = {**demo.defaults, **(params or {}), "seed": seed}
    return demo.runner(merged)
