"""Multiplicative fixed-point iteration for Fredholm equations of the first kind.

Given a target density ``f`` on an x-grid and a kernel matrix, the solver
iterates

    p_m(theta) = p_{m-1}(theta) * sum_i w_i k(x_i, theta) f(x_i) / f_{m-1}(x_i)

where ``f_{m-1}`` is the mixture of the previous iterate. The iterate stays a
density and ``D_m = KL(f, f_m)`` never increases, so ``D_m`` doubles as a
convergence monitor and stopping rule.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import GridError, MixtureVanishesError
from .grid import GridFunction, kl_divergence, write_csv
from .kernels import KernelMatrix

log = logging.getLogger(__name__)

#: absolute slack allowed before a divergence increase is reported
MONOTONE_SLACK = 1e-10


class Termination(str, enum.Enum):
    MAX_ITER = "MaxIter"
    DIVERGENCE_BELOW_TOL = "DivergenceBelowTol"
    DIFF_BELOW_TOL = "DiffBelowTol"


@dataclass(frozen=True)
class StoppingRule:
    """Stop at ``max_iter``, when ``D_m < tol_div``, or when ``D_{m-1} - D_m < tol_diff``.

    A tolerance of zero disables that criterion.
    """

    max_iter: int = 500
    tol_div: float = 0.0
    tol_diff: float = 1e-5

    def __post_init__(self):
        if int(self.max_iter) != self.max_iter or self.max_iter < 0:
            raise ValueError(f"max_iter must be a non-negative integer, got {self.max_iter}")
        if self.tol_div < 0 or self.tol_diff < 0:
            raise ValueError("tolerances must be non-negative")

    def check(self, history: Sequence[float]) -> Termination | None:
        m = len(history) - 1
        if self.tol_div > 0 and history[-1] < self.tol_div:
            return Termination.DIVERGENCE_BELOW_TOL
        if m >= 1 and self.tol_diff > 0 and history[-2] - history[-1] < self.tol_diff:
            return Termination.DIFF_BELOW_TOL
        if m >= self.max_iter:
            return Termination.MAX_ITER
        return None


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Canonical problem: a density target ``f`` and a strictly positive start ``p0``."""

    kernel_matrix: KernelMatrix
    f: GridFunction
    p0: GridFunction
    mass_tol: float = 1e-6

    def __post_init__(self):
        km = self.kernel_matrix
        if self.f.grid != km.x_grid:
            raise GridError("target f must live on the kernel's x-grid")
        if self.p0.grid != km.theta_grid:
            raise GridError("p0 must live on the kernel's theta-grid")
        if not np.all(self.p0.values > 0):
            raise ValueError("p0 must be strictly positive at every theta node")
        if np.any(self.f.values < 0):
            raise ValueError("target f must be non-negative")
        if abs(self.f.mass() - 1.0) > self.mass_tol:
            raise ValueError(f"target f must have unit mass, got {self.f.mass():.8g}")
        if np.any(km.entries < 0):
            raise ValueError("the multiplicative update needs a non-negative kernel")


@dataclass(eq=False)
class SolverResult:
    p_final: GridFunction
    f_final: GridFunction
    divergence_history: np.ndarray
    iterations: int
    termination: Termination
    warnings: list[str] = field(default_factory=list)
    target: GridFunction | None = None

    def __post_init__(self):
        self.divergence_history = np.asarray(self.divergence_history, dtype=float)
        assert self.divergence_history.size == self.iterations + 1

    def diagnostics(self) -> dict:
        return {
            "iterations": self.iterations,
            "termination": self.termination.value,
            "divergence_history": [float(d) for d in self.divergence_history],
            "warnings": list(self.warnings),
        }

    def save(self, directory, prefix: str = "") -> list[Path]:
        """Write ``p_final.csv``, ``f_final.csv`` and ``diagnostics.json``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = [directory / f"{prefix}p_final.csv", directory / f"{prefix}f_final.csv",
                 directory / f"{prefix}diagnostics.json"]
        write_csv(self.p_final, paths[0], ("theta", "p"))
        write_csv(self.f_final, paths[1], ("x", "f"))
        paths[2].write_text(json.dumps(self.diagnostics(), indent=2) + "\n")
        return paths


def mixture(kernel_matrix: KernelMatrix, p: GridFunction) -> GridFunction:
    """``f(x_i) = sum_j v_j k(x_i, theta_j) p(theta_j)`` with theta trapezoid weights ``v``."""
    if p.grid != kernel_matrix.theta_grid:
        raise GridError("p must live on the kernel's theta-grid")
    vals = kernel_matrix.entries @ (kernel_matrix.theta_grid.weights * p.values)
    return GridFunction(kernel_matrix.x_grid, vals)


def _ratio(f: np.ndarray, f_prev: np.ndarray, x_nodes: np.ndarray) -> np.ndarray:
    pos = f > 0
    bad = pos & ~(f_prev > 0)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise MixtureVanishesError(
            f"mixture vanishes on support of f at x={x_nodes[i]:g} (node {i})"
        )
    out = np.zeros_like(f)
    out[pos] = f[pos] / f_prev[pos]
    return out


def _renormalize(p: GridFunction) -> GridFunction:
    mass = p.mass()
    if not mass > 0:
        raise MixtureVanishesError("iterate lost all its mass")
    return p.with_values(p.values / mass)


def update_step(problem: ProblemSpec, p_prev: GridFunction, f_prev: GridFunction,
                renormalize: bool = True) -> GridFunction:
    """One multiplicative update. ``f / f_prev`` is taken as zero where ``f = 0``."""
    km = problem.kernel_matrix
    r = _ratio(problem.f.values, f_prev.values, km.x_grid.nodes)
    factor = (km.x_grid.weights * r) @ km.entries
    p = p_prev.with_values(p_prev.values * factor)
    return _renormalize(p) if renormalize else p


def additive_update_step(problem: ProblemSpec, p_prev: GridFunction,
                         f_prev: GridFunction) -> GridFunction:
    """Landweber step ``p + int k (f - f_prev) dx``; no clipping, no renormalisation.

    Kept as a baseline: its iterates can turn negative.
    """
    km = problem.kernel_matrix
    resid = km.x_grid.weights * (problem.f.values - f_prev.values)
    return p_prev.with_values(p_prev.values + resid @ km.entries)


def observation_matrix(kernel_matrix: KernelMatrix, observations) -> np.ndarray:
    """``k(X_i, theta_j)`` from the analytic kernel, shape ``(n, M_theta)``."""
    if kernel_matrix.kernel is None:
        raise ValueError("empirical updates need the analytic kernel, not just its table")
    x = np.asarray(observations, dtype=float)
    return kernel_matrix.kernel(x[:, None], kernel_matrix.theta_grid.nodes[None, :])


def _em_step(kobs: np.ndarray, weights: np.ndarray, p_prev: GridFunction,
             renormalize: bool = True) -> tuple[GridFunction, np.ndarray]:
    fx = kobs @ (weights * p_prev.values)
    if np.any(~(fx > 0)):
        i = int(np.flatnonzero(~(fx > 0))[0])
        raise MixtureVanishesError(f"zero likelihood at observation {i}")
    factor = np.mean(kobs / fx[:, None], axis=0)
    p = p_prev.with_values(p_prev.values * factor)
    return (_renormalize(p) if renormalize else p), fx


def empirical_update_step(kernel_matrix: KernelMatrix, observations,
                          p_prev: GridFunction, renormalize: bool = True) -> GridFunction:
    """EM step for the grid NPMLE: ``p * mean_i k(X_i, .) / f_prev(X_i)``."""
    kobs = observation_matrix(kernel_matrix, observations)
    return _em_step(kobs, kernel_matrix.theta_grid.weights, p_prev, renormalize)[0]


def log_likelihood(kernel_matrix: KernelMatrix, observations, p: GridFunction,
                   kobs: np.ndarray | None = None) -> float:
    if kobs is None:
        kobs = observation_matrix(kernel_matrix, observations)
    return float(np.sum(np.log(kobs @ (kernel_matrix.theta_grid.weights * p.values))))


def _monotonicity_warning(history: np.ndarray, slack: float) -> list[str]:
    inc = np.diff(history)
    bad = np.flatnonzero(inc > slack)
    if bad.size == 0:
        return []
    msg = (f"divergence increased at {bad.size} iteration(s) "
           f"(first at m={bad[0] + 1}, largest increase {inc[bad].max():.3g})")
    log.warning(msg)
    return [msg]


def solve(problem: ProblemSpec, rule: StoppingRule = StoppingRule(), *,
          renormalize: bool = True,
          callback: Callable[[int, GridFunction, GridFunction], None] | None = None
          ) -> SolverResult:
    """Iterate :func:`update_step` until ``rule`` fires.

    ``callback(m, p_m, f_m)`` is called for ``m = 0`` and after every step.
    """
    km = problem.kernel_matrix
    p = problem.p0
    fm = mixture(km, p)
    history = [kl_divergence(problem.f, fm)]
    if callback is not None:
        callback(0, p, fm)
    stop = rule.check(history)
    while stop is None:
        p = update_step(problem, p, fm, renormalize)
        fm = mixture(km, p)
        history.append(kl_divergence(problem.f, fm))
        if callback is not None:
            callback(len(history) - 1, p, fm)
        stop = rule.check(history)
    hist = np.array(history)
    warns = km.mass_warnings() + _monotonicity_warning(hist, MONOTONE_SLACK)
    return SolverResult(p, fm, hist, len(history) - 1, stop, warns, problem.f)


def solve_empirical(kernel_matrix: KernelMatrix, observations, p0: GridFunction,
                    rule: StoppingRule = StoppingRule(), *,
                    renormalize: bool = True) -> SolverResult:
    """Iterate :func:`empirical_update_step` (EM for the grid NPMLE).

    The history holds the average negative log-likelihood
    ``-mean_i log f_m(X_i)``, which is the KL divergence from the empirical
    distribution up to an additive constant and is non-increasing.
    ``f_final`` is the fitted mixture tabulated on the kernel's x-grid.
    """
    x = np.asarray(observations, dtype=float)
    kobs = observation_matrix(kernel_matrix, x)
    w = kernel_matrix.theta_grid.weights
    p = p0

    def nll(p):
        fx = kobs @ (w * p.values)
        if np.any(~(fx > 0)):
            raise MixtureVanishesError("zero likelihood at an observation")
        return float(-np.mean(np.log(fx)))

    history = [nll(p)]
    stop = rule.check(history)
    while stop is None:
        p = _em_step(kobs, w, p, renormalize)[0]
        history.append(nll(p))
        stop = rule.check(history)
    hist = np.array(history)
    warns = _monotonicity_warning(hist, MONOTONE_SLACK)
    return SolverResult(p, mixture(kernel_matrix, p), hist, len(history) - 1, stop, warns)
