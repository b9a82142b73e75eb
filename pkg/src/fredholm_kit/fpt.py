"""First-passage times of Brownian motion over a curved boundary.

For ``T = inf{t > 0 : B(t) >= a + b h(t)}`` with ``h(0) = 0`` and
``h(t) <= sqrt(t)``, the reweighted density

    tilde_p(theta) = sqrt(theta) p(theta) / (a sqrt(2 pi) exp(b^2 h^2 / (2 theta)) Psi(-b h / sqrt(theta)))

solves a Fredholm equation whose kernel is a normal density with mean
``b h(theta) / theta`` and variance ``1 / theta`` truncated to ``x > 0``,
and whose right-hand side is the exponential density with rate ``a``. The
x-integral in the multiplicative update is replaced by a Monte Carlo
average over exponential draws.

A brute-force path simulator is included as an independent check.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .errors import DomainError, MixtureVanishesError
from .grid import Grid1D, GridFunction, kl_divergence, normalize_to_density, write_csv
from .kernels import TruncatedNormalFPT, build_matrix
from .solver import (MONOTONE_SLACK, SolverResult, StoppingRule, _monotonicity_warning,
                     _renormalize, mixture)

log = logging.getLogger(__name__)

#: censoring fraction above which :func:`simulate_fpt` warns
CENSOR_WARN = 0.05
BOUNDARY_KINDS = ("sqrt", "zero", "power", "tabulated")


@dataclass(frozen=True, eq=False)
class BoundarySpec:
    """Boundary ``a + b h(t)``.

    Parameters
    ----------
    a, b : float
        Positive level and slope.
    kind : {"sqrt", "zero", "power", "tabulated"}
        ``h(t) = sqrt(t)``, ``h = 0``, ``h(t) = t**gamma`` or linear
        interpolation of a table of ``(t, h)`` pairs.
    gamma : float
        Exponent for ``kind="power"``, in ``(0, 1/2]``.
    table : tuple of arrays, optional
        ``(t_nodes, h_values)`` for ``kind="tabulated"``; must start at
        ``t = 0`` with ``h = 0``.
    bounded_by_sqrt : bool
        Declares ``h(t) <= sqrt(t)``; :meth:`check` verifies it on a grid.
    """

    a: float
    b: float
    kind: str = "sqrt"
    gamma: float = 0.5
    table: tuple | None = None
    bounded_by_sqrt: bool = True

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"boundary level a must be positive, got {self.a}")
        if not self.b > 0:
            raise ValueError(f"boundary slope b must be positive, got {self.b}")
        if self.kind not in BOUNDARY_KINDS:
            raise ValueError(f"unknown boundary kind {self.kind!r}")
        if self.kind == "power" and not 0 < self.gamma <= 0.5:
            raise ValueError(f"power boundary needs gamma in (0, 1/2], got {self.gamma}")
        if self.kind == "tabulated":
            if self.table is None:
                raise ValueError("tabulated boundary needs a (t, h) table")
            t, h = (np.array(v, dtype=float) for v in self.table)
            if t.ndim != 1 or t.shape != h.shape or t.size < 2:
                raise ValueError("boundary table needs matching t and h columns with >= 2 rows")
            if t[0] != 0 or h[0] != 0:
                raise ValueError("boundary table must start at t=0 with h(0)=0")
            if not np.all(np.diff(t) > 0):
                raise ValueError("boundary table t-values must be strictly increasing")
            t.setflags(write=False)
            h.setflags(write=False)
            object.__setattr__(self, "table", (t, h))

    def h(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "sqrt":
            return np.sqrt(t)
        if self.kind == "zero":
            return np.zeros_like(t)
        if self.kind == "power":
            return t ** self.gamma
        tt, hh = self.table
        if np.any(t > tt[-1]) or np.any(t < 0):
            raise DomainError(f"boundary table covers t in [0, {tt[-1]:g}] only")
        return np.interp(t, tt, hh)

    def level(self, t):
        return self.a + self.b * self.h(t)

    def check(self, t_nodes) -> None:
        """Verify ``h(t) <= sqrt(t)`` at ``t_nodes`` if the bound is declared."""
        if not self.bounded_by_sqrt:
            return
        t = np.asarray(t_nodes, dtype=float)
        bad = self.h(t) > np.sqrt(t) * (1 + 1e-12)
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise DomainError(f"boundary violates h(t) <= sqrt(t) at t={t[i]:g}")

    def to_dict(self) -> dict:
        out = {"a": self.a, "b": self.b, "kind": self.kind}
        if self.kind == "power":
            out["gamma"] = self.gamma
        if self.kind == "tabulated":
            out["table"] = [list(map(float, v)) for v in self.table]
        return out

    @classmethod
    def from_csv(cls, path, a: float, b: float) -> "BoundarySpec":
        """Two-column ``t,h`` table; a non-numeric first line is a header."""
        rows = []
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                cells = [c.strip() for c in line.split(",")]
                if not any(cells):
                    continue
                try:
                    rows.append([float(c) for c in cells[:2]])
                except ValueError:
                    if rows:
                        raise ValueError(f"{path}:{lineno}: non-numeric entry") from None
        arr = np.array(rows, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError(f"{path}: expected two columns t,h")
        return cls(a, b, "tabulated", table=(arr[:, 0], arr[:, 1]))


def boundary_from_dict(spec: dict) -> BoundarySpec:
    spec = dict(spec)
    if spec.get("kind") == "tabulated" and "path" in spec:
        return BoundarySpec.from_csv(spec["path"], spec["a"], spec["b"])
    if "table" in spec:
        spec["table"] = tuple(spec["table"])
    return BoundarySpec(**spec)


@dataclass(frozen=True)
class MCConfig:
    N: int = 5000
    seed: int = 0
    resample_each_iteration: bool = True

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N}")

    def rng(self, m: int) -> np.random.Generator:
        """Generator for iteration ``m``; one fixed stream if not resampling."""
        key = (m,) if self.resample_each_iteration else (0,)
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=key))


@dataclass(frozen=True)
class ExponentialTarget:
    """Right-hand side ``f(x) = rate exp(-rate x)`` on ``x > 0``."""

    rate: float

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= 0, self.rate * np.exp(-self.rate * np.maximum(x, 0.0)), 0.0)

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        return rng.exponential(1.0 / self.rate, size)


def fpt_kernel(boundary: BoundarySpec) -> TruncatedNormalFPT:
    return TruncatedNormalFPT(boundary)


def fpt_rhs(boundary: BoundarySpec) -> ExponentialTarget:
    return ExponentialTarget(boundary.a)


def standard_theta_grid(spacing: float = 0.05, num: int = 1000) -> Grid1D:
    return Grid1D(spacing * np.arange(1, num + 1))


def default_start(theta_grid: Grid1D, rate: float = 0.01) -> GridFunction:
    """Exponential start ``rate exp(-rate theta)``, normalised on the grid."""
    return normalize_to_density(theta_grid.tabulate(lambda t: rate * np.exp(-rate * t)))


@dataclass(frozen=True, eq=False)
class FPTProblem:
    boundary: BoundarySpec
    theta_grid: Grid1D = field(default_factory=standard_theta_grid)
    mc: MCConfig = field(default_factory=MCConfig)
    p0: GridFunction | None = None

    def __post_init__(self):
        if not self.theta_grid.nodes[0] > 0:
            raise DomainError("the first-passage kernel needs theta > 0 at every grid node")
        self.boundary.check(self.theta_grid.nodes)
        p0 = default_start(self.theta_grid) if self.p0 is None else self.p0
        if p0.grid != self.theta_grid:
            raise ValueError("p0 must live on theta_grid")
        if not np.all(p0.values > 0):
            raise ValueError("p0 must be strictly positive")
        object.__setattr__(self, "p0", p0)

    @property
    def kernel(self) -> TruncatedNormalFPT:
        return fpt_kernel(self.boundary)

    def draw(self, m: int) -> np.ndarray:
        """The exponential sample used by iteration ``m``."""
        return fpt_rhs(self.boundary).sample(self.mc.N, self.mc.rng(m))

    def x_grid(self, num: int = 2001) -> Grid1D:
        """Grid on ``[0, 20/a]`` used only for the divergence diagnostic."""
        return Grid1D.uniform(0.0, 20.0 / self.boundary.a, num)


def mc_update_step(problem: FPTProblem, p_prev: GridFunction, samples,
                   kobs: np.ndarray | None = None) -> GridFunction:
    """Multiplicative update with the x-integral replaced by a sample mean.

    ``p(theta_j) <- p(theta_j) mean_i k(X_i, theta_j) / f_prev(X_i)`` where
    ``f_prev(X_i)`` is the trapezoid mixture over the theta-grid, followed
    by renormalisation to unit theta-mass.
    """
    if kobs is None:
        x = np.asarray(samples, dtype=float)
        kobs = problem.kernel(x[:, None], problem.theta_grid.nodes[None, :])
    fx = kobs @ (problem.theta_grid.weights * p_prev.values)
    if np.any(~(fx > 0)):
        i = int(np.flatnonzero(~(fx > 0))[0])
        raise MixtureVanishesError(f"mixture vanished at sample {i}")
    factor = (1.0 / fx) @ kobs / kobs.shape[0]
    return _renormalize(p_prev.with_values(p_prev.values * factor))


def untransform(boundary: BoundarySpec, tilde_p: GridFunction,
                renormalize: bool = False) -> GridFunction:
    """Map the reweighted density back to the first-passage density.

    The result is not renormalised unless asked; its mass is a diagnostic
    that should be close to one, less the hitting mass beyond the grid.
    """
    theta = tilde_p.nodes
    bh = boundary.b * boundary.h(theta)
    denom = (boundary.a * math.sqrt(2 * math.pi) * np.exp(0.5 * bh**2 / theta)
             * ndtr(bh / np.sqrt(theta)))
    p = tilde_p.with_values(np.sqrt(theta) * tilde_p.values / denom)
    return normalize_to_density(p) if renormalize else p


@dataclass(eq=False)
class FPTResult:
    """Solver output on the reweighted scale plus the first-passage density."""

    tilde: SolverResult
    p: GridFunction
    mass: float
    boundary: BoundarySpec

    def cdf(self) -> GridFunction:
        """Cumulative distribution of ``p``; mass below the first node is ignored."""
        return self.p.with_values(self.p.cdf())

    def diagnostics(self) -> dict:
        out = self.tilde.diagnostics()
        out["mass_diagnostics"] = {"p_mass": self.mass, "tilde_p_mass": self.tilde.p_final.mass()}
        return out


def solve_fpt(problem: FPTProblem, rule: StoppingRule = StoppingRule(max_iter=200, tol_diff=0.0),
              *, x_nodes: int = 2001) -> FPTResult:
    """Run the Monte Carlo multiplicative iteration and back-transform.

    ``D_m`` is measured against ``a exp(-a x)`` tabulated on ``[0, 20/a]``;
    with Monte Carlo integration it is not guaranteed to decrease, so
    increases are reported as warnings.
    """
    kernel = problem.kernel
    theta = problem.theta_grid.nodes
    km = build_matrix(kernel, problem.x_grid(x_nodes), problem.theta_grid)
    target = km.x_grid.tabulate(fpt_rhs(problem.boundary).pdf)

    p = problem.p0
    history = [kl_divergence(target, mixture(km, p))]
    fixed = None
    if not problem.mc.resample_each_iteration:
        fixed = kernel(problem.draw(0)[:, None], theta[None, :])
    stop = rule.check(history)
    while stop is None:
        m = len(history)
        kobs = fixed if fixed is not None else kernel(problem.draw(m)[:, None], theta[None, :])
        p = mc_update_step(problem, p, None, kobs)
        history.append(kl_divergence(target, mixture(km, p)))
        stop = rule.check(history)
    hist = np.array(history)
    warns = km.mass_warnings() + _monotonicity_warning(hist, MONOTONE_SLACK)
    tilde = SolverResult(p, mixture(km, p), hist, len(history) - 1, stop, warns, target)
    p_orig = untransform(problem.boundary, p)
    return FPTResult(tilde, p_orig, p_orig.mass(), problem.boundary)


@dataclass(eq=False)
class FPTSample:
    """Simulated hitting times; censored paths are stored as ``inf``."""

    times: np.ndarray
    t_max: float
    dt: float

    @property
    def paths(self) -> int:
        return self.times.size

    @property
    def censored(self) -> int:
        return int(np.sum(~np.isfinite(self.times)))

    @property
    def censored_fraction(self) -> float:
        return self.censored / self.paths

    @property
    def correction_factor(self) -> float:
        """Fraction of paths that hit; scales the conditional CDF of hits."""
        return 1.0 - self.censored_fraction

    def hits(self) -> np.ndarray:
        return np.sort(self.times[np.isfinite(self.times)])

    def ecdf(self, t) -> np.ndarray:
        """Unconditional ``P(T <= t)`` estimated on ``[0, t_max]``.

        Censored paths are excluded from the conditional empirical CDF of
        hitting times, which is then scaled by :attr:`correction_factor`.
        """
        hits = self.hits()
        if hits.size == 0:
            return np.zeros_like(np.asarray(t, dtype=float))
        cond = np.searchsorted(hits, t, side="right") / hits.size
        return self.correction_factor * cond

    def ks_distance(self, cdf) -> float:
        """Sup distance between :meth:`ecdf` and a callable CDF, over the hit times."""
        hits = self.hits()
        if hits.size == 0:
            return float(np.max(np.abs(cdf(np.array([self.t_max])))))
        f = cdf(hits)
        upper = self.ecdf(hits)
        lower = upper - self.correction_factor / hits.size
        return float(max(np.max(np.abs(upper - f)), np.max(np.abs(lower - f))))

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("time,censored\n")
            for t in self.times:
                fh.write(f"{self.t_max:.17g},1\n" if not np.isfinite(t) else f"{t:.17g},0\n")


def simulate_fpt(boundary: BoundarySpec, paths: int, dt: float, t_max: float, seed: int = 0,
                 *, bridge: bool = True, chunk: int = 10_000, block_steps: int = 256) -> FPTSample:
    """Simulate standard Brownian paths on a time grid until they reach the boundary.

    Paths are sampled at ``t = dt, 2 dt, ...`` up to ``t_max`` and the end of
    the first step in which the path reaches ``a + b h(t)`` is recorded.
    Without ``bridge`` only the grid values are compared with the boundary,
    which misses crossings between grid times and delays hitting by an
    amount of order ``sqrt(dt)``. With ``bridge`` (the default) a step whose
    end points both lie below the boundary still counts as a crossing with
    the Brownian-bridge probability ``exp(-2 g0 g1 / dt)``, where ``g0`` and
    ``g1`` are the distances to the boundary at the two ends of the step
    (exact for a boundary that is linear within each step).

    Paths are processed in chunks of ``chunk`` with independent spawned
    seeds, so the result does not depend on how chunks are scheduled.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not t_max > dt:
        raise ValueError("t_max must exceed dt")
    if paths < 1:
        raise ValueError("need at least one path")
    n_steps = int(round(t_max / dt))
    level = boundary.level(dt * np.arange(0, n_steps + 1))
    sd = math.sqrt(dt)
    n_chunks = -(-paths // chunk)
    streams = np.random.SeedSequence(seed).spawn(n_chunks)
    out = np.full(paths, np.inf)
    for c, ss in enumerate(streams):
        lo = c * chunk
        size = min(chunk, paths - lo)
        out[lo:lo + size] = _simulate_chunk(level, sd, dt, size, np.random.default_rng(ss),
                                            block_steps, bridge)
    sample = FPTSample(out, t_max, dt)
    if sample.censored_fraction > CENSOR_WARN:
        msg = (f"{sample.censored_fraction:.1%} of paths did not hit by t_max={t_max:g}; "
               "increase t_max")
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        log.warning(msg)
    return sample


def _simulate_chunk(level, sd, dt, size, rng, block_steps, bridge):
    """Hitting times for one chunk; ``level[k]`` is the boundary at ``t = k dt``."""
    times = np.full(size, np.inf)
    idx = np.arange(size)
    pos = np.zeros(size)
    n_steps = level.size - 1
    for start in range(0, n_steps, block_steps):
        if idx.size == 0:
            break
        stop = min(start + block_steps, n_steps)
        steps = rng.standard_normal((stop - start, idx.size))
        steps *= sd
        path = np.cumsum(steps, axis=0)
        path += pos
        end_level = level[start + 1:stop + 1, None]
        crossed = path >= end_level
        if bridge:
            gap1 = end_level - path
            gap0 = np.empty_like(gap1)
            gap0[0] = level[start] - pos
            gap0[1:] = gap1[:-1]
            # only steps with a crossing probability above exp(-40) get a uniform draw
            expo = 2.0 * gap0 * gap1 / dt
            cand = np.flatnonzero((gap0 > 0) & (gap1 > 0) & (expo < 40.0))
            crossed.flat[cand] |= rng.random(cand.size) < np.exp(-expo.flat[cand])
        hit = crossed.any(axis=0)
        first = np.argmax(crossed, axis=0)
        times[idx[hit]] = dt * (start + 1 + first[hit])
        pos = path[-1, ~hit]
        idx = idx[~hit]
    return times


def levy_density(t, a: float) -> np.ndarray:
    """Hitting density of the level ``a``: ``a t^(-3/2) phi(a / sqrt(t))``."""
    t = np.asarray(t, dtype=float)
    return a * t**-1.5 * np.exp(-0.5 * a * a / t) / math.sqrt(2 * math.pi)


def levy_cdf(t, a: float) -> np.ndarray:
    """``P(T_a <= t) = 2 Psi(a / sqrt(t))``."""
    t = np.asarray(t, dtype=float)
    return 2.0 * ndtr(-a / np.sqrt(t))


def write_fpt_outputs(result: FPTResult, directory, sample: FPTSample | None = None) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = [directory / "tilde_p.csv", directory / "p.csv"]
    write_csv(result.tilde.p_final, paths[0], ("theta", "tilde_p"))
    write_csv(result.p, paths[1], ("theta", "p"))
    if sample is not None:
        paths.append(directory / "simulation.csv")
        sample.to_csv(paths[-1])
    return paths
