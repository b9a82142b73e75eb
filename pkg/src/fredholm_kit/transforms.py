"""Reductions of general Fredholm problems to the canonical density form.

Three reductions are provided and can be chained as split -> shift -> normalise:

* kernel normalisation: ``k~ = k / int k dx`` and ``q = p int k dx``;
* shift: ``p~ = p + t`` and ``f~ = f + t int k dtheta`` for a signed solution;
* kernel split: ``k = k+ - k-`` on a doubled theta-domain for a signed kernel.

Every canonical problem is then scaled by ``M = int f~ dx`` so that the
target is a density, solved with :func:`fredholm_kit.solver.solve`, and mapped
back with :func:`recover`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateKernelError, GridError, ShiftTooSmallError
from .grid import Grid1D, GridFunction
from .kernels import KernelMatrix
from .solver import ProblemSpec, SolverResult

log = logging.getLogger(__name__)

#: columns with x-mass at or below this are degenerate
DEGENERATE_MASS = 1e-300
#: relative split discrepancy above which recovery warns
SPLIT_WARN_RATIO = 0.1
#: the working shift value for signed problems, scaled by sup|f| in "auto" mode
DEFAULT_SHIFT = 50.0


@dataclass(frozen=True)
class TransformSpec:
    """One reduction step: ``"normalize"``, ``"shift"`` (with ``t``) or ``"split"`` (with ``t``).

    ``t`` may be ``"auto"``; see :func:`auto_shift`.
    """

    kind: str
    t: float | str | None = None

    def __post_init__(self):
        if self.kind not in ("none", "normalize", "shift", "split"):
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if self.kind in ("shift", "split"):
            if self.t is None:
                object.__setattr__(self, "t", "auto")
            if self.t != "auto" and not float(self.t) > 0:
                raise ValueError(f"shift t must be positive, got {self.t}")

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.t is not None:
            d["t"] = self.t
        return d


def auto_shift(f: GridFunction) -> float:
    return DEFAULT_SHIFT * max(1.0, float(np.max(np.abs(f.values))))


@dataclass(frozen=True, eq=False)
class TransformedProblem:
    """A canonical problem plus what is needed to map its solution back.

    ``lifted_matrix`` is the non-negative kernel on the (possibly doubled)
    theta-grid before column normalisation; ``active`` marks the columns that
    enter the canonical problem. Inactive columns have zero x-mass: they carry
    no information and keep their initial value.
    """

    canonical: ProblemSpec
    kind: tuple[str, ...]
    lifted_matrix: KernelMatrix
    column_mass: np.ndarray
    active: np.ndarray
    scale: float
    lifted_start: np.ndarray
    t: float = 0.0
    original_theta_grid: Grid1D | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def is_split(self) -> bool:
        return "split" in self.kind

    def lift(self, p: GridFunction) -> GridFunction:
        """Map an original-scale solution to the canonical density (forward map)."""
        vals = np.asarray(p.values, dtype=float)
        if self.is_split:
            vals = np.concatenate([vals, -vals])
        vals = vals + self.t
        q = self.column_mass[self.active] * vals[self.active] / self.scale
        return GridFunction(self.canonical.kernel_matrix.theta_grid, q)

    def recover_details(self, solved: SolverResult | GridFunction) -> dict:
        """Inverse map with diagnostics.

        Returns a dict with ``p`` (GridFunction on the original theta-grid),
        ``lifted`` (the recovered non-negative solution on the lifted grid),
        and for split problems ``delta``, ``delta_l1`` and ``relative_delta``.
        """
        q = solved.p_final if isinstance(solved, SolverResult) else solved
        if q.grid != self.canonical.kernel_matrix.theta_grid:
            raise GridError("solution does not belong to this transformed problem")
        s = self.lifted_start.copy()
        s[self.active] = self.scale * q.values / self.column_mass[self.active]
        lifted = GridFunction(self.lifted_matrix.theta_grid, s)
        shifted = s - self.t
        out = {"lifted": lifted, "warnings": []}
        grid = self.original_theta_grid or self.lifted_matrix.theta_grid
        if self.is_split:
            n = len(grid)
            first, second = shifted[:n], -shifted[n:]
            p = GridFunction(grid, 0.5 * (first + second))
            delta = GridFunction(grid, first - second)
            d1 = float(grid.weights @ np.abs(delta.values))
            p1 = float(grid.weights @ np.abs(p.values))
            rel = d1 / p1 if p1 > 0 else (0.0 if d1 == 0 else np.inf)
            out.update(delta=delta, delta_l1=d1, relative_delta=rel)
            if rel > SPLIT_WARN_RATIO:
                msg = (f"inconsistent split solution: |delta|_1 = {d1:.3g} is "
                       f"{rel:.1%} of |p|_1; the doubled equation may not have a unique solution")
                log.warning(msg)
                out["warnings"].append(msg)
        else:
            p = GridFunction(grid, shifted)
        out["p"] = p
        return out


def recover(transformed: TransformedProblem, solved: SolverResult | GridFunction) -> GridFunction:
    """Map the canonical solution back to the original problem."""
    return transformed.recover_details(solved)["p"]


def _canonicalize(lifted: KernelMatrix, f_lifted: np.ndarray, start: np.ndarray, *,
                  kind: tuple[str, ...], t: float, original_theta_grid: Grid1D | None,
                  hold_degenerate: bool) -> TransformedProblem:
    if np.any(lifted.entries < 0):
        raise ValueError("kernel must be non-negative; use the split transform")
    masses = lifted.column_masses()
    if not np.all(np.isfinite(masses)):
        raise DegenerateKernelError("kernel column masses are not finite")
    active = masses > DEGENERATE_MASS
    if not np.all(active) and not hold_degenerate:
        j = int(np.flatnonzero(~active)[0])
        raise DegenerateKernelError(
            f"degenerate kernel column {j} (theta={lifted.theta_grid.nodes[j]:g}, "
            f"mass {masses[j]:.3g})"
        )
    if not np.any(active):
        raise DegenerateKernelError("every kernel column has zero mass")
    if np.any(start[active] <= 0):
        raise ValueError("the starting solution must be strictly positive")
    scale = float(lifted.x_grid.weights @ f_lifted)
    if not scale > 0:
        raise ShiftTooSmallError(f"transformed target has mass {scale:g}")
    theta_c = lifted.theta_grid.subset(active)
    kc = KernelMatrix(lifted.x_grid, theta_c, lifted.entries[:, active] / masses[active],
                      None, non_negative=True)
    q0 = masses[active] * start[active]
    q0 = q0 / (theta_c.weights @ q0)
    canonical = ProblemSpec(kc, GridFunction(lifted.x_grid, f_lifted / scale),
                            GridFunction(theta_c, q0))
    warns = []
    if not np.all(active):
        warns.append(f"{int((~active).sum())} kernel column(s) have zero mass and are held fixed")
    return TransformedProblem(canonical, kind, lifted, _frozen_copy(masses), active, scale,
                              np.array(start, dtype=float), t, original_theta_grid, warns)


def _frozen_copy(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _check_target(kernel_matrix: KernelMatrix, f: GridFunction) -> None:
    if f.grid != kernel_matrix.x_grid:
        raise GridError("f must live on the kernel's x-grid")


def identity_transform(kernel_matrix: KernelMatrix, f: GridFunction,
                       p0: GridFunction) -> TransformedProblem:
    """No reduction: the problem is already canonical."""
    problem = ProblemSpec(kernel_matrix, f, p0)
    ones = np.ones(len(kernel_matrix.theta_grid))
    return TransformedProblem(problem, (), kernel_matrix, _frozen_copy(ones),
                              np.ones(len(ones), dtype=bool), 1.0, p0.values.copy(), 0.0,
                              kernel_matrix.theta_grid)


def normalize_kernel_transform(kernel_matrix: KernelMatrix, f: GridFunction,
                               p0: GridFunction) -> TransformedProblem:
    """Reduce a non-negative, non-density kernel (and non-density f) to canonical form.

    ``p0`` is the starting guess for the original unknown ``p``; it must be
    strictly positive.
    """
    _check_target(kernel_matrix, f)
    if np.any(f.values < 0):
        raise ValueError("f must be non-negative; use the shift transform")
    return _canonicalize(kernel_matrix, np.asarray(f.values, dtype=float),
                         np.asarray(p0.values, dtype=float), kind=("normalize",), t=0.0,
                         original_theta_grid=kernel_matrix.theta_grid, hold_degenerate=False)


def _resolve_t(t, f: GridFunction) -> float:
    t = auto_shift(f) if t in (None, "auto") else float(t)
    if not t > 0:
        raise ValueError(f"shift t must be positive, got {t}")
    return t


def _shift(lifted: KernelMatrix, f: np.ndarray, t: float) -> np.ndarray:
    ft = f + t * lifted.row_masses()
    if np.any(ft < 0):
        i = int(np.argmin(ft))
        raise ShiftTooSmallError(
            f"shift too small: shifted target is {ft[i]:.3g} at x={lifted.x_grid.nodes[i]:g}; "
            f"increase t (currently {t:g})"
        )
    return ft


def shift_transform(kernel_matrix: KernelMatrix, f: GridFunction, t: float | str = "auto",
                    p_init: GridFunction | None = None) -> TransformedProblem:
    """Reduce a problem with a signed solution (and signed ``f``) by shifting ``p`` by ``t``.

    The starting guess is ``p_init + t`` (``p_init`` defaults to zero).
    """
    _check_target(kernel_matrix, f)
    t = _resolve_t(t, f)
    ft = _shift(kernel_matrix, np.asarray(f.values, dtype=float), t)
    start = np.full(len(kernel_matrix.theta_grid), t)
    if p_init is not None:
        start = start + p_init.values
    return _canonicalize(kernel_matrix, ft, start, kind=("shift", "normalize"), t=t,
                         original_theta_grid=kernel_matrix.theta_grid, hold_degenerate=True)


def doubled_grid(theta_grid: Grid1D) -> Grid1D:
    """``[a, b] -> [a, b] + [b, 2b - a]`` as two quadrature blocks."""
    span = theta_grid.nodes[-1] - theta_grid.nodes[0]
    return Grid1D.concat(theta_grid, Grid1D(theta_grid.nodes + span))


def split_kernel_transform(k_plus: KernelMatrix, k_minus: KernelMatrix, f: GridFunction,
                           t: float | str = "auto",
                           p_init: GridFunction | None = None) -> TransformedProblem:
    """Reduce a problem with kernel ``k_plus - k_minus`` (both non-negative).

    The unknown becomes ``(p, -p)`` on the doubled theta-domain, which is then
    shifted by ``t``.
    """
    if k_plus.x_grid != k_minus.x_grid or k_plus.theta_grid != k_minus.theta_grid:
        raise GridError("k_plus and k_minus must share their grids")
    if np.any(k_plus.entries < 0) or np.any(k_minus.entries < 0):
        raise ValueError("both parts of a split kernel must be non-negative")
    _check_target(k_plus, f)
    t = _resolve_t(t, f)
    theta = k_plus.theta_grid
    lifted = KernelMatrix(k_plus.x_grid, doubled_grid(theta),
                          np.hstack([k_plus.entries, k_minus.entries]), None, non_negative=True)
    ft = _shift(lifted, np.asarray(f.values, dtype=float), t)
    start = np.full(2 * len(theta), t)
    if p_init is not None:
        start = start + np.concatenate([p_init.values, -p_init.values])
    return _canonicalize(lifted, ft, start, kind=("split", "shift", "normalize"), t=t,
                         original_theta_grid=theta, hold_degenerate=True)


def apply_transform(spec: TransformSpec, f: GridFunction, *, kernel_matrix: KernelMatrix | None = None,
                    k_plus: KernelMatrix | None = None, k_minus: KernelMatrix | None = None,
                    p0: GridFunction | None = None) -> TransformedProblem:
    """Dispatch on ``spec.kind``."""
    if spec.kind == "none":
        return identity_transform(kernel_matrix, f, p0)
    if spec.kind == "normalize":
        return normalize_kernel_transform(kernel_matrix, f, p0)
    if spec.kind == "shift":
        return shift_transform(kernel_matrix, f, spec.t)
    return split_kernel_transform(k_plus, k_minus, f, spec.t)
