"""Built-in kernels k(x, theta), kernel matrices and tabulated kernels.

Every kernel is a callable ``k(x, theta)`` that broadcasts over numpy arrays.
Two flags describe it: ``density_in_x`` (each column integrates to one over x)
and ``non_negative``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.special import ndtr

from .errors import DomainError, GridError
from .grid import Grid1D, GridFunction, _frozen

log = logging.getLogger(__name__)

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

#: column-mass deficit above which a density kernel is reported as truncated
MASS_DEFICIT_WARN = 1e-3


def normal_pdf(z):
    return _INV_SQRT_2PI * np.exp(-0.5 * np.square(z))


class Kernel:
    """Base class: subclasses implement ``_eval`` and ``_valid``."""

    density_in_x = True
    non_negative = True
    name = "kernel"

    def __call__(self, x, theta):
        x = np.asarray(x, dtype=float)
        theta = np.asarray(theta, dtype=float)
        ok = self._valid(x, theta)
        if not np.all(ok):
            bad = np.argwhere(~np.broadcast_to(ok, np.broadcast_shapes(x.shape, theta.shape)))
            idx = tuple(int(i) for i in bad[0]) if bad.size else ()
            xb, tb = np.broadcast_arrays(x, theta)
            raise DomainError(
                f"{self.name}: (x={float(xb[idx]):g}, theta={float(tb[idx]):g}) "
                f"outside the kernel domain" + (f" at index {idx}" if idx else "")
            )
        return self._eval(x, theta)

    def _valid(self, x, theta):
        return np.isfinite(x) & np.isfinite(theta)

    def _eval(self, x, theta):  # pragma: no cover - abstract
        raise NotImplementedError

    def sample(self, theta, rng: np.random.Generator) -> np.ndarray:
        """Draw one x from ``k(., theta_i)`` for each entry of ``theta``."""
        raise NotImplementedError(f"{self.name} does not support sampling")

    def to_dict(self) -> dict:
        return {"kind": self.name}


@dataclass(frozen=True)
class ExponentialRate(Kernel):
    """``theta * exp(-theta x)`` for ``x >= 0``; zero for negative x.

    ``theta = 0`` is accepted and gives the identically-zero limit column.
    """

    name = "exponential-rate"

    def _valid(self, x, theta):
        return super()._valid(x, theta) & (theta >= 0)

    def _eval(self, x, theta):
        xx = np.maximum(x, 0.0)
        return np.where(x >= 0, theta * np.exp(-theta * xx), 0.0)

    def sample(self, theta, rng):
        return rng.exponential(1.0 / np.asarray(theta, dtype=float))


@dataclass(frozen=True)
class NormalLocation(Kernel):
    """Normal density in x with mean theta and fixed standard deviation."""

    sigma: float = 1.0
    name = "normal-location"

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError(f"sigma must be positive, got {self.sigma}")

    def _eval(self, x, theta):
        return normal_pdf((x - theta) / self.sigma) / self.sigma

    def sample(self, theta, rng):
        theta = np.asarray(theta, dtype=float)
        return theta + self.sigma * rng.standard_normal(theta.shape)

    def to_dict(self):
        return {"kind": self.name, "sigma": self.sigma}


@dataclass(frozen=True)
class NormalScale(Kernel):
    """Centred normal density in x with variance theta."""

    name = "normal-scale"

    def _valid(self, x, theta):
        return super()._valid(x, theta) & (theta > 0)

    def _eval(self, x, theta):
        sd = np.sqrt(theta)
        return normal_pdf(x / sd) / sd

    def sample(self, theta, rng):
        theta = np.asarray(theta, dtype=float)
        return np.sqrt(theta) * rng.standard_normal(theta.shape)


@dataclass(frozen=True)
class TruncatedNormalFPT(Kernel):
    """Normal density with mean ``b h(theta)/theta`` and variance ``1/theta``,
    restricted to ``x > 0`` and renormalised.

    ``boundary`` is any object exposing ``b`` and a vectorised ``h``.
    """

    boundary: object
    name = "truncated-normal-fpt"

    def _valid(self, x, theta):
        return super()._valid(x, theta) & (theta > 0)

    def mean(self, theta):
        theta = np.asarray(theta, dtype=float)
        return self.boundary.b * self.boundary.h(theta) / theta

    def normalizer(self, theta):
        """Untruncated mass on ``x > 0``: ``Psi(-b h / sqrt(theta)) = Phi(b h / sqrt(theta))``."""
        theta = np.asarray(theta, dtype=float)
        return ndtr(self.boundary.b * self.boundary.h(theta) / np.sqrt(theta))

    def _eval(self, x, theta):
        rt = np.sqrt(theta)
        dens = normal_pdf((x - self.mean(theta)) * rt) * rt / self.normalizer(theta)
        return np.where(x >= 0, dens, 0.0)

    def sample(self, theta, rng):
        from scipy.stats import truncnorm

        theta = np.asarray(theta, dtype=float)
        mu, sd = self.mean(theta), 1.0 / np.sqrt(theta)
        return truncnorm.rvs((0.0 - mu) / sd, np.inf, loc=mu, scale=sd,
                             size=theta.shape, random_state=rng)

    def to_dict(self):
        return {"kind": self.name, "b": self.boundary.b}


class Tabulated(Kernel):
    """Kernel given as a table ``k(x_i, theta_j)``; bilinear between nodes."""

    name = "tabulated"

    def __init__(self, x_nodes, theta_nodes, table, *, density_in_x=False, source=None):
        self.x_grid = Grid1D(x_nodes)
        self.theta_grid = Grid1D(theta_nodes)
        table = np.asarray(table, dtype=float)
        if table.shape != (len(self.x_grid), len(self.theta_grid)):
            raise GridError(
                f"table shape {table.shape} does not match grids "
                f"({len(self.x_grid)}, {len(self.theta_grid)})"
            )
        self.table = _frozen(table)
        self.density_in_x = density_in_x
        self.non_negative = bool(np.all(table >= 0))
        self.source = source
        self._interp = RegularGridInterpolator(
            (self.x_grid.nodes, self.theta_grid.nodes), self.table, method="linear"
        )

    def _valid(self, x, theta):
        xg, tg = self.x_grid.nodes, self.theta_grid.nodes
        return (super()._valid(x, theta) & (x >= xg[0]) & (x <= xg[-1])
                & (theta >= tg[0]) & (theta <= tg[-1]))

    def _eval(self, x, theta):
        xb, tb = np.broadcast_arrays(x, theta)
        pts = np.stack([xb.ravel(), tb.ravel()], axis=-1)
        return self._interp(pts).reshape(xb.shape)

    def matrix(self) -> "KernelMatrix":
        """The table itself on its own grids (no interpolation)."""
        return KernelMatrix(self.x_grid, self.theta_grid, self.table, self)

    def to_dict(self):
        return {"kind": self.name, "path": str(self.source) if self.source else None}


@dataclass(frozen=True)
class Difference(Kernel):
    """``plus(x, theta) - minus(x, theta)``; a general signed kernel."""

    plus: Kernel
    minus: Kernel
    name = "difference"
    density_in_x = False
    non_negative = False

    def _valid(self, x, theta):
        return self.plus._valid(x, theta) & self.minus._valid(x, theta)

    def _eval(self, x, theta):
        return self.plus._eval(x, theta) - self.minus._eval(x, theta)

    def to_dict(self):
        return {"kind": self.name, "plus": self.plus.to_dict(), "minus": self.minus.to_dict()}


@dataclass(frozen=True)
class Reflected(Kernel):
    """``base(-x, theta)``; with a location kernel this is ``phi_s(x + theta)``."""

    base: Kernel
    name = "reflected"

    def __post_init__(self):
        object.__setattr__(self, "density_in_x", self.base.density_in_x)
        object.__setattr__(self, "non_negative", self.base.non_negative)

    def _valid(self, x, theta):
        return self.base._valid(-np.asarray(x), theta)

    def _eval(self, x, theta):
        return self.base._eval(-x, theta)

    def to_dict(self):
        return {"kind": self.name, "base": self.base.to_dict()}


def evaluate(kernel: Kernel, x: float, theta: float) -> float:
    """``k(x, theta)`` at a single point, with domain checking."""
    return float(kernel(x, theta))


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """``entries[i, j] = k(x_i, theta_j)`` on a pair of grids."""

    x_grid: Grid1D
    theta_grid: Grid1D
    entries: np.ndarray
    kernel: Kernel | None = None
    non_negative: bool = field(default=None)

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.shape != (len(self.x_grid), len(self.theta_grid)):
            raise GridError(
                f"kernel matrix shape {e.shape} does not match grids "
                f"({len(self.x_grid)}, {len(self.theta_grid)})"
            )
        if e.flags.writeable:
            e = _frozen(e)
        object.__setattr__(self, "entries", e)
        if self.non_negative is None:
            object.__setattr__(self, "non_negative", bool(np.all(e >= 0)))
        elif self.non_negative and np.any(e < 0):
            raise GridError("kernel declared non-negative has negative entries")

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    @property
    def density_in_x(self) -> bool:
        return bool(self.kernel is not None and self.kernel.density_in_x)

    def column_masses(self) -> np.ndarray:
        """x-quadrature of every column."""
        return self.x_grid.weights @ self.entries

    def row_masses(self) -> np.ndarray:
        """theta-quadrature of every row."""
        return self.entries @ self.theta_grid.weights

    def column(self, j: int) -> GridFunction:
        return GridFunction(self.x_grid, self.entries[:, j])

    def mass_warnings(self, threshold: float = MASS_DEFICIT_WARN) -> list[str]:
        """Columns of a density kernel that lose more than ``threshold`` mass to truncation."""
        if not self.density_in_x:
            return []
        deficit = 1.0 - self.column_masses()
        bad = np.flatnonzero(deficit > threshold)
        if bad.size == 0:
            return []
        th = self.theta_grid.nodes[bad]
        return [
            f"{bad.size} kernel column(s) lose more than {threshold:g} of their mass "
            f"to x-grid truncation (theta in [{th.min():g}, {th.max():g}], "
            f"worst deficit {deficit[bad].max():.3g})"
        ]


def build_matrix(kernel: Kernel, x_grid: Grid1D, theta_grid: Grid1D) -> KernelMatrix:
    """Tabulate ``kernel`` on ``x_grid x theta_grid``.

    Domain violations are raised with the offending ``(i, j)`` index.
    """
    entries = kernel(x_grid.nodes[:, None], theta_grid.nodes[None, :])
    return KernelMatrix(x_grid, theta_grid, entries, kernel,
                        non_negative=bool(kernel.non_negative) or None)


def column_mass(matrix: KernelMatrix, j: int) -> float:
    return float(matrix.x_grid.weights @ matrix.entries[:, j])


def load_tabulated_csv(path, *, density_in_x: bool = False) -> Tabulated:
    """Read a kernel table.

    Layout: the first row holds the x-nodes (its first cell is ignored), each
    following row starts with a theta-node followed by ``k(x_i, theta)`` for
    every x-node.
    """
    rows = _numeric_rows_with_corner(Path(path))
    x_nodes = rows[0][1:]
    theta_nodes = [r[0] for r in rows[1:]]
    for lineno, r in enumerate(rows[1:], start=2):
        if len(r) != len(rows[0]):
            raise GridError(f"{path}:{lineno}: expected {len(rows[0])} fields, got {len(r)}")
    body = np.array([r[1:] for r in rows[1:]], dtype=float)
    return Tabulated(x_nodes, theta_nodes, body.T, density_in_x=density_in_x, source=path)


def save_tabulated_csv(matrix: KernelMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("theta\\x," + ",".join(f"{x:.17g}" for x in matrix.x_grid.nodes) + "\n")
        for j, th in enumerate(matrix.theta_grid.nodes):
            fh.write(f"{th:.17g}," + ",".join(f"{v:.17g}" for v in matrix.entries[:, j]) + "\n")


def _numeric_rows_with_corner(path: Path) -> list[list[float]]:
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            vals = []
            for c, cell in enumerate(row):
                try:
                    vals.append(float(cell))
                except ValueError:
                    if lineno == 1 and c == 0:
                        vals.append(float("nan"))
                    else:
                        raise GridError(f"{path}:{lineno}: non-numeric entry {cell!r}") from None
            rows.append(vals)
    if len(rows) < 3:
        raise GridError(f"{path}: kernel table needs a header row and at least two theta rows")
    return rows


KERNEL_FACTORIES: dict[str, Callable[..., Kernel]] = {
    "exponential-rate": lambda **kw: ExponentialRate(),
    "normal-location": lambda sigma=1.0, **kw: NormalLocation(float(sigma)),
    "normal-scale": lambda **kw: NormalScale(),
}


def kernel_from_dict(spec: dict) -> Kernel:
    """Build a kernel from its ``to_dict`` form (config files)."""
    kind = spec.get("kind")
    if kind == "tabulated":
        return load_tabulated_csv(spec["path"], density_in_x=bool(spec.get("density_in_x", False)))
    if kind == "difference":
        return Difference(kernel_from_dict(spec["plus"]), kernel_from_dict(spec["minus"]))
    if kind == "reflected":
        return Reflected(kernel_from_dict(spec["base"]))
    if kind not in KERNEL_FACTORIES:
        raise GridError(f"unknown kernel kind {kind!r}")
    params = {k: v for k, v in spec.items() if k != "kind"}
    return KERNEL_FACTORIES[kind](**params)
