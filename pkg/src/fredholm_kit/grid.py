"""One-dimensional grids, trapezoidal quadrature and divergences on tabulated functions."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import GridError, SupportError, ZeroMassError


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


def trapezoid_weights(nodes: np.ndarray) -> np.ndarray:
    """Composite trapezoid weights for arbitrary (sorted) nodes."""
    nodes = np.asarray(nodes, dtype=float)
    dx = np.diff(nodes)
    w = np.zeros_like(nodes)
    w[:-1] += 0.5 * dx
    w[1:] += 0.5 * dx
    return w


class Grid1D:
    """Ordered quadrature nodes with trapezoid weights.

    Parameters
    ----------
    nodes : array_like
        Strictly increasing, finite nodes (at least two).

    Notes
    -----
    Grids are immutable. Block grids built with :meth:`concat` may repeat a
    node at the junction between blocks; each block keeps its own trapezoid
    weights, so a discontinuity at the junction is integrated correctly.
    """

    __slots__ = ("nodes", "weights", "blocks")

    def __init__(self, nodes):
        nodes = np.asarray(nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise GridError("a grid needs at least two nodes")
        if not np.all(np.isfinite(nodes)):
            raise GridError("grid nodes must be finite")
        if not np.all(np.diff(nodes) > 0):
            raise GridError("grid nodes must be strictly increasing")
        self.nodes = _frozen(nodes)
        self.weights = _frozen(trapezoid_weights(nodes))
        self.blocks = (nodes.size,)

    @classmethod
    def uniform(cls, start: float, stop: float, num: int) -> "Grid1D":
        if not stop > start:
            raise GridError(f"grid min ({start}) must be below max ({stop})")
        return cls(np.linspace(start, stop, int(num)))

    @classmethod
    def concat(cls, *grids: "Grid1D") -> "Grid1D":
        """Join grids end to end, keeping each block's own quadrature weights."""
        for left, right in zip(grids, grids[1:]):
            if right.nodes[0] < left.nodes[-1]:
                raise GridError("concatenated grids must not overlap")
        out = object.__new__(cls)
        out.nodes = _frozen(np.concatenate([g.nodes for g in grids]))
        out.weights = _frozen(np.concatenate([g.weights for g in grids]))
        out.blocks = tuple(n for g in grids for n in g.blocks)
        return out

    def subset(self, mask) -> "Grid1D":
        """Nodes selected by ``mask`` keeping their original quadrature weights."""
        mask = np.asarray(mask, dtype=bool)
        if mask.all():
            return self
        out = object.__new__(type(self))
        out.nodes = _frozen(self.nodes[mask])
        out.weights = _frozen(self.weights[mask])
        out.blocks = (int(mask.sum()),)
        return out

    def split(self) -> list["Grid1D"]:
        """Inverse of :meth:`concat`."""
        out, start = [], 0
        for n in self.blocks:
            out.append(Grid1D(self.nodes[start:start + n]))
            start += n
        return out

    def __len__(self) -> int:
        return self.nodes.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, Grid1D):
            return NotImplemented
        return (self is other) or (
            self.blocks == other.blocks and np.array_equal(self.nodes, other.nodes)
        )

    def __hash__(self):
        return hash((self.blocks, self.nodes.tobytes()))

    def __repr__(self) -> str:
        return f"Grid1D([{self.nodes[0]:g}, {self.nodes[-1]:g}], n={len(self)})"

    @property
    def length(self) -> float:
        return float(np.sum(self.weights))

    def tabulate(self, fn, **kwargs) -> "GridFunction":
        """Evaluate a vectorised callable at the nodes."""
        return GridFunction(self, fn(self.nodes, **kwargs))


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Real values tabulated on a :class:`Grid1D`."""

    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.nodes.shape:
            raise GridError(
                f"{values.size} values for a grid with {len(self.grid)} nodes"
            )
        if values.flags.writeable:
            values = _frozen(values)
        object.__setattr__(self, "values", values)

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    def mass(self) -> float:
        return trapezoid_integrate(self)

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.grid, values)

    def is_density(self, tol: float = 1e-6) -> bool:
        return bool(np.all(self.values >= 0) and abs(self.mass() - 1.0) <= tol)

    def cdf(self) -> np.ndarray:
        """Cumulative trapezoid integral from the first node."""
        v, x = self.values, self.nodes
        inc = 0.5 * (v[1:] + v[:-1]) * np.diff(x)
        return np.concatenate([[0.0], np.cumsum(inc)])

    def to_csv(self, path, header: tuple[str, str] = ("node", "value")) -> None:
        write_csv(self, path, header)


def _check_same_grid(f: GridFunction, g: GridFunction) -> None:
    if f.grid != g.grid:
        raise GridError("functions are tabulated on different grids; resample first")


def trapezoid_integrate(fn: GridFunction) -> float:
    """Trapezoid-rule integral of a tabulated function."""
    return float(np.dot(fn.grid.weights, fn.values))


def kl_divergence(f: GridFunction, g: GridFunction) -> float:
    """Quadrature of ``f log(f/g)`` with ``0 log(0/g) = 0``.

    Raises
    ------
    SupportError
        If ``f > 0`` at a node where ``g <= 0``.
    """
    _check_same_grid(f, g)
    fv, gv = f.values, g.values
    pos = fv > 0
    bad = pos & (gv <= 0)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise SupportError(
            f"support violation at node {i} (x={f.nodes[i]:g}): f={fv[i]:g}, g={gv[i]:g}"
        )
    integrand = np.zeros_like(fv)
    integrand[pos] = fv[pos] * np.log(fv[pos] / gv[pos])
    return float(np.dot(f.grid.weights, integrand))


def l1_distance(f: GridFunction, g: GridFunction) -> float:
    _check_same_grid(f, g)
    return float(np.dot(f.grid.weights, np.abs(f.values - g.values)))


def normalize_to_density(fn: GridFunction) -> GridFunction:
    """Scale a non-negative function to unit trapezoid mass."""
    mass = trapezoid_integrate(fn)
    if not mass > 0:
        raise ZeroMassError(f"cannot normalise a function with mass {mass:g}")
    if np.any(fn.values < 0):
        raise ZeroMassError("cannot normalise a function with negative values")
    return fn.with_values(fn.values / mass)


def write_csv(fn: GridFunction, path, header: tuple[str, str] = ("node", "value")) -> None:
    """Two-column CSV with a one-line header, 17 significant digits."""
    with open(path, "w", newline="") as fh:
        fh.write(f"{header[0]},{header[1]}\n")
        for x, v in zip(fn.nodes, fn.values):
            fh.write(f"{x:.17g},{v:.17g}\n")


def read_csv(path) -> GridFunction:
    """Inverse of :func:`write_csv`. The header line is optional."""
    rows = _numeric_rows(Path(path))
    arr = np.array(rows, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise GridError(f"{path}: expected two columns (node,value)")
    return GridFunction(Grid1D(arr[:, 0]), arr[:, 1])


def _numeric_rows(path: Path) -> list[list[float]]:
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                if rows:
                    raise GridError(f"{path}:{lineno}: non-numeric entry") from None
                # header line
    return rows
