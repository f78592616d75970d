"""Uniform grids, finite-difference operators and trapezoidal quadrature.

Nodal fields are plain numpy arrays: shape ``(n,)`` on a :class:`Grid1D` and
``(n1, n2)`` on a :class:`Grid2D`, where axis 0 runs along z1 and axis 1
along z2.  Difference operators are assembled once per grid as sparse
matrices acting on the flattened (C-order) field.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import lru_cache
from math import factorial
from pathlib import Path

import numpy as np
import scipy.sparse as sp

MIN_NODES = 9
MAX_ORDER = 4

#: Environment variable overriding the number of significant digits in CSV output.
PRECISION_ENV = "CASIMIR_PH_CSV_DIGITS"


class GridError(ValueError):
    """Raised for invalid grids, mismatched fields or non-finite values."""


@dataclass(frozen=True)
class Grid1D:
    n: int
    length: float = 1.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < MIN_NODES:
            raise GridError(f"Grid1D needs at least {MIN_NODES} nodes, got {self.n}")
        if not (np.isfinite(self.length) and self.length > 0):
            raise GridError(f"domain length must be positive, got {self.length}")

    @property
    def spacing(self) -> float:
        return self.length / (self.n - 1)

    @property
    def shape(self) -> tuple[int]:
        return (self.n,)

    @property
    def size(self) -> int:
        return self.n

    @property
    def ndim(self) -> int:
        return 1

    def coords(self) -> np.ndarray:
        return np.linspace(0.0, self.length, self.n)


@dataclass(frozen=True)
class Grid2D:
    n1: int
    n2: int
    L1: float = 1.0
    L2: float = 1.0

    def __post_init__(self):
        for n in (self.n1, self.n2):
            if int(n) != n or n < MIN_NODES:
                raise GridError(f"Grid2D needs at least {MIN_NODES} nodes per side, got {n}")
        for L in (self.L1, self.L2):
            if not (np.isfinite(L) and L > 0):
                raise GridError(f"side lengths must be positive, got {L}")

    @property
    def h1(self) -> float:
        return self.L1 / (self.n1 - 1)

    @property
    def h2(self) -> float:
        return self.L2 / (self.n2 - 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n1, self.n2)

    @property
    def size(self) -> int:
        return self.n1 * self.n2

    @property
    def ndim(self) -> int:
        return 2

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        return np.linspace(0.0, self.L1, self.n1), np.linspace(0.0, self.L2, self.n2)

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Nodal coordinate fields ``(Z1, Z2)``, each of shape ``(n1, n2)``."""
        z1, z2 = self.axes()
        return np.meshgrid(z1, z2, indexing="ij")


Grid = Grid1D | Grid2D


def check_field(grid: Grid, values) -> np.ndarray:
    """Return ``values`` as a float array after validating shape and finiteness."""
    f = np.asarray(values, dtype=float)
    if f.shape != grid.shape:
        raise GridError(f"field shape {f.shape} does not match grid shape {grid.shape}")
    if not np.all(np.isfinite(f)):
        raise GridError("field contains non-finite values")
    return f


def fd_weights(offsets, order: int) -> np.ndarray:
    """Weights ``c`` with ``sum(c[k] f(x + offsets[k] h)) = h**order f^(order)(x) + ...``.

    Exact for polynomials of degree ``len(offsets) - 1``.
    """
    s = np.asarray(offsets, dtype=float)
    m = len(s)
    V = np.vander(s, m, increasing=True).T
    rhs = np.zeros(m)
    rhs[order] = factorial(order)
    return np.linalg.solve(V, rhs)


def _stencil(n: int, i: int, order: int) -> np.ndarray:
    half = (order + 1) // 2
    if i - half >= 0 and i + half <= n - 1:
        return np.arange(i - half, i + half + 1)
    width = order + 2  # one-sided, second-order accurate
    if i - half < 0:
        return np.arange(0, width)
    return np.arange(n - width, n)


@lru_cache(maxsize=None)
def diff_matrix_1d(n: int, h: float, order: int) -> sp.csr_matrix:
    """Sparse ``n x n`` matrix of the ``order``-th derivative on a uniform grid.

    Central second-order stencils where they fit, one-sided second-order
    stencils inside the boundary closure band.
    """
    if order == 0:
        return sp.identity(n, format="csr")
    if not 0 < order <= MAX_ORDER:
        raise GridError(f"derivative order must be in 0..{MAX_ORDER}, got {order}")
    if n < order + 2:
        raise GridError(f"grid with {n} nodes is too small for a derivative of order {order}")
    rows, cols, vals = [], [], []
    for i in range(n):
        idx = _stencil(n, i, order)
        w = fd_weights(idx - i, order) / h**order
        rows.extend([i] * len(idx))
        cols.extend(idx)
        vals.extend(w)
    D = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    D.eliminate_zeros()
    return D


def diff_matrix(grid: Grid, J) -> sp.csr_matrix:
    """Sparse operator of the multi-index derivative ``J`` acting on flattened fields."""
    J = tuple(int(j) for j in np.atleast_1d(J))
    if len(J) != grid.ndim or min(J) < 0:
        raise GridError(f"multi-index {J} does not fit a {grid.ndim}D grid")
    if sum(J) > MAX_ORDER:
        raise GridError(f"total derivative order {sum(J)} exceeds {MAX_ORDER}")
    if grid.ndim == 1:
        return diff_matrix_1d(grid.n, grid.spacing, J[0])
    A = diff_matrix_1d(grid.n1, grid.h1, J[0])
    B = diff_matrix_1d(grid.n2, grid.h2, J[1])
    return sp.kron(A, B, format="csr")


def diff(grid: Grid, f, J) -> np.ndarray:
    """Apply the finite-difference derivative with multi-index ``J`` to a nodal field."""
    f = check_field(grid, f)
    return (diff_matrix(grid, J) @ f.ravel()).reshape(grid.shape)


def trapezoid_weights_1d(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


def quadrature_weights(grid: Grid) -> np.ndarray:
    """Trapezoidal weights, tensor-product in 2D, shaped like the grid."""
    if grid.ndim == 1:
        return trapezoid_weights_1d(grid.n, grid.spacing)
    return np.outer(trapezoid_weights_1d(grid.n1, grid.h1), trapezoid_weights_1d(grid.n2, grid.h2))


def integrate(grid: Grid, f) -> float:
    f = check_field(grid, f)
    return float(np.sum(quadrature_weights(grid) * f))


EDGES_1D = (1, 2)
EDGES_2D = (1, 2, 3, 4)


def boundary_trace(grid: Grid, f, edge: int) -> np.ndarray:
    """Nodal values of ``f`` on an edge, ordered by the tangential coordinate.

    2D edges: 1 is z1=0, 2 is z2=0, 3 is z1=L1, 4 is z2=L2.  1D: 1 is z=0 and
    2 is z=L, each returned as a length-one array.
    """
    f = check_field(grid, f)
    if grid.ndim == 1:
        if edge not in EDGES_1D:
            raise GridError(f"unknown 1D edge {edge!r}")
        return f[[0]] if edge == 1 else f[[-1]]
    if edge not in EDGES_2D:
        raise GridError(f"unknown 2D edge {edge!r}")
    return {1: f[0, :], 2: f[:, 0], 3: f[-1, :], 4: f[:, -1]}[edge].copy()


def edge_weights(grid: Grid2D, edge: int) -> np.ndarray:
    """Trapezoidal weights along an edge (tangential coordinate)."""
    if edge in (1, 3):
        return trapezoid_weights_1d(grid.n2, grid.h2)
    if edge in (2, 4):
        return trapezoid_weights_1d(grid.n1, grid.h1)
    raise GridError(f"unknown 2D edge {edge!r}")


def csv_digits() -> int:
    raw = os.environ.get(PRECISION_ENV)
    if raw is None:
        return 17
    try:
        digits = int(raw)
    except ValueError as exc:
        raise GridError(f"{PRECISION_ENV} must be an integer, got {raw!r}") from exc
    if not 1 <= digits <= 17:
        raise GridError(f"{PRECISION_ENV} must lie in 1..17, got {digits}")
    return digits


def write_field_csv(path, grid: Grid, f) -> Path:
    """Write a nodal snapshot; 2D fields get one row per line of constant z2."""
    f = check_field(grid, f)
    path = Path(path)
    rows = f[None, :] if grid.ndim == 1 else f.T
    fmt = f"%.{csv_digits()}g"
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        for row in rows:
            fh.write(",".join(fmt % v for v in row) + "\n")
    return path


def read_field_csv(path, grid: Grid) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    f = data[0] if grid.ndim == 1 else data.T
    return check_field(grid, f)
