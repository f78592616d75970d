"""Variational derivative and boundary operators of second-order quadratic densities.

The two densities covered are the ones the plant models use::

    beam  H = p**2 / (2 rhoA) + EI w_zz**2 / 2
    plate H = p**2 / (2 mu) + Xi/2 (w_11**2 + w_22**2 + 2 nu w_11 w_22 + 2 (1 - nu) w_12**2)

Every operator is assembled from the stencils in :mod:`casimir_ph.grid`, so the
results are boundary-condition agnostic: near the boundary they use the
one-sided closure stencils.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from math import comb

import numpy as np

from .grid import (
    Grid1D,
    Grid2D,
    GridError,
    check_field,
    diff,
    edge_weights,
    integrate,
    quadrature_weights,
)


#: Nodes this close to the boundary see one-sided stencils in the composed operators.
CLOSURE_BAND = 2


def _positive_field(grid, values, name):
    f = np.broadcast_to(np.asarray(values, dtype=float), grid.shape).copy()
    check_field(grid, f)
    if np.any(f <= 0):
        raise GridError(f"{name} must be strictly positive")
    return f


@dataclass(frozen=True, eq=False)
class QuadraticDensity1D:
    grid: Grid1D
    rhoA: np.ndarray
    EI: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rhoA", _positive_field(self.grid, self.rhoA, "rhoA"))
        object.__setattr__(self, "EI", _positive_field(self.grid, self.EI, "EI"))

    @property
    def mass(self) -> np.ndarray:
        return self.rhoA


@dataclass(frozen=True, eq=False)
class QuadraticDensity2D:
    grid: Grid2D
    mu: np.ndarray
    Xi: np.ndarray
    nu: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "mu", _positive_field(self.grid, self.mu, "mu"))
        object.__setattr__(self, "Xi", _positive_field(self.grid, self.Xi, "Xi"))
        if not 0.0 <= self.nu < 0.5:
            raise GridError(f"Poisson ratio must lie in [0, 0.5), got {self.nu}")

    @property
    def mass(self) -> np.ndarray:
        return self.mu


Density = QuadraticDensity1D | QuadraticDensity2D


@dataclass
class BoundaryData:
    """Boundary-operator traces per edge.

    ``first[edge]`` holds the force-type operator (paired with the velocity),
    ``second[edge]`` the moment-type operator (paired with the normal
    derivative of the velocity).
    """

    first: dict[int, np.ndarray] = field(default_factory=dict)
    second: dict[int, np.ndarray] = field(default_factory=dict)


def _on_grid(d: Density, f, name: str) -> np.ndarray:
    try:
        return check_field(d.grid, f)
    except GridError as exc:
        raise GridError(f"{name}: {exc}") from None


def plate_moments(d: QuadraticDensity2D, w):
    """Return ``(m11, m22, m12)``: the partials of the elastic density by w_20, w_02, w_11."""
    g = d.grid
    w20, w02, w11 = diff(g, w, (2, 0)), diff(g, w, (0, 2)), diff(g, w, (1, 1))
    m11 = d.Xi * (w20 + d.nu * w02)
    m22 = d.Xi * (d.nu * w20 + w02)
    m12 = 2.0 * (1.0 - d.nu) * d.Xi * w11
    return m11, m22, m12


def _leibniz(grid, a, w, J, inner) -> np.ndarray:
    """``d_J(a * b)`` expanded by the product rule, with ``b = sum(c * w_K for c, K in inner)``."""
    J = tuple(np.atleast_1d(J))
    out = np.zeros(grid.shape)
    for M in product(*(range(j + 1) for j in J)):
        coef = np.prod([comb(j, m) for j, m in zip(J, M)])
        aJ = diff(grid, a, tuple(j - m for j, m in zip(J, M)))
        bM = sum(c * diff(grid, w, tuple(k + m for k, m in zip(K, M))) for c, K in inner)
        out += coef * aJ * bM
    return out


def _closure_band(grid) -> np.ndarray:
    return ~interior_mask(grid, CLOSURE_BAND)


def var_deriv_w_2d(d: QuadraticDensity2D, w) -> np.ndarray:
    """Plate variational derivative by stencil composition.

    Inside the closure band the composition of two one-sided stencils loses
    consistency, so there the product-rule expansion is used instead.
    """
    w = _on_grid(d, w, "w")
    g, nu = d.grid, d.nu
    m11, m22, m12 = plate_moments(d, w)
    out = diff(g, m11, (2, 0)) + diff(g, m22, (0, 2)) + diff(g, m12, (1, 1))
    band = _closure_band(g)
    near = (
        _leibniz(g, d.Xi, w, (2, 0), [(1.0, (2, 0)), (nu, (0, 2))])
        + _leibniz(g, d.Xi, w, (0, 2), [(nu, (2, 0)), (1.0, (0, 2))])
        + _leibniz(g, 2 * (1 - nu) * d.Xi, w, (1, 1), [(1.0, (1, 1))])
    )
    out[band] = near[band]
    return out


def var_deriv_w_1d(d: QuadraticDensity1D, w) -> np.ndarray:
    """Beam variational derivative ``d2(EI d2 w)``; product rule in the closure band."""
    w = _on_grid(d, w, "w")
    g = d.grid
    out = diff(g, d.EI * diff(g, w, 2), 2)
    band = _closure_band(g)
    out[band] = _leibniz(g, d.EI, w, (2,), [(1.0, (2,))])[band]
    return out


def var_deriv_w(d: Density, w) -> np.ndarray:
    if isinstance(d, QuadraticDensity2D):
        return var_deriv_w_2d(d, w)
    return var_deriv_w_1d(d, w)


def var_deriv_p(d: Density, p) -> np.ndarray:
    return _on_grid(d, p, "p") / d.mass


def boundary_ops_1d(d: QuadraticDensity1D, w) -> BoundaryData:
    w = _on_grid(d, w, "w")
    moment = d.EI * diff(d.grid, w, 2)
    dmoment = _leibniz(d.grid, d.EI, w, (1,), [(1.0, (2,))])
    return BoundaryData(
        first={1: -dmoment[[0]], 2: -dmoment[[-1]]},
        second={1: moment[[0]], 2: moment[[-1]]},
    )


# edge -> (normal axis, slice picking the edge line)
_EDGE_AXES = {1: (0, np.s_[0, :]), 2: (1, np.s_[:, 0]), 3: (0, np.s_[-1, :]), 4: (1, np.s_[:, -1])}


def boundary_ops_2d(d: QuadraticDensity2D, w, edge: int) -> BoundaryData:
    """Boundary operators on one edge in edge-adapted coordinates.

    The normal coordinate plays the role of z2 in the generic formulas, so on
    edges 1 and 3 the indices are swapped.  No outward-orientation sign is
    applied here.
    """
    if edge not in _EDGE_AXES:
        raise GridError(f"unknown 2D edge {edge!r}")
    w = _on_grid(d, w, "w")
    g = d.grid
    nu = d.nu
    twist = 2 * (1 - nu) * d.Xi
    normal, sl = _EDGE_AXES[edge]
    # derivatives of the moments by the product rule: composing one-sided
    # stencils would cost an order of accuracy on the edge
    if normal == 1:
        first = -_leibniz(g, twist, w, (1, 0), [(1.0, (1, 1))]) - _leibniz(
            g, d.Xi, w, (0, 1), [(nu, (2, 0)), (1.0, (0, 2))]
        )
        second = d.Xi * (nu * diff(g, w, (2, 0)) + diff(g, w, (0, 2)))
    else:
        first = -_leibniz(g, twist, w, (0, 1), [(1.0, (1, 1))]) - _leibniz(
            g, d.Xi, w, (1, 0), [(1.0, (2, 0)), (nu, (0, 2))]
        )
        second = d.Xi * (diff(g, w, (2, 0)) + nu * diff(g, w, (0, 2)))
    return BoundaryData(first={edge: first[sl].copy()}, second={edge: second[sl].copy()})


def elastic_density(d: Density, w) -> np.ndarray:
    g = d.grid
    if isinstance(d, QuadraticDensity1D):
        return 0.5 * d.EI * diff(g, w, 2) ** 2
    w20, w02, w11 = diff(g, w, (2, 0)), diff(g, w, (0, 2)), diff(g, w, (1, 1))
    return 0.5 * d.Xi * (w20**2 + w02**2 + 2 * d.nu * w20 * w02 + 2 * (1 - d.nu) * w11**2)


def discrete_energy(d: Density, w, p) -> float:
    """Trapezoidal quadrature of the density with stencil derivatives."""
    w = _on_grid(d, w, "w")
    p = _on_grid(d, p, "p")
    return integrate(d.grid, 0.5 * p**2 / d.mass + elastic_density(d, w))


def energy_rate(d: Density, w, p, vw, vp) -> float:
    """Exact derivative of :func:`discrete_energy` along ``(vw, vp)`` (chain rule)."""
    g = d.grid
    if isinstance(d, QuadraticDensity1D):
        elastic = d.EI * diff(g, w, 2) * diff(g, vw, 2)
    else:
        m11, m22, m12 = plate_moments(d, w)
        elastic = m11 * diff(g, vw, (2, 0)) + m22 * diff(g, vw, (0, 2)) + m12 * diff(g, vw, (1, 1))
    return integrate(g, p * vp / d.mass + elastic)


@dataclass
class DecompositionTerms:
    chain: float
    domain: float
    boundary_first: float
    boundary_second: float

    @property
    def residual(self) -> float:
        return abs(self.chain - (self.domain + self.boundary_first + self.boundary_second))


def decomposition_terms(d: Density, state, velocity) -> DecompositionTerms:
    """Split the energy rate along ``velocity`` into domain and boundary contributions."""
    w, p = (_on_grid(d, f, "state") for f in state)
    vw, vp = (_on_grid(d, f, "velocity") for f in velocity)
    g = d.grid
    chain = energy_rate(d, w, p, vw, vp)
    domain = integrate(g, vw * var_deriv_w(d, w) + vp * var_deriv_p(d, p))
    b1 = b2 = 0.0
    if isinstance(d, QuadraticDensity1D):
        bd = boundary_ops_1d(d, w)
        dv = diff(g, vw, 1)
        for edge, idx, sign in ((1, 0, -1.0), (2, -1, 1.0)):
            b1 += sign * vw[idx] * bd.first[edge][0]
            b2 += sign * dv[idx] * bd.second[edge][0]
    else:
        for edge, (normal, sl) in _EDGE_AXES.items():
            sign = 1.0 if edge in (3, 4) else -1.0
            bd = boundary_ops_2d(d, w, edge)
            dv = diff(g, vw, (1, 0) if normal == 0 else (0, 1))
            we = edge_weights(g, edge)
            b1 += sign * float(np.sum(we * vw[sl] * bd.first[edge]))
            b2 += sign * float(np.sum(we * dv[sl] * bd.second[edge]))
    return DecompositionTerms(chain, domain, b1, b2)


def decomposition_check(d: Density, state, velocity) -> float:
    """Residual between the chain-rule energy rate and its domain+boundary split."""
    shapes = {np.shape(f) for f in (*state, *velocity)}
    if len(state) != 2 or len(velocity) != 2 or len(shapes) != 1:
        raise GridError("state and velocity must be matching (w, p) field pairs")
    return decomposition_terms(d, state, velocity).residual


def fd_energy_gradient(d: Density, w, nodes, step: float | None = None) -> np.ndarray:
    """Central-difference gradient of the elastic quadrature energy, divided by the weights.

    ``nodes`` is a boolean mask selecting where the gradient is evaluated.
    """
    w = _on_grid(d, w, "w")
    g = d.grid
    if step is None:
        step = 1e-6 * max(float(np.max(np.abs(w))), 1.0)
    weights = quadrature_weights(g)
    out = np.full(g.shape, np.nan)
    zero = np.zeros(g.shape)
    for idx in zip(*np.nonzero(nodes)):
        wp, wm = w.copy(), w.copy()
        wp[idx] += step
        wm[idx] -= step
        dE = discrete_energy(d, wp, zero) - discrete_energy(d, wm, zero)
        out[idx] = dE / (2 * step) / weights[idx]
    return out


def interior_mask(grid, band: int) -> np.ndarray:
    """Nodes at least ``band`` nodes away from every boundary."""
    mask = np.zeros(grid.shape, dtype=bool)
    if grid.ndim == 1:
        mask[band:grid.n - band] = True
    else:
        mask[band:grid.n1 - band, band:grid.n2 - band] = True
    return mask


def gradient_consistency(d: Density, w, band: int = 1) -> float:
    """Max deviation between :func:`var_deriv_w` and the finite-difference energy gradient."""
    mask = interior_mask(d.grid, band)
    fd = fd_energy_gradient(d, w, mask)
    return float(np.max(np.abs(var_deriv_w(d, w)[mask] - fd[mask])))
