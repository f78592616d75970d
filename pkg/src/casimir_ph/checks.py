"""Verification studies shared by the ``verify`` command and the test-suite."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import Grid1D, Grid2D
from .plants import BeamPlant, PlantModel
from .variational import (
    QuadraticDensity1D,
    QuadraticDensity2D,
    decomposition_terms,
    gradient_consistency,
)

GRADIENT_BAND = 4
POWER_RTOL = 1e-8
MIN_ORDER = 1.9


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    tolerance: float
    passed: bool
    detail: str = ""


def smooth_data_1d(n: int, length: float = 1.0):
    """Density, state and velocity for the 1D decomposition study.

    Generic smooth fields with non-zero boundary values, so that both
    boundary terms contribute.
    """
    g = Grid1D(n, length)
    z = g.coords() / length
    d = QuadraticDensity1D(g, 1 + 0.2 * z, 1 + 0.3 * np.sin(z))
    state = (np.sin(2 * z) + z**3, np.cos(z))
    velocity = (np.cos(3 * z) + z, np.sin(z))
    return d, state, velocity


def smooth_data_2d(n: int):
    """Density, state and velocity for the 2D decomposition study.

    The velocity vanishes at the four corners, where the edge-wise split
    carries no corner terms.
    """
    g = Grid2D(n, n)
    A, B = g.coords()
    d = QuadraticDensity2D(g, 1 + 0.2 * A * B, 1 + 0.3 * np.sin(A + B), 0.2)
    state = (np.cos(A) * np.exp(B / 2) + A**2 * B, np.cos(A))
    velocity = (np.sin(np.pi * A) * (1 + B**2), np.sin(B))
    return d, state, velocity


def decomposition_study(dim: int, n: int = 21) -> CheckResult:
    """Observed order of the decomposition residual between ``n`` and ``2n - 1`` nodes."""
    make = smooth_data_1d if dim == 1 else smooth_data_2d
    res = []
    for m in (n, 2 * n - 1):
        d, state, velocity = make(m)
        res.append(decomposition_terms(d, state, velocity).residual)
    order = math.log2(res[0] / res[1]) if res[1] > 0 else math.inf
    return CheckResult(
        f"decomposition_{dim}d", order, MIN_ORDER, order >= MIN_ORDER,
        f"residuals {res[0]:.3e} -> {res[1]:.3e}",
    )


def gradient_study(plant: PlantModel, seed: int = 0) -> CheckResult:
    """Variational derivative of the plant density against the energy gradient.

    Evaluated at nodes at least ``GRADIENT_BAND`` away from the boundary on a
    smooth random-phase deflection; the tolerance is ``5 h``.
    """
    g = plant.grid
    rng = np.random.default_rng(seed)
    ph = rng.uniform(0, 2 * np.pi, 3)
    if g.ndim == 1:
        z = g.coords()
        w = np.sin(2 * z + ph[0]) + 0.5 * np.cos(3 * z + ph[1])
        h = g.spacing
    else:
        A, B = g.coords()
        w = np.sin(2 * A + ph[0]) * np.cos(B + ph[1]) + 0.5 * np.cos(A * B + ph[2])
        h = max(g.h1, g.h2)
    dev = gradient_consistency(plant.density, w, GRADIENT_BAND)
    return CheckResult("gradient", dev, 5 * h, dev <= 5 * h)


def power_study(plant: PlantModel, seed: int = 0, samples: int = 5) -> CheckResult:
    """Chain-rule energy rate against the port power ``u . y`` at random states."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        w = plant.apply_bcs(rng.standard_normal(plant.grid.shape))
        p = plant.apply_bcs(rng.standard_normal(plant.grid.shape))
        u = rng.standard_normal(plant.n_inputs)
        wt, pt = plant.rhs(w, p, u)
        rate = plant.energy_rate(w, p, wt, pt) + plant.dissipation(w, p)
        port = float(u @ plant.outputs(w, p))
        scale = max(abs(port), abs(rate), 1e-300)
        worst = max(worst, abs(rate - port) / scale)
    return CheckResult("power", worst, POWER_RTOL, worst <= POWER_RTOL)


def default_decomposition(plant: PlantModel) -> CheckResult:
    return decomposition_study(1 if isinstance(plant, BeamPlant) else 2)

