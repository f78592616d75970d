"""Finite-dimensional energy-Casimir controllers for the two plants.

The controller is a port-Hamiltonian system

    xc_t = (Jc - Rc) grad Hc(xc) + Gc uc,    yc = Gc^T grad Hc(xc)

with a quadratic Hamiltonian that shapes the first two states around the
desired values and stores the damping states in a positive definite form::

    Hc = sum_k c_k/2 (xc_k - xcd_k - us_k/c_k)^2 + 1/2 x34^T Mc x34

The first two controller states are tied to the plant by Casimir functionals
``C^k = xc_k + int gamma^k w``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import Grid2D, check_field, csv_digits, quadrature_weights
from .plants import BeamPlant, PlantModel, PlatePlant, dirac
from .variational import interior_mask

N_SHAPED = 2
RESIDUAL_RTOL = 1e-12


class ControlError(ValueError):
    """Invalid controller structure, gains or Casimir specification."""


def _sym_psd(R, name="Rc", strict=False):
    R = np.asarray(R, dtype=float)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ControlError(f"{name} must be square, got shape {R.shape}")
    scale = max(np.abs(R).max(), 1.0)
    if np.abs(R - R.T).max() > 1e-12 * scale:
        raise ControlError(f"{name} is not symmetric")
    ev = np.linalg.eigvalsh(0.5 * (R + R.T))
    tol = 1e-12 * np.abs(R).max()
    if (strict and ev.min() <= tol) or ev.min() < -tol:
        kind = "positive definite" if strict else "positive semidefinite"
        raise ControlError(f"{name} is not {kind} (smallest eigenvalue {ev.min():.3g})")
    return R


@dataclass
class ControllerHamiltonian:
    c: np.ndarray
    xcd: np.ndarray
    us: np.ndarray
    Mc: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(N_SHAPED)
        self.xcd = np.asarray(self.xcd, dtype=float).reshape(N_SHAPED)
        self.us = np.asarray(self.us, dtype=float).reshape(N_SHAPED)
        if np.any(self.c <= 0):
            raise ControlError("shaping gains c must be positive")
        self.Mc = _sym_psd(self.Mc, "Mc", strict=True)

    @property
    def nc(self) -> int:
        return N_SHAPED + self.Mc.shape[0]

    @property
    def minimizer(self) -> np.ndarray:
        return np.concatenate([self.xcd + self.us / self.c, np.zeros(self.Mc.shape[0])])

    def value(self, xc) -> float:
        xc = np.asarray(xc, dtype=float)
        e = xc[:N_SHAPED] - self.minimizer[:N_SHAPED]
        z = xc[N_SHAPED:]
        return float(0.5 * np.sum(self.c * e * e) + 0.5 * z @ self.Mc @ z)


def grad_Hc(ham: ControllerHamiltonian, xc) -> np.ndarray:
    xc = np.asarray(xc, dtype=float)
    if xc.shape != (ham.nc,):
        raise ControlError(f"controller state must have length {ham.nc}")
    e = xc[:N_SHAPED] - ham.minimizer[:N_SHAPED]
    return np.concatenate([ham.c * e, ham.Mc @ xc[N_SHAPED:]])


@dataclass
class Controller:
    Jc: np.ndarray
    Rc: np.ndarray
    Gc: np.ndarray
    ham: ControllerHamiltonian
    xc: np.ndarray = None

    def __post_init__(self):
        self.Jc = np.asarray(self.Jc, dtype=float)
        self.Gc = np.asarray(self.Gc, dtype=float)
        nc = self.ham.nc
        if self.Jc.shape != (nc, nc):
            raise ControlError(f"Jc must be {nc}x{nc}")
        if np.abs(self.Jc + self.Jc.T).max() > 1e-12 * max(np.abs(self.Jc).max(), 1.0):
            raise ControlError("Jc is not skew-symmetric")
        self.Rc = _sym_psd(self.Rc)
        if self.Rc.shape != (nc, nc):
            raise ControlError(f"Rc must be {nc}x{nc}")
        if self.Gc.ndim != 2 or self.Gc.shape[0] != nc:
            raise ControlError(f"Gc must have {nc} rows")
        self.xc = np.zeros(nc) if self.xc is None else np.asarray(self.xc, dtype=float)

    @property
    def nc(self) -> int:
        return self.ham.nc

    @property
    def n_ports(self) -> int:
        return self.Gc.shape[1]

    def dissipation(self, xc=None) -> float:
        """Power drained by the controller, ``grad^T Rc grad >= 0``."""
        g = grad_Hc(self.ham, self.xc if xc is None else xc)
        return float(g @ self.Rc @ g)


def controller_rhs(ctrl: Controller, uc, xc=None) -> np.ndarray:
    uc = np.asarray(uc, dtype=float)
    if uc.shape != (ctrl.n_ports,):
        raise ControlError(f"controller input must have length {ctrl.n_ports}")
    g = grad_Hc(ctrl.ham, ctrl.xc if xc is None else xc)
    return (ctrl.Jc - ctrl.Rc) @ g + ctrl.Gc @ uc


def controller_output(ctrl: Controller, xc=None) -> np.ndarray:
    return ctrl.Gc.T @ grad_Hc(ctrl.ham, ctrl.xc if xc is None else xc)


@dataclass
class CasimirSpec:
    """Casimir densities ``gamma^k w`` and the interconnection gain ``K``."""

    gammas: np.ndarray
    K: np.ndarray = field(default_factory=lambda: np.eye(N_SHAPED))

    def __post_init__(self):
        self.gammas = np.asarray(self.gammas, dtype=float)
        self.K = np.atleast_2d(np.asarray(self.K, dtype=float))
        if self.K.shape[0] != self.K.shape[1]:
            raise ControlError("K must be square")
        if np.linalg.matrix_rank(self.K) < self.K.shape[0]:
            raise ControlError("interconnection gain K is singular")

    @property
    def n_casimirs(self) -> int:
        return self.gammas.shape[0]

    def values(self, plant: PlantModel, w, xc) -> np.ndarray:
        w = check_field(plant.grid, w)
        W = plant.weights
        return np.asarray(xc[: self.n_casimirs]) + np.array([np.sum(W * g * w) for g in self.gammas])


@dataclass
class DesiredEquilibrium:
    a: float
    b: float
    c: float = 0.0
    d: float = 0.0
    zb1: float = 0.5


def desired_plate_shape(eq: DesiredEquilibrium, grid: Grid2D) -> np.ndarray:
    Z1, Z2 = grid.coords()
    k = -eq.c + eq.d * Z2
    inner = eq.a * Z1**2
    outer = eq.b * (Z1 - eq.zb1) + eq.a * eq.zb1**2
    return np.where(Z1 < eq.zb1, inner, outer) * k


def desired_beam_shape(eq: DesiredEquilibrium, grid) -> np.ndarray:
    return eq.a * grid.coords() + eq.b


def slope_mismatch(eq: DesiredEquilibrium) -> float:
    """Jump of the z1-slope of the plate target at the breakpoint."""
    return float(eq.b - 2 * eq.a * eq.zb1)


@dataclass
class Feedforward:
    us: np.ndarray
    residual: float
    relative_residual: float


def compute_feedforward(plant: PlantModel, wd, band: int = 1) -> Feedforward:
    """Least-squares static inputs for the target shape.

    Solves ``min_u || -delta_w H(wd) + sum_k g_k u_k ||_2`` over the nodes at
    least ``band`` nodes away from the boundary.
    """
    wd = check_field(plant.grid, wd)
    if np.abs(plant.apply_bcs(wd) - wd).max() > 0:
        raise ControlError("target shape violates the essential boundary conditions")
    mask = interior_mask(plant.grid, band)
    r = plant.elastic_gradient(wd)[mask] / plant.weights[mask]
    A = np.stack([g[mask] for g in plant.inputs], axis=1)
    if np.linalg.matrix_rank(A) < A.shape[1]:
        raise ControlError("input fields are linearly dependent on the fitting nodes")
    us = np.linalg.lstsq(A, r, rcond=None)[0]
    res = float(np.linalg.norm(A @ us - r))
    rel = res / max(float(np.linalg.norm(r)), np.finfo(float).tiny)
    return Feedforward(us=us, residual=res, relative_residual=rel)


@dataclass
class Gains:
    """Free controller parameters of the damping block (states 3 and 4)."""

    J34: float
    R33: float
    R34: float
    R44: float
    Mc: np.ndarray
    G34: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.Mc = np.asarray(self.Mc, dtype=float).reshape(2, 2)
        self.G34 = np.asarray(self.G34, dtype=float).reshape(2, 2)
        self.c = np.asarray(self.c, dtype=float).reshape(N_SHAPED)

    def structure(self):
        Jc = np.zeros((4, 4))
        Jc[2, 3], Jc[3, 2] = self.J34, -self.J34
        Rc = np.zeros((4, 4))
        Rc[2:, 2:] = [[self.R33, self.R34], [self.R34, self.R44]]
        Gc = np.vstack([np.eye(N_SHAPED), self.G34])
        return Jc, Rc, Gc


def plate_gains() -> Gains:
    return Gains(
        J34=1.0, R33=200.0, R34=-1.0, R44=150.0,
        Mc=np.diag([1e4, 1e4]), G34=[[100.0, 0.0], [100.0, 0.0]], c=[0.1, 0.1],
    )


def beam_gains() -> Gains:
    return Gains(
        J34=0.0, R33=10.0, R34=0.0, R44=10.0,
        Mc=np.eye(2), G34=np.diag([4.0, 4.0]), c=[1.0, 1.0],
    )


def _initial_xc(spec: CasimirSpec, plant: PlantModel, w0, nc: int) -> np.ndarray:
    xc = np.zeros(nc)
    xc[: spec.n_casimirs] = -np.array([np.sum(plant.weights * g * w0) for g in spec.gammas])
    return xc


def synthesize_plate_controller(
    plant: PlatePlant, eq: DesiredEquilibrium, gains: Gains, w0=None
) -> tuple[Controller, CasimirSpec, Feedforward]:
    """Energy-Casimir controller regulating the plate toward the target shape.

    ``Casimir densities = -g_2k w`` with ``K = I``.  The controller state is
    initialised so that both Casimirs vanish for the initial deflection ``w0``.
    """
    Jc, Rc, Gc = gains.structure()
    wd = desired_plate_shape(eq, plant.grid)
    W = plant.weights
    xcd = np.array([np.sum(W * g * wd) for g in plant.inputs])
    ff = compute_feedforward(plant, wd)
    ham = ControllerHamiltonian(c=gains.c, xcd=xcd, us=ff.us, Mc=gains.Mc)
    spec = CasimirSpec(gammas=-plant.inputs.copy(), K=np.eye(N_SHAPED))
    w0 = np.zeros(plant.grid.shape) if w0 is None else w0
    ctrl = Controller(Jc, Rc, Gc, ham, xc=_initial_xc(spec, plant, w0, ham.nc))
    return ctrl, spec, ff


def synthesize_beam_controller(
    plant: BeamPlant, eq: DesiredEquilibrium, gains: Gains, w0=None
) -> tuple[Controller, CasimirSpec]:
    """Energy-Casimir controller placing the beam at ``w = a z + b``.

    The Casimir densities are discrete Diracs at the actuation points, so
    ``xc_k`` tracks ``w(A_k)``.  The target is force free, so ``us = 0``.
    """
    Jc, Rc, Gc = gains.structure()
    xcd = np.array([eq.a * A + eq.b for A in plant.actuators])
    ham = ControllerHamiltonian(c=gains.c, xcd=xcd, us=np.zeros(N_SHAPED), Mc=gains.Mc)
    spec = CasimirSpec(gammas=-np.array([dirac(plant.grid, A) for A in plant.actuators]))
    w0 = np.zeros(plant.grid.shape) if w0 is None else w0
    ctrl = Controller(Jc, Rc, Gc, ham, xc=_initial_xc(spec, plant, w0, ham.nc))
    return ctrl, spec


@dataclass(frozen=True)
class ResidualRow:
    condition: str
    norm: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.norm <= self.tolerance)


@dataclass
class ResidualReport:
    rows: list[ResidualRow]
    rank: int
    n_casimirs: int

    @property
    def degenerate(self) -> bool:
        return self.rank < self.n_casimirs

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def __getitem__(self, condition: str) -> ResidualRow:
        for r in self.rows:
            if r.condition == condition:
                return r
        raise KeyError(condition)

    def to_csv(self, path) -> Path:
        path = Path(path)
        fmt = f"%.{csv_digits()}g"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["condition", "norm", "tolerance", "pass"])
            for r in self.rows:
                out.writerow([r.condition, fmt % r.norm, fmt % r.tolerance, "pass" if r.passed else "fail"])
            out.writerow(["rank", self.rank, self.n_casimirs, "fail" if self.degenerate else "pass"])
        return path


def _check_spec(plant: PlantModel, ctrl: Controller, spec: CasimirSpec):
    if spec.gammas.shape[1:] != plant.grid.shape:
        raise ControlError("Casimir densities do not live on the plant grid")
    if spec.n_casimirs > ctrl.nc:
        raise ControlError("more Casimirs than controller states")
    if spec.K.shape != (plant.n_inputs, plant.n_inputs) or ctrl.n_ports != plant.n_inputs:
        raise ControlError("port dimensions of plant, controller and K disagree")


def _common_rows(plant, ctrl, spec, coupling_name: str):
    """Conditions shared by both plant classes.

    ``J`` is canonical (w_t = delta_p H, p_t = -delta_w H) and the inputs
    act on the momentum equation only.  ``delta_w C = gamma``, ``delta_p C = 0``.
    """
    lam = spec.n_casimirs
    W = plant.weights
    JR = ctrl.Jc - ctrl.Rc
    rows = []
    scale_c = max(np.abs(JR).max(), 1.0)
    rows.append(ResidualRow("a", float(np.abs(JR[:lam]).max()), RESIDUAL_RTOL * scale_c))

    # in-domain relation on the momentum column: gamma + Gc K g = 0
    GcK = ctrl.Gc[:lam] @ spec.K
    relation = np.tensordot(GcK, plant.inputs, axes=1)
    mismatch = spec.gammas + relation
    scale_b = max(np.abs(spec.gammas).max(), np.abs(relation).max(), 1.0)
    rows.append(ResidualRow(coupling_name, float(np.abs(mismatch).max()), RESIDUAL_RTOL * scale_b))

    # no input acts on the w equation, so the w-column relation and the
    # coupling to the controller ports both vanish identically
    g_w = np.zeros_like(plant.inputs)
    col_w = np.tensordot(GcK, g_w, axes=1)
    rows.append(ResidualRow(coupling_name + "_w", float(np.abs(col_w).max(initial=0.0)), RESIDUAL_RTOL * scale_b))
    proj = np.array([[np.sum(W * gam * gw) for gw in g_w] for gam in spec.gammas])
    uncoup = proj @ spec.K @ ctrl.Gc.T
    rows.append(ResidualRow("c", float(np.abs(uncoup).max(initial=0.0)), RESIDUAL_RTOL * scale_b))
    rank = int(np.linalg.matrix_rank(spec.gammas.reshape(lam, -1))) if lam else 0
    return rows, rank, scale_b


def casimir_residuals_prop1(plant: PlatePlant, ctrl: Controller, spec: CasimirSpec) -> ResidualReport:
    """Structural-invariant conditions for the distributed (plate) interconnection.

    Condition ``d`` collects the boundary terms.  The Casimir density
    ``gamma w`` has no derivative dependence, so both boundary operators are
    zero; ``d_support`` additionally checks that ``gamma`` has no mass on
    the free edges, relative to its peak.
    """
    _check_spec(plant, ctrl, spec)
    rows, rank, scale = _common_rows(plant, ctrl, spec, "b")
    rows.append(ResidualRow("d", 0.0, RESIDUAL_RTOL * scale))
    g = plant.grid
    free_edges = np.concatenate(
        [spec.gammas[:, :, 0], spec.gammas[:, :, -1], spec.gammas[:, -1, :]], axis=1
    )
    peak = max(np.abs(spec.gammas).max(), np.finfo(float).tiny)
    rows.append(ResidualRow("d_support", float(np.abs(free_edges).max() / peak), g.h1 * g.h2))
    return ResidualReport(rows, rank, spec.n_casimirs)


def casimir_residuals_prop2(plant: BeamPlant, ctrl: Controller, spec: CasimirSpec) -> ResidualReport:
    """Structural-invariant conditions for the point-actuated (beam) interconnection.

    Condition ``b`` is the unactuated (w) column, ``c_point`` the pointwise
    relation at the actuation nodes, ``e`` the end-point boundary terms.
    """
    _check_spec(plant, ctrl, spec)
    rows, rank, scale = _common_rows(plant, ctrl, spec, "c_point")
    by_name = {r.condition: r for r in rows}
    ordered = [
        by_name["a"],
        ResidualRow("b", by_name["c_point_w"].norm, by_name["c_point_w"].tolerance),
        by_name["c_point"],
        ResidualRow("d", by_name["c"].norm, by_name["c"].tolerance),
        ResidualRow("e", 0.0, RESIDUAL_RTOL * scale),
    ]
    return ResidualReport(ordered, rank, spec.n_casimirs)


def fixed_gamma_plate(plant: PlatePlant) -> np.ndarray:
    return -plant.inputs.copy()


def quadrature_norm(grid, f) -> float:
    return float(np.sqrt(np.sum(quadrature_weights(grid) * np.asarray(f) ** 2)))
