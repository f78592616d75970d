"""Power-conserving coupling, fixed-step time integration and diagnostics.

The coupled state is handled as one flat vector ``[w, p, xc]``.  Two fixed
step integrators are available: classical RK4 and an exact propagator for
the (affine) closed loop, which is needed when the controller gains make the
damping states much stiffer than the plant.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .control import CasimirSpec, Controller, controller_output, controller_rhs, grad_Hc, quadrature_norm
from .grid import GridError
from .plants import PlantModel

log = logging.getLogger(__name__)

BLOWUP_FACTOR = 1e6
RK4_IMAG_BOUND = 2 * math.sqrt(2)
INTEGRATORS = ("rk4", "exact")


class BlowUpError(RuntimeError):
    """The integration produced non-finite values or runaway energy."""


def pcis_couple(y_int, yc, K) -> tuple[np.ndarray, np.ndarray]:
    """Power-conserving interconnection ``uc = K y``, ``u = -K^T yc``."""
    y_int = np.asarray(y_int, dtype=float)
    yc = np.asarray(yc, dtype=float)
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if K.shape != (yc.size, y_int.size):
        raise ValueError(f"K of shape {K.shape} does not match ports ({yc.size}, {y_int.size})")
    return -K.T @ yc, K @ y_int


@dataclass
class ClosedLoopState:
    w: np.ndarray
    p: np.ndarray
    xc: np.ndarray
    t: float = 0.0


@dataclass
class DiagnosticsRecord:
    t: float
    H: float
    Hc: float
    Hcl: float
    dHcl: float
    casimir_drift: np.ndarray
    eq_error: float
    u: np.ndarray
    yc: np.ndarray


@dataclass(eq=False)
class ClosedLoop:
    """Plant, optional controller and the data needed for diagnostics.

    Without a controller the plant runs open loop with zero input.
    """

    plant: PlantModel
    ctrl: Controller | None = None
    spec: CasimirSpec | None = None
    wd: np.ndarray | None = None

    @property
    def K(self) -> np.ndarray:
        return self.spec.K if self.spec is not None else np.eye(self.plant.n_inputs)

    @property
    def nc(self) -> int:
        return 0 if self.ctrl is None else self.ctrl.nc

    @property
    def size(self) -> int:
        return 2 * self.plant.grid.size + self.nc

    def pack(self, state: ClosedLoopState) -> np.ndarray:
        return np.concatenate([np.ravel(state.w), np.ravel(state.p), np.ravel(state.xc)])

    def unpack(self, z, t: float = 0.0) -> ClosedLoopState:
        n, shape = self.plant.grid.size, self.plant.grid.shape
        return ClosedLoopState(z[:n].reshape(shape), z[n : 2 * n].reshape(shape), z[2 * n :], t)

    def ports(self, state: ClosedLoopState):
        """Return ``(u, uc, y_int, yc)`` at the given state."""
        y = self.plant.outputs(state.w, state.p)
        if self.ctrl is None:
            zero = np.zeros(self.plant.n_inputs)
            return zero, zero, y, zero
        yc = controller_output(self.ctrl, state.xc)
        u, uc = pcis_couple(y, yc, self.K)
        return u, uc, y, yc

    def hamiltonians(self, state: ClosedLoopState) -> tuple[float, float]:
        H = self.plant.hamiltonian(state.w, state.p)
        Hc = 0.0 if self.ctrl is None else self.ctrl.ham.value(state.xc)
        return H, Hc

    def casimirs(self, state: ClosedLoopState) -> np.ndarray:
        if self.spec is None or self.ctrl is None:
            return np.zeros(0)
        return self.spec.values(self.plant, state.w, state.xc)

    def energy_rate(self, state: ClosedLoopState, deriv: ClosedLoopState) -> float:
        """Chain-rule rate of ``H + Hc`` along ``deriv``."""
        rate = self.plant.energy_rate(state.w, state.p, deriv.w, deriv.p)
        if self.ctrl is not None:
            rate += float(grad_Hc(self.ctrl.ham, state.xc) @ deriv.xc)
        return rate

    def eq_error(self, state: ClosedLoopState) -> float:
        if self.wd is None:
            return math.nan
        g = self.plant.grid
        return quadrature_norm(g, state.w - self.wd) / max(quadrature_norm(g, self.wd), 1e-12)

    def rhs_vector(self, z) -> np.ndarray:
        return self.pack(closed_loop_rhs(self.unpack(z), self))


def closed_loop_rhs(state: ClosedLoopState, system: ClosedLoop) -> ClosedLoopState:
    """Time derivative of the coupled state."""
    u, uc, _, _ = system.ports(state)
    wt, pt = system.plant.rhs(state.w, state.p, u)
    xct = np.zeros(0) if system.ctrl is None else controller_rhs(system.ctrl, uc, state.xc)
    return ClosedLoopState(wt, pt, xct, state.t)


def stability_dt(plant: PlantModel, safety: float = 0.8) -> float:
    """RK4 imaginary-axis step bound for the plant's fastest discrete mode."""
    if not 0 < safety <= 1:
        raise ValueError(f"safety factor must lie in (0, 1], got {safety}")
    return safety * RK4_IMAG_BOUND / plant.omega_max()


def step_rk4(f, z, dt: float) -> np.ndarray:
    """One classical Runge-Kutta step for ``z' = f(z)``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    k1 = f(z)
    k2 = f(z + 0.5 * dt * k1)
    k3 = f(z + 0.5 * dt * k2)
    k4 = f(z + dt * k3)
    out = z + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise BlowUpError("non-finite state after RK4 step")
    return out


class RK4Stepper:
    def __init__(self, system: ClosedLoop, dt: float):
        self.system, self.dt = system, dt
        fixed = system.plant.fixed.ravel()
        self._mask = np.concatenate([fixed, fixed, np.zeros(system.nc, dtype=bool)])

    def advance(self, z, nsteps: int, guard=None) -> np.ndarray:
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(nsteps):
                try:
                    z = step_rk4(self.system.rhs_vector, z, self.dt)
                except GridError as exc:
                    raise BlowUpError(f"non-finite stage in RK4 step: {exc}") from exc
                z[self._mask] = 0.0
                if guard is not None:
                    guard(z)
        return z


class ExactStepper:
    """Exact propagator of the affine closed loop ``z' = A z + b``.

    ``A`` and ``b`` are recovered by probing the right-hand side with unit
    vectors, and the flow over ``m`` steps is the matrix exponential of the
    augmented generator ``[[A, b], [0, 0]]``.
    """

    def __init__(self, system: ClosedLoop, dt: float):
        self.system, self.dt = system, dt
        n = system.size
        f = system.rhs_vector
        b = f(np.zeros(n))
        A = np.empty((n, n))
        e = np.zeros(n)
        for j in range(n):
            e[j] = 1.0
            A[:, j] = f(e) - b
            e[j] = 0.0
        rng = np.random.default_rng(0)
        z = rng.standard_normal(n)
        ref = f(z)
        if np.abs(A @ z + b - ref).max() > 1e-8 * max(np.abs(ref).max(), 1.0):
            raise ValueError("closed loop is not affine; use the rk4 integrator")
        self.gen = np.zeros((n + 1, n + 1))
        self.gen[:n, :n] = A
        self.gen[:n, n] = b
        self._flows: dict[int, np.ndarray] = {}

    def flow(self, nsteps: int) -> np.ndarray:
        if nsteps not in self._flows:
            self._flows[nsteps] = sla.expm(self.gen * (nsteps * self.dt))
        return self._flows[nsteps]

    def advance(self, z, nsteps: int, guard=None) -> np.ndarray:
        if nsteps == 0:
            return z
        Phi = self.flow(nsteps)
        out = Phi[:-1, :-1] @ z + Phi[:-1, -1]
        if not np.all(np.isfinite(out)):
            raise BlowUpError("non-finite state after propagation")
        if guard is not None:
            guard(out)
        return out


@dataclass
class Trajectory:
    records: list[DiagnosticsRecord] = field(default_factory=list)
    edge_trace: list[np.ndarray] = field(default_factory=list)
    final: ClosedLoopState | None = None
    dt: float = 0.0
    steps: int = 0
    c0: np.ndarray | None = None


def record(system: ClosedLoop, state: ClosedLoopState, c0: np.ndarray) -> DiagnosticsRecord:
    deriv = closed_loop_rhs(state, system)
    H, Hc = system.hamiltonians(state)
    u, _, _, yc = system.ports(state)
    return DiagnosticsRecord(
        t=state.t,
        H=H,
        Hc=Hc,
        Hcl=H + Hc,
        dHcl=system.energy_rate(state, deriv),
        casimir_drift=system.casimirs(state) - c0,
        eq_error=system.eq_error(state),
        u=u,
        yc=yc,
    )


def edge_trace(system: ClosedLoop, state: ClosedLoopState) -> np.ndarray:
    """Deflection on the edge z2 = L2 (plate) or the whole beam (1D)."""
    w = np.asarray(state.w)
    return w[:, -1].copy() if w.ndim == 2 else w.copy()


def simulate(
    system: ClosedLoop,
    state0: ClosedLoopState,
    T: float,
    dt: float,
    log_every: int = 100,
    integrator: str = "rk4",
) -> Trajectory:
    """Integrate from ``state0`` to ``T`` and log every ``log_every`` steps.

    The step count is ``ceil(T/dt)`` with the step shortened to land on
    ``T``.  A record is always written at ``t = 0`` and at the final step.
    Raises :class:`BlowUpError` if the closed-loop energy leaves
    ``1e6 * max(1, |Hcl(0)|)`` or the state becomes non-finite.
    """
    if T < 0:
        raise ValueError("final time must be non-negative")
    if not dt > 0:
        raise ValueError("dt must be positive")
    if log_every < 1:
        raise ValueError("log_every must be a positive integer")
    if integrator not in INTEGRATORS:
        raise ValueError(f"unknown integrator {integrator!r}")

    nsteps = math.ceil(T / dt - 1e-9) if T > 0 else 0
    h = T / nsteps if nsteps else dt
    z = system.pack(state0)
    c0 = system.casimirs(state0)
    traj = Trajectory(dt=h, steps=nsteps, c0=c0)
    traj.records.append(record(system, state0, c0))
    traj.edge_trace.append(edge_trace(system, state0))
    limit = BLOWUP_FACTOR * max(1.0, abs(traj.records[0].Hcl))

    def guard(zz):
        st = system.unpack(zz)
        with np.errstate(over="ignore", invalid="ignore"):
            H, Hc = system.hamiltonians(st)
        if not abs(H + Hc) <= limit:
            raise BlowUpError(f"closed-loop energy {H + Hc:.3g} exceeds {limit:.3g}")

    if nsteps:
        stepper = (ExactStepper if integrator == "exact" else RK4Stepper)(system, h)
        done = 0
        while done < nsteps:
            m = min(log_every, nsteps - done)
            z = stepper.advance(z, m, guard if integrator == "exact" else None)
            done += m
            st = system.unpack(z, done * h)
            guard(z)
            traj.records.append(record(system, st, c0))
            traj.edge_trace.append(edge_trace(system, st))
    traj.final = system.unpack(z, nsteps * h)
    return traj
