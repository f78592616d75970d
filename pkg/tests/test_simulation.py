import math

import numpy as np
import pytest
import scipy.linalg as la

from casimir_ph.control import (
    DesiredEquilibrium,
    beam_gains,
    desired_beam_shape,
    plate_gains,
    synthesize_beam_controller,
    synthesize_plate_controller,
)
from casimir_ph.grid import Grid1D, Grid2D
from casimir_ph.plants import BeamPlant, PiezoParams, PlatePlant
from casimir_ph.simulation import (
    BlowUpError,
    ClosedLoop,
    ClosedLoopState,
    ExactStepper,
    closed_loop_rhs,
    pcis_couple,
    simulate,
    stability_dt,
    step_rk4,
)

PLATE_EQ = DesiredEquilibrium(a=0.16, b=0.12, c=1.0, d=2.0, zb1=0.5)
BEAM_EQ = DesiredEquilibrium(a=0.1, b=0.05)


def beam_loop(w0=None, gains=None):
    plant = BeamPlant()
    w0 = np.zeros(21) if w0 is None else w0
    ctrl, spec = synthesize_beam_controller(plant, BEAM_EQ, gains or beam_gains(), w0)
    system = ClosedLoop(plant, ctrl, spec, desired_beam_shape(BEAM_EQ, plant.grid))
    return system, ClosedLoopState(w0, np.zeros(21), ctrl.xc.copy())


def modal_shape(plant, modes, amp=0.01):
    K = plant.stiffness.toarray()
    M = np.diag((plant.weights * plant.mass).ravel())
    _, V = la.eigh(K, M)
    w = V[:, modes].sum(axis=1)
    return amp * w / np.abs(w).max()


# --- coupling ---------------------------------------------------------------------

def test_pcis_examples():
    u, uc = pcis_couple([1.0, 2.0], [0.0, 0.0], np.eye(2))
    assert np.all(u == 0)
    u, uc = pcis_couple([1.0, 2.0], [3.0, 4.0], np.eye(2))
    assert np.array_equal(uc, [1, 2]) and np.array_equal(u, [-3, -4])
    assert u @ [1, 2] + uc @ [3, 4] == 0


def test_pcis_power_conserving_random():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        K = rng.standard_normal((2, 2))
        y, yc = rng.standard_normal((2, 2))
        u, uc = pcis_couple(y, yc, K)
        scale = np.abs(K).max() * np.abs(y).max() * np.abs(yc).max()
        assert abs(u @ y + uc @ yc) <= 1e-14 * scale


def test_pcis_dimension_mismatch():
    with pytest.raises(ValueError):
        pcis_couple([1.0, 2.0], [1.0], np.eye(2))


# --- closed-loop right-hand side --------------------------------------------------

def test_equilibrium_is_stationary():
    plant = BeamPlant()
    wd = desired_beam_shape(BEAM_EQ, plant.grid)
    system, st = beam_loop(wd)
    assert np.allclose(st.xc, system.ctrl.ham.minimizer)
    d = closed_loop_rhs(st, system)
    assert np.all(d.w == 0)
    assert np.abs(d.p).max() < 1e-9
    assert np.all(d.xc == 0)


def test_zero_gain_decouples():
    plant = BeamPlant()
    ctrl, spec = synthesize_beam_controller(plant, BEAM_EQ, beam_gains())
    ctrl.Gc = np.zeros_like(ctrl.Gc)
    rng = np.random.default_rng(1)
    w, p = rng.standard_normal((2, 21))
    st = ClosedLoopState(w, p, rng.standard_normal(4))
    closed = closed_loop_rhs(st, ClosedLoop(plant, ctrl, spec))
    wt, pt = plant.rhs(w, p, np.zeros(2))
    assert np.array_equal(closed.w, wt) and np.array_equal(closed.p, pt)


@pytest.mark.parametrize("kind", ["plate", "beam"])
def test_power_audit(kind):
    rng = np.random.default_rng(2)
    if kind == "plate":
        plant = PlatePlant()
        ctrl, spec, _ = synthesize_plate_controller(plant, PLATE_EQ, plate_gains())
    else:
        plant = BeamPlant()
        ctrl, spec = synthesize_beam_controller(plant, BEAM_EQ, beam_gains())
    system = ClosedLoop(plant, ctrl, spec)
    w = plant.apply_bcs(rng.standard_normal(plant.grid.shape))
    p = plant.apply_bcs(rng.standard_normal(plant.grid.shape))
    st = ClosedLoopState(w, p, rng.standard_normal(4))
    rate = system.energy_rate(st, closed_loop_rhs(st, system))
    diss = ctrl.dissipation(st.xc)
    assert diss > 0
    # terms of the chain rule that cancel set the rounding scale
    d = closed_loop_rhs(st, system)
    scale = np.sum(np.abs(plant.elastic_gradient(w) * d.w)) + diss
    assert abs(rate + diss) <= 1e-8 * scale


# --- step size --------------------------------------------------------------------

def test_stability_dt_formula():
    plant = PlatePlant(Grid2D(21, 21), piezo=PiezoParams(rho_p_h_p=0.0, Xi_p=0.0))
    assert stability_dt(plant) == pytest.approx(0.8 * 2 * math.sqrt(2) / 3200, rel=1e-14)
    patched = PlatePlant()
    ratio = patched.density.Xi.max() / patched.density.mu.min()
    assert stability_dt(patched, 1.0) == pytest.approx(2 * math.sqrt(2) / (math.sqrt(ratio) * 3200))


def test_stability_dt_scaling():
    b21, b41 = BeamPlant(Grid1D(21)), BeamPlant(Grid1D(41))
    assert stability_dt(b21) / stability_dt(b41) == pytest.approx(4.0)
    p = [PlatePlant(Grid2D(n, n), piezo=PiezoParams(rho_p_h_p=0.0, Xi_p=0.0)) for n in (21, 41)]
    assert stability_dt(p[0]) / stability_dt(p[1]) == pytest.approx(4.0)


def test_stability_dt_rejects_bad_safety():
    with pytest.raises(ValueError):
        stability_dt(BeamPlant(), 0.0)
    with pytest.raises(ValueError):
        stability_dt(BeamPlant(), 1.5)


@pytest.mark.parametrize("plant", [BeamPlant(), PlatePlant()], ids=["beam", "plate"])
def test_bound_dominates_discrete_spectrum(plant):
    free = ~plant.fixed.ravel()
    K = plant.stiffness.toarray()[np.ix_(free, free)]
    M = np.diag((plant.weights * plant.mass).ravel()[free])
    top = math.sqrt(la.eigh(K, M, eigvals_only=True).max())
    assert top <= plant.omega_max()


# --- RK4 --------------------------------------------------------------------------

def test_rk4_zero_field():
    z = np.array([1.0, -2.0, 3.0])
    assert np.array_equal(step_rk4(lambda x: np.zeros_like(x), z, 0.1), z)


def test_rk4_taylor_polynomial():
    lam = -1.3 + 0.7j
    for dt in (0.1, 0.5, 1.0):
        x = lam * dt
        taylor = 1 + x + x**2 / 2 + x**3 / 6 + x**4 / 24
        out = step_rk4(lambda z: lam * z, np.array([1.0 + 0j]), dt)[0]
        assert abs(out - taylor) <= 1e-15 * abs(taylor) * 4


def test_rk4_errors():
    with pytest.raises(ValueError):
        step_rk4(lambda z: z, np.ones(2), 0.0)
    with pytest.raises(BlowUpError):
        step_rk4(lambda z: z * np.inf, np.ones(2), 0.1)


def test_open_loop_drift_order():
    plant = BeamPlant()
    w0 = modal_shape(plant, [2, 3])
    system = ClosedLoop(plant)
    dt0 = 0.5 * stability_dt(plant)
    T = 4000 * dt0
    drift = []
    for dt in (dt0, dt0 / 2):
        tr = simulate(system, ClosedLoopState(w0, np.zeros(21), np.zeros(0)), T, dt, log_every=10**6)
        drift.append(abs(tr.records[-1].H / tr.records[0].H - 1))
    assert drift[0] > 1e-9
    assert drift[1] / drift[0] <= 1 / 16


# --- simulate ---------------------------------------------------------------------

def test_zero_horizon_single_record():
    system, st = beam_loop()
    tr = simulate(system, st, 0.0, 1e-3)
    assert len(tr.records) == 1 and tr.records[0].t == 0.0 and tr.steps == 0
    assert len(tr.edge_trace) == 1


def test_step_lands_on_final_time():
    system, st = beam_loop()
    tr = simulate(system, st, 0.0105, 1e-3, log_every=4)
    assert tr.steps == 11
    assert tr.records[-1].t == pytest.approx(0.0105)
    assert [round(r.t / tr.dt) for r in tr.records] == [0, 4, 8, 11]


def test_simulate_argument_errors():
    system, st = beam_loop()
    for kwargs in ({"T": -1.0, "dt": 1e-3}, {"T": 1.0, "dt": 0.0}, {"T": 1.0, "dt": 1e-3, "log_every": 0},
                   {"T": 1.0, "dt": 1e-3, "integrator": "euler"}):
        with pytest.raises(ValueError):
            simulate(system, st, **kwargs)


def test_unstable_step_raises_blowup():
    plant = BeamPlant()
    w0 = modal_shape(plant, [2, 20])
    system = ClosedLoop(plant)
    with pytest.raises(BlowUpError):
        simulate(system, ClosedLoopState(w0, np.zeros(21), np.zeros(0)), 1.0, 10 * stability_dt(plant))


def test_record_fields_consistent():
    plant = BeamPlant()
    system, st = beam_loop(modal_shape(plant, [2]))
    tr = simulate(system, st, 0.05, stability_dt(plant), log_every=5)
    for r in tr.records:
        assert r.Hcl == r.H + r.Hc
        assert r.casimir_drift.shape == (2,)
        assert np.all(np.isfinite(r.u))
    wd = system.wd
    W = plant.weights
    ref = math.sqrt(np.sum(W * (st.w - wd) ** 2) / np.sum(W * wd**2))
    assert tr.records[0].eq_error == pytest.approx(ref, rel=1e-14)
    assert np.all(tr.records[0].casimir_drift == 0)


def test_beam_short_run_invariants():
    plant = BeamPlant()
    system, st = beam_loop(modal_shape(plant, [2, 3]))
    tr = simulate(system, st, 1.0, stability_dt(plant), log_every=20)
    h0 = tr.records[0].Hcl
    for r in tr.records:
        assert r.dHcl <= 1e-9 * max(1.0, h0)
        assert np.abs(r.casimir_drift).max() <= 1e-8 * max(1.0, np.abs(tr.c0).max())
    assert tr.records[-1].Hcl < h0


def test_rk4_converges_to_exact():
    plant = BeamPlant()
    system, st = beam_loop(modal_shape(plant, [2, 3]))
    dt = 0.25 * stability_dt(plant)
    ref = system.pack(simulate(system, st, 0.2, dt, log_every=50, integrator="exact").final)
    errs = []
    for h in (dt, dt / 2):
        z = system.pack(simulate(system, st, 0.2, h, log_every=50).final)
        errs.append(np.abs(z - ref).max() / np.abs(ref).max())
    assert errs[0] < 1e-3
    assert math.log2(errs[0] / errs[1]) > 3.5


def test_exact_flow_composes():
    system, _ = beam_loop()
    stepper = ExactStepper(system, 1e-3)
    assert np.allclose(stepper.flow(2), stepper.flow(1) @ stepper.flow(1), atol=1e-12)


def test_plate_stiff_gains_exact_integrator():
    plant = PlatePlant()
    ctrl, spec, _ = synthesize_plate_controller(plant, PLATE_EQ, plate_gains())
    from casimir_ph.control import desired_plate_shape

    system = ClosedLoop(plant, ctrl, spec, desired_plate_shape(PLATE_EQ, plant.grid))
    z0 = np.zeros(plant.grid.shape)
    st = ClosedLoopState(z0, z0, ctrl.xc.copy())
    tr = simulate(system, st, 1.0, stability_dt(plant), log_every=200, integrator="exact")
    h0 = tr.records[0].Hcl
    assert len(tr.records) > 2
    for r in tr.records:
        assert r.dHcl <= 1e-9 * max(1.0, h0)
        assert np.abs(r.casimir_drift).max() <= 1e-8
    assert tr.records[-1].Hcl <= h0
