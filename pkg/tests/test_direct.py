import math

import numpy as np
import pytest

from buntshoot.direct import DirectSolveError, crank_nicolson_defects, solve_nlp, transcribe
from buntshoot.model import BoundaryConditions, State, VehicleParams, full_rhs
from buntshoot.pipeline import level_arc, phase2_solver, sample_phase2
from buntshoot.pmp import CostWeights

P = VehicleParams()
BUNT15 = BoundaryConditions(State(0.0, 0.0, 300.0, math.radians(15), 600.0), 25_000.0, 0.0, math.radians(-15))


def test_defect_of_linear_equilibrium_is_zero():
    A = np.array([[-1.0, 2.0], [0.0, -3.0]])
    b = np.array([1.0, 6.0])
    x_eq = -np.linalg.solve(A, b)
    nodes = np.tile(x_eq, (11, 1))
    d = crank_nicolson_defects(lambda x, u: A @ x + b, nodes, np.zeros(10), 5.0)
    assert np.max(np.abs(d)) <= 1e-15


def test_transcription_defects_match_reference_form():
    tr = transcribe(BUNT15, P, CostWeights(1, 1, 0, 2, 500, 1.0), 20)
    Z = tr.warm_start()
    rng = np.random.default_rng(5)
    X, U, tf = tr.unpack(Z)
    U = rng.uniform(-2, 2, tr.N)
    Z = tr.pack(X, U, tf)
    ref = crank_nicolson_defects(lambda x, u: full_rhs(x, u, P), tr.nodes(X), U, tf)
    np.testing.assert_allclose(tr.defects(Z).reshape(tr.N, 5), ref, rtol=1e-13, atol=1e-9)


def test_simulated_controls_are_feasible():
    tr = transcribe(BUNT15, P, CostWeights(1, 1, 0, 2, 500, 1.0), 40)
    U = np.full(tr.N, 0.3)
    X = tr.simulate(U, 60.0)
    assert np.max(np.abs(tr.defects(tr.pack(X[1:], U, 60.0)))) <= 1e-8


def test_transcription_shape_and_validation():
    tr = transcribe(BUNT15, P, CostWeights(1, 1, 0, 2, 500, 1.0), 30)
    assert tr.n_vars == 6 * 30 + 1 and tr.defects(tr.warm_start()).shape == (150,)
    with pytest.raises(ValueError):
        transcribe(BUNT15, P, CostWeights(), 5)
    with pytest.raises(ValueError):
        solve_nlp(tr, start=np.zeros(3))


def test_trivial_dubins_problem_flies_straight():
    bc = BoundaryConditions(State(0.0, 250.0, 300.0, 0.0, 600.0), 25_000.0, 250.0, 0.0)
    res = solve_nlp(transcribe(bc, P, CostWeights(1, 1, 0, 2, 250, 0.0), 50))
    assert res.converged
    assert np.max(np.abs(res.controls)) <= 1e-8
    assert res.Z[-1] == pytest.approx(25_000.0 / 300.0, rel=1e-8)
    assert np.max(np.abs(res.trajectory.z[:, 1] - 250.0)) <= 1e-6
    assert np.max(np.abs(res.trajectory.z[:, 3])) <= 1e-8


def test_second_order_cost_convergence():
    """Regularized (smooth) problem: cost differences shrink by about 4 per halving of the step."""
    w = CostWeights(1, 1, 2.0, 2, 500, 1.0)
    costs = [solve_nlp(transcribe(BUNT15, P, w, N)).cost for N in (50, 100, 200, 400)]
    d = np.diff(costs)
    ratios = d[:-1] / d[1:]
    assert np.all((ratios > 3.5) & (ratios < 4.5)), ratios


def test_iteration_limit_is_reported():
    tr = transcribe(BUNT15, P, CostWeights(1, 1, 0, 2, 500, 1.0), 50)
    try:
        res = solve_nlp(tr, max_iter=2)
    except DirectSolveError:
        return
    assert not res.converged


@pytest.mark.slow
def test_cases_converge_with_bang_ends_and_level_middle(direct_cases):
    for name, (sc, (info, traj, _)) in direct_cases.items():
        assert info["converged"], name
        u_int = np.array(traj.meta["interval_controls"])
        # saturated (bang-like) control on the first and last intervals
        assert abs(u_int[0]) >= 0.99 * sc.vehicle.u_max, name
        assert abs(u_int[-1]) >= 0.99 * sc.vehicle.u_max, name
        assert level_arc(traj, sc.h_c)["fraction"] >= 0.5, name


@pytest.mark.slow
def test_case2_turnpike(direct_cases):
    sc, (info, traj, _) = direct_cases["case2"]
    assert info["turnpike"]["max_rel_altitude"] <= 0.1
    assert info["turnpike"]["max_abs_gamma_deg"] <= 5.0


@pytest.mark.slow
def test_default_cost_near_210(direct_default_fine):
    info, _, _ = direct_default_fine
    assert info["converged"] and abs(info["cost"] - 210.0) <= 21.0


@pytest.mark.slow
def test_costate_estimates_track_indirect_costate(default_run, default_scenario):
    """Defect multipliers of the regularized (k = 2) direct problem vs the indirect p(t) on the middle arc."""
    report, _ = default_run
    sc = default_scenario
    _, system = phase2_solver(sc)
    _, _, w = system(1.0, report.phase2.Z)
    ind = sample_phase2(report.phase2.Z, sc, w, 2000)
    res = solve_nlp(transcribe(sc.bc, sc.vehicle, w, 400))
    assert res.converged
    d = res.trajectory
    s_d, s_i = d.t / d.t[-1], ind.t / ind.t.max()
    mid = (s_d >= 0.25) & (s_d <= 0.75)
    for j in range(5):
        p_ind = np.interp(s_d[mid], s_i, ind.z[:, 5 + j])
        p_dir = d.z[mid, 5 + j]
        corr = abs(p_ind @ p_dir) / (np.linalg.norm(p_ind) * np.linalg.norm(p_dir))
        assert corr >= 0.95, (j, corr)
    assert res.cost == pytest.approx(report.cost["total"], rel=5e-3)
