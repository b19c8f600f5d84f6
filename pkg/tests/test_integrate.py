import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from buntshoot.integrate import FlowError, endpoint, flow
from buntshoot.model import VehicleParams
from buntshoot.pmp import CostWeights, _extremal_rhs

P = VehicleParams()
W = CostWeights(k0=1.0, k1=1.0, k=2.0, u_max=2.0, h_c=250.0, lam=1.0)
Z0 = np.array([0.0, 1.0, 280.0, math.radians(-80), 600.0, 0.01, 0.05, -0.02, -300.0, -1.5])


def _rhs(t, z, w=W, sign=1.0, T=1.0):
    out = np.empty(10)
    _extremal_rhs(z, w.as_array(), P.as_array(), out)
    return sign * out


def test_dubins_straight_line():
    # lam = 0, no altitude cost, costate along the heading: u = 0 and gamma stays put
    w = CostWeights(1.0, 0.0, 1.0, 2.0, 0.5, 0.0)
    g = 0.3
    z0 = np.array([0.0, 0.5, 1.0, g, 600.0, math.cos(g), math.sin(g), 0.0, 0.0, 0.0])
    tr = flow(z0, 7.0, w, P, samples=7)
    np.testing.assert_allclose(tr.z[:, 0], np.cos(g) * tr.t, atol=1e-12)
    np.testing.assert_allclose(tr.z[:, 1], 0.5 + np.sin(g) * tr.t, atol=1e-12)
    np.testing.assert_allclose(tr.z[:, 2:5], np.tile([1.0, g, 600.0], (8, 1)), atol=1e-12)
    assert np.all(tr.u == 0.0)


def test_forward_backward_round_trip():
    T = 20.0
    zf = flow(Z0, T, W, P).end
    back = flow(zf, T, W, P, "backward").end
    scale = np.maximum(np.abs(Z0), 1.0)
    assert np.max(np.abs(back - Z0) / scale) < 1e-7


def test_hamiltonian_conserved():
    tr = flow(Z0, 30.0, W, P, samples=300)
    assert np.max(np.abs(tr.H - tr.H[0])) <= 1e-8 * max(1.0, abs(tr.H[0]))


def test_tolerance_halving_converges():
    T = 25.0
    a = flow(Z0, T, W, P, rtol=1e-8, atol=1e-10).end
    b = flow(Z0, T, W, P, rtol=1e-10, atol=1e-12).end
    c = flow(Z0, T, W, P, rtol=1e-12, atol=1e-14).end
    assert np.linalg.norm(c - b) < np.linalg.norm(b - a)


def test_agrees_with_scipy_dop853():
    T = 25.0
    ours = flow(Z0, T, W, P, rtol=1e-12, atol=1e-14).end
    ref = solve_ivp(_rhs, (0.0, T), Z0, method="DOP853", rtol=1e-12, atol=1e-14).y[:, -1]
    np.testing.assert_allclose(ours, ref, rtol=1e-8, atol=1e-9)


def test_sampling_and_time_labels():
    tr = flow(Z0, 10.0, W, P, samples=40, t0=10.0, direction="backward")
    assert tr.t.shape == (41,) and tr.z.shape == (41, 10)
    assert tr.t[0] == 10.0 and tr.t[-1] == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(flow(Z0, 10.0, W, P, samples=40).end, flow(Z0, 10.0, W, P).end, rtol=1e-9, atol=1e-9)


def test_endpoint_matches_flow():
    e = endpoint(Z0, 12.0, W.as_array(), P.as_array())
    np.testing.assert_array_equal(e, flow(Z0, 12.0, W, P).end)


def test_nonphysical_state_reported_with_time():
    # climbing at full thrust is impossible with a tiny mass budget: m hits 0
    z0 = Z0.copy()
    z0[4] = 1.0
    with pytest.raises(FlowError) as exc:
        flow(z0, 100.0, W, P)
    assert 0.0 < exc.value.time < 100.0


def test_rejects_bad_arguments():
    with pytest.raises(ValueError):
        flow(Z0, -1.0, W, P)
    with pytest.raises(ValueError):
        flow(Z0, 1.0, W, P, direction="sideways")
    with pytest.raises(ValueError):
        flow(Z0[:9], 1.0, W, P)
