import math

import numpy as np
import pytest

from buntshoot.homotopy import (
    ContinuationConfig,
    ContinuationError,
    Phase1Init,
    Phase2Schedule,
    phase1_schedule,
    phase2_schedule,
    predict_linear,
    run_continuation,
)
from buntshoot.model import BoundaryConditions, State

BC = BoundaryConditions(State(0.0, 0.0, 300.0, math.radians(80), 600.0), 25_000.0, 0.0, math.radians(-80))


def test_phase1_schedule_endpoints():
    p0 = phase1_schedule(0.0, BC, 250.0)
    assert p0.as_tuple() == (0.5, 0.5, 1.0, 0.0, 5.0, 0.5, 0.0)
    p1 = phase1_schedule(1.0, BC, 250.0)
    assert p1.as_tuple() == (250.0, 0.0, 300.0, math.radians(80), 25_000.0, 0.0, math.radians(-80))
    np.testing.assert_array_equal(p1.xi0, BC.xi0.as_array())


def test_phase1_schedule_midpoint():
    p = phase1_schedule(0.5, BC, 250.0)
    assert p.target[0] == 6253.75
    hc = 0.5 + 0.5 * (250.0 - 0.5)
    assert p.h_c == hc
    # the target altitude is interpolated from the scheduled cruise altitude
    assert p.target[1] == hc + 0.5 * (0.0 - hc)
    assert p.xi0[4] == 600.0


def test_phase1_schedule_custom_init_and_range():
    p = phase1_schedule(0.0, BC, 250.0, Phase1Init(h_c=2.0, x_m=10.0))
    assert p.h_c == 2.0 and p.target[0] == 10.0
    for bad in (-0.1, 1.1):
        with pytest.raises(ValueError):
            phase1_schedule(bad, BC, 250.0)


def test_phase2_schedule():
    assert phase2_schedule(0.0) == (100.0, 25.0)
    assert phase2_schedule(1.0) == (2.0, 2.0)
    assert phase2_schedule(0.5) == (51.0, 13.5)
    assert Phase2Schedule(k_min=5.0)(1.0) == (5.0, 2.0)
    with pytest.raises(ValueError):
        phase2_schedule(1.5)


def test_predict_linear():
    Z = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(predict_linear(Z, 0.1, Z, 0.2, 0.4), Z)
    a, b = np.array([1.0, 2.0, -1.0]), np.array([0.5, 0.0, 4.0])
    line = lambda s: a + s * b  # noqa: E731
    np.testing.assert_allclose(predict_linear(line(0.2), 0.2, line(0.3), 0.3, 0.55), line(0.55), rtol=1e-14)
    with pytest.raises(ValueError):
        predict_linear(Z, 0.3, Z, 0.3, 0.4)


def test_config_validation():
    with pytest.raises(ValueError):
        ContinuationConfig(delta_init=0.1, delta_max=0.05)
    with pytest.raises(ValueError):
        ContinuationConfig(predictor="cubic")


class _Report:
    def __init__(self, ok, it=1):
        self.converged = ok
        self.iterations = it
        self.final_residual_norm = 0.0 if ok else 1.0
        self.status = "converged" if ok else "max_iter"


def _always(param, guess):
    return np.array([param]), _Report(True)


def test_always_successful_doubles_to_max():
    cfg = ContinuationConfig(delta_init=0.001, delta_max=0.05, predictor="none")
    Z, trace = run_continuation(_always, [0.0], cfg)
    assert Z[0] == 1.0
    deltas = [a.delta for a in trace.attempts[1:]]
    assert deltas[:7] == [0.001, 0.002, 0.004, 0.008, 0.016, 0.032, 0.05]
    assert all(a.accepted for a in trace.attempts)
    # log2(50) doublings, then about 1/0.05 capped steps
    assert len(trace.attempts) <= 1 + 7 + 20


def test_single_failure_halves_once():
    failed = []

    def solver(param, guess):
        if param >= 0.5 and not failed:
            failed.append(param)
            return guess, _Report(False)
        return np.array([param]), _Report(True)

    cfg = ContinuationConfig(delta_init=0.001, delta_max=0.05, predictor="none")
    Z, trace = run_continuation(solver, [0.0], cfg)
    assert Z[0] == 1.0
    rejected = [i for i, a in enumerate(trace.attempts) if not a.accepted]
    assert len(rejected) == 1
    i = rejected[0]
    assert trace.attempts[i + 1].delta == 0.5 * trace.attempts[i].delta
    assert trace.attempts[i + 1].param < trace.attempts[i].param


def test_trace_invariants():
    def solver(param, guess):
        ok = not (0.3 < param < 0.31) or param - guess[0] < 0.002
        return np.array([param]), _Report(ok)

    cfg = ContinuationConfig(delta_init=0.01, delta_min=1e-6, delta_max=0.05)
    Z, trace = run_continuation(solver, [0.0], cfg)
    acc = [a.param for a in trace.accepted]
    assert all(b > a for a, b in zip(acc, acc[1:]))
    assert acc[-1] == 1.0
    for a in trace.attempts[1:-1]:
        assert cfg.delta_min <= a.delta <= cfg.delta_max
    s = trace.summary()
    assert s["attempts"] == s["accepted"] + s["rejected"] == len(trace.attempts)


def test_stall_reports_parameter_and_last_z():
    def solver(param, guess):
        return np.array([param]), _Report(param < 0.25)

    with pytest.raises(ContinuationError) as exc:
        run_continuation(solver, [0.0], ContinuationConfig(delta_init=0.01, delta_min=1e-4, predictor="none"))
    assert exc.value.param < 0.25
    assert exc.value.Z_last[0] == exc.value.param
    assert exc.value.trace.attempts[-1].delta < 2e-4


def test_start_failure():
    with pytest.raises(ContinuationError) as exc:
        run_continuation(lambda p, g: (g, _Report(False)), [7.0])
    assert exc.value.param == 0.0


def test_linear_predictor_feeds_solver():
    seen = {}

    def solver(param, guess):
        seen[param] = np.array(guess)
        return np.array([2.0 * param + 1.0]), _Report(True)

    run_continuation(solver, [1.0], ContinuationConfig(delta_init=0.01, predictor="linear"))
    # after two accepted points the prediction of an affine path is exact
    for param, guess in list(seen.items())[3:]:
        assert guess[0] == pytest.approx(2.0 * param + 1.0, rel=1e-12)
