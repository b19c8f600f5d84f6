"""The two-phase solve: Dubins start, boundary-data continuation, then (k, u_max) continuation.

1. Solve the regularized Dubins problem (lam = 0) from a fixed guess.
2. Continue in lam to the full dynamics and boundary data (6 unknowns).
3. Extract the state and costate at mid-horizon and continue in theta down to
   the target regularization with shooting from the middle (21 unknowns).

A warm-start store maps quantized boundary data to converged phase-2
unknowns; a hit replaces steps 1-3 by a single short Newton solve.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .homotopy import Attempt, ContinuationError, Phase1Schedule, run_continuation
from .integrate import Trajectory, flow
from .pmp import CostWeights
from .scenario import Scenario
from .shoot import phase1_system, phase2_system, split_phase2, state_scales

log = logging.getLogger(__name__)

PHASE1_TABLE = ("|x(tf)-x_f|", "|h(tf)-h_f|", "|gamma(tf)-gamma_f|", "p_v(tf)", "p_m(tf)", "H(tf)")
PHASE2_TABLE = ("|x(0)-x_0|", "|h(0)-h_0|", "|v(0)-v_0|", "|gamma(0)-gamma_0|", "|m(0)-m_0|",
                "|x(tf)-x_f|", "|h(tf)-h_f|", "|gamma(tf)-gamma_f|", "p_v(tf)", "p_m(tf)", "H(tf)",
                "||xi-(tf/2)-xi+(tf/2)||", "||p-(tf/2)-p+(tf/2)||")

WARM_MAX_ITER = 5


class PipelineError(RuntimeError):
    """A phase failed; ``report`` holds everything computed up to the failure."""

    def __init__(self, phase: str, message: str, param: float | None, report: "RunReport"):
        where = f" at parameter {param:.6g}" if param is not None else ""
        super().__init__(f"{phase} failed{where}: {message}")
        self.phase = phase
        self.param = param
        self.report = report


@dataclass
class PhaseResult:
    name: str
    Z: np.ndarray
    weights: CostWeights
    residuals: dict
    scaled_residuals: dict
    newton_iterations: int
    trace: object = None  # ContinuationTrace, absent for warm starts

    def to_dict(self) -> dict:
        out = {
            "Z": [float(v) for v in self.Z],
            "t_f": float(self.Z[-1]),
            "k": self.weights.k,
            "u_max": self.weights.u_max,
            "newton_iterations": self.newton_iterations,
            "residuals": self.residuals,
            "scaled_residuals": self.scaled_residuals,
        }
        if self.trace is not None:
            out["continuation"] = self.trace.summary()
        return out


@dataclass
class RunReport:
    scenario: str
    mode: str
    status: str = "running"
    phase1: PhaseResult | None = None
    phase2: PhaseResult | None = None
    residual_table: dict = field(default_factory=dict)
    cost: dict = field(default_factory=dict)
    t_f: float | None = None
    max_abs_H: float | None = None
    turnpike: dict | None = None
    warm_start: dict | None = None
    direct: dict | None = None
    error: dict | None = None
    timing: dict = field(default_factory=dict)
    trajectory: Trajectory | None = None

    def deterministic_dict(self) -> dict:
        """The report without wall-clock values."""
        return {
            "scenario": self.scenario,
            "mode": self.mode,
            "status": self.status,
            "phase1": self.phase1.to_dict() if self.phase1 else None,
            "phase2": self.phase2.to_dict() if self.phase2 else None,
            "residual_table": self.residual_table,
            "cost": self.cost,
            "t_f": self.t_f,
            "max_abs_H": self.max_abs_H,
            "turnpike": self.turnpike,
            "warm_start": self.warm_start,
            "direct": self.direct,
            "error": self.error,
        }

    def to_dict(self) -> dict:
        out = self.deterministic_dict()
        out["timing"] = self.timing
        return out


# ---------------------------------------------------------------------------
# helpers


def turnpike_deviation(traj: Trajectory, h_c: float, fraction: float = 0.5) -> dict:
    """Largest |h - h_c|/h_c and |gamma| (deg) over the middle ``fraction`` of the horizon."""
    t = traj.t
    t0, t1 = float(t.min()), float(t.max())
    pad = 0.5 * (1.0 - fraction) * (t1 - t0)
    mid = (t >= t0 + pad) & (t <= t1 - pad)
    h = traj.z[mid, 1]
    g = traj.z[mid, 3]
    return {"fraction": fraction, "max_rel_altitude": float(np.max(np.abs(h - h_c)) / h_c),
            "max_abs_gamma_deg": float(np.degrees(np.max(np.abs(g))))}


def level_arc(traj: Trajectory, h_c: float, rel_altitude: float = 0.05, gamma_deg: float = 2.0) -> dict:
    """Longest contiguous stretch with |h - h_c|/h_c and |gamma| inside the given bands."""
    order = np.argsort(traj.t, kind="stable")
    t = traj.t[order]
    ok = (np.abs(traj.z[order, 1] - h_c) <= rel_altitude * h_c) & (np.abs(np.degrees(traj.z[order, 3])) <= gamma_deg)
    best, start, span = (math.nan, math.nan), None, 0.0
    for i, flag in enumerate(ok):
        if flag and start is None:
            start = i
        if start is not None and (not flag or i == len(ok) - 1):
            stop = i if flag else i - 1
            if t[stop] - t[start] > span:
                span, best = t[stop] - t[start], (float(t[start]), float(t[stop]))
            start = None
    horizon = float(t[-1] - t[0])
    return {"rel_altitude": rel_altitude, "gamma_deg": gamma_deg, "start": best[0], "stop": best[1],
            "fraction": span / horizon if horizon > 0 else 0.0}


def _x_scale(sc: Scenario) -> float:
    return max(abs(sc.bc.x_f - sc.bc.xi0.x), 1.0)


def _phase2_scales(sc: Scenario) -> np.ndarray:
    s = sc.bc.xi0
    return state_scales(_x_scale(sc), sc.h_c, max(s.v, 1.0), max(s.m, 1.0))


def phase1_solver(sc: Scenario):
    """Newton solve of the lam-deformed problem, as used by the first continuation."""
    sched = Phase1Schedule(sc.bc, sc.h_c, sc.phase1.start)
    k, u_max = sc.phase2_schedule(0.0)
    s = sc.solver

    def system(lam, Z_ref):
        pt = sched(lam)
        w = sc.weights(k, u_max, pt.h_c, lam)
        return phase1_system(pt.xi0, pt.target, w, sc.vehicle, Z_ref, max(abs(pt.target[0]), 1.0), pt.h_c,
                             s.rtol, s.atol), w

    def solve(lam, Z):
        sys_, _ = system(lam, Z)
        return sys_.solve(Z, s.phase1_tol, int(s.newton_max_iter))

    return solve, system


def phase2_solver(sc: Scenario):
    sched = sc.phase2_schedule
    s = sc.solver
    xi0 = sc.bc.xi0.as_array()
    target = sc.bc.final_target()
    sscale = _phase2_scales(sc)

    def system(theta, Z_ref):
        k, u_max = sched(theta)
        w = sc.weights(k, u_max)
        sys_, rows = phase2_system(xi0, target, w, sc.vehicle, Z_ref, sscale, s.reduced, s.phase2_rtol, s.phase2_atol)
        return sys_, rows, w

    def solve(theta, Z, max_iter=None):
        sys_, rows, _ = system(theta, Z)
        return sys_.solve(Z, s.phase2_tol, int(max_iter or s.newton_max_iter), jac_rows=rows)

    return solve, system


def phase1_table(r: np.ndarray) -> dict:
    return {k: float(abs(v)) for k, v in zip(PHASE1_TABLE, r)}


def phase2_table(r: np.ndarray, reduced: bool) -> dict:
    vals = [float(abs(v)) for v in r[:11]]
    if reduced:
        vals += [0.0, 0.0]
    else:
        vals += [float(np.linalg.norm(r[11:16])), float(np.linalg.norm(r[16:21]))]
    return dict(zip(PHASE2_TABLE, vals))


def midpoint_unknowns(Z1: np.ndarray, sc: Scenario, w: CostWeights, reduced: bool = False) -> np.ndarray:
    """Phase-2 unknowns read off the phase-1 extremal at t_f/2."""
    s = sc.solver
    z0 = np.concatenate([sc.bc.xi0.as_array(), Z1[:5]])
    zm = flow(z0, float(Z1[5]), w, sc.vehicle, samples=2, rtol=s.phase2_rtol, atol=s.phase2_atol).z[1]
    if reduced:
        return np.concatenate([zm, [Z1[5]]])
    return np.concatenate([zm[:5], zm[:5], zm[5:], zm[5:], [Z1[5]]])


def sample_phase1(Z1, sc: Scenario, w: CostWeights, samples: int) -> Trajectory:
    z0 = np.concatenate([sc.bc.xi0.as_array(), Z1[:5]])
    return flow(z0, float(Z1[5]), w, sc.vehicle, samples=samples, rtol=sc.solver.rtol, atol=sc.solver.atol)


def sample_phase2(Z2, sc: Scenario, w: CostWeights, samples: int) -> Trajectory:
    """Stitch the backward and forward half-flows from mid-horizon into one trajectory on [0, t_f]."""
    xm, xp, pm, pp, tf = split_phase2(Z2, sc.solver.reduced)
    s = sc.solver
    n_back = max(samples // 2, 1)
    n_fwd = max(samples - n_back, 1)
    half = 0.5 * tf
    back = flow(np.concatenate([xm, pm]), half, w, sc.vehicle, "backward", n_back, t0=half,
                rtol=s.phase2_rtol, atol=s.phase2_atol)
    fwd = flow(np.concatenate([xp, pp]), half, w, sc.vehicle, "forward", n_fwd, t0=half,
               rtol=s.phase2_rtol, atol=s.phase2_atol)
    b = back.reversed()
    return Trajectory(np.r_[b.t, fwd.t[1:]], np.vstack([b.z, fwd.z[1:]]), np.r_[b.u, fwd.u[1:]],
                      np.r_[b.H, fwd.H[1:]], back.steps + fwd.steps)


def _finish(report: RunReport, sc: Scenario, traj: Trajectory, w: CostWeights) -> None:
    report.trajectory = traj
    terms = traj.cost_terms(w)
    terms["without_control"] = terms["time"] + terms["altitude"]
    report.cost = terms
    report.t_f = float(traj.t.max() - traj.t.min())
    report.max_abs_H = float(np.max(np.abs(traj.H)))
    report.turnpike = turnpike_deviation(traj, sc.h_c)


# ---------------------------------------------------------------------------
# warm-start store


def bc_key(sc: Scenario) -> tuple:
    """Boundary data and cruise altitude, quantized (m, m/s, mrad, kg)."""
    s = sc.bc.xi0
    return (round(s.x), round(s.h), round(s.v, 1), round(s.gamma, 3), round(s.m, 1),
            round(sc.bc.x_f), round(sc.bc.h_f), round(sc.bc.gamma_f, 3), round(sc.h_c))


def _key_vector(sc: Scenario) -> np.ndarray:
    s = sc.bc.xi0
    return np.array([s.x, s.h, s.v, s.gamma, s.m, sc.bc.x_f, sc.bc.h_f, sc.bc.gamma_f, sc.h_c], dtype=float)


_KEY_SCALE = np.array([1000.0, 100.0, 10.0, 0.1, 10.0, 1000.0, 100.0, 0.1, 100.0])


class GuessStore:
    """Converged phase-2 unknowns keyed by quantized boundary data (JSON file)."""

    def __init__(self, path):
        self.path = Path(path)
        self.entries: list[dict] = []
        if self.path.exists():
            try:
                self.entries = json.loads(self.path.read_text())["entries"]
            except (OSError, ValueError, KeyError) as exc:
                raise OSError(f"cannot read warm-start store {self.path}: {exc}") from exc

    def add(self, sc: Scenario, Z) -> None:
        key = list(bc_key(sc))
        entry = {"key": key, "bc": _key_vector(sc).tolist(), "reduced": sc.solver.reduced,
                 "k": sc.phase2.k_min, "u_max": sc.vehicle.u_max, "Z": [float(v) for v in Z]}
        self.entries = [e for e in self.entries if not (e["key"] == key and e["reduced"] == sc.solver.reduced)]
        self.entries.append(entry)

    def nearest(self, sc: Scenario) -> dict | None:
        cands = [e for e in self.entries if e["reduced"] == sc.solver.reduced]
        if not cands:
            return None
        x = _key_vector(sc)
        d = [float(np.linalg.norm((np.array(e["bc"]) - x) / _KEY_SCALE)) for e in cands]
        best = int(np.argmin(d))
        return dict(cands[best], distance=d[best], exact=cands[best]["key"] == list(bc_key(sc)))

    def save(self) -> None:
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text(json.dumps({"entries": self.entries}, indent=1))
        except OSError as exc:
            raise OSError(f"cannot write warm-start store {self.path}: {exc.strerror}") from exc


def warm_solve(sc: Scenario, Z_guess, samples: int | None = None, max_iter: int = WARM_MAX_ITER) -> RunReport:
    """Single Newton solve of the target problem from stored unknowns; no continuation."""
    report = RunReport(sc.name, "warm-start")
    t0 = time.perf_counter()
    solve, system = phase2_solver(sc)
    Z, rep = solve(1.0, np.asarray(Z_guess, dtype=float), max_iter=max_iter)
    report.timing["warm_start"] = time.perf_counter() - t0
    sys_, _, w = system(1.0, Z)
    r = sys_.residual(Z)
    report.phase2 = PhaseResult("warm-start", Z, w, phase2_table(r, sc.solver.reduced),
                                phase2_table(r / sys_.residual_scales, sc.solver.reduced), rep.iterations)
    report.warm_start = {"newton_iterations": rep.iterations, "converged": rep.converged, "status": rep.status}
    if not rep.converged:
        report.status = "failed"
        report.error = {"phase": "phase2", "param": 1.0, "message": f"warm-start Newton {rep.status}"}
        raise PipelineError("phase2", f"warm-start Newton {rep.status}", 1.0, report)
    report.residual_table = report.phase2.residuals
    _finish(report, sc, sample_phase2(Z, sc, w, samples or sc.samples), w)
    report.status = "ok"
    return report


# ---------------------------------------------------------------------------
# full pipeline


def run_pipeline(sc: Scenario, phase1_only: bool = False, samples: int | None = None,
                 on_attempt: Callable[[str, Attempt], None] | None = None) -> RunReport:
    """Run both continuations; raises :class:`PipelineError` carrying the partial report."""
    samples = samples or sc.samples
    report = RunReport(sc.name, "phase1-only" if phase1_only else "full")

    def hook(phase):
        if on_attempt is None:
            return None
        return lambda a: on_attempt(phase, a)

    # phase 1: Dubins problem at lam = 0, then continuation to lam = 1
    solve1, system1 = phase1_solver(sc)
    t0 = time.perf_counter()
    try:
        Z1, trace1 = run_continuation(solve1, np.array(sc.phase1.initial_guess), sc.phase1.continuation, hook("phase1"))
    except ContinuationError as exc:
        report.timing["phase1"] = time.perf_counter() - t0
        report.status = "failed"
        report.error = {"phase": "phase1", "param": exc.param, "message": str(exc),
                        "Z_last": [float(v) for v in np.ravel(exc.Z_last)], "continuation": exc.trace.summary()}
        raise PipelineError("phase1", str(exc), exc.param, report) from exc
    report.timing["phase1"] = time.perf_counter() - t0
    sys1, w1 = system1(1.0, Z1)
    r1 = sys1.residual(Z1)
    report.phase1 = PhaseResult("phase1", Z1, w1, phase1_table(r1), phase1_table(r1 / sys1.residual_scales),
                                trace1.total_iterations, trace1)
    log.info("phase 1 done: t_f=%.6g, %d Newton iterations", Z1[5], trace1.total_iterations)
    if phase1_only:
        report.residual_table = report.phase1.residuals
        _finish(report, sc, sample_phase1(Z1, sc, w1, samples), w1)
        report.status = "ok"
        return report

    # phase 2: shooting from the middle, continuation on (k, u_max)
    solve2, system2 = phase2_solver(sc)
    Z2_start = midpoint_unknowns(Z1, sc, w1, sc.solver.reduced)
    t0 = time.perf_counter()
    try:
        Z2, trace2 = run_continuation(solve2, Z2_start, sc.phase2.continuation, hook("phase2"))
    except ContinuationError as exc:
        report.timing["phase2"] = time.perf_counter() - t0
        report.status = "failed"
        report.error = {"phase": "phase2", "param": exc.param, "message": str(exc),
                        "Z_last": [float(v) for v in np.ravel(exc.Z_last)], "continuation": exc.trace.summary()}
        raise PipelineError("phase2", str(exc), exc.param, report) from exc
    report.timing["phase2"] = time.perf_counter() - t0
    sys2, _, w2 = system2(1.0, Z2)
    r2 = sys2.residual(Z2)
    report.phase2 = PhaseResult("phase2", Z2, w2, phase2_table(r2, sc.solver.reduced),
                                phase2_table(r2 / sys2.residual_scales, sc.solver.reduced),
                                trace2.total_iterations, trace2)
    log.info("phase 2 done: t_f=%.6g, %d Newton iterations", Z2[-1], trace2.total_iterations)
    report.residual_table = report.phase2.residuals
    _finish(report, sc, sample_phase2(Z2, sc, w2, samples), w2)
    report.status = "ok"
    return report


def run_direct(sc: Scenario, N: int | None = None) -> tuple[dict, Trajectory, float]:
    """Non-regularized direct solve of the scenario (oracle)."""
    from .direct import solve_nlp, transcribe

    t0 = time.perf_counter()
    tr = transcribe(sc.bc, sc.vehicle, sc.weights(0.0, sc.vehicle.u_max), N or sc.direct_N)
    res = solve_nlp(tr)
    info = {
        "N": tr.N,
        "cost": res.cost,
        "t_f": float(res.Z[-1]),
        "iterations": res.iterations,
        "converged": res.converged,
        "feasibility": res.feasibility,
        "optimality": res.optimality,
        "turnpike": turnpike_deviation(res.trajectory, sc.h_c),
        "level_arc": level_arc(res.trajectory, sc.h_c),
    }
    return info, res.trajectory, time.perf_counter() - t0
