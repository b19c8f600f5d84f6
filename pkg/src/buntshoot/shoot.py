"""Shooting functions and the damped Newton solver driving them.

Two formulations:

* phase 1 (6 unknowns): initial costate and final time, single forward flow;
* phase 2 (21 unknowns): state and costate taken twice at mid-horizon plus the
  final time; one backward and one forward half-flow, glued by matching rows.
  ``reduced=True`` drops the duplicated midpoint and the matching rows
  (11 unknowns).

Newton works on internal variables: every unknown divided by a characteristic
magnitude, except the final time, which enters through its logarithm so the
line search cannot reach t_f <= 0.  Residuals are divided by their own
characteristic magnitudes before the norm is taken.  Jacobian columns are
forward differences of the residual with the integration grid frozen at the
current iterate, so adaptive step selection adds no noise to them.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .integrate import DEFAULT_ATOL, DEFAULT_RTOL, FlowError, endpoint, endpoint_on_grid
from .model import VehicleParams
from .pmp import CostWeights, _control, _hamiltonian

PHASE1_TOL = 1e-10
PHASE2_TOL = 1e-8

PHASE1_LABELS = ("x(tf)-x_f", "h(tf)-h_f", "gamma(tf)-gamma_f", "p_v(tf)", "p_m(tf)", "H(tf)")
PHASE2_LABELS = (
    "x(0)-x_0", "h(0)-h_0", "v(0)-v_0", "gamma(0)-gamma_0", "m(0)-m_0",
    "x(tf)-x_f", "h(tf)-h_f", "gamma(tf)-gamma_f", "p_v(tf)", "p_m(tf)", "H(tf)",
    "xi-(tf/2)-xi+(tf/2)", "", "", "", "",
    "p-(tf/2)-p+(tf/2)", "", "", "", "",
)


class ResidualError(RuntimeError):
    """The residual could not be evaluated (the underlying flow failed)."""


# ---------------------------------------------------------------------------
# residual functions (physical units)


def _end(z0, duration, W, P, sign, rtol, atol, grids, record, index):
    if grids is not None:
        return endpoint_on_grid(z0, duration, W, P, sign, grids[index])
    return endpoint(z0, duration, W, P, sign, rtol, atol, record=record)


def _terminal_block(zf, target, W, P):
    u = _control(zf[:5], zf[5:], W, P)
    H = _hamiltonian(zf[:5], zf[5:], u, W, P)
    return np.array([zf[0] - target[0], zf[1] - target[1], zf[3] - target[2], zf[7], zf[9], H])


def residual_phase1(Z, xi0, target, w: CostWeights, params: VehicleParams,
                    rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL, grids=None, record=None) -> np.ndarray:
    """S(p(0), t_f) = (x, h, gamma mismatch at t_f, p_v(t_f), p_m(t_f), H(t_f)).

    ``record`` collects the integration grid; ``grids`` replays a recorded one.
    """
    Z = np.asarray(Z, dtype=np.float64)
    tf = Z[5]
    if not tf > 0:
        raise ResidualError(f"final time must be positive, got {tf}")
    z0 = np.concatenate([np.asarray(xi0, dtype=np.float64), Z[:5]])
    W = w.as_array()
    P = params.as_array()
    try:
        zf = _end(z0, tf, W, P, 1.0, rtol, atol, grids, record, 0)
    except FlowError as exc:
        raise ResidualError(str(exc)) from exc
    return _terminal_block(zf, np.asarray(target, dtype=float), W, P)


def split_phase2(Z, reduced: bool = False):
    """Return (xi_minus, xi_plus, p_minus, p_plus, t_f) views of the unknowns."""
    Z = np.asarray(Z, dtype=np.float64)
    if reduced:
        return Z[0:5], Z[0:5], Z[5:10], Z[5:10], Z[10]
    return Z[0:5], Z[5:10], Z[10:15], Z[15:20], Z[20]


def residual_phase2(Z, xi0, target, w: CostWeights, params: VehicleParams, reduced: bool = False,
                    rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL, grids=None, record=None) -> np.ndarray:
    """Shooting from the middle.

    Backward half-flow from (xi-, p-) gives z(0), forward half-flow from
    (xi+, p+) gives z(t_f).  Rows: xi(0) - xi0 (5), terminal block (6),
    xi- - xi+ (5), p- - p+ (5); the last ten are absent when ``reduced``.
    """
    xm, xp, pm, pp, tf = split_phase2(Z, reduced)
    if not tf > 0:
        raise ResidualError(f"final time must be positive, got {tf}")
    W = w.as_array()
    P = params.as_array()
    half = 0.5 * tf
    try:
        z_start = _end(np.concatenate([xm, pm]), half, W, P, -1.0, rtol, atol, grids, record, 0)
        z_end = _end(np.concatenate([xp, pp]), half, W, P, 1.0, rtol, atol, grids, record, 1)
    except FlowError as exc:
        raise ResidualError(str(exc)) from exc
    rows = [z_start[:5] - np.asarray(xi0, dtype=float), _terminal_block(z_end, np.asarray(target, dtype=float), W, P)]
    if not reduced:
        rows += [xm - xp, pm - pp]
    return np.concatenate(rows)


# ---------------------------------------------------------------------------
# Newton


@dataclass
class NewtonReport:
    converged: bool
    iterations: int
    final_residual_norm: float
    status: str = "converged"
    step_history: list = field(default_factory=list)
    residual_evaluations: int = 0

    def __post_init__(self):
        if self.converged and self.status != "converged":
            raise ValueError("inconsistent report")


def fd_jacobian(fun: Callable, y: np.ndarray, r: np.ndarray, rel_step: float = 1e-7,
                abs_step: float = 1e-7, workers: int | None = None) -> np.ndarray:
    """Forward-difference Jacobian, columns evaluated concurrently.

    A column whose forward evaluation fails is retried with a backward step.
    """
    n = y.size
    steps = np.maximum(rel_step * np.abs(y), abs_step)

    def column(j):
        for sgn in (1.0, -1.0):
            yj = y.copy()
            yj[j] += sgn * steps[j]
            dy = yj[j] - y[j]
            try:
                return (fun(yj) - r) / dy
            except ResidualError:
                continue
        raise ResidualError(f"Jacobian column {j} could not be evaluated")

    workers = workers if workers is not None else min(n, os.cpu_count() or 1)
    if workers <= 1:
        cols = [column(j) for j in range(n)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cols = list(pool.map(column, range(n)))
    return np.column_stack(cols)


def newton_solve(
    fun: Callable[[np.ndarray], np.ndarray],
    z0,
    tol: float = 1e-10,
    max_iter: int = 30,
    jac_rows: dict[int, np.ndarray] | None = None,
    armijo: float = 1e-4,
    min_damping: float = 1.0 / 1024,
    cond_max: float = 1e14,
    workers: int | None = None,
    linearize: Callable | None = None,
) -> tuple[np.ndarray, NewtonReport]:
    """Damped Newton iteration on ``fun(z) = 0``.

    Convergence is declared on the max-norm of the residual.  The step is
    backtracked (halving) until ``|r|^2`` satisfies the Armijo condition;
    failed residual evaluations count as rejected trial points.  ``jac_rows``
    replaces the finite-difference rows with known exact (constant) rows.
    ``linearize(z)`` may supply ``(r, g)`` where ``g`` is the function to
    difference at ``z`` (for instance ``fun`` with its integration grid frozen).
    """
    z = np.array(z0, dtype=np.float64)
    nev = 0
    history = []

    def report(converged, it, rn, status):
        return NewtonReport(converged, it, rn, status, history, nev)

    try:
        r = fun(z)
        nev += 1
    except ResidualError:
        return z, report(False, 0, math.inf, "residual_failure")
    rnorm = float(np.max(np.abs(r)))
    for it in range(max_iter + 1):
        if not np.all(np.isfinite(r)):
            return z, report(False, it, math.inf, "residual_failure")
        if rnorm <= tol:
            return z, report(True, it, rnorm, "converged")
        if it == max_iter:
            break
        try:
            if linearize is None:
                J = fd_jacobian(fun, z, r, workers=workers)
            else:
                r_lin, g = linearize(z)
                J = fd_jacobian(g, z, r_lin, workers=workers)
                nev += 1
        except ResidualError:
            return z, report(False, it, rnorm, "residual_failure")
        nev += z.size
        if jac_rows:
            for i, row in jac_rows.items():
                J[i] = row
        if not np.all(np.isfinite(J)) or np.linalg.cond(J) > cond_max:
            return z, report(False, it, rnorm, "singular_jacobian")
        dz = np.linalg.solve(J, -r)

        phi0 = float(r @ r)
        alpha = 1.0
        while True:
            trial = z + alpha * dz
            try:
                rt = fun(trial)
                nev += 1
                phit = float(rt @ rt)
                ok = np.isfinite(phit) and phit <= (1.0 - 2.0 * armijo * alpha) * phi0
            except ResidualError:
                ok = False
            if ok:
                break
            alpha *= 0.5
            if alpha < min_damping:
                return z, report(False, it, rnorm, "line_search")
        z, r = trial, rt
        rnorm = float(np.max(np.abs(r)))
        history.append({"iteration": it + 1, "damping": alpha, "residual_norm": rnorm,
                        "merit": phit, "step_norm": float(np.max(np.abs(alpha * dz)))})
    return z, report(False, max_iter, rnorm, "max_iter")


# ---------------------------------------------------------------------------
# scaled systems


@dataclass
class ScaledSystem:
    """A residual in physical units wrapped into Newton's internal variables."""

    residual: Callable[..., np.ndarray]  # residual(Z, grids=None, record=None)
    unknown_scales: np.ndarray
    residual_scales: np.ndarray
    tf_index: int
    tf_ref: float

    def to_internal(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=np.float64)
        y = Z / self.unknown_scales
        y[self.tf_index] = math.log(Z[self.tf_index] / self.tf_ref)
        return y

    def to_physical(self, y) -> np.ndarray:
        Z = np.asarray(y, dtype=np.float64) * self.unknown_scales
        Z[self.tf_index] = self.tf_ref * math.exp(y[self.tf_index])
        return Z

    def internal_residual(self, y, grids=None, record=None) -> np.ndarray:
        yt = float(y[self.tf_index])
        if not math.isfinite(yt) or abs(yt) > 50:
            raise ResidualError("final time left the admissible range")
        return self.residual(self.to_physical(y), grids=grids, record=record) / self.residual_scales

    def linearize(self, y):
        """Residual at ``y`` and the residual with the integration grids frozen at ``y``."""
        grids = []
        r = self.internal_residual(y, record=grids)
        return r, lambda yy: self.internal_residual(yy, grids=grids)

    def scaled_residual(self, Z) -> np.ndarray:
        return self.residual(Z) / self.residual_scales

    def solve(self, Z0, tol: float, max_iter: int = 30, jac_rows=None, workers=None):
        y, rep = newton_solve(self.internal_residual, self.to_internal(Z0), tol=tol, max_iter=max_iter,
                              jac_rows=jac_rows, workers=workers, linearize=self.linearize)
        return self.to_physical(y), rep


def _costate_scales(p) -> np.ndarray:
    p = np.abs(np.asarray(p, dtype=float))
    return np.maximum(p, 1e-3 * max(float(p.max()), 1e-6))


def phase1_system(xi0, target, w: CostWeights, params: VehicleParams, Z_ref, x_scale: float, h_scale: float,
                  rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL) -> ScaledSystem:
    Z_ref = np.asarray(Z_ref, dtype=float)
    xi0 = np.asarray(xi0, dtype=float)
    target = np.asarray(target, dtype=float)
    uscale = np.append(_costate_scales(Z_ref[:5]), 1.0)
    rscale = np.array([x_scale, h_scale, 1.0, 1.0, 1.0, 1.0])

    def res(Z, grids=None, record=None):
        return residual_phase1(Z, xi0, target, w, params, rtol, atol, grids, record)

    return ScaledSystem(res, uscale, rscale, 5, float(Z_ref[5]))


def state_scales(x_scale: float, h_scale: float, v_scale: float, m_scale: float) -> np.ndarray:
    return np.array([x_scale, h_scale, v_scale, 1.0, m_scale])


def phase2_system(xi0, target, w: CostWeights, params: VehicleParams, Z_ref, sscale: np.ndarray,
                  reduced: bool = False, rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL):
    """Scaled phase-2 system plus the exact Jacobian rows of the matching block."""
    Z_ref = np.asarray(Z_ref, dtype=float)
    xi0 = np.asarray(xi0, dtype=float)
    target = np.asarray(target, dtype=float)
    _, _, pm, pp, tf = split_phase2(Z_ref, reduced)
    pscale = _costate_scales(0.5 * (np.abs(pm) + np.abs(pp)))
    term = np.array([sscale[0], sscale[1], 1.0, 1.0, 1.0, 1.0])
    if reduced:
        uscale = np.concatenate([sscale, pscale, [1.0]])
        rscale = np.concatenate([sscale, term])
        tf_index = 10
    else:
        uscale = np.concatenate([sscale, sscale, pscale, pscale, [1.0]])
        rscale = np.concatenate([sscale, term, sscale, pscale])
        tf_index = 20

    def res(Z, grids=None, record=None):
        return residual_phase2(Z, xi0, target, w, params, reduced, rtol, atol, grids, record)

    system = ScaledSystem(res, uscale, rscale, tf_index, float(tf))
    rows = None
    if not reduced:
        # matching rows are y- - y+ exactly in internal variables
        rows = {}
        for i in range(5):
            row = np.zeros(21)
            row[i], row[5 + i] = 1.0, -1.0
            rows[11 + i] = row
            row = np.zeros(21)
            row[10 + i], row[15 + i] = 1.0, -1.0
            rows[16 + i] = row
    return system, rows
