"""Integration of the 10-dimensional extremal system (state + costate).

The control is closed pointwise inside every right-hand-side evaluation.  Time
is normalized, s = t / T on [0, 1], so the duration enters as a plain scalar
multiplying the vector field; a negative multiplier integrates backward.

The stepper is the Dormand-Prince 5(4) embedded pair with FSAL and the usual
elementary step-size controller, compiled with numba so that the thousands of
flows needed by the continuations stay cheap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .model import VehicleParams
from .pmp import CostWeights, ExtremalPoint, _extremal_rhs, _hamiltonian, _param_rhs, _adjoint_rhs, W_LAM

DEFAULT_RTOL = 1e-10
DEFAULT_ATOL = 1e-12
MAX_STEPS = 200_000
# shooting iterates far from a solution can wander into very stiff regions;
# give up early and let Newton backtrack instead
SHOOTING_MAX_STEPS = 20_000

OK, UNDERFLOW, NONPHYSICAL, TOO_MANY_STEPS = 0, 1, 2, 3
_NO_GRID = np.empty(0)
_STATUS_TEXT = {
    UNDERFLOW: "step size underflow",
    NONPHYSICAL: "non-finite or non-physical state (v <= 0 or m <= 0)",
    TOO_MANY_STEPS: "maximum number of steps exceeded",
}

# Dormand-Prince 5(4) tableau
C2, C3, C4, C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
A21 = 1 / 5
A31, A32 = 3 / 40, 9 / 40
A41, A42, A43 = 44 / 45, -56 / 15, 32 / 9
A51, A52, A53, A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
A61, A62, A63, A64, A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
B1, B3, B4, B5, B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
# difference between 5th and embedded 4th order weights
E1 = 71 / 57600
E3 = -71 / 16695
E4 = 71 / 1920
E5 = -17253 / 339200
E6 = 22 / 525
E7 = -1 / 40


class FlowError(RuntimeError):
    """Integration broke down; ``time`` is the physical time of the breakdown."""

    def __init__(self, reason: str, time: float):
        super().__init__(f"{reason} at t={time:.6g} s")
        self.reason = reason
        self.time = time


@njit(cache=True, nogil=True)
def _field(z, span, W, P, u_fix, out):
    if math.isnan(u_fix):
        u = _extremal_rhs(z, W, P, out)
    else:
        u = u_fix
        _param_rhs(z[:5], u, W[W_LAM], P, out[:5])
        _adjoint_rhs(z[:5], z[5:], u, W, P, out[5:])
    for i in range(10):
        out[i] *= span
    return u


@njit(cache=True, nogil=True)
def _err_norm(y, ynew, err, rtol, atol):
    acc = 0.0
    for i in range(y.shape[0]):
        sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
        r = err[i] / sc
        acc += r * r
    return math.sqrt(acc / y.shape[0])


@njit(cache=True, nogil=True)
def _all_ok(y):
    for i in range(y.shape[0]):
        if not math.isfinite(y[i]):
            return False
    return y[2] > 0.0 and y[4] > 0.0


@njit(cache=True, nogil=True)
def _stages(y, k1, hs, span, W, P, u_fix, k2, k3, k4, k5, k6, yt, ynew):
    """One Dormand-Prince step of size ``hs`` from (y, k1); result in ynew."""
    n = y.shape[0]
    for i in range(n):
        yt[i] = y[i] + hs * A21 * k1[i]
    _field(yt, span, W, P, u_fix, k2)
    for i in range(n):
        yt[i] = y[i] + hs * (A31 * k1[i] + A32 * k2[i])
    _field(yt, span, W, P, u_fix, k3)
    for i in range(n):
        yt[i] = y[i] + hs * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
    _field(yt, span, W, P, u_fix, k4)
    for i in range(n):
        yt[i] = y[i] + hs * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
    _field(yt, span, W, P, u_fix, k5)
    for i in range(n):
        yt[i] = y[i] + hs * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i])
    _field(yt, span, W, P, u_fix, k6)
    for i in range(n):
        ynew[i] = y[i] + hs * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i])


@njit(cache=True, nogil=True)
def _dopri5(z0, span, W, P, u_fix, n_out, rtol, atol, max_steps, grid):
    """Adaptive integration over s in [0, 1].

    Accepted step sizes are written to ``grid`` while it has room; the last
    return value is their count.
    """
    n = 10
    out = np.empty((n_out + 1, n))
    out[0, :] = z0
    y = z0.copy()
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    k5 = np.empty(n)
    k6 = np.empty(n)
    k7 = np.empty(n)
    yt = np.empty(n)
    ynew = np.empty(n)
    err = np.empty(n)
    n_acc = 0

    if not _all_ok(y):
        return NONPHYSICAL, 0.0, out, 0, n_acc
    _field(y, span, W, P, u_fix, k1)

    # initial step (Hairer, Norsett & Wanner, II.4)
    d0 = 0.0
    d1 = 0.0
    for i in range(n):
        sc = atol + rtol * abs(y[i])
        d0 += (y[i] / sc) ** 2
        d1 += (k1[i] / sc) ** 2
    d0 = math.sqrt(d0 / n)
    d1 = math.sqrt(d1 / n)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, 1.0)
    for i in range(n):
        yt[i] = y[i] + h0 * k1[i]
    _field(yt, span, W, P, u_fix, k2)
    d2 = 0.0
    for i in range(n):
        sc = atol + rtol * abs(y[i])
        d2 += ((k2[i] - k1[i]) / sc) ** 2
    d2 = math.sqrt(d2 / n) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    h = min(100.0 * h0, h1, 1.0)

    s = 0.0
    j = 1
    steps = 0
    while j <= n_out:
        s_next = j / n_out
        clipped = False
        hs = h
        if s + hs >= s_next:
            hs = s_next - s
            clipped = True
        if hs < 1e-14:
            # landed on the output node up to rounding
            out[j, :] = y
            s = s_next
            j += 1
            continue
        if steps >= max_steps:
            return TOO_MANY_STEPS, s, out, steps, n_acc

        _stages(y, k1, hs, span, W, P, u_fix, k2, k3, k4, k5, k6, yt, ynew)
        if _all_ok(ynew):
            _field(ynew, span, W, P, u_fix, k7)
            for i in range(n):
                err[i] = hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i])
            enorm = _err_norm(y, ynew, err, rtol, atol)
            if not math.isfinite(enorm):
                enorm = 1e10
        else:
            enorm = 1e10
        steps += 1

        if enorm <= 1.0:
            s = s_next if clipped else s + hs
            for i in range(n):
                y[i] = ynew[i]
                k1[i] = k7[i]
            if n_acc < grid.shape[0]:
                grid[n_acc] = hs
            n_acc += 1
            if clipped:
                out[j, :] = y
                j += 1
            fac = 10.0 if enorm == 0.0 else min(10.0, max(0.2, 0.9 * enorm ** -0.2))
            if not clipped:
                h = hs * fac
            else:
                h = max(h, hs * fac) if hs < h else hs * fac
        else:
            fac = max(0.2, 0.9 * enorm ** -0.2)
            h = hs * fac
            if h < 1e-13 * max(1.0, s):
                if enorm >= 1e10:
                    return NONPHYSICAL, s, out, steps, n_acc
                return UNDERFLOW, s, out, steps, n_acc
    return OK, 1.0, out, steps, n_acc


@njit(cache=True, nogil=True)
def _dopri5_replay(z0, span, W, P, grid):
    """Final point after the given sequence of steps, without error control."""
    n = 10
    y = z0.copy()
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    k5 = np.empty(n)
    k6 = np.empty(n)
    yt = np.empty(n)
    ynew = np.empty(n)
    if not _all_ok(y):
        return NONPHYSICAL, 0.0, y
    _field(y, span, W, P, math.nan, k1)
    s = 0.0
    for hs in grid:
        _stages(y, k1, hs, span, W, P, math.nan, k2, k3, k4, k5, k6, yt, ynew)
        if not _all_ok(ynew):
            return NONPHYSICAL, s, y
        for i in range(n):
            y[i] = ynew[i]
        _field(y, span, W, P, math.nan, k1)
        s += hs
    return OK, 1.0, y


@njit(cache=True, nogil=True)
def _controls_and_hamiltonian(zs, W, P):
    n = zs.shape[0]
    us = np.empty(n)
    hs = np.empty(n)
    buf = np.empty(10)
    for i in range(n):
        u = _extremal_rhs(zs[i], W, P, buf)
        us[i] = u
        hs[i] = _hamiltonian(zs[i, :5], zs[i, 5:], u, W, P)
    return us, hs


@dataclass
class Trajectory:
    """Samples of an extremal (or a direct-method solution).

    ``z`` has one row per sample with columns (x, h, v, gamma, m, p_x, ..., p_m).
    """

    t: np.ndarray
    z: np.ndarray
    u: np.ndarray
    H: np.ndarray
    steps: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def states(self) -> np.ndarray:
        return self.z[:, :5]

    @property
    def costates(self) -> np.ndarray:
        return self.z[:, 5:]

    @property
    def end(self) -> np.ndarray:
        return self.z[-1]

    def reversed(self) -> "Trajectory":
        return Trajectory(self.t[::-1].copy(), self.z[::-1].copy(), self.u[::-1].copy(), self.H[::-1].copy(), self.steps, dict(self.meta))

    def cost_terms(self, w: CostWeights) -> dict:
        """Trapezoidal quadrature of the three running-cost terms."""
        order = np.argsort(self.t)
        t = self.t[order]
        h = self.z[order, 1]
        u = self.u[order]
        time_term = w.k0 * (t[-1] - t[0])
        alt = float(np.trapezoid(w.k1 * ((h - w.h_c) / w.h_c) ** 2, t))
        reg = float(np.trapezoid(w.k * u**2, t))
        return {"time": float(time_term), "altitude": alt, "control": reg, "total": float(time_term + alt + reg)}


def flow(
    z0,
    duration: float,
    w: CostWeights,
    params: VehicleParams,
    direction: str = "forward",
    samples: int = 1,
    t0: float = 0.0,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
    u_fixed: float | None = None,
    max_steps: int = MAX_STEPS,
) -> Trajectory:
    """Integrate the extremal system from ``z0`` over ``duration`` seconds.

    The result holds ``samples + 1`` equally spaced points; for a backward flow
    the time labels run from ``t0`` down to ``t0 - duration``.  ``u_fixed``
    replaces the closed-loop control by a constant (analysis only).
    """
    if duration <= 0 or not math.isfinite(duration):
        raise ValueError(f"flow duration must be positive, got {duration}")
    if direction not in ("forward", "backward"):
        raise ValueError("direction must be 'forward' or 'backward'")
    if isinstance(z0, ExtremalPoint):
        z0 = z0.as_vector()
    z0 = np.asarray(z0, dtype=np.float64)
    if z0.shape != (10,) or not np.all(np.isfinite(z0)):
        raise ValueError("initial extremal point must be a finite 10-vector")
    sign = 1.0 if direction == "forward" else -1.0
    W = w.as_array()
    P = params.as_array()
    ufix = math.nan if u_fixed is None else float(u_fixed)
    status, s_stop, zs, steps, _ = _dopri5(z0, sign * duration, W, P, ufix, int(samples), rtol, atol, max_steps,
                                           _NO_GRID)
    if status != OK:
        raise FlowError(_STATUS_TEXT[status], t0 + sign * s_stop * duration)
    t = t0 + sign * duration * np.linspace(0.0, 1.0, samples + 1)
    if u_fixed is None:
        us, hs = _controls_and_hamiltonian(zs, W, P)
    else:
        us = np.full(samples + 1, ufix)
        hs = np.array([_hamiltonian(r[:5], r[5:], ufix, W, P) for r in zs])
    return Trajectory(t, zs, us, hs, steps)


def endpoint(z0: np.ndarray, duration: float, W: np.ndarray, P: np.ndarray, sign: float = 1.0,
             rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL,
             max_steps: int = SHOOTING_MAX_STEPS, record: list | None = None) -> np.ndarray:
    """Fast path for shooting: packed arrays in, final extremal point out.

    With ``record`` (a list) the accepted step sizes are appended to it, so
    the same discretization can later be replayed by :func:`endpoint_on_grid`.
    """
    grid = np.empty(max_steps if record is not None else 0)
    status, s_stop, zs, _, n_acc = _dopri5(z0, sign * duration, W, P, math.nan, 1, rtol, atol, max_steps, grid)
    if status != OK:
        raise FlowError(_STATUS_TEXT[status], sign * s_stop * duration)
    if record is not None:
        record.append(grid[:n_acc].copy())
    return zs[-1]


def endpoint_on_grid(z0: np.ndarray, duration: float, W: np.ndarray, P: np.ndarray, sign: float,
                     grid: np.ndarray) -> np.ndarray:
    """Final point on a frozen step sequence (normalized time).

    Replaying the grid of an adaptive run reproduces its endpoint bit for bit;
    perturbed inputs then map smoothly, which keeps finite-difference
    Jacobians free of step-selection noise.
    """
    status, s_stop, zf = _dopri5_replay(z0, sign * duration, W, P, grid)
    if status != OK:
        raise FlowError(_STATUS_TEXT[status], sign * s_stop * duration)
    return zf
