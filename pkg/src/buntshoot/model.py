"""Point-mass vehicle model in the vertical plane.

State ordering everywhere is ``(x, h, v, gamma, m)``.  Thrust is held at its
maximum (no throttle state) and induced drag is neglected, so the lift
coefficient ``u`` is the only control.

The scalar kernels prefixed with an underscore are numba-compiled and take
the packed parameter vector produced by :meth:`VehicleParams.as_array`; the
public functions wrap them for plain Python use.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from functools import cached_property

import numpy as np
from numba import njit

# Layout of the packed parameter vector.
P_D, P_CD0, P_TMAX, P_CS, P_G, P_RHO0, P_HR, P_S = range(8)
N_PARAMS = 8

STATE_NAMES = ("x", "h", "v", "gamma", "m")


@dataclass(frozen=True)
class VehicleParams:
    """Physical constants of the vehicle and its environment (SI units)."""

    d: float = 0.65
    c_d0: float = 0.4
    t_max: float = 5000.0
    c_s: float = 4.0e-4
    g: float = 9.81
    rho0: float = 1.225
    h_r: float = 7314.0
    u_max: float = 2.0
    h_c: float = 250.0
    k0: float = 1.0
    k1: float = 1.0

    def __post_init__(self):
        for name, value in self.to_dict().items():
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"vehicle parameter {name!r} must be positive, got {value!r}")

    @cached_property
    def area(self) -> float:
        """Reference cross-section pi*d^2/4."""
        return math.pi * self.d**2 / 4.0

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.d, self.c_d0, self.t_max, self.c_s, self.g, self.rho0, self.h_r, self.area],
            dtype=np.float64,
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class State:
    x: float
    h: float
    v: float
    gamma: float
    m: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.h, self.v, self.gamma, self.m], dtype=np.float64)

    @classmethod
    def from_array(cls, arr) -> "State":
        a = np.asarray(arr, dtype=float)
        return cls(*(float(c) for c in a[:5]))

    def is_physical(self) -> bool:
        return self.v > 0 and self.m > 0


@dataclass(frozen=True)
class BoundaryConditions:
    """Initial state fully fixed; final x, h and gamma fixed, v and m free."""

    xi0: State
    x_f: float
    h_f: float
    gamma_f: float

    # Only these final components are constrained.
    constrained_final = ("x", "h", "gamma")

    def final_target(self) -> np.ndarray:
        return np.array([self.x_f, self.h_f, self.gamma_f])


# ---------------------------------------------------------------------------
# compiled kernels


@njit(cache=True, nogil=True)
def _density(h, P):
    return P[P_RHO0] * math.exp(-h / P[P_HR])


@njit(cache=True, nogil=True)
def _qbar(h, v, P):
    return 0.5 * _density(h, P) * v * v


@njit(cache=True, nogil=True)
def _drag(h, v, P):
    return _qbar(h, v, P) * P[P_S] * P[P_CD0]


@njit(cache=True, nogil=True)
def _lift(h, v, u, P):
    return _qbar(h, v, P) * P[P_S] * u


@njit(cache=True, nogil=True)
def _param_rhs(xi, u, lam, P, out):
    h = xi[1]
    v = xi[2]
    gam = xi[3]
    m = xi[4]
    cg = math.cos(gam)
    sg = math.sin(gam)
    tmax = P[P_TMAX]
    cs = P[P_CS]
    g = P[P_G]
    rho = _density(h, P)
    drag = 0.5 * rho * v * v * P[P_S] * P[P_CD0]
    # a(xi, u) = (qbar S / (m v) - 1) u - g cos(gamma) / v
    a = (0.5 * rho * v * P[P_S] / m - 1.0) * u - g * cg / v
    out[0] = v * cg
    out[1] = v * sg
    out[2] = lam * ((tmax * (1.0 + cs * v) - drag) / m - g * sg)
    out[3] = lam * a + u
    out[4] = -lam * cs * tmax


@njit(cache=True, nogil=True)
def _full_rhs(xi, u, P, out):
    h = xi[1]
    v = xi[2]
    gam = xi[3]
    m = xi[4]
    cg = math.cos(gam)
    sg = math.sin(gam)
    q = _qbar(h, v, P)
    out[0] = v * cg
    out[1] = v * sg
    out[2] = (P[P_TMAX] * (1.0 + P[P_CS] * v) - q * P[P_S] * P[P_CD0]) / m - P[P_G] * sg
    out[3] = q * P[P_S] * u / (m * v) - P[P_G] * cg / v
    out[4] = -P[P_CS] * P[P_TMAX]


@njit(cache=True, nogil=True)
def _running_cost(h, u, k0, k1, k, hc):
    dh = (h - hc) / hc
    return k0 + k1 * dh * dh + k * u * u


# ---------------------------------------------------------------------------
# public wrappers

_DEFAULT = VehicleParams()


def density(h, params: VehicleParams = _DEFAULT):
    """Exponential atmosphere rho0*exp(-h/h_r); works on scalars and arrays."""
    if np.any(np.asarray(h) > 20_000.0):
        warnings.warn("exponential atmosphere used above 20 km", RuntimeWarning, stacklevel=2)
    return params.rho0 * np.exp(-np.asarray(h, dtype=float) / params.h_r)


def dynamic_pressure(h, v, params: VehicleParams = _DEFAULT):
    return 0.5 * density(h, params) * np.asarray(v, dtype=float) ** 2


def drag(h, v, params: VehicleParams = _DEFAULT):
    return dynamic_pressure(h, v, params) * params.area * params.c_d0


def drag_dh(h, v, params: VehicleParams = _DEFAULT):
    """Analytic dD/dh = -D/h_r."""
    return -drag(h, v, params) / params.h_r


def drag_dv(h, v, params: VehicleParams = _DEFAULT):
    """Analytic dD/dv = rho S C_D0 v = 2 D / v."""
    return density(h, params) * params.area * params.c_d0 * np.asarray(v, dtype=float)


def lift(h, v, u, params: VehicleParams = _DEFAULT):
    return dynamic_pressure(h, v, params) * params.area * np.asarray(u, dtype=float)


def _checked(out: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite dynamics evaluation")
    return out


def full_rhs(state, u: float, params: VehicleParams = _DEFAULT) -> np.ndarray:
    xi = _as_state_array(state)
    out = np.empty(5)
    _full_rhs(xi, float(u), params.as_array(), out)
    return _checked(out)


def parametrized_rhs(state, u: float, lam: float, params: VehicleParams = _DEFAULT) -> np.ndarray:
    """Dynamics deformed from Dubins kinematics (lam=0) to the full model (lam=1)."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"homotopy factor must lie in [0, 1], got {lam}")
    xi = _as_state_array(state)
    out = np.empty(5)
    _param_rhs(xi, float(u), float(lam), params.as_array(), out)
    return _checked(out)


def running_cost(h, u, k0: float, k1: float, k: float, h_c: float):
    """k0 + k1*((h - h_c)/h_c)^2 + k*u^2."""
    if h_c <= 0 or k < 0:
        raise ValueError("running cost needs h_c > 0 and k >= 0")
    h = np.asarray(h, dtype=float)
    u = np.asarray(u, dtype=float)
    return k0 + k1 * ((h - h_c) / h_c) ** 2 + k * u**2


def _as_state_array(state) -> np.ndarray:
    if isinstance(state, State):
        xi = state.as_array()
    else:
        xi = np.asarray(state, dtype=np.float64)
    if xi[2] <= 0 or xi[4] <= 0:
        raise ValueError("speed and mass must be strictly positive")
    return xi
