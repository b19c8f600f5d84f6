"""Extremal field of the regularized, homotopy-deformed guidance problem.

Normal extremals only: the cost multiplier is fixed at -1, so the Hamiltonian
is ``<p, f_lam(xi, u)> - f0_k(xi, u)``.  The costate is packed as
``(p_x, p_h, p_v, p_gamma, p_m)``.

Derivatives of the aerodynamic terms used by the adjoint system (exponential
atmosphere, rho' = -rho/h_r):

    dD/dh      = -D / h_r
    dD/dv      = rho S C_D0 v            (= 2 D / v)
    d(L/v)/dh  = -L / (v h_r)
    d(L/v)/dv  = rho S u / 2             (L/v is linear in v)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
from numba import njit

from .model import (
    P_CD0,
    P_CS,
    P_G,
    P_HR,
    P_S,
    P_TMAX,
    VehicleParams,
    _density,
    _param_rhs,
)

# Layout of the packed weight vector.
W_K0, W_K1, W_K, W_UMAX, W_HC, W_LAM = range(6)

COSTATE_NAMES = ("p_x", "p_h", "p_v", "p_gamma", "p_m")


@dataclass(frozen=True)
class Costate:
    p_x: float
    p_h: float
    p_v: float
    p_gamma: float
    p_m: float

    def as_array(self) -> np.ndarray:
        return np.array([self.p_x, self.p_h, self.p_v, self.p_gamma, self.p_m], dtype=np.float64)

    @classmethod
    def from_array(cls, arr) -> "Costate":
        return cls(*(float(c) for c in np.asarray(arr, dtype=float)[:5]))


@dataclass(frozen=True)
class ExtremalPoint:
    """A (state, costate) pair; the cost multiplier is always -1."""

    state: np.ndarray
    costate: np.ndarray
    p0: float = -1.0

    def __post_init__(self):
        object.__setattr__(self, "state", np.asarray(self.state, dtype=np.float64).copy())
        object.__setattr__(self, "costate", np.asarray(self.costate, dtype=np.float64).copy())
        if self.p0 != -1.0:
            raise ValueError("only normal extremals (p0 = -1) are supported")

    @classmethod
    def from_vector(cls, z) -> "ExtremalPoint":
        z = np.asarray(z, dtype=np.float64)
        return cls(z[:5], z[5:10])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.state, self.costate])


@dataclass(frozen=True)
class CostWeights:
    k0: float = 1.0
    k1: float = 1.0
    k: float = 0.0
    u_max: float = 2.0
    h_c: float = 250.0
    lam: float = 1.0

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("regularization weight k must be >= 0")
        if self.u_max <= 0:
            raise ValueError("control saturation must be positive")
        if self.h_c <= 0:
            raise ValueError("cruise altitude must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("homotopy factor must lie in [0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([self.k0, self.k1, self.k, self.u_max, self.h_c, self.lam], dtype=np.float64)

    def with_(self, **changes) -> "CostWeights":
        return replace(self, **changes)


class ControlValue(NamedTuple):
    u: float
    singular_candidate: bool


class SingularControlError(ArithmeticError):
    """The singular-control formula is degenerate (B is numerically zero)."""


# ---------------------------------------------------------------------------
# compiled kernels


@njit(cache=True, nogil=True)
def _switching_coeff(xi, p, W, P):
    # coefficient of u in the Hamiltonian
    rho = _density(xi[1], P)
    return p[3] * (1.0 + W[W_LAM] * (rho * P[P_S] * xi[2] / (2.0 * xi[4]) - 1.0))


@njit(cache=True, nogil=True)
def _control(xi, p, W, P):
    b1 = _switching_coeff(xi, p, W, P)
    k = W[W_K]
    umax = W[W_UMAX]
    if k > 0.0:
        u = b1 / (2.0 * k)
        if u > umax:
            return umax
        if u < -umax:
            return -umax
        return u
    if b1 > 0.0:
        return umax
    if b1 < 0.0:
        return -umax
    return 0.0


@njit(cache=True, nogil=True)
def _hamiltonian(xi, p, u, W, P):
    f = np.empty(5)
    _param_rhs(xi, u, W[W_LAM], P, f)
    dh = (xi[1] - W[W_HC]) / W[W_HC]
    f0 = W[W_K0] + W[W_K1] * dh * dh + W[W_K] * u * u
    s = 0.0
    for i in range(5):
        s += p[i] * f[i]
    return s - f0


@njit(cache=True, nogil=True)
def _adjoint_rhs(xi, p, u, W, P, out):
    h = xi[1]
    v = xi[2]
    cg = math.cos(xi[3])
    sg = math.sin(xi[3])
    m = xi[4]
    px = p[0]
    ph = p[1]
    pv = p[2]
    pg = p[3]
    lam = W[W_LAM]
    hc = W[W_HC]
    g = P[P_G]
    tmax = P[P_TMAX]
    cs = P[P_CS]
    hr = P[P_HR]
    rho = _density(h, P)
    S = P[P_S]
    drag = 0.5 * rho * v * v * S * P[P_CD0]
    drag_dv = rho * S * P[P_CD0] * v
    lift_over_v = 0.5 * rho * v * S * u
    dlov_dv = 0.5 * rho * S * u

    out[0] = 0.0
    out[1] = lam * (-pv * drag / (m * hr) + pg * lift_over_v / (m * hr)) + 2.0 * W[W_K1] * (h - hc) / (hc * hc)
    out[2] = -px * cg - ph * sg + lam * (
        pv * drag_dv / m - pg * dlov_dv / m - pg * g * cg / (v * v) - pv * cs * tmax / m
    )
    out[3] = px * v * sg - ph * v * cg + lam * pv * g * cg - lam * pg * g * sg / v
    out[4] = lam * pv * (tmax * (1.0 + cs * v) - drag) / (m * m) + lam * pg * lift_over_v / (m * m)


@njit(cache=True, nogil=True)
def _extremal_rhs(z, W, P, out):
    xi = z[:5]
    p = z[5:]
    u = _control(xi, p, W, P)
    _param_rhs(xi, u, W[W_LAM], P, out[:5])
    _adjoint_rhs(xi, p, u, W, P, out[5:])
    return u


# ---------------------------------------------------------------------------
# public API


def hamiltonian(ext: ExtremalPoint, u: float, w: CostWeights, params: VehicleParams) -> float:
    return float(_hamiltonian(ext.state, ext.costate, float(u), w.as_array(), params.as_array()))


def adjoint_rhs(ext: ExtremalPoint, u: float, w: CostWeights, params: VehicleParams) -> np.ndarray:
    """Costate derivative -dH/dxi at fixed control."""
    out = np.empty(5)
    _adjoint_rhs(ext.state, ext.costate, float(u), w.as_array(), params.as_array(), out)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite adjoint evaluation")
    return out


def switching_coefficient(ext: ExtremalPoint, w: CostWeights, params: VehicleParams) -> float:
    return float(_switching_coeff(ext.state, ext.costate, w.as_array(), params.as_array()))


def pointwise_control(ext: ExtremalPoint, w: CostWeights, params: VehicleParams) -> ControlValue:
    """Maximize the Hamiltonian over |u| <= u_max.

    For k > 0 the Hamiltonian is a concave quadratic in u and the maximizer is
    the clamped stationary point.  For k = 0 the law is bang-bang; a vanishing
    switching coefficient returns 0 flagged as a singular candidate.
    """
    W = w.as_array()
    P = params.as_array()
    u = float(_control(ext.state, ext.costate, W, P))
    singular = w.k == 0.0 and _switching_coeff(ext.state, ext.costate, W, P) == 0.0
    return ControlValue(u, bool(singular))


def hamiltonian_u_curvature(w: CostWeights) -> float:
    """d2H/du2, constant in (xi, p)."""
    return -2.0 * w.k


def singular_coefficients(ext: ExtremalPoint, params: VehicleParams, k1: float, h_c: float) -> tuple[float, float]:
    """The A and B terms of the singular-arc relation, full dynamics (lam=1)."""
    x, h, v, gam, m = ext.state
    px, ph, pv, _pg, _pm = ext.costate
    cg, sg = math.cos(gam), math.sin(gam)
    g = params.g
    tmax, cs = params.t_max, params.c_s
    rho = params.rho0 * math.exp(-h / params.h_r)
    D = 0.5 * rho * v * v * params.area * params.c_d0
    dD_dv = rho * params.area * params.c_d0 * v
    accel = (tmax * (1.0 + cs * v) - D) / m - g * sg
    A = (
        (ph * cg - px * sg) * accel
        + g * cg * (px * cg + ph * sg + pv * cs * tmax / m - pv * dD_dv / m)
        + v * cg * (-pv * D / (m * params.h_r) + 2.0 * k1 * (h - h_c) / h_c**2)
    )
    B = v * (ph * sg + px * cg) - g * pv * sg
    return A, B


def singular_control(ext: ExtremalPoint, params: VehicleParams, k1: float = 1.0, h_c: float | None = None) -> float:
    """Control keeping the switching function identically zero.

    Valid only where p_gamma vanishes along an interval; used for analysis,
    never inside the shooting pipeline.
    """
    h_c = params.h_c if h_c is None else h_c
    A, B = singular_coefficients(ext, params, k1, h_c)
    v = ext.state[2]
    tol_b = 1e-9 * (1.0 + float(np.linalg.norm(ext.costate)) * v)
    if abs(B) < tol_b:
        raise SingularControlError(f"singular formula degenerate: |B|={abs(B):.3e} < {tol_b:.3e}")
    x, h, v, gam, m = ext.state
    qs = 0.5 * params.rho0 * math.exp(-h / params.h_r) * v * v * params.area
    return m * v / qs * (params.g * math.cos(gam) / v + A / B)


def transversality_residuals(final: ExtremalPoint, w: CostWeights, params: VehicleParams) -> np.ndarray:
    """(p_v(tf), p_m(tf), H(tf)); all vanish at a solution with free v_f, m_f, t_f."""
    u = pointwise_control(final, w, params).u
    return np.array([final.costate[2], final.costate[4], hamiltonian(final, u, w, params)])
