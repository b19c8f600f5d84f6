"""Direct transcription oracle.

Crank-Nicolson discretization of the dynamics (the lam-blended field, normally
lam = 1) on a uniform grid with a piecewise-constant control per interval and
trapezoidal quadrature of the cost.  The NLP is solved by a primal-dual interior-point Newton method on
the sparse KKT system, using the exact Hessian of the Lagrangian (analytic
second derivatives of the dynamics), logarithmic barriers for the bounds
and a filter line search on (constraint violation, barrier objective).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from numba import njit
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .integrate import Trajectory
from .model import P_CD0, P_CS, P_G, P_HR, P_S, P_TMAX, BoundaryConditions, VehicleParams, _density, _param_rhs
from .pmp import CostWeights

log = logging.getLogger(__name__)

DEFAULT_N = 200
PAPER_N = 1000


class DirectSolveError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# compiled kernels


@njit(cache=True, nogil=True)
def _partials(xi, u, lam, P, A, B):
    """Partials of the lam-blended field lam f + (1 - lam) (v cos g, v sin g, 0, u, 0)."""
    h = xi[1]
    v = xi[2]
    gam = xi[3]
    m = xi[4]
    K = 0.5 * _density(h, P) * P[P_S]
    D = K * P[P_CD0] * v * v
    cg = math.cos(gam)
    sg = math.sin(gam)
    g = P[P_G]
    hr = P[P_HR]
    tm = P[P_TMAX]
    cs = P[P_CS]
    for i in range(5):
        B[i] = 0.0
        for j in range(5):
            A[i, j] = 0.0
    A[0, 2] = cg
    A[0, 3] = -v * sg
    A[1, 2] = sg
    A[1, 3] = v * cg
    A[2, 1] = D / (hr * m)
    A[2, 2] = (tm * cs - 2.0 * D / v) / m
    A[2, 3] = -g * cg
    A[2, 4] = -(tm * (1.0 + cs * v) - D) / (m * m)
    A[3, 1] = -K * u * v / (m * hr)
    A[3, 2] = K * u / m + g * cg / (v * v)
    A[3, 3] = g * sg / v
    A[3, 4] = -K * u * v / (m * m)
    B[3] = K * v / m
    for i in range(2, 5):
        for j in range(5):
            A[i, j] *= lam
    B[3] = lam * B[3] + (1.0 - lam)


@njit(cache=True, nogil=True)
def _weighted_hessian(xi, u, w, lam, P, H):
    """Hessian of w . f(xi, u) over (x, h, v, gamma, m, u); H is 6x6."""
    h = xi[1]
    v = xi[2]
    gam = xi[3]
    m = xi[4]
    hr = P[P_HR]
    g = P[P_G]
    tm = P[P_TMAX]
    cs = P[P_CS]
    K = 0.5 * _density(h, P) * P[P_S]
    D = K * P[P_CD0] * v * v
    N2 = tm * (1.0 + cs * v) - D
    L = K * v * u / m
    cg = math.cos(gam)
    sg = math.sin(gam)
    # only the v and gamma rows carry lam (the mass row is constant)
    w2 = lam * w[2]
    w3 = lam * w[3]
    for i in range(6):
        for j in range(6):
            H[i, j] = 0.0
    # x-dot = v cos(gamma), h-dot = v sin(gamma)
    H[2, 3] += -w[0] * sg + w[1] * cg
    H[3, 3] += -w[0] * v * cg - w[1] * v * sg
    # v-dot = N2/m - g sin(gamma)
    H[1, 1] += -w2 * D / (hr * hr * m)
    H[1, 2] += w2 * 2.0 * D / (v * hr * m)
    H[2, 2] += -w2 * 2.0 * D / (v * v * m)
    H[4, 4] += w2 * 2.0 * N2 / (m * m * m)
    H[1, 4] += -w2 * D / (hr * m * m)
    H[2, 4] += -w2 * (tm * cs - 2.0 * D / v) / (m * m)
    H[3, 3] += w2 * g * sg
    # gamma-dot = K v u / m - g cos(gamma) / v
    H[1, 1] += w3 * L / (hr * hr)
    H[1, 2] += -w3 * K * u / (m * hr)
    H[1, 4] += w3 * L / (hr * m)
    H[2, 4] += -w3 * K * u / (m * m)
    H[4, 4] += w3 * 2.0 * L / (m * m)
    H[1, 5] += -w3 * K * v / (m * hr)
    H[2, 5] += w3 * K / m
    H[4, 5] += -w3 * K * v / (m * m)
    H[3, 3] += w3 * g * cg / v
    H[2, 2] += -w3 * 2.0 * g * cg / (v * v * v)
    H[2, 3] += -w3 * g * sg / (v * v)
    for i in range(6):
        for j in range(i + 1, 6):
            H[j, i] = H[i, j]


@njit(cache=True, nogil=True)
def _cn_simulate(xi0, U, T, lam, P, X):
    """Fill X (N+1, 5); return 0 on success, else the failing step index."""
    N = U.shape[0]
    hs = T / N
    X[0, :] = xi0
    f0 = np.empty(5)
    f1 = np.empty(5)
    A = np.empty((5, 5))
    B = np.empty(5)
    M = np.empty((5, 5))
    r = np.empty(5)
    y = np.empty(5)
    for i in range(1, N + 1):
        u = U[i - 1]
        _param_rhs(X[i - 1], u, lam, P, f0)
        for c in range(5):
            y[c] = X[i - 1, c] + hs * f0[c]
        if y[2] <= 0.0 or y[4] <= 0.0:
            return i
        ok = False
        for _ in range(30):
            _param_rhs(y, u, lam, P, f1)
            rn = 0.0
            for c in range(5):
                r[c] = y[c] - X[i - 1, c] - 0.5 * hs * (f0[c] + f1[c])
                rn = max(rn, abs(r[c]) / (1.0 + abs(y[c])))
            if rn < 1e-14:
                ok = True
                break
            _partials(y, u, lam, P, A, B)
            for a in range(5):
                for b in range(5):
                    M[a, b] = (1.0 if a == b else 0.0) - 0.5 * hs * A[a, b]
            dy = np.linalg.solve(M, r)
            for c in range(5):
                y[c] -= dy[c]
            if not (y[2] > 0.0 and y[4] > 0.0 and math.isfinite(y[0] + y[1] + y[3])):
                return i
        if not ok:
            # accept a nearly converged iterate, reject anything worse
            if rn > 1e-10:
                return i
        X[i, :] = y
    return 0


@njit(cache=True, nogil=True)
def _interval_terms(Xn, U, lam, P, F0, F1, A0, A1, B0, B1):
    """Vector field and its partials at both ends of every interval."""
    N = U.shape[0]
    for i in range(N):
        _param_rhs(Xn[i], U[i], lam, P, F0[i])
        _param_rhs(Xn[i + 1], U[i], lam, P, F1[i])
        _partials(Xn[i], U[i], lam, P, A0[i], B0[i])
        _partials(Xn[i + 1], U[i], lam, P, A1[i], B1[i])


@njit(cache=True, nogil=True)
def _interval_hessians(Xn, U, Wt, lam, P, H0, H1):
    N = U.shape[0]
    for i in range(N):
        _weighted_hessian(Xn[i], U[i], Wt[i], lam, P, H0[i])
        _weighted_hessian(Xn[i + 1], U[i], Wt[i], lam, P, H1[i])


# ---------------------------------------------------------------------------
# transcription


@dataclass
class Transcription:
    """Crank-Nicolson transcription of the guidance problem with N steps.

    The decision vector is (xi_1..xi_N, u_1..u_N, t_f); xi_0 is fixed by the
    boundary data.  The defect of interval i is
    xi_i - xi_{i-1} - (t_f/2N)(f(xi_{i-1}, u_i) + f(xi_i, u_i)), and the
    terminal rows constrain x, h and gamma of xi_N only.
    """

    bc: BoundaryConditions
    params: VehicleParams
    weights: CostWeights
    N: int

    def __post_init__(self):
        if self.N < 10:
            raise ValueError("need at least 10 time steps")
        s0 = self.bc.xi0
        span = max(abs(self.bc.x_f - s0.x), abs(self.bc.h_f - s0.h), 1.0)
        self.state_scale = np.array([span, max(self.weights.h_c, abs(s0.h), abs(self.bc.h_f), 1.0), max(s0.v, 1.0),
                                     1.0, max(s0.m, 1.0)])
        self.terminal_scale = self.state_scale[[0, 1, 3]]

    @property
    def n_vars(self) -> int:
        return 6 * self.N + 1

    def unpack(self, Z):
        Z = np.asarray(Z, dtype=float)
        N = self.N
        return Z[: 5 * N].reshape(N, 5), Z[5 * N: 6 * N], float(Z[6 * N])

    def pack(self, X, U, tf) -> np.ndarray:
        return np.concatenate([np.asarray(X, float).ravel(), np.asarray(U, float), [float(tf)]])

    def nodes(self, X) -> np.ndarray:
        return np.vstack([self.bc.xi0.as_array(), X])

    def _running(self, Xn, U):
        w = self.weights
        return w.k0 + w.k1 * ((Xn[:, 1] - w.h_c) / w.h_c) ** 2 + w.k * U**2

    def objective(self, Z) -> float:
        """Trapezoidal quadrature of the running cost."""
        X, U, tf = self.unpack(Z)
        Xn = self.nodes(X)
        return float(0.5 * tf / self.N * np.sum(self._running(Xn[:-1], U) + self._running(Xn[1:], U)))

    def _terms(self, Xn, U):
        N = self.N
        F0, F1 = np.empty((N, 5)), np.empty((N, 5))
        A0, A1 = np.empty((N, 5, 5)), np.empty((N, 5, 5))
        B0, B1 = np.empty((N, 5)), np.empty((N, 5))
        _interval_terms(Xn, U, self.weights.lam, self.params.as_array(), F0, F1, A0, A1, B0, B1)
        return F0, F1, A0, A1, B0, B1

    def defects(self, Z) -> np.ndarray:
        """Crank-Nicolson defects, shape (5N,)."""
        X, U, tf = self.unpack(Z)
        Xn = self.nodes(X)
        F0, F1, *_ = self._terms(Xn, U)
        return (Xn[1:] - Xn[:-1] - 0.5 * tf / self.N * (F0 + F1)).ravel()

    def terminal(self, Z) -> np.ndarray:
        X, _, _ = self.unpack(Z)
        return X[-1, [0, 1, 3]] - self.bc.final_target()

    def simulate(self, U, tf) -> np.ndarray:
        """Node states (N+1, 5) with every implicit step solved exactly."""
        X = np.empty((self.N + 1, 5))
        status = _cn_simulate(self.bc.xi0.as_array(), np.asarray(U, dtype=float), float(tf), self.weights.lam,
                              self.params.as_array(), X)
        if status:
            raise DirectSolveError(f"implicit step {status} could not be solved")
        return X

    def straight_time(self) -> float:
        s0 = self.bc.xi0
        return math.hypot(self.bc.x_f - s0.x, self.bc.h_f - s0.h) / s0.v

    def min_final_time(self) -> float:
        """Lower bound on t_f: a fifth of the straight-line time at the initial speed.

        Without it the penalty has a spurious minimizer at t_f -> 0 where all
        defects vanish.
        """
        return 0.2 * self.straight_time()

    def warm_start(self, tf: float | None = None) -> np.ndarray:
        """Straight-line guess: linear in (x, h, gamma), constant speed, linear mass.

        Controls are zero and t_f defaults to 1.1 times the straight
        distance flown at the initial speed.
        """
        s0 = self.bc.xi0
        if tf is None:
            tf = 1.1 * self.straight_time()
        tau = np.arange(1, self.N + 1) / self.N
        X = np.empty((self.N, 5))
        X[:, 0] = s0.x + tau * (self.bc.x_f - s0.x)
        X[:, 1] = s0.h + tau * (self.bc.h_f - s0.h)
        X[:, 2] = s0.v
        X[:, 3] = s0.gamma + tau * (self.bc.gamma_f - s0.gamma)
        X[:, 4] = s0.m - self.weights.lam * self.params.c_s * self.params.t_max * tau * tf
        return self.pack(X, np.zeros(self.N), tf)


def crank_nicolson_defects(rhs, nodes, U, tf: float) -> np.ndarray:
    """Defects xi_i - xi_{i-1} - (h/2)(f(xi_{i-1}, u_i) + f(xi_i, u_i)) for any field ``rhs(xi, u)``.

    Reference form of :meth:`Transcription.defects`, shape (N, n).
    """
    nodes = np.asarray(nodes, dtype=float)
    N = len(U)
    hs = tf / N
    return np.array([nodes[i + 1] - nodes[i] - 0.5 * hs * (rhs(nodes[i], U[i]) + rhs(nodes[i + 1], U[i]))
                     for i in range(N)])


def transcribe(bc: BoundaryConditions, params: VehicleParams, weights: CostWeights, N: int = DEFAULT_N) -> Transcription:
    return Transcription(bc, params, weights, N)


# ---------------------------------------------------------------------------
# interior-point NLP solver


@dataclass
class DirectResult:
    trajectory: Trajectory
    cost: float
    feasibility: float
    optimality: float
    iterations: int
    converged: bool
    Z: np.ndarray
    defect_multipliers: np.ndarray  # (N, 5), physical units
    terminal_multipliers: np.ndarray

    @property
    def controls(self) -> np.ndarray:
        return self.Z[5 * (len(self.Z) // 6): -1]




class _ScaledNLP:
    """The transcription in scaled coordinates.

    y = Z / zscale.  Defect rows are divided by state_scale/N, terminal rows
    by the terminal scale, and the objective by ``cost_ref``.
    """

    def __init__(self, tr: Transcription, t_ref: float, cost_ref: float):
        N = tr.N
        self.tr = tr
        self.N = N
        self.n = tr.n_vars
        self.m = 5 * N + 3
        self.P = tr.params.as_array()
        self.xi0 = tr.bc.xi0.as_array()
        self.target = tr.bc.final_target()
        self.cost_ref = cost_ref
        self.row_scale = np.r_[np.tile(tr.state_scale / N, N), tr.terminal_scale]
        self.zscale = np.r_[np.tile(tr.state_scale, N), np.full(N, tr.weights.u_max), t_ref]
        lo = np.full(self.n, -np.inf)
        hi = np.full(self.n, np.inf)
        lo[2:5 * N:5] = 1.0  # speed
        lo[4:5 * N:5] = 1.0  # mass
        lo[5 * N:6 * N] = -tr.weights.u_max
        hi[5 * N:6 * N] = tr.weights.u_max
        lo[6 * N] = tr.min_final_time()
        self.lo = lo / self.zscale
        self.hi = hi / self.zscale
        i = np.arange(N)
        r = (5 * i[:, None] + np.arange(5)).ravel()
        self._r_diag = r
        self._r_sub = r[5:]
        node = np.full((N + 1, 5), -1)
        node[1:] = np.arange(5 * N).reshape(N, 5)
        uc = 5 * N + i
        self._idx0 = np.hstack([node[:-1], uc[:, None]])
        self._idx1 = np.hstack([node[1:], uc[:, None]])

    def split(self, y):
        X, U, T = self.tr.unpack(y * self.zscale)
        return np.vstack([self.xi0, X]), U.copy(), T

    def evaluate(self, y, lam=None):
        """Objective, gradient, constraints, Jacobian and (if ``lam``) Lagrangian Hessian.

        Everything is in scaled coordinates; ``lam`` are multipliers of the
        scaled constraint rows.
        """
        N = self.N
        tr = self.tr
        w = tr.weights
        Xn, U, T = self.split(y)
        F0, F1, A0, A1, B0, B1 = tr._terms(Xn, U)
        hs = T / N
        rs = self.row_scale
        cr = self.cost_ref
        c = np.r_[(Xn[1:] - Xn[:-1] - 0.5 * hs * (F0 + F1)).ravel(), Xn[-1, [0, 1, 3]] - self.target] / rs
        run = tr._running(Xn[:-1], U) + tr._running(Xn[1:], U)
        f = 0.5 * hs * float(np.sum(run)) / cr
        if not (math.isfinite(f) and np.all(np.isfinite(c))):
            return math.inf, None, c, None, None

        n = self.n
        count = np.full(N, 2.0)
        count[-1] = 1.0
        dh = (Xn[1:, 1] - w.h_c) / w.h_c**2
        gf = np.zeros(n)
        gf[1:5 * N:5] = 0.5 * hs * count * 2.0 * w.k1 * dh
        gf[5 * N:6 * N] = 2.0 * hs * w.k * U
        gf[6 * N] = 0.5 / N * float(np.sum(run))
        gf = gf / cr * self.zscale

        I5 = np.eye(5)
        drs = rs[:5 * N].reshape(N, 5)
        d1 = (I5 - 0.5 * hs * A1) / drs[:, :, None]
        d0 = (-I5 - 0.5 * hs * A0[1:]) / drs[1:, :, None]
        ju = (-0.5 * hs * (B0 + B1)) / drs
        jt = (-0.5 / N * (F0 + F1)) / drs
        rows = [np.repeat(self._r_diag, 5), np.repeat(self._r_sub, 5), self._r_diag, self._r_diag,
                5 * N + np.arange(3)]
        cols = [(self._r_diag.reshape(N, 5)[:, None, :].repeat(5, 1)).ravel(),
                (self._r_diag[:-5].reshape(N - 1, 5)[:, None, :].repeat(5, 1)).ravel(),
                np.repeat(5 * N + np.arange(N), 5), np.full(5 * N, 6 * N),
                5 * (N - 1) + np.array([0, 1, 3])]
        vals = [d1.ravel(), d0.ravel(), ju.ravel(), jt.ravel(), 1.0 / rs[5 * N:]]
        J = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(self.m, n))
        J = J @ sp.diags(self.zscale)
        if lam is None:
            return f, gf, c, J.tocsr(), None

        # Hessian of f + lam . c; the terminal rows are linear
        Wt = lam[:5 * N].reshape(N, 5) / drs
        H0 = np.empty((N, 6, 6))
        H1 = np.empty((N, 6, 6))
        _interval_hessians(Xn, U, Wt, tr.weights.lam, self.P, H0, H1)
        H0 *= -0.5 * hs
        H1 *= -0.5 * hs
        r_list, c_list, v_list = [], [], []
        for idx, Hb in ((self._idx0, H0), (self._idx1, H1)):
            R = np.broadcast_to(idx[:, :, None], Hb.shape)
            C = np.broadcast_to(idx[:, None, :], Hb.shape)
            keep = (R >= 0) & (C >= 0)
            r_list.append(R[keep])
            c_list.append(C[keep])
            v_list.append(Hb[keep])
        tX = np.zeros((N + 1, 5))
        tX[:-1] += -0.5 / N * np.einsum("na,nab->nb", Wt, A0)
        tX[1:] += -0.5 / N * np.einsum("na,nab->nb", Wt, A1)
        tX[1:, 1] += 0.5 / N * count * 2.0 * w.k1 * dh / cr
        tU = -0.5 / N * np.einsum("na,na->n", Wt, B0 + B1) + 2.0 / N * w.k * U / cr
        tcol = np.r_[tX[1:].ravel(), tU]
        tidx = np.arange(6 * N)
        r_list += [tidx, np.full(6 * N, 6 * N)]
        c_list += [np.full(6 * N, 6 * N), tidx]
        v_list += [tcol, tcol]
        diag = np.zeros(n)
        diag[1:5 * N:5] = 0.5 * hs * count * 2.0 * w.k1 / w.h_c**2 / cr
        diag[5 * N:6 * N] = 2.0 * hs * w.k / cr
        r_list.append(np.arange(n))
        c_list.append(np.arange(n))
        v_list.append(diag)
        H = sp.csr_matrix((np.concatenate(v_list), (np.concatenate(r_list), np.concatenate(c_list))), shape=(n, n))
        S = sp.diags(self.zscale)
        return f, gf, c, J.tocsr(), (S @ H @ S).tocsr()


def _filter_accepts(theta, phi, gdy, alpha, theta_t, phi_t, filt, theta_min, theta_max):
    """Filter acceptance test; returns (accepted, objective-type step)."""
    if theta_t >= theta_max:
        return False, False
    for th_j, ph_j in filt:
        if theta_t >= th_j and phi_t >= ph_j:
            return False, False
    switching = gdy < 0 and alpha * (-gdy) ** 2.3 > theta**1.1
    if theta <= theta_min and switching:
        return phi_t <= phi + 1e-4 * alpha * gdy, True
    return theta_t <= (1.0 - 1e-5) * theta or phi_t <= phi - 1e-5 * theta, False


def _interior_point(nlp: _ScaledNLP, y0, tol: float, max_iter: int):
    """Primal-dual barrier method with a filter line search.

    Returns (y, lam, iterations, kkt_error, primal_infeasibility).
    """
    lo, hi = nlp.lo, nlp.hi
    has_lo = np.isfinite(lo)
    has_hi = np.isfinite(hi)
    # push the start strictly inside the box
    y = np.array(y0, dtype=float)
    pad_lo = 1e-2 * np.maximum(1.0, np.abs(np.where(has_lo, lo, 0.0)))
    pad_hi = 1e-2 * np.maximum(1.0, np.abs(np.where(has_hi, hi, 0.0)))
    width = np.where(has_lo & has_hi, hi - lo, np.inf)
    pad_lo = np.minimum(pad_lo, 0.25 * width)
    pad_hi = np.minimum(pad_hi, 0.25 * width)
    y = np.where(has_lo, np.maximum(y, lo + pad_lo), y)
    y = np.where(has_hi, np.minimum(y, hi - pad_hi), y)
    n, m = nlp.n, nlp.m
    mu = 0.1
    zl = np.where(has_lo, 1.0, 0.0)
    zu = np.where(has_hi, 1.0, 0.0)
    lam = np.zeros(m)
    filt: list[tuple[float, float]] = []
    theta_max = theta_min = None
    delta_w_last = 0.0

    def slacks(yv):
        sl = np.where(has_lo, yv - lo, 1.0)
        su = np.where(has_hi, hi - yv, 1.0)
        return sl, su

    def barrier(yv, fv, mu_):
        sl, su = slacks(yv)
        return fv - mu_ * float(np.sum(np.log(sl[has_lo]))) - mu_ * float(np.sum(np.log(su[has_hi])))

    def errors(gf, J, c, zl_, zu_, lam_, yv, mu_):
        sl, su = slacks(yv)
        dual = gf + J.T @ lam_ - zl_ + zu_
        comp = np.r_[(sl * zl_ - mu_)[has_lo], (su * zu_ - mu_)[has_hi]]
        s_max = 100.0
        sd = max(s_max, (np.abs(lam_).sum() + zl_.sum() + zu_.sum()) / (n + m)) / s_max
        sc = max(s_max, (zl_.sum() + zu_.sum()) / n) / s_max
        return max(float(np.max(np.abs(dual))) / sd, float(np.max(np.abs(c))),
                   (float(np.max(np.abs(comp))) / sc) if comp.size else 0.0)

    f, gf, c, J, W = nlp.evaluate(y, lam)
    if not math.isfinite(f):
        raise DirectSolveError("objective or constraints not finite at the start point")
    it = 0
    err0 = math.inf
    for it in range(1, max_iter + 1):
        err0 = errors(gf, J, c, zl, zu, lam, y, 0.0)
        if err0 <= tol:
            return y, lam, it - 1, err0, float(np.max(np.abs(c)))
        while errors(gf, J, c, zl, zu, lam, y, mu) <= 10.0 * mu and mu > tol / 10.0:
            mu = max(tol / 10.0, min(0.2 * mu, mu**1.5))
            filt.clear()
        tau = max(0.99, 1.0 - mu)
        sl, su = slacks(y)
        sig = np.where(has_lo, zl / sl, 0.0) + np.where(has_hi, zu / su, 0.0)
        gphi = gf - np.where(has_lo, mu / sl, 0.0) + np.where(has_hi, mu / su, 0.0)
        rhs = -np.r_[gphi, c]
        Hs = (W + sp.diags(sig)).tocsc()

        # regularize until the step has positive curvature
        delta_w = 0.0
        delta_c = 0.0
        step = None
        for _ in range(30):
            K = sp.bmat([[Hs + sp.identity(n) * delta_w, J.T],
                         [J, sp.identity(m) * -delta_c if delta_c else None]], format="csc")
            try:
                lu = splu(K)
                sol = lu.solve(rhs)
            except RuntimeError:
                delta_c = 1e-8 * mu**0.25
                delta_w = max(1e-4 if delta_w_last == 0 else delta_w_last / 3, 8.0 * delta_w)
                continue
            dy = sol[:n]
            if not np.all(np.isfinite(sol)):
                delta_w = max(1e-4, 8.0 * delta_w)
                continue
            curv = float(dy @ (Hs @ dy)) + delta_w * float(dy @ dy)
            if curv >= 1e-10 * float(dy @ dy):
                step = sol
                break
            delta_w = max(1e-4 if delta_w_last == 0 else delta_w_last / 3, 8.0 * delta_w)
        if step is None:
            raise DirectSolveError("could not regularize the KKT system")
        delta_w_last = delta_w
        dy = step[:n]
        lam_new = step[n:]
        dzl = np.where(has_lo, mu / sl - zl - zl / sl * dy, 0.0)
        dzu = np.where(has_hi, mu / su - zu + zu / su * dy, 0.0)

        def max_step(v, dv, mask):
            neg = mask & (dv < 0)
            if not np.any(neg):
                return 1.0
            return float(min(1.0, np.min(-tau * v[neg] / dv[neg])))

        a_max = min(max_step(sl, dy, has_lo), max_step(su, -dy, has_hi))
        a_z = min(max_step(zl, dzl, has_lo), max_step(zu, dzu, has_hi))

        # filter line search on (constraint violation, barrier objective)
        theta = float(np.sum(np.abs(c)))
        phi = barrier(y, f, mu)
        gdy = float(gphi @ dy)
        if theta_max is None:
            theta_max = 1e4 * max(1.0, theta)
            theta_min = 1e-4 * max(1.0, theta)
        alpha = a_max
        accepted = False
        f_type = False
        for trial in range(40):
            y_try = y + alpha * dy
            f_t, _, c_t, _, _ = nlp.evaluate(y_try)
            if math.isfinite(f_t):
                theta_t = float(np.sum(np.abs(c_t)))
                phi_t = barrier(y_try, f_t, mu)
                ok, f_type = _filter_accepts(theta, phi, gdy, alpha, theta_t, phi_t, filt, theta_min, theta_max)
                if ok:
                    accepted = True
                    break
                if trial == 0 and theta_t >= theta:
                    # second-order correction against the Maratos effect
                    c_soc = alpha * c + c_t
                    for _ in range(3):
                        dy_soc = lu.solve(-np.r_[gphi, c_soc])[:n]
                        a_soc = min(max_step(sl, dy_soc, has_lo), max_step(su, -dy_soc, has_hi))
                        y_soc = y + a_soc * dy_soc
                        f_s, _, c_s, _, _ = nlp.evaluate(y_soc)
                        if not math.isfinite(f_s):
                            break
                        theta_s = float(np.sum(np.abs(c_s)))
                        ok, f_type = _filter_accepts(theta, phi, gdy, alpha, theta_s, barrier(y_soc, f_s, mu), filt,
                                                     theta_min, theta_max)
                        if ok:
                            y_try = y_soc
                            accepted = True
                            break
                        if theta_s > 0.99 * theta_t:
                            break
                        theta_t = theta_s
                        c_soc = a_soc * c_soc + c_s
                    if accepted:
                        break
            alpha *= 0.5
            if alpha < 1e-10:
                break
        if not accepted:
            # no acceptable point: take a short step and strengthen the regularization
            alpha = min(a_max, 1e-4)
            y_try = y + alpha * dy
            delta_w_last = max(delta_w_last * 10, 1e-4)
            filt.clear()
        elif not f_type:
            filt.append(((1.0 - 1e-5) * theta, phi - 1e-5 * theta))
        y = y_try
        lam = lam + alpha * (lam_new - lam)
        zl = zl + a_z * dzl
        zu = zu + a_z * dzu
        # keep bound multipliers within a factor of the central path
        sl, su = slacks(y)
        kap = 1e10
        zl = np.where(has_lo, np.clip(zl, mu / (kap * sl), kap * mu / sl), 0.0)
        zu = np.where(has_hi, np.clip(zu, mu / (kap * su), kap * mu / su), 0.0)
        f, gf, c, J, W = nlp.evaluate(y, lam)
        if not math.isfinite(f):
            raise DirectSolveError("iterate left the domain of the dynamics")
        log.debug("IP %3d: f=%.8e inf_pr=%.2e err=%.2e mu=%.1e alpha=%.3g dw=%.1e%s", it, f,
                  float(np.max(np.abs(c))), err0, mu, alpha, delta_w, "" if accepted else " (forced)")
    return y, lam, it, errors(gf, J, c, zl, zu, lam, y, 0.0), float(np.max(np.abs(c)))


def solve_nlp(tr: Transcription, start=None, tol: float = 1e-8, max_iter: int = 500) -> DirectResult:
    """Solve the transcribed problem from ``start`` (default: straight-line guess).

    ``tol`` bounds the scaled KKT error (stationarity, feasibility and
    complementarity).  Raises :class:`DirectSolveError` when the iteration
    budget ends with scaled constraint violation above 1e-6.
    """
    Z0 = tr.warm_start() if start is None else np.asarray(start, dtype=float)
    if Z0.shape != (tr.n_vars,):
        raise ValueError(f"start vector must have {tr.n_vars} entries")
    nlp = _ScaledNLP(tr, t_ref=float(Z0[-1]), cost_ref=max(tr.objective(Z0), 1.0))
    y, lam, iters, err, feas = _interior_point(nlp, Z0 / nlp.zscale, tol, max_iter)
    converged = err <= tol
    Xn, U, T = nlp.split(y)
    Z = tr.pack(Xn[1:], U, T)
    if feas > 1e-6:
        raise DirectSolveError(f"constraints violated after {iters} iterations (max scaled |c| = {feas:.2e})")
    # the defect rows are not divided by the step, so their multipliers estimate p directly
    lam_phys = lam / nlp.row_scale * nlp.cost_ref
    lam_def = lam_phys[:5 * tr.N].reshape(tr.N, 5)
    costate = np.vstack([lam_def[:1], lam_def])
    t = np.linspace(0.0, T, tr.N + 1)
    Un = np.r_[U[0], 0.5 * (U[:-1] + U[1:]), U[-1]]
    traj = Trajectory(t, np.hstack([Xn, costate]), Un, np.full(tr.N + 1, np.nan),
                      meta={"method": "direct", "N": tr.N, "interval_controls": U.tolist()})
    return DirectResult(traj, tr.objective(Z), feas, err, iters, converged, Z, lam_def, lam_phys[5 * tr.N:])
