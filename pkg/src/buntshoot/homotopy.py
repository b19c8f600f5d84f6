"""Discrete continuation with adaptive step and optional linear prediction.

Phase 1 deforms the Dubins problem into the full regularized problem by
driving dynamics, boundary data and cruise altitude with one scalar
``lam``.  Phase 2 lowers the regularization weight and the control
saturation together through ``theta``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .model import BoundaryConditions

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# schedules


@dataclass(frozen=True)
class Phase1Init:
    """Values of the easy (Dubins) endpoint of the first continuation."""

    h_c: float = 0.5
    x_m: float = 5.0
    gamma_0: float = 0.0
    gamma_m: float = 0.0
    v_0: float = 1.0


@dataclass(frozen=True)
class Phase1Point:
    lam: float
    h_c: float
    xi0: np.ndarray
    target: np.ndarray  # (x1, h1, gamma1)

    def as_tuple(self) -> tuple:
        """(h_c, h_0, v_0, gamma_0, x_1, h_1, gamma_1)."""
        return (self.h_c, self.xi0[1], self.xi0[2], self.xi0[3], self.target[0], self.target[1], self.target[2])


@dataclass(frozen=True)
class Phase1Schedule:
    bc: BoundaryConditions
    h_c: float
    init: Phase1Init = Phase1Init()

    def __call__(self, lam: float) -> Phase1Point:
        if not 0.0 <= lam <= 1.0:
            raise ValueError(f"lam must lie in [0, 1], got {lam}")
        i = self.init
        s0 = self.bc.xi0
        hc = i.h_c + lam * (self.h_c - i.h_c)
        h0 = hc + lam * (s0.h - hc)
        v0 = i.v_0 + lam * (s0.v - i.v_0)
        g0 = i.gamma_0 + lam * (s0.gamma - i.gamma_0)
        x1 = i.x_m + lam**2 * (self.bc.x_f - i.x_m)
        h1 = hc + lam * (self.bc.h_f - hc)
        g1 = i.gamma_m + lam * (self.bc.gamma_f - i.gamma_m)
        xi0 = np.array([s0.x, h0, v0, g0, s0.m])
        return Phase1Point(lam, hc, xi0, np.array([x1, h1, g1]))


def phase1_schedule(lam: float, bc: BoundaryConditions, h_c: float, init: Phase1Init = Phase1Init()) -> Phase1Point:
    return Phase1Schedule(bc, h_c, init)(lam)


@dataclass(frozen=True)
class Phase2Schedule:
    k_max: float = 100.0
    k_min: float = 2.0
    u_max_init: float = 25.0
    u_max: float = 2.0

    def __call__(self, theta: float) -> tuple[float, float]:
        if not 0.0 <= theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {theta}")
        k = self.k_max + theta * (self.k_min - self.k_max)
        umax = self.u_max_init + theta * (self.u_max - self.u_max_init)
        return k, umax


def phase2_schedule(theta: float, schedule: Phase2Schedule = Phase2Schedule()) -> tuple[float, float]:
    return schedule(theta)


# ---------------------------------------------------------------------------
# continuation engine


@dataclass(frozen=True)
class ContinuationConfig:
    delta_init: float = 0.001
    delta_min: float = 1e-6
    delta_max: float = 0.05
    predictor: str = "linear"
    max_attempts: int = 100_000

    def __post_init__(self):
        if not 0 < self.delta_min <= self.delta_init <= self.delta_max <= 1:
            raise ValueError("need 0 < delta_min <= delta_init <= delta_max <= 1")
        if self.predictor not in ("none", "linear"):
            raise ValueError("predictor must be 'none' or 'linear'")


@dataclass
class Attempt:
    param: float
    delta: float
    accepted: bool
    iterations: int
    residual_norm: float
    status: str
    Z: np.ndarray

    def record(self) -> dict:
        return {
            "param": self.param,
            "delta": self.delta,
            "accepted": self.accepted,
            "iterations": self.iterations,
            "residual_norm": self.residual_norm,
            "status": self.status,
            "Z": [float(v) for v in self.Z],
        }


@dataclass
class ContinuationTrace:
    attempts: list[Attempt] = field(default_factory=list)

    @property
    def accepted(self) -> list[Attempt]:
        return [a for a in self.attempts if a.accepted]

    @property
    def total_iterations(self) -> int:
        return sum(a.iterations for a in self.attempts)

    def summary(self) -> dict:
        acc = self.accepted
        return {
            "attempts": len(self.attempts),
            "accepted": len(acc),
            "rejected": len(self.attempts) - len(acc),
            "newton_iterations": self.total_iterations,
            "final_param": acc[-1].param if acc else None,
        }

    def records(self) -> list[dict]:
        return [a.record() for a in self.attempts]


class ContinuationError(RuntimeError):
    def __init__(self, message: str, param: float, Z_last, trace: ContinuationTrace):
        super().__init__(f"continuation failed at parameter {param:.6g}: {message}")
        self.param = param
        self.Z_last = Z_last
        self.trace = trace


def predict_linear(Z_prev, lam_prev: float, Z_curr, lam_curr: float, lam_next: float) -> np.ndarray:
    """Extrapolate the zero path along the secant through the last two solutions."""
    if not lam_curr > lam_prev:
        raise ValueError("linear prediction needs lam_curr > lam_prev")
    Z_prev = np.asarray(Z_prev, dtype=float)
    Z_curr = np.asarray(Z_curr, dtype=float)
    return Z_curr + (lam_next - lam_curr) / (lam_curr - lam_prev) * (Z_curr - Z_prev)


# solver(param, guess) -> (Z, report-like object with .converged/.iterations/...)
Solver = Callable[[float, np.ndarray], tuple]


def run_continuation(solver: Solver, Z_start, config: ContinuationConfig = ContinuationConfig(),
                     on_attempt: Callable[[Attempt], None] | None = None) -> tuple[np.ndarray, ContinuationTrace]:
    """Follow the zero path from parameter 0 to 1.

    The step doubles after each success (capped at ``delta_max``) and halves
    after each failure; the path is abandoned once the step falls below
    ``delta_min``.  The solve at parameter 0 is part of the trace.
    """
    trace = ContinuationTrace()

    def attempt(param, delta, guess):
        Z, rep = solver(param, np.asarray(guess, dtype=float))
        a = Attempt(param, delta, bool(rep.converged), int(rep.iterations), float(rep.final_residual_norm),
                    str(rep.status), np.array(Z, dtype=float))
        trace.attempts.append(a)
        log.debug("continuation attempt", extra={"attempt": a.record()})
        if on_attempt is not None:
            on_attempt(a)
        return a

    first = attempt(0.0, 0.0, Z_start)
    if not first.accepted:
        raise ContinuationError(f"no solution at the start ({first.status})", 0.0, np.asarray(Z_start), trace)
    lam = 0.0
    Z = first.Z
    history = [(0.0, Z)]
    delta = config.delta_init
    while lam < 1.0:
        if len(trace.attempts) >= config.max_attempts:
            raise ContinuationError("attempt budget exhausted", lam, Z, trace)
        delta = min(delta, 1.0 - lam)
        target = 1.0 if delta >= 1.0 - lam else lam + delta
        if config.predictor == "linear" and len(history) >= 2:
            (l0, Z0), (l1, Z1) = history[-2], history[-1]
            guess = predict_linear(Z0, l0, Z1, l1, target)
        else:
            guess = Z
        a = attempt(target, delta, guess)
        if a.accepted:
            lam, Z = target, a.Z
            history.append((lam, Z))
            delta = min(2.0 * delta, config.delta_max)
        else:
            delta *= 0.5
            if delta < config.delta_min:
                raise ContinuationError(f"step fell below {config.delta_min:g} ({a.status})", lam, Z, trace)
    return Z, trace
