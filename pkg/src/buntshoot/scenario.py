"""Scenario files: vehicle, boundary data, cost weights and solver settings.

Scenarios are YAML documents with nested sections.  Angles are stored in
radians internally; the file declares the unit of every angle it contains
through ``units.angle`` (``deg`` or ``rad``), which is mandatory.

Layout::

    name: bunt_default
    units: {angle: deg}
    vehicle: {d, c_d0, t_max, c_s, g, rho0, h_r}
    cost: {k0, k1, h_c, u_max}
    boundary:
      initial: {x, h, v, gamma, m}
      final: {x, h, gamma}
    phase1:
      initial_guess: [p_x, p_h, p_v, p_gamma, p_m, t_f]
      start: {h_c, x_m, gamma_0, gamma_m, v_0}
      continuation: {delta_init, delta_min, delta_max, predictor}
    phase2:
      k_max, k_min, u_max_init
      continuation: {...}
    solver: {phase1_tol, phase2_tol, newton_max_iter, rtol, atol, phase2_rtol, phase2_atol, reduced}
    direct: {N}
    output: {samples}

Every section except ``name``, ``units``, ``vehicle``, ``cost`` and
``boundary`` is optional and falls back to the defaults below.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import yaml

from .homotopy import ContinuationConfig, Phase1Init, Phase2Schedule
from .model import BoundaryConditions, State, VehicleParams
from .pmp import CostWeights

SHIPPED = ("bunt_default", "case1", "case2", "case3")


class ScenarioError(ValueError):
    """The scenario document is malformed or violates a physical constraint."""


@dataclass(frozen=True)
class SolverSettings:
    phase1_tol: float = 1e-10
    phase2_tol: float = 1e-8
    newton_max_iter: int = 10
    rtol: float = 1e-10
    atol: float = 1e-12
    # the phase-2 half-flows need tighter integration for the FD Jacobian
    phase2_rtol: float = 1e-12
    phase2_atol: float = 1e-14
    reduced: bool = False

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "reduced":
                if not isinstance(v, bool):
                    raise ScenarioError("solver.reduced must be a boolean")
            elif not (v > 0 and math.isfinite(v)):
                raise ScenarioError(f"solver.{f.name} must be positive, got {v!r}")
        if int(self.newton_max_iter) != self.newton_max_iter:
            raise ScenarioError("solver.newton_max_iter must be an integer")


@dataclass(frozen=True)
class Phase1Settings:
    initial_guess: tuple = (0.5, 1.0, 1.0, 1.0, 1.0, 6.0)
    start: Phase1Init = Phase1Init()
    continuation: ContinuationConfig = ContinuationConfig(delta_init=0.001)

    def __post_init__(self):
        g = tuple(float(v) for v in self.initial_guess)
        if len(g) != 6 or not all(math.isfinite(v) for v in g) or g[5] <= 0:
            raise ScenarioError("phase1.initial_guess needs 6 finite numbers with a positive final time")
        object.__setattr__(self, "initial_guess", g)


@dataclass(frozen=True)
class Phase2Settings:
    k_max: float = 100.0
    k_min: float = 2.0
    u_max_init: float = 25.0
    continuation: ContinuationConfig = ContinuationConfig(delta_init=0.005)

    def __post_init__(self):
        if not (self.k_max >= self.k_min > 0):
            raise ScenarioError("phase2 needs k_max >= k_min > 0")
        if not self.u_max_init > 0:
            raise ScenarioError("phase2.u_max_init must be positive")


@dataclass(frozen=True)
class Scenario:
    name: str
    vehicle: VehicleParams
    bc: BoundaryConditions
    phase1: Phase1Settings = Phase1Settings()
    phase2: Phase2Settings = Phase2Settings()
    solver: SolverSettings = SolverSettings()
    direct_N: int = 200
    samples: int = 1000
    angle_unit: str = field(default="deg", compare=False)

    def __post_init__(self):
        if not self.name:
            raise ScenarioError("scenario name must be non-empty")
        s = self.bc.xi0
        if not (s.v > 0 and s.m > 0):
            raise ScenarioError("initial speed and mass must be positive")
        if self.direct_N < 10:
            raise ScenarioError("direct.N must be at least 10")
        if self.samples < 1:
            raise ScenarioError("output.samples must be at least 1")

    # derived problem data

    @property
    def h_c(self) -> float:
        return self.vehicle.h_c

    @property
    def phase2_schedule(self) -> Phase2Schedule:
        p = self.phase2
        return Phase2Schedule(p.k_max, p.k_min, p.u_max_init, self.vehicle.u_max)

    def weights(self, k: float, u_max: float, h_c: float | None = None, lam: float = 1.0) -> CostWeights:
        v = self.vehicle
        return CostWeights(v.k0, v.k1, k, u_max, self.h_c if h_c is None else h_c, lam)

    def final_weights(self) -> CostWeights:
        """Weights of the regularized target problem (end of the second continuation)."""
        return self.weights(self.phase2.k_min, self.vehicle.u_max)

    def with_(self, **changes) -> "Scenario":
        return replace(self, **changes)

    # serialization

    def to_dict(self) -> dict:
        return scenario_to_dict(self)

    def dump(self, path) -> None:
        Path(path).write_text(dumps(self))


# ---------------------------------------------------------------------------
# parsing

_VEHICLE_KEYS = ("d", "c_d0", "t_max", "c_s", "g", "rho0", "h_r")
_COST_KEYS = ("k0", "k1", "h_c", "u_max")
_CONT_KEYS = ("delta_init", "delta_min", "delta_max", "predictor")


def _section(doc, key: str, required: bool = True) -> dict:
    if key not in doc:
        if required:
            raise ScenarioError(f"missing section {key!r}")
        return {}
    sec = doc[key]
    if not isinstance(sec, dict):
        raise ScenarioError(f"section {key!r} must be a mapping")
    return sec


def _check_keys(sec: dict, allowed, where: str, required=()) -> None:
    unknown = set(sec) - set(allowed)
    if unknown:
        raise ScenarioError(f"unknown key(s) in {where}: {sorted(unknown)}")
    missing = [k for k in required if k not in sec]
    if missing:
        raise ScenarioError(f"missing key(s) in {where}: {missing}")


def _number(sec: dict, key: str, where: str) -> float:
    v = sec[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"{where}.{key} must be a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise ScenarioError(f"{where}.{key} must be finite")
    return v


def _continuation(sec: dict, where: str, default: ContinuationConfig) -> ContinuationConfig:
    _check_keys(sec, _CONT_KEYS, where)
    kw = {k: _number(sec, k, where) for k in _CONT_KEYS[:3] if k in sec}
    if "predictor" in sec:
        kw["predictor"] = str(sec["predictor"])
    try:
        return replace(default, **kw)
    except ValueError as exc:
        raise ScenarioError(f"{where}: {exc}") from exc


def scenario_from_dict(doc) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a mapping")
    _check_keys(doc, ("name", "units", "vehicle", "cost", "boundary", "phase1", "phase2", "solver", "direct",
                      "output"), "scenario", required=("name", "units", "vehicle", "cost", "boundary"))
    units = _section(doc, "units")
    _check_keys(units, ("angle",), "units", required=("angle",))
    unit = units["angle"]
    if unit not in ("deg", "rad"):
        raise ScenarioError(f"units.angle must be 'deg' or 'rad', got {unit!r}")
    to_rad = math.radians if unit == "deg" else float

    veh = _section(doc, "vehicle")
    _check_keys(veh, _VEHICLE_KEYS, "vehicle", required=_VEHICLE_KEYS)
    cost = _section(doc, "cost")
    _check_keys(cost, _COST_KEYS, "cost", required=_COST_KEYS)
    try:
        vehicle = VehicleParams(**{k: _number(veh, k, "vehicle") for k in _VEHICLE_KEYS},
                                **{k: _number(cost, k, "cost") for k in _COST_KEYS})
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc

    bnd = _section(doc, "boundary")
    _check_keys(bnd, ("initial", "final"), "boundary", required=("initial", "final"))
    ini = _section(bnd, "initial")
    _check_keys(ini, ("x", "h", "v", "gamma", "m"), "boundary.initial", required=("x", "h", "v", "gamma", "m"))
    fin = _section(bnd, "final")
    _check_keys(fin, ("x", "h", "gamma"), "boundary.final", required=("x", "h", "gamma"))
    n = {k: _number(ini, k, "boundary.initial") for k in ini}
    xi0 = State(n["x"], n["h"], n["v"], to_rad(n["gamma"]), n["m"])
    if not xi0.is_physical():
        raise ScenarioError("initial speed and mass must be positive")
    bc = BoundaryConditions(xi0, _number(fin, "x", "boundary.final"), _number(fin, "h", "boundary.final"),
                            to_rad(_number(fin, "gamma", "boundary.final")))

    p1 = _section(doc, "phase1", required=False)
    _check_keys(p1, ("initial_guess", "start", "continuation"), "phase1")
    d1 = Phase1Settings()
    start = d1.start
    if "start" in p1:
        st = _section(p1, "start")
        names = [f.name for f in fields(Phase1Init)]
        _check_keys(st, names, "phase1.start")
        kw = {k: _number(st, k, "phase1.start") for k in st}
        for k in ("gamma_0", "gamma_m"):
            if k in kw:
                kw[k] = to_rad(kw[k])
        start = replace(start, **kw)
    guess = p1.get("initial_guess", d1.initial_guess)
    if not isinstance(guess, (list, tuple)):
        raise ScenarioError("phase1.initial_guess must be a list of 6 numbers")
    phase1 = Phase1Settings(tuple(guess), start,
                            _continuation(_section(p1, "continuation", False), "phase1.continuation", d1.continuation))

    p2 = _section(doc, "phase2", required=False)
    _check_keys(p2, ("k_max", "k_min", "u_max_init", "continuation"), "phase2")
    d2 = Phase2Settings()
    phase2 = Phase2Settings(**{k: _number(p2, k, "phase2") for k in ("k_max", "k_min", "u_max_init") if k in p2},
                            continuation=_continuation(_section(p2, "continuation", False), "phase2.continuation",
                                                       d2.continuation))

    sv = _section(doc, "solver", required=False)
    names = [f.name for f in fields(SolverSettings)]
    _check_keys(sv, names, "solver")
    kw = {}
    for k, v in sv.items():
        if k == "reduced":
            kw[k] = v
        elif k == "newton_max_iter":
            if isinstance(v, bool) or not isinstance(v, int):
                raise ScenarioError("solver.newton_max_iter must be an integer")
            kw[k] = v
        else:
            kw[k] = _number(sv, k, "solver")
    solver = SolverSettings(**kw)

    direct = _section(doc, "direct", required=False)
    _check_keys(direct, ("N",), "direct")
    out = _section(doc, "output", required=False)
    _check_keys(out, ("samples",), "output")
    for sec, key in ((direct, "N"), (out, "samples")):
        if key in sec and (isinstance(sec[key], bool) or not isinstance(sec[key], int)):
            raise ScenarioError(f"{key} must be an integer")
    name = doc["name"]
    if not isinstance(name, str):
        raise ScenarioError("name must be a string")
    return Scenario(name, vehicle, bc, phase1, phase2, solver, direct.get("N", 200), out.get("samples", 1000), unit)


def loads(text: str) -> Scenario:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"invalid YAML: {exc}") from exc
    return scenario_from_dict(doc)


def load(path) -> Scenario:
    """Load a scenario file, or a shipped scenario by name (``bunt_default``, ``case1``...)."""
    p = Path(path)
    if not p.exists() and str(path) in SHIPPED:
        return load_shipped(str(path))
    try:
        text = p.read_text()
    except OSError as exc:
        raise OSError(f"cannot read scenario {p}: {exc.strerror}") from exc
    return loads(text)


def load_shipped(name: str) -> Scenario:
    if name not in SHIPPED:
        raise ScenarioError(f"no shipped scenario {name!r}; available: {', '.join(SHIPPED)}")
    text = resources.files("buntshoot").joinpath("scenarios").joinpath(f"{name}.yaml").read_text()
    return loads(text)


# ---------------------------------------------------------------------------
# serialization


def _degrees_exact(r: float) -> float | None:
    """A degree value that converts back to exactly ``r`` radians, if one is close by."""
    d = math.degrees(r)
    lo = hi = d
    cands = [d]
    for _ in range(4):
        lo = math.nextafter(lo, -math.inf)
        hi = math.nextafter(hi, math.inf)
        cands += [lo, hi]
    for c in cands:
        if math.radians(c) == r:
            return c
    return None


def scenario_to_dict(sc: Scenario) -> dict:
    angles = [sc.bc.xi0.gamma, sc.bc.gamma_f, sc.phase1.start.gamma_0, sc.phase1.start.gamma_m]
    unit = sc.angle_unit
    if unit == "deg":
        conv = [_degrees_exact(a) for a in angles]
        if any(c is None for c in conv):
            unit = "rad"  # keep the round trip exact
    if unit == "rad":
        conv = list(angles)
    g0, gf, s_g0, s_gm = conv
    v = sc.vehicle
    s = sc.bc.xi0

    def cont(c: ContinuationConfig) -> dict:
        return {"delta_init": c.delta_init, "delta_min": c.delta_min, "delta_max": c.delta_max,
                "predictor": c.predictor}

    start = asdict(sc.phase1.start)
    start["gamma_0"], start["gamma_m"] = s_g0, s_gm
    return {
        "name": sc.name,
        "units": {"angle": unit},
        "vehicle": {k: getattr(v, k) for k in _VEHICLE_KEYS},
        "cost": {k: getattr(v, k) for k in _COST_KEYS},
        "boundary": {
            "initial": {"x": s.x, "h": s.h, "v": s.v, "gamma": g0, "m": s.m},
            "final": {"x": sc.bc.x_f, "h": sc.bc.h_f, "gamma": gf},
        },
        "phase1": {
            "initial_guess": list(sc.phase1.initial_guess),
            "start": start,
            "continuation": cont(sc.phase1.continuation),
        },
        "phase2": {
            "k_max": sc.phase2.k_max,
            "k_min": sc.phase2.k_min,
            "u_max_init": sc.phase2.u_max_init,
            "continuation": cont(sc.phase2.continuation),
        },
        "solver": asdict(sc.solver),
        "direct": {"N": sc.direct_N},
        "output": {"samples": sc.samples},
    }


def dumps(sc: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(sc), sort_keys=False)
