import math

import pytest
import yaml
from hypothesis import given, settings, strategies as st

from buntshoot.scenario import SHIPPED, Scenario, ScenarioError, dumps, load, load_shipped, loads, scenario_to_dict

CASES = {  # name: (gamma_0 [deg], gamma_f [deg], h_c [m])
    "bunt_default": (80.0, -80.0, 250.0),
    "case1": (45.0, -45.0, 1500.0),
    "case2": (80.0, -80.0, 250.0),
    "case3": (15.0, -15.0, 500.0),
}


def _doc():
    return yaml.safe_load(dumps(load_shipped("bunt_default")))


@pytest.mark.parametrize("name", SHIPPED)
def test_shipped_scenarios(name):
    sc = load_shipped(name)
    g0, gf, hc = CASES[name]
    assert sc.name == name
    assert sc.bc.xi0.gamma == math.radians(g0) and sc.bc.gamma_f == math.radians(gf)
    assert sc.h_c == hc
    assert (sc.bc.xi0.x, sc.bc.xi0.h, sc.bc.xi0.v, sc.bc.xi0.m) == (0.0, 0.0, 300.0, 600.0)
    assert (sc.bc.x_f, sc.bc.h_f) == (25_000.0, 0.0)
    assert load(name) == sc


def test_default_physical_constants():
    v = load_shipped("bunt_default").vehicle
    assert (v.d, v.c_d0, v.t_max, v.c_s, v.g, v.rho0, v.h_r) == (0.65, 0.4, 5000.0, 4e-4, 9.81, 1.225, 7314.0)
    assert (v.k0, v.k1, v.u_max) == (1.0, 1.0, 2.0)


@pytest.mark.parametrize("name", SHIPPED)
def test_round_trip_is_identity(name):
    sc = load_shipped(name)
    again = loads(dumps(sc))
    assert again == sc
    assert dumps(again) == dumps(sc)


@settings(max_examples=100, deadline=None)
@given(g0=st.floats(-89.9, 89.9), gf=st.floats(-89.9, 89.9), hc=st.floats(1.0, 5000.0),
       unit=st.sampled_from(["deg", "rad"]))
def test_round_trip_property(g0, gf, hc, unit):
    doc = _doc()
    doc["units"]["angle"] = unit
    scale = 1.0 if unit == "deg" else math.pi / 180
    doc["boundary"]["initial"]["gamma"] = g0 * scale
    doc["boundary"]["final"]["gamma"] = gf * scale
    doc["phase1"]["start"]["gamma_0"] = 0.0
    doc["phase1"]["start"]["gamma_m"] = 0.0
    doc["cost"]["h_c"] = hc
    sc = loads(yaml.safe_dump(doc))
    assert loads(dumps(sc)) == sc


def test_radian_file_matches_degree_file():
    doc = _doc()
    doc["units"]["angle"] = "rad"
    doc["boundary"]["initial"]["gamma"] = math.radians(80.0)
    doc["boundary"]["final"]["gamma"] = math.radians(-80.0)
    assert loads(yaml.safe_dump(doc)) == load_shipped("bunt_default")


@pytest.mark.parametrize("mutate, message", [
    (lambda d: d.pop("units"), "units"),
    (lambda d: d["units"].update(angle="grad"), "units.angle"),
    (lambda d: d["vehicle"].pop("t_max"), "t_max"),
    (lambda d: d["vehicle"].update(d=-1.0), "d"),
    (lambda d: d["boundary"]["initial"].update(v=0.0), "speed"),
    (lambda d: d["boundary"]["initial"].update(m=-5.0), "mass"),
    (lambda d: d["boundary"]["final"].update(v=1.0), "unknown"),
    (lambda d: d["cost"].update(h_c="high"), "number"),
    (lambda d: d["cost"].update(u_max=0.0), "u_max"),
    (lambda d: d["phase1"].update(initial_guess=[1, 2, 3]), "initial_guess"),
    (lambda d: d["phase1"]["continuation"].update(delta_init=0.5), "delta"),
    (lambda d: d["phase1"]["continuation"].update(predictor="cubic"), "predictor"),
    (lambda d: d["phase2"].update(k_min=0.0), "k_min"),
    (lambda d: d["solver"].update(phase1_tol=-1.0), "phase1_tol"),
    (lambda d: d["solver"].update(newton_max_iter=2.5), "newton_max_iter"),
    (lambda d: d["direct"].update(N=4), "N"),
    (lambda d: d["output"].update(samples=0), "samples"),
    (lambda d: d.update(colour="red"), "unknown"),
])
def test_validation_errors(mutate, message):
    doc = _doc()
    mutate(doc)
    with pytest.raises(ScenarioError, match=message):
        loads(yaml.safe_dump(doc))


def test_malformed_text():
    with pytest.raises(ScenarioError):
        loads("name: [unclosed")
    with pytest.raises(ScenarioError):
        loads("- just\n- a list\n")


def test_missing_file_and_unknown_shipped_name(tmp_path):
    with pytest.raises(OSError):
        load(tmp_path / "nope.yaml")
    with pytest.raises(ScenarioError):
        load_shipped("case9")


def test_optional_sections_default():
    doc = _doc()
    for key in ("phase1", "phase2", "solver", "direct", "output"):
        doc.pop(key)
    sc = loads(yaml.safe_dump(doc))
    assert sc == load_shipped("bunt_default")


def test_weights_and_schedule():
    sc = load_shipped("bunt_default")
    w = sc.final_weights()
    assert (w.k0, w.k1, w.k, w.u_max, w.h_c, w.lam) == (1.0, 1.0, 2.0, 2.0, 250.0, 1.0)
    assert sc.phase2_schedule(0.0) == (100.0, 25.0)
    assert isinstance(sc, Scenario) and scenario_to_dict(sc)["units"] == {"angle": "deg"}
