"""Session fixtures shared by the slow end-to-end tests.

The expensive solves (full default pipeline, the phase-1 continuation
without prediction, direct solves) run once per session.
"""

import dataclasses
import logging

import pytest

import acceptance_log
from buntshoot.pipeline import run_direct, run_pipeline
from buntshoot.scenario import load_shipped

logging.getLogger("numba").setLevel(logging.WARNING)


def pytest_terminal_summary(terminalreporter):
    if not acceptance_log.results:
        return
    terminalreporter.section("acceptance criteria")
    for line in acceptance_log.lines():
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def default_scenario():
    return load_shipped("bunt_default")


@pytest.fixture(scope="session")
def default_run(default_scenario):
    """Full two-phase solve of the default scenario, with every continuation attempt kept."""
    attempts = []
    report = run_pipeline(default_scenario, on_attempt=lambda phase, a: attempts.append((phase, a)))
    return report, attempts


@pytest.fixture(scope="session")
def phase1_without_predictor(default_scenario):
    sc = default_scenario
    cfg = dataclasses.replace(sc.phase1.continuation, predictor="none")
    sc = sc.with_(phase1=dataclasses.replace(sc.phase1, continuation=cfg))
    return run_pipeline(sc, phase1_only=True)


@pytest.fixture(scope="session")
def direct_default_fine(default_scenario):
    return run_direct(default_scenario, N=1000)


@pytest.fixture(scope="session")
def direct_cases():
    return {name: (load_shipped(name), run_direct(load_shipped(name), N=200)) for name in ("case1", "case2", "case3")}
