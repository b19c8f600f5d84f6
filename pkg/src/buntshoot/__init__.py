"""Indirect shooting with two-phase continuation for the bunt guidance problem."""

from .model import BoundaryConditions, State, VehicleParams
from .pmp import CostWeights, ExtremalPoint
from .integrate import Trajectory, flow
from .scenario import Scenario, ScenarioError, load as load_scenario

__all__ = [
    "BoundaryConditions",
    "CostWeights",
    "ExtremalPoint",
    "Scenario",
    "ScenarioError",
    "State",
    "Trajectory",
    "VehicleParams",
    "flow",
    "load_scenario",
]

__version__ = "0.1.0"
