"""Moving-boundary erosion model for carbonate stone.

Coupled moisture transport, carbonic-acid transport and reaction, and
porosity growth, discretised with a level-set ghost-point finite-difference
scheme on a uniform Cartesian grid.
"""

from .absorption import AsymmetricParams, SymmetricParams, make_law
from .domain import Grid, GridClassification, classify
from .physics import (
    Ambient,
    AmbientSchedule,
    ModelParams,
    Scenario,
    SimulationState,
    ambient_humidity,
    initial_state,
    make_scenario,
)
from .solver import Simulation, StepReport, step

__version__ = "0.1.0"

__all__ = [
    "AsymmetricParams",
    "SymmetricParams",
    "make_law",
    "Grid",
    "GridClassification",
    "classify",
    "Ambient",
    "AmbientSchedule",
    "ModelParams",
    "Scenario",
    "SimulationState",
    "ambient_humidity",
    "initial_state",
    "make_scenario",
    "Simulation",
    "StepReport",
    "step",
    "__version__",
]
