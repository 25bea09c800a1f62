"""Distributed online saddle-point dynamics with relaxed consensus."""

from .dynamics import EngineConfig, SystemState, run, step
from .graph import Graph, build_graph, diameter, neighbors
from .metrics import TrajectoryLog
from .oracle import OracleResult, grid_oracle, subgradient_oracle
from .problem import ActionSet, ProblemSpec, SaturatedProblem, ball, box
from .scenarios import make_scenario

__version__ = "0.1.0"

__all__ = [
    "ActionSet",
    "EngineConfig",
    "Graph",
    "OracleResult",
    "ProblemSpec",
    "SaturatedProblem",
    "SystemState",
    "TrajectoryLog",
    "ball",
    "box",
    "build_graph",
    "diameter",
    "grid_oracle",
    "make_scenario",
    "neighbors",
    "run",
    "step",
    "subgradient_oracle",
]
