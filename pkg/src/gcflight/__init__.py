"""Gravity-compensation-first force allocation, horizon planning and flight simulation."""

__version__ = "0.1.0"

from .alloc import AllocProblem, Allocation, PDGains, solve_lexicographic, solve_weighted
from .core import Ball, Box, DomainError, FeasibleSet, InfeasibleSetError, Intersection
from .horizon import HeightGrid, HorizonGrid, HorizonProblem, solve_horizon
from .sim import ControllerSpec, ReferenceSpec, ScenarioConfig, compute_metrics, run_scenario

__all__ = [
    "AllocProblem", "Allocation", "PDGains", "solve_lexicographic", "solve_weighted",
    "Ball", "Box", "DomainError", "FeasibleSet", "InfeasibleSetError", "Intersection",
    "HeightGrid", "HorizonGrid", "HorizonProblem", "solve_horizon",
    "ControllerSpec", "ReferenceSpec", "ScenarioConfig", "compute_metrics", "run_scenario",
]
