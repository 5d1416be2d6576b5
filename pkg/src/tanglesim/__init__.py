"""Simulation and fluid-limit analysis of tip selection in a tangle ledger."""

__version__ = "0.1.0"

from .engine import RunTrace, ScenarioConfig, TangleSimulation, run_batch, simulate
from .fluid import FluidGrid, solve_fluid
from .selection import AgeWeighted, Hybrid, McmcWalk, Uniform, parse_policy
from .steady import (random_selection_fixed_point, solve_fixed_point,
                     verify_orphan_persistence)
from .tangle import TangleState
from .weights import WeightFunction, make_weight

__all__ = [
    "AgeWeighted", "FluidGrid", "Hybrid", "McmcWalk", "RunTrace",
    "ScenarioConfig", "TangleSimulation", "TangleState", "Uniform",
    "WeightFunction", "make_weight", "parse_policy",
    "random_selection_fixed_point", "run_batch", "simulate", "solve_fixed_point",
    "solve_fluid", "verify_orphan_persistence",
]
