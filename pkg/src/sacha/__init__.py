"""Heuristic-guided multi-agent soft actor-critic for partially observable MAPF."""
from .gridworld import Action, GridMap, JointState, MapfInstance, StepOutcome
from .kernels import BACKEND

__all__ = ["Action", "GridMap", "JointState", "MapfInstance", "StepOutcome", "BACKEND"]
__version__ = "0.1.0"
