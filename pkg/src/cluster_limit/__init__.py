"""Cluster limits of point processes built from stationary heavy-tailed sequences.

Modules
-------
measure_core
    Finite point measures on punctured spaces and test functions.
models
    Stationary sequences with known tails and normalising levels.
blocks
    Block decomposition and the block statistics of the cluster limit theorem.
limits
    Canonical measures, their Laplace functionals and samplers.
verify
    Convergence reports comparing the two sides.
cli
    YAML-driven command line front end.
"""
from .measure_core import PointMeasure, SpaceSpec, TestFunction, REAL_LINE, UNIT_TIME
from .models import AR1RegVar, AssociatedLinear, IidPareto, MovingMax

__version__ = "0.1.0"

__all__ = ["PointMeasure", "SpaceSpec", "TestFunction", "REAL_LINE", "UNIT_TIME",
           "IidPareto", "MovingMax", "AR1RegVar", "AssociatedLinear"]
