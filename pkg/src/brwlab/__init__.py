"""Simulation and estimation for the minimum of a branching random walk in the boundary case."""
from .offspring import PointProcessModel, binary_gaussian, make_model, one_child, poisson_gaussian
from .stats import EstimateWithCI
from .streams import Campaign

__version__ = "0.1.0"

__all__ = ["PointProcessModel", "binary_gaussian", "poisson_gaussian", "one_child", "make_model",
           "EstimateWithCI", "Campaign", "__version__"]
