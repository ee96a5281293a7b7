"""Static traffic assignment engine and OD-router multi-agent PPO."""

from .kernels import BACKEND
from .network import (MAX_ROUTES, DemandMatrix, FlowState, Network, Objective, RouteSet,
                      bpr_time, load_network, marginal_time)

__version__ = "0.1.0"

__all__ = ["BACKEND", "MAX_ROUTES", "DemandMatrix", "FlowState", "Network", "Objective",
           "RouteSet", "bpr_time", "load_network", "marginal_time"]
