"""Opportunistic wireless routing toolkit: fluid simulation, graph-neural
routing policies driven by dual multipliers, and direct constrained solvers."""

__version__ = "0.1.0"

from . import autodiff, baselines, charts, gnn, losses, netsim, solvers, stateaug, topology
from .topology import (BudgetSplit, ChannelMatrix, FlowSpec, Topology, channel_from_distance,
                       generate_knn, load_graphml, perturb, save_graphml,
                       uniform_flows)

__all__ = [
    "__version__",
    "autodiff", "baselines", "charts", "gnn", "losses", "netsim", "solvers",
    "stateaug", "topology",
    "BudgetSplit", "ChannelMatrix", "FlowSpec", "Topology", "channel_from_distance",
    "generate_knn", "load_graphml", "perturb", "save_graphml", "uniform_flows",
]
