"""Non-learning opportunistic-forwarding baseline.

Each node ranks its neighbors by expected transmission count to the flow's
destination (shortest path under edge weight 1/R). A sender's traffic is kept
by its single best-ranked neighbor; transmit shares split capacity evenly
across the flows active at a node.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import ContractError
from .netsim import RoutingDecision
from .topology import ChannelMatrix, FlowSpec


@dataclass(frozen=True)
class ForwarderList:
    """Per-flow, per-node candidate forwarders ordered by expected cost.

    ``candidates[k][j]`` lists (cost, receiver) pairs for sender j on flow k,
    best first; unreachable candidates (infinite cost) are excluded.
    """

    costs: np.ndarray  # (n, F) expected transmissions to each flow's destination
    candidates: tuple[tuple[tuple[tuple[float, int], ...], ...], ...]

    def best(self, flow: int, sender: int) -> int | None:
        ranked = self.candidates[flow][sender]
        return ranked[0][1] if ranked else None


def exor_costs(channel: ChannelMatrix, spec: FlowSpec) -> np.ndarray:
    """Expected-transmission-count to each flow's destination, shape (n, F).

    A hop from sender j to receiver i costs 1/R_ij. Nodes that cannot reach
    the destination get infinite cost rather than an error.
    """
    if channel.n != spec.n:
        raise ContractError("channel and flow spec node counts disagree")
    n = channel.n
    # Walking arcs (i -> j) with weight 1/R_ij from the destination traverses
    # physical hops j -> i in reverse, so a single pass per flow suffices.
    with np.errstate(divide="ignore"):
        weights = np.where(channel.support, 1.0 / channel.probs, 0.0)
    graph = csr_matrix(weights)
    costs = np.empty((n, spec.num_flows))
    for k, dest in enumerate(spec.destination):
        costs[:, k] = dijkstra(graph, directed=True, indices=dest)
    return costs


def build_forwarder_lists(channel: ChannelMatrix, spec: FlowSpec,
                          costs: np.ndarray | None = None) -> ForwarderList:
    if costs is None:
        costs = exor_costs(channel, spec)
    per_flow = []
    for k in range(spec.num_flows):
        per_node = []
        for j in range(channel.n):
            ranked = sorted(
                (float(costs[i, k]), int(i))
                for i in np.flatnonzero(channel.support[:, j])
                if np.isfinite(costs[i, k]))
            per_node.append(tuple(ranked))
        per_flow.append(tuple(per_node))
    return ForwarderList(costs=costs, candidates=tuple(per_flow))


def exor_decide(costs: np.ndarray, channel: ChannelMatrix, spec: FlowSpec,
                a0: np.ndarray, queues: np.ndarray | None = None) -> RoutingDecision:
    """Deterministic decision: capacity split evenly over active flows; each
    sender's packets kept only by its cheapest forwarder (ties to the lowest
    node id); committed rates equal the arrivals."""
    n, num_flows = spec.n, spec.num_flows
    if a0.shape != (n, num_flows):
        raise ContractError(f"arrivals must be ({n}, {num_flows}), got {a0.shape}")
    if queues is None:
        queues = np.zeros((n, num_flows))

    active = (a0 > 0) | (queues > 0)
    counts = active.sum(axis=1)
    transmit = np.zeros((n, num_flows))
    rows = counts > 0
    transmit[rows] = active[rows] / counts[rows, None]

    # Rank nodes by (cost, id); each sender's best-ranked in-range receiver keeps.
    keep = np.zeros((num_flows, n, n))
    ids = np.arange(n)
    for k in range(num_flows):
        order = np.lexsort((ids, costs[:, k]))
        rank = np.empty(n, dtype=np.int64)
        rank[order] = ids
        reachable = np.isfinite(costs[:, k])
        candidate_rank = np.where(channel.support & reachable[:, None], rank[:, None], n)
        best = candidate_rank.argmin(axis=0)
        has_candidate = candidate_rank.min(axis=0) < n
        for j in np.flatnonzero(has_candidate):
            keep[k, best[j], j] = 1.0

    return RoutingDecision(transmit=transmit, keep=keep, packets=a0.copy())
