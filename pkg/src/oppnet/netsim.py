"""Fluid packet simulation: arrivals, queue recursion, constraint slack, utility.

Quantities are real-valued (fluid) per node and flow. The queue at node i for
flow k gains its own fresh arrivals plus the fraction of each neighbor's fresh
arrivals that was transmitted, delivered, and kept, and drains by the node's
transmit share of its capacity, clipped at zero. Destination rows are cleared
every step: delivered packets leave the system.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, DomainError, ParameterError
from .topology import ChannelMatrix, FlowSpec, Topology

ARRIVAL_DISTRIBUTIONS = ("exponential", "uniform", "constant")


@dataclass
class RoutingDecision:
    """Per-step routing choice: transmit shares, keep probabilities, packet rates."""

    transmit: np.ndarray  # (n, F) in [0, 1], rows sum to at most 1
    keep: np.ndarray      # (F, n, n); [k, i, j] = prob receiver i keeps sender j's packet
    packets: np.ndarray   # (n, F) non-negative committed packet rates

    def validate(self, channel: ChannelMatrix, arrivals: np.ndarray | None = None,
                 atol: float = 1e-9) -> None:
        """Check decision invariants; ``arrivals`` enables the minimum-rate check
        against the realized per-step arrivals."""
        n = channel.n
        num_flows = self.transmit.shape[1]
        if self.transmit.shape != (n, num_flows):
            raise ContractError(f"transmit shape {self.transmit.shape} != ({n}, F)")
        if self.keep.shape != (num_flows, n, n):
            raise ContractError(f"keep shape {self.keep.shape} != (F, {n}, {n})")
        if self.packets.shape != (n, num_flows):
            raise ContractError(f"packets shape {self.packets.shape} != ({n}, F)")
        if np.any(self.transmit < -atol) or np.any(self.transmit > 1 + atol):
            raise ContractError("transmit entries must lie in [0, 1]")
        if np.any(self.transmit.sum(axis=1) > 1 + atol):
            raise ContractError("per-node transmit shares must sum to at most 1")
        if np.any(self.keep < -atol) or np.any(self.keep > 1 + atol):
            raise ContractError("keep entries must lie in [0, 1]")
        if np.any(self.keep[:, ~channel.support] > atol):
            raise ContractError("keep must be zero on links with zero delivery probability")
        if np.any(self.packets < -atol):
            raise ContractError("packet rates must be non-negative")
        if arrivals is not None and np.any(self.packets < arrivals - atol):
            raise ContractError("packet rates must cover the realized arrivals")


@dataclass
class Trajectory:
    """Per-step simulation records over a fixed horizon."""

    spec: FlowSpec
    arrivals: list[np.ndarray] = field(default_factory=list)   # (n, F) per step
    decisions: list[RoutingDecision] = field(default_factory=list)
    queues: list[np.ndarray] = field(default_factory=list)     # state after each step
    slacks: list[np.ndarray] = field(default_factory=list)

    def append(self, a0: np.ndarray, decision: RoutingDecision,
               queue: np.ndarray, slack: np.ndarray) -> None:
        self.arrivals.append(a0)
        self.decisions.append(decision)
        self.queues.append(queue)
        self.slacks.append(slack)

    @property
    def horizon(self) -> int:
        return len(self.arrivals)

    def mean_packets(self) -> np.ndarray:
        """Time average of the committed packet rates, shape (n, F)."""
        return np.mean([d.packets for d in self.decisions], axis=0)

    def mean_slack(self) -> np.ndarray:
        return np.mean(self.slacks, axis=0)

    def mean_queue_series(self) -> np.ndarray:
        """Mean queue length over non-destination node/flow pairs, one value per step."""
        keep = ~self.spec.destination_mask()
        return np.array([q[keep].mean() for q in self.queues])

    def to_csv(self, path: str | Path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "node", "flow", "q", "a0", "a", "T", "slack"])
            for t in range(self.horizon):
                dec = self.decisions[t]
                for i in range(self.spec.n):
                    for k in range(self.spec.num_flows):
                        writer.writerow([
                            t, i, k,
                            repr(float(self.queues[t][i, k])),
                            repr(float(self.arrivals[t][i, k])),
                            repr(float(dec.packets[i, k])),
                            repr(float(dec.transmit[i, k])),
                            repr(float(self.slacks[t][i, k])),
                        ])


def sample_arrivals(spec: FlowSpec, rng: np.random.Generator,
                    distribution: str = "exponential") -> np.ndarray:
    """Draw one step of i.i.d. arrivals with the configured per-entry means.

    Supported laws: exponential (mean m), uniform on [0, 2m], constant m.
    Destination entries are forced to zero.
    """
    mean = spec.arrival_mean
    if distribution == "exponential":
        draws = rng.exponential(scale=mean)
    elif distribution == "uniform":
        draws = rng.uniform(low=0.0, high=2.0 * mean)
    elif distribution == "constant":
        draws = mean.copy()
    else:
        raise ParameterError(
            f"unknown arrival distribution {distribution!r}; "
            f"expected one of {ARRIVAL_DISTRIBUTIONS}")
    draws[spec.destination_mask()] = 0.0
    return draws


def weighted_inflow(transmit: np.ndarray, keep: np.ndarray,
                    probs: np.ndarray, packets: np.ndarray) -> np.ndarray:
    """Delivered-and-kept packets per receiver: sum_j T_j R_ij K_ij x_j, shape (n, F)."""
    send = transmit * packets
    return np.einsum("ij,kij,jk->ik", probs, keep, send)


def _check_shapes(q, a0, dec: RoutingDecision, channel: ChannelMatrix,
                  topo: Topology, spec: FlowSpec) -> None:
    n, num_flows = spec.n, spec.num_flows
    expected = (n, num_flows)
    if q.shape != expected or a0.shape != expected:
        raise ContractError(
            f"queue/arrival shapes {q.shape}/{a0.shape} != {expected}")
    if channel.n != n or topo.n != n:
        raise ContractError("channel/topology node counts disagree with the flow spec")
    if dec.transmit.shape != expected or dec.packets.shape != expected:
        raise ContractError("decision shapes disagree with the flow spec")
    if dec.keep.shape != (num_flows, n, n):
        raise ContractError("keep tensor shape disagrees with the flow spec")


def step_queues(q: np.ndarray, a0: np.ndarray, dec: RoutingDecision,
                channel: ChannelMatrix, topo: Topology, spec: FlowSpec) -> np.ndarray:
    """One queue update: gains from fresh arrivals (own and kept neighbor
    traffic), drain by the transmit share of capacity, clipped at zero.

    Destination rows are zeroed: packets arriving at their flow's destination
    leave the system.
    """
    _check_shapes(q, a0, dec, channel, topo, spec)
    inflow = weighted_inflow(dec.transmit, dec.keep, channel.probs, a0)
    drain = dec.transmit * topo.capacity[:, None]
    nxt = np.maximum(q + a0 + inflow - drain, 0.0)
    nxt[spec.destination_mask()] = 0.0
    return nxt


def constraint_slack(dec: RoutingDecision, channel: ChannelMatrix,
                     topo: Topology) -> np.ndarray:
    """Routing-constraint margin T_i C_i - a_i - sum_j T_j R_ij K_ij a_j.

    Positive entries mean the constraint is satisfied. Uses the committed
    packet rates (decision.packets), not the raw arrivals.
    """
    if dec.transmit.shape[0] != channel.n or topo.n != channel.n:
        raise ContractError("decision/channel/topology node counts disagree")
    inflow = weighted_inflow(dec.transmit, dec.keep, channel.probs, dec.packets)
    return dec.transmit * topo.capacity[:, None] - dec.packets - inflow


def utility(traj: Trajectory) -> float:
    """Sum over flows and non-destination nodes of log time-averaged packet rate."""
    mean_packets = traj.mean_packets()
    keep = ~traj.spec.destination_mask()
    values = mean_packets[keep]
    if np.any(values <= 0):
        bad = int(np.sum(values <= 0))
        raise DomainError(
            f"utility undefined: {bad} non-destination time-averaged packet "
            "rates are not strictly positive")
    return float(np.log(values).sum())


def queue_growth_rate(traj: Trajectory, window: int) -> float:
    """Least-squares slope of the mean queue length over the final window steps."""
    if window < 2:
        raise ParameterError(f"window must be >= 2, got {window}")
    if window > traj.horizon:
        raise ParameterError(
            f"window {window} exceeds trajectory horizon {traj.horizon}")
    series = traj.mean_queue_series()[-window:]
    x = np.arange(window, dtype=np.float64)
    return float(np.polyfit(x, series, 1)[0])


def jittered_channels(channel: ChannelMatrix, horizon: int,
                      rng: np.random.Generator, amplitude: float) -> list[ChannelMatrix]:
    """Optional time-varying channel: multiplicative noise per step, clipped to [0, 1]."""
    if amplitude < 0:
        raise ParameterError("amplitude must be non-negative")
    out = []
    for _ in range(horizon):
        factor = 1.0 + rng.uniform(-amplitude, amplitude, size=channel.probs.shape)
        probs = np.clip(channel.probs * factor, 0.0, 1.0)
        probs[~channel.support] = 0.0
        np.fill_diagonal(probs, 0.0)
        out.append(ChannelMatrix(probs=probs))
    return out


def rollout(channel, topo: Topology, spec: FlowSpec, decide_fn, horizon: int,
            rng: np.random.Generator, arrival_dist: str = "exponential") -> Trajectory:
    """Run a policy for a fixed horizon and record the full trajectory.

    ``decide_fn(t, a0, q, channel_t)`` must return a RoutingDecision;
    ``channel`` may be a single ChannelMatrix or a per-step sequence.
    """
    traj = Trajectory(spec=spec)
    q = np.zeros((spec.n, spec.num_flows))
    for t in range(horizon):
        channel_t = channel[t] if isinstance(channel, (list, tuple)) else channel
        a0 = sample_arrivals(spec, rng, arrival_dist)
        dec = decide_fn(t, a0, q, channel_t)
        slack = constraint_slack(dec, channel_t, topo)
        q = step_queues(q, a0, dec, channel_t, topo, spec)
        traj.append(a0, dec, q, slack)
    return traj
