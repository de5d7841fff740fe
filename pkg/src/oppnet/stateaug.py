"""Dual-augmented policy training and execution.

Training draws, per batch element, a multiplier matrix from a uniform range
and a fresh network instance, rolls the policy out with the multipliers fed
as the second feature column, and ascends the expected augmented Lagrangian
with Adam. One trained parameter set then serves every multiplier value: at
run time the multipliers start at zero and follow projected gradient steps on
the windowed slack, steering the same policy toward constraint satisfaction
without re-optimization.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import netsim
from .autodiff import AdamState, Tape, Tensor, adam_step, backward, zero_grads
from .errors import ContractError, NumericHealthError, ParameterError
from .gnn import GnnParams, build_flow_features, decide, decide_tensors, init_params
from .losses import log_utility, slack_tensors, violation_penalty
from .netsim import RoutingDecision, Trajectory
from .topology import (ChannelMatrix, FlowSpec, Topology, channel_from_distance,
                       generate_knn, uniform_flows)


@dataclass
class DualState:
    """Multipliers plus their update schedule: period in steps and step size."""

    mu: np.ndarray  # (n, F) non-negative
    period: int = 5
    rate: float = 0.05

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        if np.any(self.mu < 0):
            raise ContractError("dual multipliers must be non-negative")
        if self.period < 1:
            raise ParameterError("period must be >= 1")
        if self.rate < 0:
            raise ParameterError("rate must be non-negative")


@dataclass(frozen=True)
class TrainConfig:
    horizon: int = 100          # steps per rollout
    period: int = 5             # multiplier update period (recording windows)
    batch: int = 16
    epochs: int = 30
    lr: float = 0.05            # Adam step size on the policy parameters
    rho: float = 0.005          # violation penalty weight
    rho_decay: float = 0.98     # multiplied in per epoch
    mu_low: float = 1.0         # multiplier sampling range
    mu_high: float = 5.0
    seed: int = 0
    arrival_dist: str = "exponential"
    widths: tuple[int, ...] = (2, 16, 8)
    taps: int = 2
    nonlinearity: str = "relu"
    gso_normalization: str = "none"

    def __post_init__(self):
        if self.horizon < 1 or self.period < 1 or self.horizon % self.period != 0:
            raise ParameterError(
                f"period {self.period} must evenly divide horizon {self.horizon}")
        if self.batch < 1:
            raise ParameterError("batch must be >= 1")
        if self.epochs < 0:
            raise ParameterError("epochs must be >= 0")
        if self.lr <= 0:
            raise ParameterError("lr must be positive")
        if self.rho < 0 or not (0 < self.rho_decay <= 1):
            raise ParameterError("rho must be >= 0 and rho_decay in (0, 1]")
        if not (0 <= self.mu_low <= self.mu_high):
            raise ParameterError("multiplier bounds must satisfy 0 <= low <= high")
        if self.widths[0] != 2:
            raise ParameterError(
                "dual-augmented policies take two feature columns (arrivals, dual)")


@dataclass
class EpochStats:
    epoch: int
    lagrangian: float
    utility: float
    mean_violation: float


@dataclass
class TrainResult:
    params: GnnParams
    history: list[EpochStats]


@dataclass
class ExecutionResult:
    trajectory: Trajectory
    dual_history: list[np.ndarray]  # multipliers after each windowed update

    @property
    def decisions(self) -> list[RoutingDecision]:
        return self.trajectory.decisions


def knn_sampler(n: int, k: int, num_flows: int,
                arrival_mean,
                capacity: float = 10.0, d_c: float = 1.0):
    """Instance sampler for training: fresh geometric graph, channel, and
    random distinct destinations per draw. ``arrival_mean`` takes any form
    uniform_flows accepts (scalar, (low, high) range, or BudgetSplit)."""

    def sample(rng: np.random.Generator) -> tuple[Topology, ChannelMatrix, FlowSpec]:
        topo_seed = int(rng.integers(0, 2 ** 31))
        topo = generate_knn(n, k, seed=topo_seed, capacity=capacity)
        channel = channel_from_distance(topo, d_c)
        spec = uniform_flows(topo, num_flows, arrival_mean, seed=rng)
        return topo, channel, spec

    return sample


def sample_duals(spec: FlowSpec, rng: np.random.Generator,
                 low: float, high: float) -> np.ndarray:
    """Uniform multiplier draw with destination entries forced to zero."""
    mu = rng.uniform(low, high, size=(spec.n, spec.num_flows))
    mu[spec.destination_mask()] = 0.0
    return mu


def _lagrangian_terms(mean_packets, mean_slack, mu: np.ndarray, rho: float,
                      dest_mask: np.ndarray):
    utility = log_utility(mean_packets, dest_mask)
    price = ad.tensor_sum(ad.mul(Tensor(mu), mean_slack))
    penalty = violation_penalty(mean_slack, rho)
    return ad.sub(ad.add(utility, price), penalty), utility


def rollout_lagrangian(params: GnnParams, topo: Topology, channel: ChannelMatrix,
                       spec: FlowSpec, mu: np.ndarray, rho: float, horizon: int,
                       rng: np.random.Generator,
                       arrival_dist: str = "exponential"
                       ) -> tuple[Tensor, EpochStats]:
    """Differentiable rollout value: log utility of the time-averaged packet
    rates, plus the multiplier-weighted time-averaged slack, minus the
    violation penalty. Queues never enter the value: it depends on the
    decisions alone, so simulation state needs no gradient."""
    packet_sum = None
    slack_sum = None
    for _ in range(horizon):
        a0 = netsim.sample_arrivals(spec, rng, arrival_dist)
        features = build_flow_features(a0, mu)
        transmit, keep, packets = decide_tensors(channel, features, params, a0)
        slack = slack_tensors(transmit, keep, packets, channel.probs, topo.capacity)
        packet_sum = packets if packet_sum is None else ad.add(packet_sum, packets)
        slack_sum = slack if slack_sum is None else ad.add(slack_sum, slack)
    mean_packets = ad.mul(packet_sum, 1.0 / horizon)
    mean_slack = ad.mul(slack_sum, 1.0 / horizon)
    value, utility = _lagrangian_terms(mean_packets, mean_slack, mu, rho,
                                       spec.destination_mask())
    stats = EpochStats(
        epoch=-1,
        lagrangian=value.item(),
        utility=utility.item(),
        mean_violation=float(np.maximum(-mean_slack.data, 0.0).mean()),
    )
    return value, stats


def augmented_lagrangian(traj: Trajectory, dual: DualState | np.ndarray,
                         rho: float) -> float:
    """Augmented Lagrangian of a finished trajectory: utility plus the
    multiplier-weighted time-averaged slack minus the violation penalty."""
    mu = dual.mu if isinstance(dual, DualState) else np.asarray(dual, dtype=np.float64)
    mean_slack = traj.mean_slack()
    if mu.shape != mean_slack.shape:
        raise ContractError(
            f"multiplier shape {mu.shape} does not match slack shape {mean_slack.shape}")
    value = netsim.utility(traj)
    value += float((mu * mean_slack).sum())
    value -= 0.5 * rho * float((np.minimum(mean_slack, 0.0) ** 2).sum())
    return value


def train(cfg: TrainConfig, sampler, init: GnnParams | None = None) -> TrainResult:
    """Ascend the batch-mean augmented Lagrangian over sampled multipliers.

    Each epoch takes one Adam step on the mean over ``cfg.batch`` rollouts;
    every rollout pairs a fresh multiplier draw with a freshly sampled
    network instance.
    """
    rng = np.random.default_rng(cfg.seed)
    params = init if init is not None else init_params(
        widths=cfg.widths, taps=cfg.taps, seed=cfg.seed,
        nonlinearity=cfg.nonlinearity, gso_normalization=cfg.gso_normalization)
    leaves = params.parameters()
    adam = AdamState(lr=cfg.lr)
    rho = cfg.rho
    history: list[EpochStats] = []
    for epoch in range(cfg.epochs):
        zero_grads(leaves)
        batch_value = None
        utilities = []
        violations = []
        try:
            with Tape() as tape:
                for _ in range(cfg.batch):
                    topo, channel, spec = sampler(rng)
                    mu = sample_duals(spec, rng, cfg.mu_low, cfg.mu_high)
                    value, stats = rollout_lagrangian(
                        params, topo, channel, spec, mu, rho,
                        cfg.horizon, rng, cfg.arrival_dist)
                    utilities.append(stats.utility)
                    violations.append(stats.mean_violation)
                    batch_value = value if batch_value is None else ad.add(batch_value, value)
                batch_value = ad.mul(batch_value, 1.0 / cfg.batch)
                backward(tape, batch_value)
        except NumericHealthError as exc:
            raise NumericHealthError(
                f"training aborted at epoch {epoch}: {exc}") from exc
        adam_step(adam, leaves, maximize=True)
        history.append(EpochStats(
            epoch=epoch,
            lagrangian=batch_value.item(),
            utility=float(np.mean(utilities)),
            mean_violation=float(np.mean(violations)),
        ))
        rho *= cfg.rho_decay
    return TrainResult(params=params, history=history)


def execute(params: GnnParams, channel, topo: Topology, spec: FlowSpec,
            horizon: int, period: int = 5, rate: float = 0.05,
            rng: np.random.Generator | None = None,
            arrival_dist: str = "exponential") -> ExecutionResult:
    """Run a trained policy with multipliers evolving on the windowed slack.

    Multipliers start at zero; every ``period`` steps they take a projected
    step against the slack averaged over the window just recorded, and
    destination entries stay pinned at zero (they are never sampled during
    training). ``channel`` may be a single matrix or a per-step sequence.
    """
    if params.widths[0] != 2:
        raise ContractError(
            "checkpoint is incompatible: execution feeds two feature columns "
            f"(arrivals, dual) but the policy expects {params.widths[0]}")
    if horizon < 1 or period < 1:
        raise ParameterError("horizon and period must be >= 1")
    if rate < 0:
        raise ParameterError("rate must be non-negative")
    rng = rng if rng is not None else np.random.default_rng(0)
    mu = np.zeros((spec.n, spec.num_flows))
    dest = spec.destination_mask()
    window: list[np.ndarray] = []
    dual_history: list[np.ndarray] = []
    traj = Trajectory(spec=spec)
    q = np.zeros((spec.n, spec.num_flows))
    for t in range(horizon):
        channel_t = channel[t] if isinstance(channel, (list, tuple)) else channel
        a0 = netsim.sample_arrivals(spec, rng, arrival_dist)
        dec = decide(channel_t, a0, mu, params, spec)
        slack = netsim.constraint_slack(dec, channel_t, topo)
        q = netsim.step_queues(q, a0, dec, channel_t, topo, spec)
        traj.append(a0, dec, q, slack)
        window.append(slack)
        if (t + 1) % period == 0:
            mu = np.maximum(mu - rate * np.mean(window, axis=0), 0.0)
            mu[dest] = 0.0
            window.clear()
            dual_history.append(mu.copy())
    return ExecutionResult(trajectory=traj, dual_history=dual_history)
