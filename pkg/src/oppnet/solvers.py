"""Per-instance routing optimization over explicit decision variables.

Two solvers for the single-step setting share one problem description:

* dual descent: one plain gradient ascent step on the primal logits and one
  projected step on the multipliers per iteration;
* method of multipliers: an inner ascent budget approximating the augmented
  Lagrangian argmax per outer iteration, a projected multiplier update with
  the current penalty as step size, and exponential penalty decay.

Primal variables live as unconstrained logits squashed exactly like the policy
heads (rectified packet offset, idle-slot transmit softmax, support-masked keep
softmax), so the capacity and minimum-rate constraints hold by construction.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import netsim
from .autodiff import AdamState, Tape, Tensor, adam_step, backward, zero_grads
from .errors import DivergenceError, NumericHealthError, ParameterError
from .losses import log_utility, negative_part, slack_tensors, violation_penalty
from .netsim import RoutingDecision
from .topology import (ChannelMatrix, FlowSpec, Topology, channel_from_distance,
                       generate_knn, uniform_flows)


@dataclass(frozen=True)
class UnparamProblem:
    """One routing instance: fixed topology, channel, flows, and arrivals."""

    topo: Topology
    channel: ChannelMatrix
    spec: FlowSpec
    arrivals: np.ndarray  # (n, F) realized arrivals for the single step

    @property
    def dest_mask(self) -> np.ndarray:
        return self.spec.destination_mask()


def random_instance(n: int, k: int, num_flows: int, arrival_mean,
                    seed: int, capacity: float = 10.0, d_c: float = 1.0) -> UnparamProblem:
    """A seeded instance with constant arrivals equal to the configured means."""
    topo = generate_knn(n, k, seed=seed, capacity=capacity)
    channel = channel_from_distance(topo, d_c)
    spec = uniform_flows(topo, num_flows, arrival_mean, seed=seed + 1)
    return UnparamProblem(topo=topo, channel=channel, spec=spec,
                          arrivals=spec.arrival_mean.copy())


@dataclass
class PrimalVars:
    """Unconstrained logits for (packets, transmit, keep)."""

    alpha: Tensor  # (n, F): packets = arrivals + relu(alpha)
    s: Tensor      # (n, F): transmit = idle softmax rows
    kappa: Tensor  # (F, n, n): keep = support-masked softmax rows

    @classmethod
    def init(cls, n: int, num_flows: int, alpha0: float = 0.01) -> "PrimalVars":
        # Small positive alpha keeps the rectified packet head off its dead zone.
        return cls(
            alpha=Tensor(np.full((n, num_flows), alpha0), requires_grad=True, name="alpha"),
            s=Tensor(np.zeros((n, num_flows)), requires_grad=True, name="s"),
            kappa=Tensor(np.zeros((num_flows, n, n)), requires_grad=True, name="kappa"),
        )

    def parameters(self) -> list[Tensor]:
        return [self.alpha, self.s, self.kappa]

    def tensors(self, problem: UnparamProblem) -> tuple[Tensor, Tensor, Tensor]:
        transmit = ad.idle_softmax(self.s)
        keep = ad.masked_softmax(self.kappa, problem.channel.support[None, :, :])
        packets = ad.add(Tensor(problem.arrivals), ad.relu(self.alpha))
        return transmit, keep, packets

    def decision(self, problem: UnparamProblem) -> RoutingDecision:
        transmit, keep, packets = self.tensors(problem)
        return RoutingDecision(transmit=transmit.data, keep=keep.data,
                               packets=packets.data)


@dataclass
class MoMState:
    """Method-of-multipliers state after (or during) a solve."""

    primal: PrimalVars
    z: np.ndarray        # (n, F) non-negative slack split
    mu: np.ndarray       # (n, F) non-negative multipliers
    rho: float
    decay: float


@dataclass
class IterationMetrics:
    iteration: int
    utility: float
    max_violation: float
    mean_queue: float
    rho: float
    mu_norm: float


def _metrics(problem: UnparamProblem, decision: RoutingDecision, slack: np.ndarray,
             iteration: int, rho: float, mu: np.ndarray) -> IterationMetrics:
    keep = ~problem.dest_mask
    values = decision.packets[keep]
    with np.errstate(divide="ignore"):
        util = float(np.log(values).sum()) if np.all(values > 0) else -np.inf
    queue = netsim.step_queues(
        np.zeros_like(problem.arrivals), problem.arrivals, decision,
        problem.channel, problem.topo, problem.spec)
    return IterationMetrics(
        iteration=iteration,
        utility=util,
        max_violation=float(np.maximum(-slack, 0.0).max()),
        mean_queue=float(queue[keep].mean()),
        rho=rho,
        mu_norm=float(np.linalg.norm(mu)),
    )


def _check_health(value: float, iteration: int, solver: str) -> None:
    if not np.isfinite(value):
        raise DivergenceError(
            f"{solver} diverged at iteration {iteration}: objective {value}",
            iteration=iteration)


def dd_solve(problem: UnparamProblem, iters: int = 30, gamma_phi: float = 0.01,
             gamma_mu: float = 0.01,
             primal: PrimalVars | None = None
             ) -> tuple[PrimalVars, np.ndarray, list[IterationMetrics]]:
    """Dual descent: alternating plain gradient steps on the primal logits and
    projected gradient steps on the multipliers.

    One primal step and one dual step per iteration; convergence needs many
    iterations, which is the method's documented weakness."""
    if gamma_phi <= 0 or gamma_mu < 0:
        raise ParameterError("rates must be positive (gamma_mu may be zero)")
    if primal is None:
        primal = PrimalVars.init(problem.spec.n, problem.spec.num_flows)
    mu = np.zeros_like(problem.arrivals)
    dest = problem.dest_mask
    history: list[IterationMetrics] = []
    params = primal.parameters()
    for m in range(iters):
        zero_grads(params)
        try:
            with Tape() as tape:
                transmit, keep, packets = primal.tensors(problem)
                slack = slack_tensors(transmit, keep, packets,
                                      problem.channel.probs, problem.topo.capacity)
                lagrangian = ad.add(log_utility(packets, dest),
                                    ad.tensor_sum(ad.mul(Tensor(mu), slack)))
            backward(tape, lagrangian)
        except NumericHealthError as exc:
            raise DivergenceError(f"dual descent diverged at iteration {m}: {exc}",
                                  iteration=m) from exc
        _check_health(lagrangian.item(), m, "dual descent")
        for p in params:
            if p.grad is not None:
                p.data = p.data + gamma_phi * p.grad
        slack_np = slack.data
        mu = np.maximum(mu - gamma_mu * slack_np, 0.0)
        history.append(_metrics(problem, primal.decision(problem), slack_np, m, 0.0, mu))
    return primal, mu, history


def _guarded_ascent(build_loss, params: list[Tensor], adam: AdamState,
                    line_search: bool, max_halvings: int = 10) -> float:
    """One Adam ascent step; with line_search, halve the step until the
    objective does not decrease (skipping the step entirely as a last resort)."""
    zero_grads(params)
    with Tape() as tape:
        loss = build_loss()
    backward(tape, loss)
    before = loss.item()
    grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    if not line_search:
        adam_step(adam, params, grads, maximize=True)
        return before
    snapshot = ([p.data.copy() for p in params],
                [m.copy() for m in adam.m], [v.copy() for v in adam.v], adam.step)
    base_lr = adam.lr
    try:
        for _ in range(max_halvings + 1):
            adam_step(adam, params, grads, maximize=True)
            if build_loss().item() >= before - 1e-12:
                return before
            datas, ms, vs, step = snapshot
            for p, d in zip(params, datas):
                p.data = d.copy()
            adam.m = [m.copy() for m in ms]
            adam.v = [v.copy() for v in vs]
            adam.step = step
            adam.lr /= 2.0
    finally:
        adam.lr = base_lr
    return before  # all retries decreased the objective; keep the old iterate


def mom_solve(problem: UnparamProblem, outer_iters: int = 30, rho0: float = 0.5,
              decay: float = 0.98, gamma_phi: float = 0.05, inner_steps: int = 50,
              line_search: bool = True,
              primal: PrimalVars | None = None
              ) -> tuple[MoMState, list[IterationMetrics]]:
    """Method of multipliers with the inner argmax approximated by a fixed
    budget of guarded Adam ascent steps.

    The non-negative slack split is eliminated in closed form, z = max(0, slack),
    so the residual slack - z penalizes violations only. The multiplier update
    uses the raw slack with the current penalty as its step size, and the
    penalty decays by a fixed factor each outer iteration.
    """
    if rho0 <= 0:
        raise ParameterError(f"rho0 must be positive, got {rho0}")
    if not (0 < decay <= 1):
        raise ParameterError(f"decay must lie in (0, 1], got {decay}")
    if primal is None:
        primal = PrimalVars.init(problem.spec.n, problem.spec.num_flows)
    mu = np.zeros_like(problem.arrivals)
    rho = rho0
    dest = problem.dest_mask
    params = primal.parameters()
    adam = AdamState(lr=gamma_phi)
    history: list[IterationMetrics] = []

    for m in range(outer_iters):
        mu_const = Tensor(mu)
        rho_now = rho

        def build_loss() -> Tensor:
            transmit, keep, packets = primal.tensors(problem)
            slack = slack_tensors(transmit, keep, packets,
                                  problem.channel.probs, problem.topo.capacity)
            residual = negative_part(slack)  # slack - z with z = max(0, slack)
            return ad.sub(ad.add(log_utility(packets, dest),
                                 ad.tensor_sum(ad.mul(mu_const, residual))),
                          violation_penalty(slack, rho_now))

        try:
            for _ in range(inner_steps):
                value = _guarded_ascent(build_loss, params, adam, line_search)
                _check_health(value, m, "method of multipliers")
        except NumericHealthError as exc:
            raise DivergenceError(
                f"method of multipliers diverged at iteration {m}: {exc}",
                iteration=m) from exc

        decision = primal.decision(problem)
        slack_np = netsim.constraint_slack(decision, problem.channel, problem.topo)
        mu = np.maximum(mu - rho * slack_np, 0.0)
        history.append(_metrics(problem, decision, slack_np, m, rho, mu))
        rho *= decay

    state = MoMState(primal=primal, z=np.maximum(slack_np, 0.0), mu=mu,
                     rho=rho, decay=decay)
    return state, history


def metrics_to_rows(history: list[IterationMetrics]) -> list[list]:
    """CSV-ready rows: (iter, utility, max violation, mean queue, rho, mu norm)."""
    return [[h.iteration, repr(h.utility), repr(h.max_violation),
             repr(h.mean_queue), repr(h.rho), repr(h.mu_norm)] for h in history]
