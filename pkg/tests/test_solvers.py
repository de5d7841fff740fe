import numpy as np
import pytest

from oppnet import autodiff as ad
from oppnet.autodiff import AdamState, Tensor
from oppnet.errors import ParameterError
from oppnet.losses import log_utility, negative_part, slack_tensors
from oppnet.solvers import (PrimalVars, UnparamProblem, dd_solve, mom_solve,
                            random_instance)
from oppnet.topology import ChannelMatrix, FlowSpec, Topology


def toy_problem(capacity=1.0, mean=0.2, link=0.5):
    """Two nodes, one flow into node 1; order-one capacity."""
    topo = Topology(positions=np.array([[0.0, 0.0], [1.0 - link, 0.0]]),
                    edges=[(0, 1), (1, 0)],
                    capacity=np.array([capacity, capacity]))
    channel = ChannelMatrix(
        probs=np.array([[0.0, link], [link, 0.0]]))
    spec = FlowSpec(destination=(1,),
                    arrival_mean=np.array([[mean], [0.0]]))
    return UnparamProblem(topo=topo, channel=channel, spec=spec,
                          arrivals=spec.arrival_mean.copy())


def grid_search_toy(problem, resolution=0.01):
    """Brute-力 grid over (packet rate, transmit shares) for the 2-node toy.

    The keep entry is pinned at one by the row softmax (single neighbor), and
    the destination's packet rate at zero, so the free variables are a_0, T_0,
    and T_1. Returns the feasible maximizer of log a_0.
    """
    cap = problem.topo.capacity[0]
    link = problem.channel.probs[1, 0]
    a_grid = np.arange(0.0, cap + resolution / 2, resolution)
    t_grid = np.arange(0.0, 1.0 + resolution / 2, resolution)
    best = (-np.inf, None)
    for t0 in t_grid:
        # slack at node 0: t0 * cap - a0 >= 0 (no inflow towards node 0)
        a_max = t0 * cap
        feasible_a = a_grid[a_grid <= a_max + 1e-12]
        if len(feasible_a) == 0 or feasible_a[-1] <= 0:
            continue
        a0 = feasible_a[-1]
        # slack at node 1: t1 * cap - kept inflow >= 0
        needed = link * t0 * a0 / cap
        feasible_t1 = t_grid[t_grid >= needed - 1e-12]
        if len(feasible_t1) == 0:
            continue
        value = np.log(a0)
        if value > best[0]:
            best = (value, (a0, t0, float(feasible_t1[0])))
    return best


class TestDualDescent:
    def test_mu_stays_zero_when_feasible(self):
        # Low load keeps the slack positive throughout early ascent.
        problem = random_instance(6, 3, 2, 0.1, seed=1, capacity=100.0)
        _, mu, history = dd_solve(problem, iters=20, gamma_phi=0.01, gamma_mu=0.01)
        assert np.all(mu == 0.0)
        assert all(h.max_violation == 0.0 for h in history)

    def test_zero_dual_rate_freezes_mu_and_ascends_utility(self):
        problem = random_instance(6, 3, 2, 1.0, seed=2, capacity=10.0)
        _, mu, history = dd_solve(problem, iters=40, gamma_phi=0.1, gamma_mu=0.0)
        assert np.all(mu == 0.0)
        assert history[-1].utility > history[0].utility

    def test_metrics_rows_have_expected_length(self):
        problem = random_instance(5, 2, 2, 1.0, seed=3, capacity=10.0)
        _, _, history = dd_solve(problem, iters=7)
        assert len(history) == 7
        assert history[-1].iteration == 6

    def test_invalid_rates_rejected(self):
        problem = toy_problem()
        with pytest.raises(ParameterError):
            dd_solve(problem, iters=1, gamma_phi=0.0)

    def test_toy_converges_to_grid_optimum(self):
        problem = toy_problem()
        _, (a_star, t0_star, _) = grid_search_toy(problem)
        primal, mu, _ = dd_solve(problem, iters=6000, gamma_phi=0.05,
                                 gamma_mu=0.05)
        dec = primal.decision(problem)
        assert abs(dec.packets[0, 0] - a_star) <= 0.02
        assert abs(dec.transmit[0, 0] - t0_star) <= 0.02


class TestMethodOfMultipliers:
    def test_zero_slack_zero_z_reduces_to_utility(self):
        # With slack identically zero the price and penalty terms vanish.
        problem = toy_problem()
        primal = PrimalVars.init(2, 1)
        transmit, keep, packets = primal.tensors(problem)
        slack = Tensor(np.zeros((2, 1)))
        mu = Tensor(np.full((2, 1), 3.0))
        value = ad.sub(
            ad.add(log_utility(packets, problem.dest_mask),
                   ad.tensor_sum(ad.mul(mu, negative_part(slack)))),
            ad.mul(ad.squared_norm(negative_part(slack)), 0.5 * 10.0))
        expected = np.log(packets.data[0, 0])
        assert value.item() == pytest.approx(expected)

    def test_beats_dual_descent_at_equal_epoch_budget(self):
        problem = toy_problem()
        _, _, dd_hist = dd_solve(problem, iters=30)
        _, mom_hist = mom_solve(problem, outer_iters=30, rho0=0.5, decay=0.99)
        assert mom_hist[-1].utility >= dd_hist[-1].utility

    def test_large_rho_drives_residual_down(self):
        problem = random_instance(6, 3, 2, 2.0, seed=5, capacity=10.0)
        _, history = mom_solve(problem, outer_iters=25, rho0=2.0, decay=1.0,
                               inner_steps=40)
        early = np.mean([h.max_violation for h in history[:5]])
        late = np.mean([h.max_violation for h in history[-5:]])
        assert late <= early + 1e-9
        assert history[-1].max_violation < 0.05

    def test_dual_non_negative_after_every_update(self):
        problem = random_instance(6, 3, 2, 2.0, seed=6, capacity=10.0)
        state, history = mom_solve(problem, outer_iters=15, rho0=0.5)
        assert np.all(state.mu >= 0.0)
        assert np.all(state.z >= 0.0)

    def test_feasibility_trend_over_last_outer_iterations(self):
        problem = random_instance(10, 4, 4, 2.0, seed=7, capacity=10.0)
        _, history = mom_solve(problem, outer_iters=30, rho0=0.5, decay=0.98)
        tail = [h.max_violation for h in history[-10:]]
        assert tail[-1] <= tail[0] + 1e-6

    def test_monotone_inner_loop_with_line_search(self):
        problem = random_instance(6, 3, 2, 2.0, seed=8, capacity=10.0)
        primal = PrimalVars.init(6, 2)
        mu = Tensor(np.full((6, 2), 1.0))
        adam = AdamState(lr=0.2)  # deliberately aggressive

        def build_loss():
            transmit, keep, packets = primal.tensors(problem)
            slack = slack_tensors(transmit, keep, packets,
                                  problem.channel.probs, problem.topo.capacity)
            return ad.add(log_utility(packets, problem.dest_mask),
                          ad.tensor_sum(ad.mul(mu, slack)))

        from oppnet.solvers import _guarded_ascent
        values = []
        for _ in range(40):
            values.append(_guarded_ascent(build_loss, primal.parameters(), adam,
                                          line_search=True))
        values.append(build_loss().item())
        diffs = np.diff(values)
        assert np.all(diffs >= -1e-9)

    def test_invalid_parameters_rejected(self):
        problem = toy_problem()
        with pytest.raises(ParameterError):
            mom_solve(problem, rho0=0.0)
        with pytest.raises(ParameterError):
            mom_solve(problem, decay=1.5)

    def test_toy_converges_to_grid_optimum(self):
        problem = toy_problem()
        _, (a_star, t0_star, _) = grid_search_toy(problem)
        state, _ = mom_solve(problem, outer_iters=120, rho0=0.5, decay=0.99,
                             inner_steps=40)
        dec = state.primal.decision(problem)
        assert abs(dec.packets[0, 0] - a_star) <= 0.02
        assert abs(dec.transmit[0, 0] - t0_star) <= 0.02


class TestPrimalVars:
    def test_squashed_decisions_satisfy_invariants(self):
        problem = random_instance(7, 3, 3, 1.0, seed=9, capacity=10.0)
        rng = np.random.default_rng(10)
        primal = PrimalVars.init(7, 3)
        primal.alpha.data = rng.normal(size=(7, 3)) * 2
        primal.s.data = rng.normal(size=(7, 3)) * 2
        primal.kappa.data = rng.normal(size=(3, 7, 7)) * 2
        dec = primal.decision(problem)
        dec.validate(problem.channel, arrivals=problem.arrivals)
