import itertools
import math

import numpy as np
import pytest

from offroute import (InfeasibleAfterEvent, Linear, NetworkSpec, Queue,
                      RunConfig, Strategy, TaskSet, compute_marginals,
                      default_init, detect_loops, loop_free, propagate, run,
                      scaling_matrix, server_failure, sgp_step, verify)
from offroute._kernels import qp_row

from conftest import (assert_monotone_costs, both_dirs, fig3_chain_strategy,
                      fig3_direct_strategy, fig3_instance,
                      random_queue_instance)


# ---------------------------------------------------------------------------
# The per-row simplex QP
# ---------------------------------------------------------------------------

def brute_force_qp(phi, delta, mdiag, step=1e-3):
    best, best_val = None, np.inf
    k = len(phi)
    ticks = int(round(1 / step))
    if k == 2:
        grid = ((a * step, 1 - a * step) for a in range(ticks + 1))
    else:
        grid = (
            tuple(c * step for c in combo) + (0,) * 0
            for combo in itertools.product(range(ticks + 1), repeat=k - 1)
            if sum(combo) <= ticks
        )
        grid = (g + (1 - sum(g),) for g in grid)
    for v in grid:
        v = np.array(v)
        d = v - phi
        val = delta @ d + d @ (mdiag * d)
        if val < best_val:
            best, best_val = v, val
    return best


def qp_value(phi, delta, mdiag, v):
    d = v - phi
    return delta @ d + d @ (mdiag * d)


def test_qp_row_known_solution():
    phi = np.array([0.5, 0.5])
    delta = np.array([0.0, 1.0])
    mdiag = np.array([1.0, 1.0])
    v = qp_row(phi, delta, mdiag, math.inf, 1e-9)
    assert np.allclose(v, [0.75, 0.25], atol=1e-12)
    ref = brute_force_qp(phi, delta, mdiag, step=1e-4)
    assert np.allclose(v, ref, atol=2e-4)


def test_qp_row_constant_delta_keeps_row():
    phi = np.array([0.3, 0.2, 0.5])
    v = qp_row(phi, np.array([2.0, 2.0, 2.0]), np.array([1.0, 2.0, 0.5]),
               math.inf, 1e-9)
    assert np.allclose(v, phi, atol=1e-12)


def test_qp_row_blocked_coordinate_excluded():
    # blocked coordinates never enter the solve; mass moves among the rest
    phi = np.array([0.5, 0.5])       # coords 1 and 3 of the original row
    delta = np.array([1.0, 0.0])
    mdiag = np.array([1.0, 1.0])
    v = qp_row(phi, delta, mdiag, math.inf, 1e-9)
    assert v.sum() == pytest.approx(1.0)
    assert v[1] > v[0]


@pytest.mark.parametrize("seed", range(25))
def test_qp_row_beats_random_feasible_points(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 6))
    phi = rng.dirichlet(np.ones(k))
    delta = rng.uniform(0.0, 3.0, k)
    mdiag = rng.uniform(0.0, 2.0, k)
    mdiag[rng.random(k) < 0.3] = 0.0
    v = qp_row(phi, delta, mdiag, math.inf, 1e-12)
    assert abs(v.sum() - 1) < 1e-12 and (v >= 0).all()
    if (mdiag > 0).any():
        val = qp_value(phi, delta, mdiag, v)
        for _ in range(200):
            w = rng.dirichlet(np.ones(k))
            assert val <= qp_value(phi, delta, mdiag, w) + 1e-9


def test_qp_row_degenerate_full_jump_and_gallager_step():
    phi = np.array([0.6, 0.4, 0.0])
    delta = np.array([1.0, 0.2, 0.9])
    zeros = np.zeros(3)
    full = qp_row(phi, delta, zeros, math.inf, 1e-9)
    assert np.allclose(full, [0.0, 1.0, 0.0])
    small = qp_row(phi, delta, zeros, 0.25, 1e-9)
    # gallager-style: each losing coordinate sheds beta * gap
    assert small[0] == pytest.approx(0.6 - 0.25 * 0.8)
    assert small[1] == pytest.approx(1 - small[0] - small[2])


# ---------------------------------------------------------------------------
# Scaling matrices
# ---------------------------------------------------------------------------

def test_scaling_matrix_all_linear_is_zero():
    spec, tasks = fig3_instance(0.5)
    strat = fig3_direct_strategy(spec, tasks)
    flow = propagate(spec, tasks, strat)
    marg = compute_marginals(spec, tasks, strat, flow)
    coords, diag = scaling_matrix(spec, tasks, 0, 0, "data", flow, marg,
                                  t0=flow.total, strategy=strat)
    assert np.allclose(diag, 0.0)


def test_scaling_matrix_queue_bound_value():
    links, cost = both_dirs({(0, 1): Queue(2.0)})
    spec = NetworkSpec(2, links, cost, {1: Linear(0.0)}, {(1, 0): 1.0})
    tasks = TaskSet([(1, 0)], {0: 1.0}, {0: 1.0}, {(0, (1, 0)): 0.5})
    strat = Strategy.zeros(spec, tasks)
    strat.set_data_row(spec, 0, 0, {1: 1.0})
    strat.set_data_row(spec, 0, 1, {"cpu": 1.0})
    strat.set_result_row(spec, 0, 0, {1: 1.0})
    flow = propagate(spec, tasks, strat)
    marg = compute_marginals(spec, tasks, strat, flow)
    coords, diag = scaling_matrix(spec, tasks, 0, 0, "data", flow, marg,
                                  t0=1.0, strategy=strat)
    # A(T0=1) for Queue(2) is 4; the sole neighbor j=1 terminates data paths
    # (h=0), so the entry is t/2 * A_ij = 0.5/2 * 4
    assert coords == [1]
    assert diag[0] == pytest.approx(0.5 / 2 * 4.0)


def test_scaling_matrix_zero_traffic_row():
    spec, tasks = fig3_instance(0.5)
    strat = fig3_direct_strategy(spec, tasks)
    flow = propagate(spec, tasks, strat)
    marg = compute_marginals(spec, tasks, strat, flow)
    # node 2 carries no data traffic under the direct strategy
    coords, diag = scaling_matrix(spec, tasks, 1, 0, "data", flow, marg,
                                  t0=flow.total, strategy=strat)
    assert np.allclose(diag, 0.0)


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------

def test_run_already_optimal_terminates_immediately():
    spec, tasks = fig3_instance(0.5)
    strat = fig3_chain_strategy(spec, tasks)
    res = run(spec, tasks, strat, RunConfig(max_iters=50, tol=1e-6))
    assert res.converged
    assert res.iterations == 0
    assert np.allclose(res.strategy.data_edge, strat.data_edge)


@pytest.mark.parametrize("rho", [0.25, 0.5, 0.9])
def test_run_fig3_reaches_global_optimum(rho):
    spec, tasks = fig3_instance(rho)
    res = run(spec, tasks, fig3_direct_strategy(spec, tasks),
              RunConfig(max_iters=200, tol=1e-6))
    assert res.converged
    assert res.total == pytest.approx(rho, abs=1e-3)
    assert_monotone_costs(res.trace)
    assert loop_free(spec, tasks, res.strategy)


def test_sgp_step_fixed_point():
    spec, tasks = fig3_instance(0.5)
    strat = fig3_chain_strategy(spec, tasks)
    flow = propagate(spec, tasks, strat)
    marg = compute_marginals(spec, tasks, strat, flow)
    new, _ = sgp_step(spec, tasks, strat, flow, marg, 0, 0, "data",
                      t0=flow.total)
    assert np.allclose(new.data_edge, strat.data_edge, atol=1e-12)


@pytest.mark.parametrize("seed", range(12))
def test_descent_and_loop_freedom_random_instances(seed):
    spec, tasks = random_queue_instance(seed + 100)
    res = run(spec, tasks, default_init(spec, tasks),
              RunConfig(max_iters=400, tol=1e-6))
    assert_monotone_costs(res.trace)
    assert loop_free(spec, tasks, res.strategy)
    report = detect_loops(spec, tasks, res.strategy)
    assert not any(r["data_loop"] or r["result_loop"] for r in report)
    # simplex invariant on every updated row
    assert not res.strategy.row_sum_violations(spec, tasks, tol=1e-12)
    if res.converged:
        assert verify(spec, tasks, res.strategy, tol=1e-5).sufficient_ok


def test_schedules_reach_the_same_cost():
    spec, tasks = random_queue_instance(7)
    init = default_init(spec, tasks)
    sync = run(spec, tasks, init, RunConfig(max_iters=3000, tol=1e-7))
    rr = run(spec, tasks, init,
             RunConfig(max_iters=30000, tol=1e-7, schedule="roundrobin"))
    rnd = run(spec, tasks, init,
              RunConfig(max_iters=30000, tol=1e-7, schedule="random", seed=5))
    assert sync.converged and rr.converged and rnd.converged
    assert rr.total == pytest.approx(sync.total, rel=1e-4)
    assert rnd.total == pytest.approx(sync.total, rel=1e-4)


def test_event_requires_surviving_connectivity():
    # failing the middle of a path network disconnects it
    links, cost = both_dirs({(0, 1): Linear(1.0), (1, 2): Linear(1.0)})
    spec = NetworkSpec(3, links, cost, {i: Linear(0.2) for i in range(3)},
                       {(i, 0): 1.0 for i in range(3)})
    tasks = TaskSet([(2, 0)], {0: 1.0}, {0: 1.0}, {(0, (2, 0)): 1.0})
    cfg = RunConfig(max_iters=50, tol=1e-9,
                    events=[(0, server_failure(1))])
    with pytest.raises(InfeasibleAfterEvent):
        run(spec, tasks, default_init(spec, tasks), cfg)


def test_event_drops_destroyed_destination_and_recovers():
    spec, tasks = random_queue_instance(42)
    # add a second task so something survives if a destination dies
    d0 = tasks.tasks[0][0]
    other = (d0 + 1) % spec.num_nodes
    tasks = TaskSet(
        tasks.tasks + [(other, 0)], tasks.data_size, tasks.result_size,
        {**tasks.input_rates, ((other + 1) % spec.num_nodes, (other, 0)): 0.5},
    )
    cfg = RunConfig(max_iters=800, tol=1e-5,
                    events=[(1, server_failure(d0))])
    res = run(spec, tasks, default_init(spec, tasks), cfg)
    assert all(t[0] != d0 for t in res.tasks.tasks)
    assert_monotone_costs(res.trace)
    assert math.isfinite(res.total)
