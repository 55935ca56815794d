import numpy as np
import pytest

from offroute import (Linear, NetworkSpec, Strategy, TaskSet,
                      broadcast_stage1, broadcast_stage2, compute_blocked,
                      compute_deltas, compute_marginals, propagate)

from conftest import (both_dirs, fig3_direct_strategy, fig3_instance,
                      random_loop_free_strategy, random_moderate_strategy,
                      random_queue_instance)


def chain_to_dest(a, b):
    """1 -> 2 -> d with linear result marginals a then b (nodes 0,1,2; d=2)."""
    links, cost = both_dirs({(0, 1): Linear(a), (1, 2): Linear(b)})
    spec = NetworkSpec(3, links, cost, {0: Linear(0.0)}, {(0, 0): 1.0})
    tasks = TaskSet([(2, 0)], {0: 1.0}, {0: 1.0}, {(0, (2, 0)): 1.0})
    strat = Strategy.zeros(spec, tasks)
    strat.set_data_row(spec, 0, 0, {"cpu": 1.0})
    strat.set_data_row(spec, 0, 1, {"cpu": 1.0})
    strat.set_data_row(spec, 0, 2, {"cpu": 1.0})
    strat.set_result_row(spec, 0, 0, {1: 1.0})
    strat.set_result_row(spec, 0, 1, {2: 1.0})
    return spec, tasks, strat


def test_stage1_zero_at_destination_and_telescoping():
    a, b = 0.8, 1.7
    spec, tasks, strat = chain_to_dest(a, b)
    flow = propagate(spec, tasks, strat)
    s1 = broadcast_stage1(spec, tasks, strat, flow)
    assert s1.dT_dtplus[0, 2] == 0.0
    assert s1.h_plus[0, 2] == 0
    assert s1.dT_dtplus[0, 1] == pytest.approx(b)
    assert s1.dT_dtplus[0, 0] == pytest.approx(a + b)
    assert s1.h_plus[0, 0] == 2


def test_stage2_pure_offload_leaf_rule():
    spec, tasks, strat = chain_to_dest(0.8, 1.7)
    # give node 0 a nonzero computation marginal to exercise the leaf rule
    spec.comp_cost[0] = Linear(0.4)
    spec.comp_weight[(0, 0)] = 2.0
    spec._packed = None
    flow = propagate(spec, tasks, strat)
    s1 = broadcast_stage1(spec, tasks, strat, flow)
    s2 = broadcast_stage2(spec, tasks, strat, flow, s1)
    # dT/dr at the pure-offload node = w * C' + dT/dt+
    assert s2.dT_dr[0, 0] == pytest.approx(2.0 * 0.4 + (0.8 + 1.7))
    assert s2.h_minus[0, 0] == 0


def test_fig3_direct_marginals():
    rho = 0.5
    spec, tasks = fig3_instance(rho)
    strat = fig3_direct_strategy(spec, tasks)
    flow = propagate(spec, tasks, strat)
    marg = compute_marginals(spec, tasks, strat, flow)
    # node 1 (paper's node 1 is index 0) routes straight to the destination
    assert marg.dT_dr[0, 0] == pytest.approx(1.0)
    g = spec.graph
    assert marg.delta_minus_edge[0, g.edge_id[(0, 3)]] == pytest.approx(1.0)
    expected = rho / 3 + marg.dT_dr[0, 1]
    assert marg.delta_minus_edge[0, g.edge_id[(0, 1)]] == pytest.approx(expected)


def test_delta_link_into_destination():
    spec, tasks, strat = chain_to_dest(0.8, 1.7)
    flow = propagate(spec, tasks, strat)
    marg = compute_marginals(spec, tasks, strat, flow)
    e = spec.graph.edge_id[(1, 2)]
    assert marg.delta_plus_edge[0, e] == pytest.approx(1.7)  # dT/dt+ at d is 0


def test_delta_cpu_slot_weighting():
    spec, tasks, strat = chain_to_dest(0.8, 1.7)
    spec.comp_cost[2] = Linear(0.9)
    spec.comp_weight[(2, 0)] = 2.0
    spec._packed = None
    flow = propagate(spec, tasks, strat)
    marg = compute_marginals(spec, tasks, strat, flow)
    # destination CPU: no downstream result cost
    assert marg.delta_minus_cpu[0, 2] == pytest.approx(2.0 * 0.9)


def _fd_dT_dr(spec, tasks, strat, tk, i, h=1e-6):
    base = tasks.rate_matrix(spec.num_nodes)
    up, dn = base.copy(), base.copy()
    up[tk, i] += h
    dn[tk, i] -= h
    t_up = propagate(spec, tasks, strat, rates=up).total
    t_dn = propagate(spec, tasks, strat, rates=dn).total
    return (t_up - t_dn) / (2 * h)


def _fd_dT_dtplus(spec, tasks, strat, tk, i, h=1e-6):
    inj = np.zeros((tasks.num_tasks, spec.num_nodes))
    inj[tk, i] = h
    t_up = propagate(spec, tasks, strat, result_injection=inj).total
    inj[tk, i] = -h
    t_dn = propagate(spec, tasks, strat, result_injection=inj).total
    return (t_up - t_dn) / (2 * h)


@pytest.mark.parametrize("seed", range(10))
def test_marginals_match_finite_differences(seed):
    spec, tasks = random_queue_instance(seed, utilization=0.5)
    rng = np.random.default_rng(seed + 1000)
    strat = random_moderate_strategy(spec, tasks, rng)
    flow = propagate(spec, tasks, strat)
    assert np.isfinite(flow.total)
    marg = compute_marginals(spec, tasks, strat, flow)
    for tk in range(tasks.num_tasks):
        for i in range(spec.num_nodes):
            fd = _fd_dT_dr(spec, tasks, strat, tk, i)
            assert marg.dT_dr[tk, i] == pytest.approx(
                fd, rel=1e-5, abs=1e-7), f"dT/dr mismatch at node {i}"
            fd = _fd_dT_dtplus(spec, tasks, strat, tk, i)
            assert marg.dT_dtplus[tk, i] == pytest.approx(
                fd, rel=1e-5, abs=1e-7), f"dT/dt+ mismatch at node {i}"


def test_marginal_identity_weighted_delta_sum(rng):
    spec, tasks = random_queue_instance(3)
    strat = random_moderate_strategy(spec, tasks, rng)
    flow = propagate(spec, tasks, strat)
    marg = compute_marginals(spec, tasks, strat, flow)
    g = spec.graph
    for tk in range(tasks.num_tasks):
        for i in range(spec.num_nodes):
            acc = strat.data_cpu[tk, i] * (
                marg.delta_minus_cpu[tk, i]
                if strat.data_cpu[tk, i] > 0 else 0.0
            )
            for e in g.out_edges(i):
                if strat.data_edge[tk, e] > 0:
                    acc += strat.data_edge[tk, e] * marg.delta_minus_edge[tk, e]
            assert abs(acc - marg.dT_dr[tk, i]) < 1e-12
            accp = sum(
                strat.result_edge[tk, e] * marg.delta_plus_edge[tk, e]
                for e in g.out_edges(i) if strat.result_edge[tk, e] > 0
            )
            assert abs(accp - marg.dT_dtplus[tk, i]) < 1e-12


def test_blocked_destination_blocks_uphill_result():
    spec, tasks, strat = chain_to_dest(0.8, 1.7)
    flow = propagate(spec, tasks, strat)
    marg = compute_marginals(spec, tasks, strat, flow)
    blocked_minus, blocked_plus = compute_blocked(spec, tasks, strat, marg)
    g = spec.graph
    # the destination must not send results back uphill
    assert blocked_plus[0, g.edge_id[(2, 1)]]
    # strictly-downhill support links are never blocked
    assert not blocked_plus[0, g.edge_id[(0, 1)]]
    assert not blocked_plus[0, g.edge_id[(1, 2)]]


def test_improper_tag_blocks_paths_through_bad_link():
    # Result support: 0 -> 1, then 1 splits between the expensive chain
    # 1 -> 2 -> 3 and the cheap shortcut 1 -> 3.  The split makes the
    # marginal at 1 lower than at 2, so the supported hop (1, 2) is uphill;
    # every node with a support path through it carries the tag.
    links, cost = both_dirs({
        (0, 1): Linear(1.0), (1, 2): Linear(1.0), (2, 3): Linear(5.0),
        (1, 3): Linear(0.1),
    })
    spec = NetworkSpec(4, links, cost, {0: Linear(0.0)}, {(0, 0): 1.0})
    tasks = TaskSet([(3, 0)], {0: 1.0}, {0: 1.0}, {(0, (3, 0)): 1.0})
    strat = Strategy.zeros(spec, tasks)
    strat.set_data_row(spec, 0, 0, {"cpu": 1.0})
    strat.set_data_row(spec, 0, 1, {0: 1.0})
    strat.set_data_row(spec, 0, 2, {1: 1.0})
    strat.set_data_row(spec, 0, 3, {1: 1.0})
    strat.set_result_row(spec, 0, 0, {1: 1.0})
    strat.set_result_row(spec, 0, 1, {2: 0.5, 3: 0.5})
    strat.set_result_row(spec, 0, 2, {3: 1.0})
    flow = propagate(spec, tasks, strat)
    marg = compute_marginals(spec, tasks, strat, flow)
    # dT/dt+ at 2 exceeds dT/dt+ at 1, so the support link (1, 2) is uphill
    assert marg.dT_dtplus[0, 2] >= marg.dT_dtplus[0, 1]

    # independent oracle: enumerate all support paths from each node and
    # check whether any traverses a non-descending link
    g = spec.graph
    sup = {i: [int(g.dst[e]) for e in g.out_edges(i)
               if strat.result_edge[0, e] > 0] for i in range(4)}

    def has_bad_path(i):
        stack = [(i,)]
        while stack:
            path = stack.pop()
            for j in sup[path[-1]]:
                if marg.dT_dtplus[0, j] >= marg.dT_dtplus[0, path[-1]]:
                    return True
                stack.append(path + (j,))
        return False

    for i in range(4):
        assert bool(marg.improper_plus[0, i]) == has_bad_path(i)
    assert marg.improper_plus[0, 0] and marg.improper_plus[0, 1]
    assert not marg.improper_plus[0, 2]
    blocked_minus, blocked_plus = compute_blocked(spec, tasks, strat, marg)
    # node 2 must not open a new result link toward the tagged node 1
    assert blocked_plus[0, g.edge_id[(2, 1)]]
