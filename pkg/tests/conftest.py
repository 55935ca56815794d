"""Shared instance builders and assertion helpers."""

import numpy as np
import pytest

from offroute import Linear, NetworkSpec, Queue, Strategy, TaskSet


def both_dirs(undirected):
    """Expand {(i, j): fn} to a directed link list + cost map."""
    links, cost = [], {}
    for (i, j), fn in undirected.items():
        links += [(i, j), (j, i)]
        cost[(i, j)] = fn
        cost[(j, i)] = fn
    return links, cost


def fig3_instance(rho):
    """The four-node construction where stationarity is arbitrarily bad.

    One task (d=node 3, type 0), data injected at node 0, computation only at
    node 3 (free).  The direct link 0-3 has unit marginal; the chain
    0-1-2-3 has marginal rho/3 per hop, so the best cost is rho while the
    direct route costs 1.
    """
    und = {
        (0, 3): Linear(1.0),
        (0, 1): Linear(rho / 3),
        (1, 2): Linear(rho / 3),
        (2, 3): Linear(rho / 3),
        (1, 3): Linear(1.0),
    }
    links, cost = both_dirs(und)
    spec = NetworkSpec(4, links, cost, {3: Linear(0.0)}, {(3, 0): 1.0})
    tasks = TaskSet([(3, 0)], {0: 1.0}, {0: 1.0}, {(0, (3, 0)): 1.0})
    return spec, tasks


def fig3_direct_strategy(spec, tasks):
    """Stationary but suboptimal: all data straight over the unit link."""
    strat = Strategy.zeros(spec, tasks)
    for i in (0, 1, 2):
        strat.set_data_row(spec, 0, i, {3: 1.0})
    strat.set_data_row(spec, 0, 3, {"cpu": 1.0})
    strat.set_result_row(spec, 0, 0, {1: 1.0})
    strat.set_result_row(spec, 0, 1, {2: 1.0})
    strat.set_result_row(spec, 0, 2, {3: 1.0})
    return strat


def fig3_chain_strategy(spec, tasks):
    """The optimal routing: everything along the cheap chain."""
    strat = Strategy.zeros(spec, tasks)
    strat.set_data_row(spec, 0, 0, {1: 1.0})
    strat.set_data_row(spec, 0, 1, {2: 1.0})
    strat.set_data_row(spec, 0, 2, {3: 1.0})
    strat.set_data_row(spec, 0, 3, {"cpu": 1.0})
    strat.set_result_row(spec, 0, 0, {1: 1.0})
    strat.set_result_row(spec, 0, 1, {2: 1.0})
    strat.set_result_row(spec, 0, 2, {3: 1.0})
    return strat


def two_node_instance(l_plus=1.0, comp0=Linear(0.0), comp1=Linear(0.0),
                      link=Linear(1.0), rate=1.0, dest=1):
    links, cost = both_dirs({(0, 1): link})
    spec = NetworkSpec(2, links, cost, {0: comp0, 1: comp1},
                       {(0, 0): 1.0, (1, 0): 1.0})
    tasks = TaskSet([(dest, 0)], {0: 1.0}, {0: l_plus}, {(0, (dest, 0)): rate})
    return spec, tasks


def random_loop_free_strategy(spec, tasks, rng, dense=False):
    """Random feasible strategy whose supports follow node potentials.

    Data rows point only toward lower-potential neighbors or the CPU; result
    rows follow BFS-distance-to-destination potentials.  Requires computation
    at every node.
    """
    g = spec.graph
    n = spec.num_nodes
    strat = Strategy.zeros(spec, tasks)
    for tk, (d, _) in enumerate(tasks.tasks):
        pot = rng.permutation(n)
        for i in range(n):
            nbrs = [e for e in g.out_edges(i) if pot[g.dst[e]] < pot[i]]
            weights = rng.uniform(0.2 if dense else 0.0, 1.0,
                                  size=len(nbrs) + 1)
            if not dense and len(nbrs):
                keep = rng.random(len(nbrs)) < 0.7
                weights[1:][~keep] = 0.0
            weights /= weights.sum()
            strat.data_cpu[tk, i] = weights[0]
            for w, e in zip(weights[1:], nbrs):
                strat.data_edge[tk, e] = w
        dist = _bfs_dist(g, d)
        for i in range(n):
            if i == d:
                continue
            nbrs = [e for e in g.out_edges(i) if dist[g.dst[e]] < dist[i]]
            weights = rng.uniform(0.2 if dense else 0.0, 1.0, size=len(nbrs))
            if weights.sum() == 0:
                weights[0] = 1.0
            weights /= weights.sum()
            for w, e in zip(weights, nbrs):
                strat.result_edge[tk, e] = w
    return strat


def _bfs_dist(g, d):
    dist = np.full(g.n, np.inf)
    dist[d] = 0
    frontier = [d]
    while frontier:
        nxt = []
        for i in frontier:
            for e in g.in_edges(i):
                j = int(g.src[e])
                if dist[j] == np.inf:
                    dist[j] = dist[i] + 1
                    nxt.append(j)
        frontier = nxt
    return dist


def random_queue_instance(seed, n=5, utilization=0.5):
    """Random all-queue instance with capacities sized off an initial probe."""
    rng = np.random.default_rng(seed)
    edges = [(i, i + 1) for i in range(n - 1)]
    for i in range(n):
        for j in range(i + 2, n):
            if rng.random() < 0.5:
                edges.append((i, j))
    links, cost = both_dirs({e: Linear(1.0) for e in edges})
    w = {(i, 0): float(rng.uniform(1, 3)) for i in range(n)}
    spec0 = NetworkSpec(n, links, cost,
                        {i: Linear(float(rng.uniform(0.2, 1))) for i in range(n)},
                        w)
    d = int(rng.integers(n))
    tasks = TaskSet([(d, 0)], {0: 1.0}, {0: float(rng.uniform(0.3, 1.2))},
                    {(int(i), (d, 0)): float(rng.uniform(0.5, 1.5))
                     for i in rng.choice(n, size=2, replace=False)})
    from offroute import default_init, propagate

    probe = propagate(spec0, tasks, default_init(spec0, tasks))
    link_cost = {}
    for lk in links:
        e = spec0.graph.edge_id[lk]
        rev = spec0.graph.edge_id[(lk[1], lk[0])]
        load = max(probe.F[e], probe.F[rev])
        link_cost[lk] = link_cost.get((lk[1], lk[0])) or Queue(
            float(load / utilization + rng.uniform(0.5, 2.0))
        )
    comp_cost = {
        i: Queue(float(probe.G[i] / utilization + rng.uniform(1.0, 3.0)))
        for i in range(n)
    }
    return NetworkSpec(n, links, link_cost, comp_cost, w), tasks


def max_utilization(spec, flow):
    util = 0.0
    g = spec.graph
    for e, lk in enumerate(g.links):
        fn = spec.link_cost[lk]
        if isinstance(fn, Queue):
            util = max(util, flow.F[e] / fn.capacity)
    for i in range(spec.num_nodes):
        fn = spec.comp_cost.get(i)
        if isinstance(fn, Queue):
            util = max(util, flow.G[i] / fn.capacity)
    return util


def random_moderate_strategy(spec, tasks, rng, max_util=0.8, tries=50):
    """Random loop-free strategy keeping every queue below max_util."""
    from offroute import propagate

    for _ in range(tries):
        strat = random_loop_free_strategy(spec, tasks, rng)
        flow = propagate(spec, tasks, strat)
        if np.isfinite(flow.total) and max_utilization(spec, flow) <= max_util:
            return strat
    raise RuntimeError("could not draw a moderate-utilization strategy")


def assert_monotone_costs(trace, slack=1e-9):
    for a, b in zip(trace, trace[1:]):
        if b.event:
            continue
        assert b.total <= a.total + slack * max(1.0, abs(a.total)), (
            f"cost rose at iteration {b.iteration}: {a.total} -> {b.total}"
        )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
