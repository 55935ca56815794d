"""Baseline algorithms: GP, SPOO, LCOR, LPR, and the flow-domain oracle.

GP shares the scaled-projection loop with a flat traffic/beta scaling.  SPOO
freezes routing to zero-flow shortest paths and optimizes only the offloading
splits; LCOR computes everything at the sources and optimizes only result
routing; LPR is a linear-program placement with rounding, capacity caps on
data flow, and shortest-path result routing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linprog

from .errors import InfeasibleError, InitError
from .flows import Problem, Strategy, propagate
from .model import ForwardingMask, NetworkSpec, Queue, TaskSet
from .oracle import (FlowVector, OracleResult, convex_oracle, oracle_total,
                     _dijkstra_toward)
from .sgp import RunConfig, RunResult, _zero_flow_link_d1, default_init, run


@dataclass
class BaselineResult:
    name: str
    total: float
    iterations: int
    converged: bool
    strategy: Optional[Strategy] = None
    flows: Optional[FlowVector] = None
    residual: float = math.nan
    run_result: Optional[RunResult] = None


def _wrap(name: str, rr: RunResult) -> BaselineResult:
    return BaselineResult(
        name=name, total=rr.total, iterations=rr.iterations,
        converged=rr.converged, strategy=rr.strategy, residual=rr.residual,
        run_result=rr,
    )


def run_sgp(spec, tasks, config: Optional[RunConfig] = None,
            init: Optional[Strategy] = None) -> BaselineResult:
    cfg = config or RunConfig()
    start = init if init is not None else default_init(spec, tasks)
    return _wrap("SGP", run(spec, tasks, start, cfg))


def run_gp(spec, tasks, config: Optional[RunConfig] = None,
           init: Optional[Strategy] = None, beta: float = 1.0) -> BaselineResult:
    """Non-scaled gradient projection: flat traffic/beta scaling with one free
    coordinate at the per-row delta argmin."""
    cfg = config or RunConfig()
    cfg = RunConfig(max_iters=cfg.max_iters, tol=cfg.tol, schedule=cfg.schedule,
                    seed=cfg.seed, events=cfg.events, gp_beta=beta,
                    algorithm="gp")
    start = init if init is not None else default_init(spec, tasks)
    return _wrap("GP", run(spec, tasks, start, cfg))


# ---------------------------------------------------------------------------
# SPOO
# ---------------------------------------------------------------------------

def _shortest_path_trees(spec: NetworkSpec, tasks: TaskSet):
    """Zero-flow-marginal next hops toward each task destination."""
    d1z = _zero_flow_link_d1(spec)
    trees = []
    for d, _ in tasks.tasks:
        _, nxt = _dijkstra_toward(spec.graph, d1z, {d: 0.0},
                                  np.ones(spec.graph.m, dtype=bool))
        trees.append(nxt)
    return trees


def run_spoo(spec, tasks, config: Optional[RunConfig] = None) -> BaselineResult:
    """Shortest-path routing, offloading splits optimized per node."""
    cfg = config or RunConfig()
    g = spec.graph
    nt = tasks.num_tasks
    trees = _shortest_path_trees(spec, tasks)
    mask = ForwardingMask(
        np.zeros((nt, g.m), dtype=bool),
        np.zeros((nt, spec.num_nodes), dtype=bool),
        np.zeros((nt, g.m), dtype=bool),
    )
    full = ForwardingMask.full(spec, tasks)
    for tk, (d, _) in enumerate(tasks.tasks):
        for i in range(spec.num_nodes):
            if i == d:
                if not spec.has_compute(d):
                    raise InfeasibleError(
                        "destination has no computation unit on the frozen path"
                    )
                mask.data_cpu[tk, d] = True
                continue
            e = trees[tk][i]
            if e < 0:
                raise InfeasibleError(f"node {i} cannot reach destination {d}")
            mask.data_edge[tk, e] = True
            mask.result_edge[tk, e] = True
            if full.data_cpu[tk, i]:
                mask.data_cpu[tk, i] = True

    def candidate(local_first: bool) -> Strategy:
        s = Strategy.zeros(spec, tasks)
        for tk, (d, _) in enumerate(tasks.tasks):
            for i in range(spec.num_nodes):
                if i != d:
                    s.result_edge[tk, trees[tk][i]] = 1.0
                if local_first and mask.data_cpu[tk, i]:
                    s.data_cpu[tk, i] = 1.0
                elif i != d:
                    s.data_edge[tk, trees[tk][i]] = 1.0
                else:
                    s.data_cpu[tk, d] = 1.0
        return s

    last_err = None
    for local in (True, False):
        init = candidate(local)
        try:
            rr = run(spec, tasks, init, cfg, mask=mask)
            return _wrap("SPOO", rr)
        except InitError as exc:
            last_err = exc
    raise InfeasibleError(
        f"frozen paths cannot carry the demand at finite cost: {last_err}"
    )


# ---------------------------------------------------------------------------
# LCOR
# ---------------------------------------------------------------------------

def run_lcor(spec, tasks, config: Optional[RunConfig] = None) -> BaselineResult:
    """All data computed at its source; result routing optimized."""
    cfg = config or RunConfig()
    g = spec.graph
    nt = tasks.num_tasks
    for (i, task), rate in tasks.input_rates.items():
        if rate > 0 and not spec.has_compute(i):
            raise InfeasibleError(f"source node {i} has no computation unit")
    init = default_init(spec, tasks)
    mask = ForwardingMask.full(spec, tasks)
    strat = Strategy.zeros(spec, tasks)
    strat.result_edge[:] = init.result_edge
    d1z = _zero_flow_link_d1(spec)
    from .sgp import _compute_tree, _apply_tree_rows

    for tk in range(nt):
        _, next_cmp = _compute_tree(spec, tasks, tk, d1z)
        compute_here = {i for i in range(spec.num_nodes) if spec.has_compute(i)}
        _apply_tree_rows(strat, spec, tk, next_cmp, "data", cpu_nodes=compute_here)
        # freeze every data row on its current single coordinate
        mask.data_edge[tk] = strat.data_edge[tk] > 0
        mask.data_cpu[tk] = strat.data_cpu[tk] > 0
    probe = propagate(spec, tasks, strat)
    if not math.isfinite(probe.total):
        raise InfeasibleError("pure-local computation saturates a computation unit")
    rr = run(spec, tasks, strat, cfg, mask=mask)
    return _wrap("LCOR", rr)


# ---------------------------------------------------------------------------
# LPR
# ---------------------------------------------------------------------------

SATURATION = 0.7


def run_lpr(spec, tasks) -> BaselineResult:
    """Linear-program placement, rounded, with capped data routing.

    Single-site offloading per task under zero-flow linear marginals; data
    flow is capped at SATURATION * capacity on queueing links; results travel
    zero-flow shortest paths; the final cost is evaluated under the true
    nonlinear costs (and may be infinite).
    """
    g = spec.graph
    prob = Problem(spec, tasks)
    nt, n = tasks.num_tasks, spec.num_nodes
    d1z = _zero_flow_link_d1(spec)
    all_edges = np.ones(g.m, dtype=bool)
    compute_nodes = [k for k in range(n) if spec.has_compute(k)]
    if not compute_nodes:
        raise InfeasibleError("no computation unit in the network")

    to_k = {}
    for k in compute_nodes:
        to_k[k] = _dijkstra_toward(g, d1z, {k: 0.0}, all_edges)
    res_trees = _shortest_path_trees(spec, tasks)
    res_dist = {}
    for tk, (d, _) in enumerate(tasks.tasks):
        res_dist[tk], _ = _dijkstra_toward(g, d1z, {d: 0.0}, all_edges)

    queue_edges = [e for e, lk in enumerate(g.links)
                   if isinstance(spec.link_cost[lk], Queue)]
    caps = np.array([SATURATION * spec.link_cost[g.links[e]].capacity
                     for e in queue_edges])

    def data_load(tk, k):
        """Per-queue-edge data bits if task tk is fully placed at node k."""
        load = np.zeros(g.m)
        _, nxt = to_k[k]
        for i in np.nonzero(prob.r[tk] > 0)[0]:
            bits = prob.Lm[tk] * prob.r[tk, i]
            node = int(i)
            for _ in range(n + 1):
                e = nxt[node]
                if e < 0:
                    break
                load[e] += bits
                node = int(g.dst[e])
        return load

    nk = len(compute_nodes)
    costs = np.empty(nt * nk)
    loads = {}
    for tk, (d, m) in enumerate(tasks.tasks):
        total_rate = prob.r[tk].sum()
        for a, k in enumerate(compute_nodes):
            dist_k, _ = to_k[k]
            _, c1, _ = spec.comp_cost[k].eval(0.0)
            costs[tk * nk + a] = (
                prob.Lm[tk] * float(prob.r[tk] @ dist_k)
                + total_rate * spec.weight(k, m) * c1
                + prob.Lp[tk] * total_rate * res_dist[tk][k]
            )
            loads[(tk, a)] = data_load(tk, k)

    a_eq = np.zeros((nt, nt * nk))
    for tk in range(nt):
        a_eq[tk, tk * nk:(tk + 1) * nk] = 1.0
    if queue_edges:
        a_ub = np.zeros((len(queue_edges), nt * nk))
        for (tk, a), load in loads.items():
            a_ub[:, tk * nk + a] = load[queue_edges]
        lp = linprog(costs, A_ub=a_ub, b_ub=caps, A_eq=a_eq,
                     b_eq=np.ones(nt), bounds=(0, None), method="highs")
    else:
        lp = linprog(costs, A_eq=a_eq, b_eq=np.ones(nt), bounds=(0, None),
                     method="highs")
    if not lp.success:
        raise InfeasibleError(f"placement LP infeasible: {lp.message}")

    x = lp.x.reshape(nt, nk)
    placement = [compute_nodes[int(np.argmax(x[tk]))] for tk in range(nt)]

    # capped sequential routing of data, then shortest-path results
    fv = FlowVector(np.zeros((nt, g.m)), np.zeros((nt, g.m)), np.zeros((nt, n)))
    residual = np.full(g.m, np.inf)
    for e, cap in zip(queue_edges, caps):
        residual[e] = cap
    for tk in range(nt):
        k = placement[tk]
        for i in np.nonzero(prob.r[tk] > 0)[0]:
            rate = prob.r[tk, i]
            bits = prob.Lm[tk] * rate
            allowed = residual >= bits - 1e-12
            dist, nxt = _dijkstra_toward(g, d1z, {k: 0.0}, allowed)
            if not math.isfinite(dist[i]):
                raise InfeasibleError(
                    f"saturation caps leave no data route from {i} to {k}"
                )
            node = int(i)
            for _ in range(n + 1):
                e = nxt[node]
                if e < 0:
                    break
                fv.f_minus[tk, e] += rate
                residual[e] -= bits
                node = int(g.dst[e])
            fv.g[tk, node] += rate
            for _ in range(n + 1):
                e = res_trees[tk][node]
                if e < 0:
                    break
                fv.f_plus[tk, e] += rate
                node = int(g.dst[e])
    total = oracle_total(prob, fv)
    return BaselineResult("LPR", total, 1, True, flows=fv)


def run_oracle(spec, tasks, tol: float = 1e-5, **kw) -> BaselineResult:
    res = convex_oracle(spec, tasks, tol=tol, **kw)
    return BaselineResult("Oracle", res.total, res.iterations, res.converged,
                          flows=res.flows, residual=res.gap)
