"""Convex flow-domain reference solver (conditional gradient).

The joint problem is convex in the link/CPU packet rates: minimize the total
cost subject to per-task flow conservation and nonnegativity.  Each
conditional-gradient subproblem is a per-task cheapest route from every
source through some computation site to the destination under the current
marginal costs, solved by a two-stage Dijkstra; an exact line search and the
duality gap certificate finish the method.  Used as ground truth for the
forwarding-fraction optimizers.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InfeasibleError
from .flows import Problem, Strategy, propagate
from .model import ForwardingMask, NetworkSpec, TaskSet
from .sgp import default_init


@dataclass
class FlowVector:
    f_minus: np.ndarray  # (tasks, edges)
    f_plus: np.ndarray   # (tasks, edges)
    g: np.ndarray        # (tasks, nodes)

    def copy(self):
        return FlowVector(self.f_minus.copy(), self.f_plus.copy(), self.g.copy())


@dataclass
class OracleResult:
    flows: FlowVector
    total: float
    gap: float
    iterations: int
    converged: bool


def _aggregate(prob: Problem, fv: FlowVector):
    F = prob.Lm @ fv.f_minus + prob.Lp @ fv.f_plus
    G = (prob.W * fv.g).sum(axis=0)
    return F, G


def oracle_total(prob: Problem, fv: FlowVector) -> float:
    F, G = _aggregate(prob, fv)
    lv, _ = prob.spec.link_cost_arrays(F)
    cv, _ = prob.spec.comp_cost_arrays(G)
    return float(lv.sum() + cv.sum())


def _gradients(prob: Problem, fv: FlowVector):
    F, G = _aggregate(prob, fv)
    _, d1_link = prob.spec.link_cost_arrays(F)
    _, d1_comp = prob.spec.comp_cost_arrays(G)
    grad_m = prob.Lm[:, None] * d1_link[None, :]
    grad_p = prob.Lp[:, None] * d1_link[None, :]
    grad_g = prob.W * d1_comp[None, :]
    return grad_m, grad_p, grad_g


def _dijkstra_toward(graph, weights, seeds, allowed_e):
    """Cheapest paths toward seed nodes; returns (dist, next_edge)."""
    n = graph.n
    dist = np.full(n, np.inf)
    next_edge = np.full(n, -1, dtype=np.int64)
    heap = []
    for node, cost in seeds.items():
        if cost < dist[node]:
            dist[node] = cost
            heapq.heappush(heap, (cost, int(node), -1))
    done = np.zeros(n, dtype=bool)
    while heap:
        cost, i, via = heapq.heappop(heap)
        if done[i]:
            continue
        done[i] = True
        next_edge[i] = via
        for e in graph.in_edges(i):
            if not allowed_e[e]:
                continue
            j = int(graph.src[e])
            cand = cost + weights[e]
            if cand < dist[j]:
                dist[j] = cand
                heapq.heappush(heap, (cand, j, int(e)))
    return dist, next_edge


def _cheapest_routes(prob: Problem, grad_m, grad_p, grad_g, tk):
    """Stage-wise trees for task tk under current marginals.

    Returns (next_data, cpu_node_flag, next_result) where following next_data
    from any node reaches a computation entry point (next_data == -1 there),
    and next_result leads to the destination.
    """
    g = prob.graph
    d = int(prob.dests[tk])
    mask = prob.mask
    dist_res, next_res = _dijkstra_toward(
        g, grad_p[tk], {d: 0.0}, mask.result_edge[tk]
    )
    seeds = {}
    for i in range(g.n):
        if mask.data_cpu[tk, i] and math.isfinite(dist_res[i]):
            seeds[i] = grad_g[tk, i] + dist_res[i]
    if not seeds:
        raise InfeasibleError("no reachable computation site")
    dist_dat, next_dat = _dijkstra_toward(g, grad_m[tk], seeds, mask.data_edge[tk])
    return dist_dat, next_dat, next_res


def _assign_extreme(prob: Problem, grad_m, grad_p, grad_g) -> FlowVector:
    """All-or-nothing assignment of every source along its cheapest route."""
    g = prob.graph
    nt, n, m = prob.tasks.num_tasks, g.n, g.m
    fv = FlowVector(np.zeros((nt, m)), np.zeros((nt, m)), np.zeros((nt, n)))
    for tk in range(nt):
        srcs = np.nonzero(prob.r[tk] > 0)[0]
        if len(srcs) == 0:
            continue
        dist_dat, next_dat, next_res = _cheapest_routes(prob, grad_m, grad_p,
                                                        grad_g, tk)
        for i in srcs:
            if not math.isfinite(dist_dat[i]):
                raise InfeasibleError(f"source {i} cannot reach computation")
            rate = prob.r[tk, i]
            node = int(i)
            for _ in range(n + 1):
                e = next_dat[node]
                if e < 0:
                    break
                fv.f_minus[tk, e] += rate
                node = int(g.dst[e])
            fv.g[tk, node] += rate
            for _ in range(n + 1):
                e = next_res[node]
                if e < 0:
                    break
                fv.f_plus[tk, e] += rate
                node = int(g.dst[e])
    return fv


def _line_search(prob: Problem, cur: FlowVector, target: FlowVector) -> float:
    """Exact minimization of the convex 1-D restriction toward the target."""
    F0, G0 = _aggregate(prob, cur)
    F1, G1 = _aggregate(prob, target)
    dF, dG = F1 - F0, G1 - G0

    def dphi(gamma):
        _, d1l = prob.spec.link_cost_arrays(F0 + gamma * dF)
        _, d1c = prob.spec.comp_cost_arrays(G0 + gamma * dG)
        return float(d1l @ dF + d1c @ dG)

    # keep strictly inside any capacity region along the segment
    hi = _saturation_cap(prob.spec, F0, dF, G0, dG)
    if hi <= 0.0:
        return 0.0
    if dphi(hi) <= 0.0:
        return hi
    lo = 0.0
    if dphi(lo) >= 0.0:
        return 0.0
    for _ in range(70):
        mid = 0.5 * (lo + hi)
        if dphi(mid) <= 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _saturation_cap(spec: NetworkSpec, F0, dF, G0, dG) -> float:
    from .model import Queue

    hi = 1.0
    g = spec.graph
    for e, lk in enumerate(g.links):
        fn = spec.link_cost[lk]
        if isinstance(fn, Queue) and dF[e] > 0:
            room = (fn.capacity * (1 - 1e-12) - F0[e]) / dF[e]
            hi = min(hi, max(room, 0.0))
    for i in range(spec.num_nodes):
        fn = spec.comp_cost.get(i)
        if isinstance(fn, Queue) and dG[i] > 0:
            room = (fn.capacity * (1 - 1e-12) - G0[i]) / dG[i]
            hi = min(hi, max(room, 0.0))
    return hi


def _initial_flows(prob: Problem) -> FlowVector:
    grad_m, grad_p, grad_g = _gradients(
        prob, FlowVector(np.zeros((prob.tasks.num_tasks, prob.graph.m)),
                         np.zeros((prob.tasks.num_tasks, prob.graph.m)),
                         np.zeros((prob.tasks.num_tasks, prob.graph.n)))
    )
    fv = _assign_extreme(prob, grad_m, grad_p, grad_g)
    if math.isfinite(oracle_total(prob, fv)):
        return fv
    strat = default_init(prob.spec, prob.tasks)
    fs = propagate(prob, strategy=strat)
    fv = FlowVector(fs.f_minus.copy(), fs.f_plus.copy(), fs.g.copy())
    if not math.isfinite(oracle_total(prob, fv)):
        raise InfeasibleError("no finite-cost feasible flow found")
    return fv


def convex_oracle(spec: NetworkSpec, tasks: TaskSet, tol: float = 1e-5,
                  max_iters: int = 100000,
                  mask: Optional[ForwardingMask] = None,
                  init: Optional[FlowVector] = None) -> OracleResult:
    """Solve the flow-domain convex program to a relative duality gap.

    Stops when gap <= tol * max(1, |T|); the gap bounds T - T* from above, so
    the returned total is within that margin of the true optimum.
    """
    prob = Problem(spec, tasks, mask)
    fv = init.copy() if init is not None else _initial_flows(prob)
    total = oracle_total(prob, fv)
    gap = math.inf
    it = 0
    for it in range(1, max_iters + 1):
        grad_m, grad_p, grad_g = _gradients(prob, fv)
        target = _assign_extreme(prob, grad_m, grad_p, grad_g)
        gap = float(
            (grad_m * (fv.f_minus - target.f_minus)).sum()
            + (grad_p * (fv.f_plus - target.f_plus)).sum()
            + (grad_g * (fv.g - target.g)).sum()
        )
        total = oracle_total(prob, fv)
        if gap <= tol * max(1.0, abs(total)):
            return OracleResult(fv, total, gap, it, True)
        gamma = _line_search(prob, fv, target)
        if gamma <= 0.0:
            break
        fv.f_minus += gamma * (target.f_minus - fv.f_minus)
        fv.f_plus += gamma * (target.f_plus - fv.f_plus)
        fv.g += gamma * (target.g - fv.g)
    total = oracle_total(prob, fv)
    return OracleResult(fv, total, gap, it, gap <= tol * max(1.0, abs(total)))
