"""Optimality condition checkers and the geodesic-convexity probe.

Two conditions are checked on every (node, task) forwarding row:

* the stationarity (KKT) condition on the true partials t * delta, which is
  vacuous at zero-traffic nodes, and
* the traffic-independent sufficient condition on the deltas themselves,
  which certifies global optimality and is evaluated at every node.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateError
from .flows import (SNAP, FlowState, Problem, Strategy, dense_total_cost,
                    phi_from_flows, propagate)
from .marginals import MarginalState, compute_marginals


@dataclass
class OptimalityReport:
    kkt_ok: bool = True
    sufficient_ok: bool = True
    worst_violation: float = 0.0
    violating_entries: list = field(default_factory=list)


def _as_problem(spec_or_problem, tasks):
    if isinstance(spec_or_problem, Problem):
        return spec_or_problem
    return Problem(spec_or_problem, tasks)


def _segment_min(values, out_ptr, out_eids):
    """Per-node minimum over out-edge values (+inf for edgeless nodes)."""
    n = len(out_ptr) - 1
    mins = np.full(n, np.inf)
    if len(out_eids) == 0:
        return mins
    ordered = values[out_eids]
    empty = out_ptr[:-1] == out_ptr[1:]
    starts = np.minimum(out_ptr[:-1], len(out_eids) - 1)
    filled = np.minimum.reduceat(ordered, starts)
    mins[~empty] = filled[~empty]
    return mins


def _row_gaps(prob: Problem, strategy: Strategy, marg: MarginalState,
              weight_by_traffic, flow: FlowState):
    """Yield (kind, tk, node, coord, gap) for every support entry off row-min."""
    g = prob.graph
    nt = prob.tasks.num_tasks
    mask = prob.mask
    out = []
    worst = 0.0
    for tk in range(nt):
        d = int(prob.dests[tk])
        # data rows
        vals_e = np.where(mask.data_edge[tk], marg.delta_minus_edge[tk], np.inf)
        row_min = _segment_min(vals_e, g.out_ptr, g.out_eids)
        cpu_vals = np.where(mask.data_cpu[tk], marg.delta_minus_cpu[tk], np.inf)
        row_min = np.minimum(row_min, cpu_vals)
        if weight_by_traffic:
            t_i = flow.t_minus[tk]
            scale_e = t_i[g.src]
            scale_c = t_i
        else:
            scale_e = np.ones(g.m)
            scale_c = np.ones(g.n)
        sup = strategy.data_edge[tk] > SNAP
        for e in np.nonzero(sup)[0]:
            gap = (marg.delta_minus_edge[tk, e] - row_min[g.src[e]]) * scale_e[e]
            if gap > 0:
                out.append(("data", tk, int(g.src[e]), int(g.dst[e]), float(gap)))
                worst = max(worst, gap)
        sup_c = strategy.data_cpu[tk] > SNAP
        for i in np.nonzero(sup_c)[0]:
            gap = (marg.delta_minus_cpu[tk, i] - row_min[i]) * scale_c[i]
            if gap > 0:
                out.append(("data", tk, int(i), "cpu", float(gap)))
                worst = max(worst, gap)
        # result rows (destination has none)
        vals_p = np.where(mask.result_edge[tk], marg.delta_plus_edge[tk], np.inf)
        row_min_p = _segment_min(vals_p, g.out_ptr, g.out_eids)
        if weight_by_traffic:
            scale_p = flow.t_plus[tk][g.src]
        else:
            scale_p = np.ones(g.m)
        sup_p = (strategy.result_edge[tk] > SNAP) & (g.src != d)
        for e in np.nonzero(sup_p)[0]:
            gap = (marg.delta_plus_edge[tk, e] - row_min_p[g.src[e]]) * scale_p[e]
            if gap > 0:
                out.append(("result", tk, int(g.src[e]), int(g.dst[e]), float(gap)))
                worst = max(worst, gap)
    return float(worst), out


def sufficient_residual(prob: Problem, strategy: Strategy, flow: FlowState,
                        marg: MarginalState) -> float:
    """Max support-entry gap to the row minimum over all rows (fast path)."""
    g = prob.graph
    mask = prob.mask
    worst = 0.0
    for tk in range(prob.tasks.num_tasks):
        d = int(prob.dests[tk])
        vals_e = np.where(mask.data_edge[tk], marg.delta_minus_edge[tk], np.inf)
        row_min = _segment_min(vals_e, g.out_ptr, g.out_eids)
        row_min = np.minimum(
            row_min, np.where(mask.data_cpu[tk], marg.delta_minus_cpu[tk], np.inf)
        )
        sup = strategy.data_edge[tk] > SNAP
        if sup.any():
            worst = max(worst, float(np.max(
                marg.delta_minus_edge[tk][sup] - row_min[g.src[sup]],
                initial=0.0,
            )))
        sup_c = strategy.data_cpu[tk] > SNAP
        if sup_c.any():
            worst = max(worst, float(np.max(
                marg.delta_minus_cpu[tk][sup_c] - row_min[sup_c], initial=0.0,
            )))
        vals_p = np.where(mask.result_edge[tk], marg.delta_plus_edge[tk], np.inf)
        row_min_p = _segment_min(vals_p, g.out_ptr, g.out_eids)
        sup_p = (strategy.result_edge[tk] > SNAP) & (g.src != d)
        if sup_p.any():
            worst = max(worst, float(np.max(
                marg.delta_plus_edge[tk][sup_p] - row_min_p[g.src[sup_p]],
                initial=0.0,
            )))
    return worst


def check_kkt(spec, tasks, strategy: Strategy, flow: FlowState,
              marg: MarginalState, tol: float = 1e-6) -> OptimalityReport:
    """Stationarity on the true partials; rows with zero traffic pass freely."""
    prob = _as_problem(spec, tasks)
    worst, entries = _row_gaps(prob, strategy, marg, True, flow)
    entries = [e for e in entries if e[4] > tol]
    return OptimalityReport(
        kkt_ok=not entries, sufficient_ok=False,
        worst_violation=worst, violating_entries=entries,
    )


def check_sufficient(spec, tasks, strategy: Strategy, flow: FlowState,
                     marg: MarginalState, tol: float = 1e-6) -> OptimalityReport:
    """Traffic-independent certificate of global optimality (all rows)."""
    prob = _as_problem(spec, tasks)
    worst, entries = _row_gaps(prob, strategy, marg, False, flow)
    entries = [e for e in entries if e[4] > tol]
    return OptimalityReport(
        kkt_ok=False, sufficient_ok=not entries,
        worst_violation=worst, violating_entries=entries,
    )


def verify(spec, tasks, strategy: Strategy, tol: float = 1e-6) -> OptimalityReport:
    """Propagate, broadcast, and run both checks in one call."""
    flow = propagate(spec, tasks, strategy)
    marg = compute_marginals(spec, tasks, strategy, flow)
    kkt = check_kkt(spec, tasks, strategy, flow, marg, tol)
    suff = check_sufficient(spec, tasks, strategy, flow, marg, tol)
    return OptimalityReport(
        kkt_ok=kkt.kkt_ok, sufficient_ok=suff.sufficient_ok,
        worst_violation=suff.worst_violation,
        violating_entries=suff.violating_entries,
    )


@dataclass
class ConvexityReport:
    max_violation: float
    values: np.ndarray
    ts: np.ndarray


def geodesic_probe(spec, tasks, phi1: Strategy, phi2: Strategy,
                   samples: int = 21) -> ConvexityReport:
    """Evaluate the cost along the flow-domain straight line mapped back to
    forwarding fractions, and report the worst midpoint-convexity violation.

    Raises DegenerateError when any interpolated state has a zero-traffic
    node (a reflection point, where the mapping back to fractions breaks).
    """
    if samples < 3:
        raise ValueError("need at least 3 samples")
    f1 = propagate(spec, tasks, phi1)
    f2 = propagate(spec, tasks, phi2)
    ts = np.linspace(0.0, 1.0, samples)
    vals = np.empty(samples)
    for k, t in enumerate(ts):
        fm = (1 - t) * f1.f_minus + t * f2.f_minus
        fp = (1 - t) * f1.f_plus + t * f2.f_plus
        gg = (1 - t) * f1.g + t * f2.g
        phi_t = phi_from_flows(spec, tasks, fm, fp, gg)
        vals[k] = dense_total_cost(spec, tasks, phi_t)
    worst = 0.0
    for i in range(samples):
        for j in range(i + 2, samples, 2):
            mid = (i + j) // 2
            worst = max(worst, vals[mid] - 0.5 * (vals[i] + vals[j]))
    return ConvexityReport(float(worst), vals, ts)
