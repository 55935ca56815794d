"""Marginal costs via the two-stage broadcast, simulated as ordered sweeps.

Stage 1 sweeps each task's result DAG backwards from the destination and
yields the marginal cost of extra result traffic per node; stage 2 then
sweeps the data DAG and yields the marginal cost of extra exogenous input.
Both stages also carry maximum support-path lengths and the "improper" tags
marking subtrees that contain a non-descending marginal, which feed the
blocked-node sets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .flows import SNAP, FlowState, Problem, Strategy


@dataclass
class Stage1:
    dT_dtplus: np.ndarray
    h_plus: np.ndarray
    improper_plus: np.ndarray


@dataclass
class Stage2:
    dT_dr: np.ndarray
    h_minus: np.ndarray
    improper_minus: np.ndarray


@dataclass
class MarginalState:
    dT_dr: np.ndarray
    dT_dtplus: np.ndarray
    delta_minus_edge: np.ndarray
    delta_minus_cpu: np.ndarray
    delta_plus_edge: np.ndarray
    h_minus: np.ndarray
    h_plus: np.ndarray
    improper_minus: np.ndarray
    improper_plus: np.ndarray
    d1_link: np.ndarray
    d1_comp: np.ndarray


def _as_problem(spec_or_problem, tasks):
    if isinstance(spec_or_problem, Problem):
        return spec_or_problem
    return Problem(spec_or_problem, tasks)


def broadcast_stage1(spec, tasks, strategy: Strategy, flow: FlowState) -> Stage1:
    """Result-stage marginals; zero at each destination by construction."""
    prob = _as_problem(spec, tasks)
    g = prob.graph
    nt, n = prob.tasks.num_tasks, g.n
    _, d1_link = prob.spec.link_cost_arrays(flow.F)
    dtp = np.empty((nt, n))
    hp = np.empty((nt, n), dtype=np.int32)
    imp = np.empty((nt, n), dtype=np.uint8)
    for tk in range(nt):
        coef = prob.Lp[tk] * d1_link
        marg, hops, bad = K.sweep_marginal_result(
            flow.order_plus[tk], g.out_ptr, g.out_eids, g.dst,
            strategy.result_edge[tk], flow.act_plus[tk], coef,
            int(prob.dests[tk]),
        )
        dtp[tk], hp[tk], imp[tk] = marg, hops, bad
    return Stage1(dtp, hp, imp)


def broadcast_stage2(spec, tasks, strategy: Strategy, flow: FlowState,
                     stage1: Stage1) -> Stage2:
    """Data-stage marginals; pure-offload nodes seed the recursion."""
    prob = _as_problem(spec, tasks)
    g = prob.graph
    nt, n = prob.tasks.num_tasks, g.n
    _, d1_link = prob.spec.link_cost_arrays(flow.F)
    _, d1_comp = prob.spec.comp_cost_arrays(flow.G)
    dr = np.empty((nt, n))
    hm = np.empty((nt, n), dtype=np.int32)
    imp = np.empty((nt, n), dtype=np.uint8)
    for tk in range(nt):
        coef = prob.Lm[tk] * d1_link
        cpu_term = prob.W[tk] * d1_comp + stage1.dT_dtplus[tk]
        marg, hops, bad = K.sweep_marginal_data(
            flow.order_minus[tk], g.out_ptr, g.out_eids, g.dst,
            strategy.data_edge[tk], flow.act_minus[tk], coef, cpu_term,
            strategy.data_cpu[tk],
        )
        dr[tk], hm[tk], imp[tk] = marg, hops, bad
    return Stage2(dr, hm, imp)


def compute_deltas(spec, tasks, flow: FlowState, dT_dr, dT_dtplus):
    """Per-coordinate marginal forwarding costs (data CPU slot included)."""
    prob = _as_problem(spec, tasks)
    g = prob.graph
    _, d1_link = prob.spec.link_cost_arrays(flow.F)
    _, d1_comp = prob.spec.comp_cost_arrays(flow.G)
    delta_minus_edge = prob.Lm[:, None] * d1_link[None, :] + dT_dr[:, g.dst]
    delta_plus_edge = prob.Lp[:, None] * d1_link[None, :] + dT_dtplus[:, g.dst]
    has = np.array([prob.spec.has_compute(i) for i in range(g.n)])
    delta_minus_cpu = np.where(has, prob.W * d1_comp[None, :] + dT_dtplus, np.inf)
    return delta_minus_edge, delta_minus_cpu, delta_plus_edge


def compute_marginals(spec, tasks, strategy: Strategy, flow: FlowState) -> MarginalState:
    """Runs both broadcast stages and assembles all deltas."""
    prob = _as_problem(spec, tasks)
    s1 = broadcast_stage1(prob, tasks, strategy, flow)
    s2 = broadcast_stage2(prob, tasks, strategy, flow, s1)
    dme, dmc, dpe = compute_deltas(prob, tasks, flow, s2.dT_dr, s1.dT_dtplus)
    _, d1_link = prob.spec.link_cost_arrays(flow.F)
    _, d1_comp = prob.spec.comp_cost_arrays(flow.G)
    return MarginalState(
        dT_dr=s2.dT_dr, dT_dtplus=s1.dT_dtplus,
        delta_minus_edge=dme, delta_minus_cpu=dmc, delta_plus_edge=dpe,
        h_minus=s2.h_minus, h_plus=s1.h_plus,
        improper_minus=s2.improper_minus, improper_plus=s1.improper_plus,
        d1_link=d1_link, d1_comp=d1_comp,
    )


def compute_blocked(spec, tasks, strategy: Strategy, marg: MarginalState):
    """Blocked neighbor sets, as edge masks (True = may not receive flow).

    A zero-flow link (i, j) is blocked when j's marginal is not strictly
    below i's, or j's downstream support carries an improper link.  Links
    already carrying flow are never blocked.
    """
    prob = _as_problem(spec, tasks)
    g = prob.graph
    src, dst = g.src, g.dst
    zero_m = strategy.data_edge <= SNAP
    zero_p = strategy.result_edge <= SNAP
    uphill_m = marg.dT_dr[:, dst] >= marg.dT_dr[:, src]
    uphill_p = marg.dT_dtplus[:, dst] >= marg.dT_dtplus[:, src]
    tagged_m = marg.improper_minus[:, dst].astype(bool)
    tagged_p = marg.improper_plus[:, dst].astype(bool)
    blocked_minus = zero_m & (uphill_m | tagged_m)
    blocked_plus = zero_p & (uphill_p | tagged_p)
    return blocked_minus, blocked_plus
