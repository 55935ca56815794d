"""Utility-based congestion control on an extended gateway graph.

Every rate-limited (source, task) pair gets a virtual gateway node holding
the full demand.  Admission forwards data into the physical source over a
free virtual link; rejection "converts" the flow at the gateway (a zero-work
computation whose cost is the lost utility) and returns it to the destination
over a free virtual result link.  Running the standard optimizer on this
extended network maximizes utility-minus-cost, and its sufficient condition
restricted to gateway rows is exactly the marginal-cost vs marginal-utility
admission rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InfeasibleError
from .flows import Problem, Strategy, propagate
from .marginals import MarginalState, compute_marginals
from .model import ForwardingMask, Linear, NetworkSpec, TaskSet
from .optimality import sufficient_residual
from .sgp import (RunConfig, RunResult, _apply_tree_rows, _compute_tree,
                  _result_tree, _zero_flow_link_d1, run)


@dataclass(frozen=True)
class UtilityFn:
    """Alpha-fair utility, shifted so U(0) = 0.

    alpha < 1: r^(1-a)/(1-a); alpha = 1: log(r+eps)-log(eps);
    alpha > 1: ((r+eps)^(1-a) - eps^(1-a))/(1-a).  eps keeps the marginal
    utility finite at r = 0 for alpha >= 1.
    """

    alpha: float
    eps: float = 1e-2

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.alpha >= 1 and self.eps <= 0:
            raise ValueError("eps must be positive for alpha >= 1")

    def u(self, r: float) -> float:
        a = self.alpha
        if a == 1.0:
            return math.log(r + self.eps) - math.log(self.eps)
        if a < 1.0:
            return r ** (1.0 - a) / (1.0 - a)
        return ((r + self.eps) ** (1.0 - a) - self.eps ** (1.0 - a)) / (1.0 - a)

    def du(self, r: float) -> float:
        a = self.alpha
        if a == 1.0:
            return 1.0 / (r + self.eps)
        if a < 1.0:
            return math.inf if r <= 0.0 else r ** (-a)
        return (r + self.eps) ** (-a)

    def d2u(self, r: float) -> float:
        a = self.alpha
        if a == 0.0:
            return 0.0
        if a == 1.0:
            return -1.0 / (r + self.eps) ** 2
        if a < 1.0:
            return -math.inf if r <= 0.0 else -a * r ** (-a - 1.0)
        return -a * (r + self.eps) ** (-a - 1.0)

    def inv(self, value: float) -> float:
        """r with u(r) = value (value >= 0)."""
        a = self.alpha
        if value <= 0:
            return 0.0
        if a == 1.0:
            return self.eps * (math.expm1(value))
        if a < 1.0:
            return ((1.0 - a) * value) ** (1.0 / (1.0 - a))
        base = (1.0 - a) * value + self.eps ** (1.0 - a)
        if base <= 0:
            return math.inf
        return base ** (1.0 / (1.0 - a)) - self.eps


@dataclass(frozen=True)
class UtilityLoss:
    """Computation-cost kind pricing rejected demand: U(rbar) - U(rbar - G)."""

    utility: UtilityFn
    rbar: float

    def eval(self, x):
        r = max(self.rbar - x, 0.0)
        return (
            self.utility.u(self.rbar) - self.utility.u(r),
            self.utility.du(r),
            -self.utility.d2u(r),
        )

    def curvature_bound(self, total_budget):
        # cost(G) <= budget pins the remaining admitted rate from below
        if not math.isfinite(total_budget):
            return math.inf
        lost = self.utility.u(self.rbar) - total_budget
        r_min = self.utility.inv(lost) if lost > 0 else 0.0
        bound = -self.utility.d2u(r_min)
        return min(bound, 1e12) if not math.isnan(bound) else 1e12


@dataclass
class ExtendedNetwork:
    spec: NetworkSpec
    tasks: TaskSet
    mask: ForwardingMask
    base_spec: NetworkSpec
    base_tasks: TaskSet
    gateways: dict  # (node, task) -> virtual node id
    rate_limits: dict
    utilities: dict
    admit_edge: dict = field(default_factory=dict)   # (node, task) -> edge id
    reject_edge: dict = field(default_factory=dict)  # (node, task) -> edge id


def build_extended(spec: NetworkSpec, tasks: TaskSet, rate_limits: dict,
                   utilities: dict) -> ExtendedNetwork:
    """Extended graph with one gateway per rate-limited (source, task) pair.

    Base exogenous rates for limited pairs move to the gateways at the upper
    limit; unlimited pairs keep their fixed rates.
    """
    n = spec.num_nodes
    entries = [(i, task) for (i, task), rbar in sorted(rate_limits.items(),
                                                       key=lambda kv: kv[0])
               if rbar > 0]
    links = list(spec.links)
    link_cost = dict(spec.link_cost)
    comp_cost = dict(spec.comp_cost)
    comp_weight = dict(spec.comp_weight)
    gateways = {}
    rates = {
        key: rate for key, rate in tasks.input_rates.items()
        if key not in rate_limits
    }
    admit_edge = {}
    reject_edge = {}
    for idx, (i, task) in enumerate(entries):
        d, m = task
        v = n + idx
        gateways[(i, task)] = v
        admit_edge[(i, task)] = len(links)
        links.append((v, i))
        link_cost[(v, i)] = Linear(0.0)
        if (v, d) not in link_cost:
            reject = len(links)
            links.append((v, d))
            link_cost[(v, d)] = Linear(0.0)
        else:
            reject = links.index((v, d))
        reject_edge[(i, task)] = reject
        util = utilities[(i, task)]
        comp_cost[v] = UtilityLoss(util, rate_limits[(i, task)])
        for mm in set(mt for _, mt in tasks.tasks):
            comp_weight[(v, mm)] = 1.0
        rates[(v, task)] = rate_limits[(i, task)]
    ext_spec = NetworkSpec(n + len(entries), links, link_cost, comp_cost,
                           comp_weight)
    ext_tasks = TaskSet(list(tasks.tasks), dict(tasks.data_size),
                        dict(tasks.result_size), rates)
    mask = ForwardingMask.full(ext_spec, ext_tasks)
    g = ext_spec.graph
    for (i, task), v in gateways.items():
        tk = ext_tasks.index[task]
        for e in g.out_edges(v):
            mask.data_edge[:, e] = False
            mask.result_edge[:, e] = False
        mask.data_cpu[:, v] = False
        # own task: admit via (v, i) or reject via the gateway conversion
        mask.data_edge[tk, admit_edge[(i, task)]] = True
        mask.data_cpu[tk, v] = True
        mask.result_edge[tk, reject_edge[(i, task)]] = True
        # other tasks carry no traffic here; pin their rows on free coords
        for tk2 in range(ext_tasks.num_tasks):
            if tk2 != tk:
                mask.data_cpu[tk2, v] = True
                mask.result_edge[tk2, reject_edge[(i, task)]] = True
    return ExtendedNetwork(ext_spec, ext_tasks, mask, spec, tasks, gateways,
                           dict(rate_limits), dict(utilities), admit_edge,
                           reject_edge)


def all_reject_start(ext: ExtendedNetwork) -> Strategy:
    """Feasible start rejecting every limited arrival; physical flows zero."""
    spec, tasks = ext.spec, ext.tasks
    strat = Strategy.zeros(spec, tasks)
    d1z = _zero_flow_link_d1(ext.base_spec)
    base_g = ext.base_spec.graph
    virtual = set(ext.gateways.values())
    for tk in range(tasks.num_tasks):
        _, next_res = _result_tree(ext.base_spec, ext.base_tasks, tk, d1z)
        _apply_tree_rows(strat, ext.base_spec, tk, next_res, "result")
        _, next_cmp = _compute_tree(ext.base_spec, ext.base_tasks, tk, d1z)
        compute_here = {i for i in range(ext.base_spec.num_nodes)
                        if ext.base_spec.has_compute(i)}
        _apply_tree_rows(strat, ext.base_spec, tk, next_cmp, "data",
                         cpu_nodes=compute_here)
    for (i, task), v in ext.gateways.items():
        tk = tasks.index[task]
        strat.data_cpu[tk, v] = 1.0
        strat.result_edge[tk, ext.reject_edge[(i, task)]] = 1.0
        for tk2 in range(tasks.num_tasks):
            if tk2 != tk:
                strat.data_cpu[tk2, v] = 1.0
                strat.result_edge[tk2, ext.reject_edge[(i, task)]] = 1.0
    return strat


def admitted_rates(ext: ExtendedNetwork, strategy: Strategy) -> dict:
    out = {}
    for (i, task), v in ext.gateways.items():
        tk = ext.tasks.index[task]
        e = ext.admit_edge[(i, task)]
        out[(i, task)] = ext.rate_limits[(i, task)] * float(
            strategy.data_edge[tk, e]
        )
    return out


@dataclass
class CCResult:
    strategy: Strategy
    admitted: dict
    trace: list
    run_result: RunResult


def run_sgp_cc(ext: ExtendedNetwork, config: Optional[RunConfig] = None) -> CCResult:
    cfg = config or RunConfig()
    init = all_reject_start(ext)
    rr = run(ext.spec, ext.tasks, init, cfg, mask=ext.mask)
    return CCResult(rr.strategy, admitted_rates(ext, rr.strategy), rr.trace, rr)


@dataclass
class CCReport:
    ok: bool
    worst_gap: float
    entries: list


def check_sufficient_cc(ext: ExtendedNetwork, marg: MarginalState,
                        strategy: Strategy, tol: float = 1e-6) -> CCReport:
    """Admission optimality: admitted flow needs network marginal <= marginal
    utility; rejected flow needs the reverse."""
    entries = []
    worst = 0.0
    admitted = admitted_rates(ext, strategy)
    for (i, task), v in ext.gateways.items():
        tk = ext.tasks.index[task]
        util = ext.utilities[(i, task)]
        r_adm = admitted[(i, task)]
        duty = util.du(r_adm)
        net = marg.dT_dr[tk, i]
        admit_frac = strategy.data_edge[tk, ext.admit_edge[(i, task)]]
        reject_frac = strategy.data_cpu[tk, v]
        if admit_frac > 0 and net > duty + tol:
            gap = net - duty
            entries.append(("admit", i, task, float(gap)))
            worst = max(worst, gap)
        if reject_frac > 0 and duty > net + tol:
            gap = duty - net
            entries.append(("reject", i, task, float(gap)))
            worst = max(worst, gap)
    return CCReport(not entries, float(worst), entries)


def utility_minus_cost(ext: ExtendedNetwork, strategy: Strategy) -> float:
    """Objective value: total utility of admitted rates minus physical cost."""
    flow = propagate(ext.spec, ext.tasks, strategy)
    base_m = ext.base_spec.graph.m
    lv, _ = ext.spec.link_cost_arrays(flow.F)
    physical_links = float(lv[:base_m].sum())
    cv, _ = ext.spec.comp_cost_arrays(flow.G)
    physical_comp = float(cv[:ext.base_spec.num_nodes].sum())
    util = sum(
        ext.utilities[key].u(rate)
        for key, rate in admitted_rates(ext, strategy).items()
    )
    return util - physical_links - physical_comp
