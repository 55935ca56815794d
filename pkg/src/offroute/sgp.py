"""Scaled gradient projection over per-node forwarding simplices.

Each iteration broadcasts marginals, derives blocked neighbor sets and
diagonal scaling matrices from curvature bounds at the initial cost, solves a
small simplex-constrained QP per (node, task, stage) row, and applies the
updates behind a joint backtracking safeguard that keeps the total cost
non-increasing.  Synchronous sweeps update every row from the same frozen
marginals; the asynchronous schedules update one row per iteration.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import _kernels as K
from .errors import InfeasibleAfterEvent, InfeasibleError, InitError, LoopError
from .flows import SNAP, FlowState, Problem, Strategy, propagate
from .marginals import MarginalState, compute_blocked, compute_marginals
from .model import ForwardingMask, NetworkSpec, TaskSet
from .optimality import sufficient_residual

DESCENT_SLACK = 1e-10  # relative slack when accepting a backtracked step
MAX_HALVINGS = 30


@dataclass(frozen=True)
class Event:
    """Injected network change; currently only full server failures."""

    kind: str
    node: int


def server_failure(node: int) -> Event:
    return Event("server_failure", node)


@dataclass
class RunConfig:
    max_iters: int = 500
    tol: float = 1e-6
    schedule: str = "sync"  # sync | roundrobin | random
    seed: int = 0
    events: list = field(default_factory=list)  # (iteration, Event) pairs
    gp_beta: float = math.inf
    algorithm: str = "sgp"  # sgp | gp
    # "hessian" (default) scales by diagonal Hessian estimates from
    # phi^2-weighted curvature sweeps; "local"/"reach"/"budget" use the
    # bound-style diagonal with curvature taken at the current flows, at the
    # worst flows reachable in one sweep, or over every state cheaper than
    # the current cost (the last is extremely conservative whenever some
    # link capacity is small).
    scaling: str = "hessian"


@dataclass
class TraceRow:
    iteration: int
    total: float
    residual: float
    node: int  # -1 for synchronous sweeps
    event: bool


@dataclass
class RunResult:
    strategy: Strategy
    trace: list
    converged: bool
    iterations: int
    total: float
    residual: float
    wall_ms: float
    spec: NetworkSpec
    tasks: TaskSet
    flow: FlowState


# ---------------------------------------------------------------------------
# Scaling matrices
# ---------------------------------------------------------------------------

class _Bounds:
    """Curvature terms A_ij, the per-node CPU analogue, and the link max."""

    def __init__(self, a_link, a_comp):
        self.a_link = a_link
        self.a_comp = a_comp
        self.a_max = float(a_link.max()) if len(a_link) else 0.0

    @classmethod
    def budget(cls, spec: NetworkSpec, t0: float) -> "_Bounds":
        """Worst case over every state with total cost at most t0."""
        a_link, a_comp = spec.curvature_bounds(t0)
        return cls(a_link, a_comp)

    @classmethod
    def local(cls, spec: NetworkSpec, flow: FlowState) -> "_Bounds":
        """Curvature at the current flows."""
        _, _, d2_link = spec.link_cost_arrays(flow.F, want_d2=True)
        _, _, d2_comp = spec.comp_cost_arrays(flow.G, want_d2=True)
        return cls(d2_link, d2_comp)

    @classmethod
    def reach(cls, prob: Problem, flow: FlowState) -> "_Bounds":
        """Curvature at the worst flows reachable in one sweep.

        A node can add at most its own traffic to an out-link (or CPU), and
        no accepted state can put more cost on a single element than the
        current total, whichever binds first.
        """
        spec = prob.spec
        g = prob.graph
        inflow = prob.Lm @ flow.t_minus + prob.Lp @ flow.t_plus  # per node
        budget_link, budget_comp = spec.curvature_bounds(flow.total)
        f_reach = flow.F + inflow[g.src]
        _, _, d2_link = spec.link_cost_arrays(f_reach, want_d2=True)
        a_link = np.minimum(d2_link, budget_link)
        g_reach = flow.G + (prob.W * flow.t_minus).sum(axis=0)
        _, _, d2_comp = spec.comp_cost_arrays(g_reach, want_d2=True)
        a_comp = np.minimum(d2_comp, budget_comp)
        return cls(a_link, a_comp)

    @classmethod
    def at_state(cls, prob, flow, mode) -> "_Bounds":
        if mode == "budget":
            return cls.budget(prob.spec, flow.total)
        if mode == "local":
            return cls.local(prob.spec, flow)
        if mode == "reach":
            return cls.reach(prob, flow)
        raise ValueError(f"unknown scaling mode {mode!r}")


def _usable_masks(prob: Problem, strategy: Strategy, blocked):
    blocked_minus, blocked_plus = blocked
    use_me = prob.mask.data_edge & ~blocked_minus
    use_pe = prob.mask.result_edge & ~blocked_plus
    use_me |= strategy.data_edge > SNAP
    use_pe |= strategy.result_edge > SNAP
    use_mc = prob.mask.data_cpu | (strategy.data_cpu > SNAP)
    return use_me, use_mc, use_pe


def _hessian_arrays(prob: Problem, strategy: Strategy, flow: FlowState):
    """Diagonal Hessian estimates via phi^2-weighted curvature sweeps.

    The second derivative of the cost in a forwarding fraction is the
    squared row traffic times (the link's own curvature plus the accumulated
    curvature of the downstream support); the downstream part satisfies the
    same recursion as the marginals with squared weights, so it rides the
    same sweep kernels.
    """
    g = prob.graph
    spec = prob.spec
    nt = prob.tasks.num_tasks
    _, _, d2_link = spec.link_cost_arrays(flow.F, want_d2=True)
    _, _, d2_comp = spec.comp_cost_arrays(flow.G, want_d2=True)
    m_me = np.empty((nt, g.m))
    m_mc = np.empty((nt, g.n))
    m_pe = np.empty((nt, g.m))
    for tk in range(nt):
        coef_p = prob.Lp[tk] ** 2 * d2_link
        phi2_p = strategy.result_edge[tk] ** 2
        psi_p, _, _ = K.sweep_marginal_result(
            flow.order_plus[tk], g.out_ptr, g.out_eids, g.dst,
            phi2_p, flow.act_plus[tk], coef_p, int(prob.dests[tk]),
        )
        coef_m = prob.Lm[tk] ** 2 * d2_link
        phi2_m = strategy.data_edge[tk] ** 2
        cpu_curv = prob.W[tk] ** 2 * d2_comp + psi_p
        psi_m, _, _ = K.sweep_marginal_data(
            flow.order_minus[tk], g.out_ptr, g.out_eids, g.dst,
            phi2_m, flow.act_minus[tk], coef_m, cpu_curv,
            strategy.data_cpu[tk] ** 2,
        )
        # full Hessian diagonal: the QP's quadratic term carries no 1/2, so
        # this yields half-Newton steps, which stay contractive when every
        # row moves at once.
        tm2 = flow.t_minus[tk] ** 2
        tp2 = flow.t_plus[tk] ** 2
        m_me[tk] = tm2[g.src] * (coef_m + psi_m[g.dst])
        m_mc[tk] = tm2 * cpu_curv
        m_pe[tk] = tp2[g.src] * (coef_p + psi_p[g.dst])
    return m_me, m_mc, m_pe


def _scaling_arrays(prob: Problem, flow: FlowState, marg: MarginalState,
                    bounds, use_me, use_pe, algorithm, gp_beta,
                    damp=1.0, strategy=None, mode="hessian"):
    """Diagonal scaling entries for every coordinate, vectorized per task."""
    g = prob.graph
    nt = prob.tasks.num_tasks
    if algorithm == "gp":
        m_me = flow.t_minus[:, g.src] / gp_beta
        m_mc = flow.t_minus / gp_beta
        m_pe = flow.t_plus[:, g.src] / gp_beta
        return m_me, m_mc, m_pe
    if mode == "hessian":
        m_me, m_mc, m_pe = _hessian_arrays(prob, strategy, flow)
        if damp != 1.0:
            m_me, m_mc, m_pe = m_me * damp, m_mc * damp, m_pe * damp
        return m_me, m_mc, m_pe
    n = g.n
    n_unb_m = np.empty((nt, n))
    n_unb_p = np.empty((nt, n))
    for tk in range(nt):
        n_unb_m[tk] = np.bincount(g.src[use_me[tk]], minlength=n)
        n_unb_p[tk] = np.bincount(g.src[use_pe[tk]], minlength=n)
    tm_src = flow.t_minus[:, g.src]
    tp_src = flow.t_plus[:, g.src]
    m_me = 0.5 * tm_src * (
        bounds.a_link[None, :]
        + n_unb_m[:, g.src] * marg.h_minus[:, g.dst] * bounds.a_max
    )
    m_mc = 0.5 * flow.t_minus * bounds.a_comp[None, :]
    m_pe = 0.5 * tp_src * (
        bounds.a_link[None, :]
        + n_unb_p[:, g.src] * marg.h_plus[:, g.dst] * bounds.a_max
    )
    if damp != 1.0:
        m_me = m_me * damp
        m_mc = m_mc * damp
        m_pe = m_pe * damp
    return m_me, m_mc, m_pe


def scaling_matrix(spec, tasks, node, task_idx, kind, flow, marg, t0,
                   blocked=None, strategy=None, mask=None):
    """Diagonal of the scaling matrix for one row.

    Coordinate order is [CPU] + out-edges for data rows, out-edges for result
    rows; blocked coordinates carry no entry (they are excluded from the
    update).  Returns (coords, diag) where coords names each entry.
    """
    prob = Problem(spec, tasks, mask)
    bounds = _Bounds.budget(spec, t0)
    if strategy is None:
        strategy = Strategy.zeros(spec, tasks)
    if blocked is None:
        blocked = (
            np.zeros_like(prob.mask.data_edge),
            np.zeros_like(prob.mask.result_edge),
        )
    use_me, use_mc, use_pe = _usable_masks(prob, strategy, blocked)
    m_me, m_mc, m_pe = _scaling_arrays(prob, flow, marg, bounds, use_me, use_pe,
                                       "sgp", math.inf, 1.0, strategy, "budget")
    g = spec.graph
    coords, diag = [], []
    if kind == "data":
        if use_mc[task_idx, node]:
            coords.append("cpu")
            diag.append(m_mc[task_idx, node])
        for e in g.out_edges(node):
            if use_me[task_idx, e]:
                coords.append(int(g.dst[e]))
                diag.append(m_me[task_idx, e])
    else:
        for e in g.out_edges(node):
            if use_pe[task_idx, e]:
                coords.append(int(g.dst[e]))
                diag.append(m_pe[task_idx, e])
    return coords, np.array(diag)


# ---------------------------------------------------------------------------
# Row updates
# ---------------------------------------------------------------------------

def _update_all(prob: Problem, strategy: Strategy, flow: FlowState,
                marg: MarginalState, bounds: _Bounds, cfg: RunConfig,
                damp=1.0) -> Strategy:
    blocked = compute_blocked(prob, prob.tasks, strategy, marg)
    use_me, use_mc, use_pe = _usable_masks(prob, strategy, blocked)
    m_me, m_mc, m_pe = _scaling_arrays(
        prob, flow, marg, bounds, use_me, use_pe, cfg.algorithm, cfg.gp_beta,
        damp, strategy, cfg.scaling,
    )
    g = prob.graph
    gp = 1 if cfg.algorithm == "gp" else 0
    beta = cfg.gp_beta
    new = strategy.copy()
    for tk in range(prob.tasks.num_tasks):
        bad = K.update_rows(
            g.out_ptr, g.out_eids, g.dst,
            new.data_edge[tk], new.data_cpu[tk],
            marg.delta_minus_edge[tk], marg.delta_minus_cpu[tk],
            m_me[tk], m_mc[tk],
            use_me[tk].astype(np.uint8), use_mc[tk].astype(np.uint8),
            beta, cfg.tol, -1, gp,
        )
        if bad >= 0:
            raise InfeasibleError(f"all data coordinates blocked at node {bad}")
        bad = K.update_rows(
            g.out_ptr, g.out_eids, g.dst,
            new.result_edge[tk], None,
            marg.delta_plus_edge[tk], np.zeros(g.n),
            m_pe[tk], np.zeros(g.n),
            use_pe[tk].astype(np.uint8), np.zeros(g.n, dtype=np.uint8),
            beta, cfg.tol, int(prob.dests[tk]), gp,
        )
        if bad >= 0:
            raise InfeasibleError(f"all result coordinates blocked at node {bad}")
    new.snap()
    return new


def _update_one(prob: Problem, strategy: Strategy, flow: FlowState,
                marg: MarginalState, bounds: _Bounds, cfg: RunConfig,
                node: int, tk: int, kind: str) -> Strategy:
    """Single-row variant used by the asynchronous schedules and sgp_step."""
    blocked = compute_blocked(prob, prob.tasks, strategy, marg)
    use_me, use_mc, use_pe = _usable_masks(prob, strategy, blocked)
    m_me, m_mc, m_pe = _scaling_arrays(
        prob, flow, marg, bounds, use_me, use_pe, cfg.algorithm, cfg.gp_beta,
        1.0, strategy, cfg.scaling,
    )
    g = prob.graph
    eids = g.out_edges(node)
    gp = 1 if cfg.algorithm == "gp" else 0
    new = strategy.copy()
    if kind == "data":
        use = [e for e in eids if use_me[tk, e] or strategy.data_edge[tk, e] > 0]
        use_cpu = bool(use_mc[tk, node]) or strategy.data_cpu[tk, node] > 0
        k = len(use) + (1 if use_cpu else 0)
        if k == 0:
            raise InfeasibleError(f"all data coordinates blocked at node {node}")
        phi = np.array(([strategy.data_cpu[tk, node]] if use_cpu else [])
                       + [strategy.data_edge[tk, e] for e in use])
        delta = np.array(([marg.delta_minus_cpu[tk, node]] if use_cpu else [])
                         + [marg.delta_minus_edge[tk, e] for e in use])
        mdiag = np.array(([m_mc[tk, node]] if use_cpu else [])
                         + [m_me[tk, e] for e in use])
        if gp:
            mdiag[int(np.argmin(delta))] = 0.0
        v = K.qp_row(phi, delta, mdiag, cfg.gp_beta, cfg.tol) if k > 1 else np.ones(1)
        off = 1 if use_cpu else 0
        if use_cpu:
            new.data_cpu[tk, node] = v[0]
        for a, e in enumerate(use):
            new.data_edge[tk, e] = v[off + a]
    else:
        if node == prob.dests[tk]:
            return new
        use = [e for e in eids if use_pe[tk, e] or strategy.result_edge[tk, e] > 0]
        if not use:
            raise InfeasibleError(f"all result coordinates blocked at node {node}")
        phi = np.array([strategy.result_edge[tk, e] for e in use])
        delta = np.array([marg.delta_plus_edge[tk, e] for e in use])
        mdiag = np.array([m_pe[tk, e] for e in use])
        if gp:
            mdiag[int(np.argmin(delta))] = 0.0
        v = (K.qp_row(phi, delta, mdiag, cfg.gp_beta, cfg.tol)
             if len(use) > 1 else np.ones(1))
        for a, e in enumerate(use):
            new.result_edge[tk, e] = v[a]
    new.snap()
    return new


def _blend(old: Strategy, new: Strategy, frac: float) -> Strategy:
    out = Strategy(
        old.data_edge + frac * (new.data_edge - old.data_edge),
        old.data_cpu + frac * (new.data_cpu - old.data_cpu),
        old.result_edge + frac * (new.result_edge - old.result_edge),
    )
    out.snap()
    return out


def _safeguarded_apply(prob: Problem, strategy: Strategy, flow: FlowState,
                       proposal: Strategy):
    """Accept the proposal, halving the displacement until cost does not rise.

    Returns (strategy, flow, accepted_fraction); the fraction is 0.0 when no
    improving point was found."""
    budget = flow.total + DESCENT_SLACK * max(1.0, abs(flow.total))
    frac = 1.0
    for _ in range(MAX_HALVINGS + 1):
        cand = proposal if frac == 1.0 else _blend(strategy, proposal, frac)
        cand_flow = propagate(prob, strategy=cand)
        if cand_flow.total <= budget:
            return cand, cand_flow, frac
        frac *= 0.5
    return strategy, flow, 0.0


def sgp_step(spec, tasks, strategy, flow, marg, node, task_idx, kind,
             t0, config: Optional[RunConfig] = None, mask=None):
    """One safeguarded row update; returns (strategy, flow)."""
    cfg = config or RunConfig()
    prob = Problem(spec, tasks, mask)
    bounds = _Bounds.budget(spec, t0)
    proposal = _update_one(prob, strategy, flow, marg, bounds, cfg,
                           node, task_idx, kind)
    cand, cand_flow, _ = _safeguarded_apply(prob, strategy, flow, proposal)
    return cand, cand_flow


# ---------------------------------------------------------------------------
# Initial strategies
# ---------------------------------------------------------------------------

def _zero_flow_link_d1(spec: NetworkSpec) -> np.ndarray:
    _, d1 = spec.link_cost_arrays(np.zeros(spec.graph.m))
    return d1


def _tree_toward(spec: NetworkSpec, weights: np.ndarray, seeds: dict,
                 allowed=None):
    """Multi-target Dijkstra on edge weights; returns (dist, next_edge).

    ``seeds`` maps target node -> entry cost.  next_edge[i] is the out-edge of
    i on a cheapest path, or -1 at nodes that are themselves seeds (or
    unreachable).  ``allowed`` optionally restricts usable edges.
    """
    g = spec.graph
    n = g.n
    dist = np.full(n, np.inf)
    next_edge = np.full(n, -1, dtype=np.int64)
    heap = []
    for node, cost in seeds.items():
        if cost < dist[node]:
            dist[node] = cost
            heapq.heappush(heap, (cost, node, -1))
    visited = np.zeros(n, dtype=bool)
    while heap:
        cost, i, via = heapq.heappop(heap)
        if visited[i]:
            continue
        visited[i] = True
        next_edge[i] = via
        for e in g.in_edges(i):  # relax upstream: paths flow toward targets
            if allowed is not None and not allowed[e]:
                continue
            j = g.src[e]
            cand = cost + weights[e]
            if cand < dist[j]:
                dist[j] = cand
                heapq.heappush(heap, (cand, j, int(e)))
    return dist, next_edge


class _InitContext:
    """Cached zero-flow shortest-path structure shared by the initializers.

    Raw link weights are the zero-flow marginals; packet sizes only scale
    path costs per task, so one tree per destination / compute entry / site
    serves every task.
    """

    def __init__(self, spec: NetworkSpec, tasks: TaskSet):
        self.spec = spec
        self.tasks = tasks
        self.d1z = _zero_flow_link_d1(spec)
        self._res = {}
        self._cmp = {}
        self._site = {}
        self.compute_nodes = [
            i for i in range(spec.num_nodes) if spec.has_compute(i)
        ]
        if not self.compute_nodes:
            raise InitError("no computation unit in the network")

    def result_tree(self, d):
        if d not in self._res:
            self._res[d] = _tree_toward(self.spec, self.d1z, {d: 0.0})
        return self._res[d]

    def compute_tree(self, m):
        """Tree toward each node's cheapest compute entry for type m."""
        if m not in self._cmp:
            lm = self.tasks.data_size[m]
            seeds = {}
            for k in self.compute_nodes:
                _, c1, _ = self.spec.comp_cost[k].eval(0.0)
                seeds[k] = self.spec.weight(k, m) * c1 / lm
            self._cmp[m] = _tree_toward(self.spec, self.d1z, seeds)
        return self._cmp[m]

    def site_tree(self, k):
        if k not in self._site:
            self._site[k] = _tree_toward(self.spec, self.d1z, {k: 0.0})
        return self._site[k]


def _result_tree(spec, tasks, tk, d1_zero):
    d, m = tasks.tasks[tk]
    weights = tasks.result_size[m] * d1_zero
    return _tree_toward(spec, weights, {d: 0.0})


def _compute_tree(spec, tasks, tk, d1_zero):
    """Tree routing data toward each node's cheapest compute entry point."""
    _, m = tasks.tasks[tk]
    seeds = {}
    for i in range(spec.num_nodes):
        if spec.has_compute(i):
            _, c1, _ = spec.comp_cost[i].eval(0.0)
            seeds[i] = spec.weight(i, m) * c1
    if not seeds:
        raise InitError("no computation unit in the network")
    weights = tasks.data_size[m] * d1_zero
    return _tree_toward(spec, weights, seeds)


def _apply_tree_rows(strategy, spec, tk, next_edge, kind, cpu_nodes=()):
    g = spec.graph
    for i in range(spec.num_nodes):
        e = next_edge[i]
        if kind == "data":
            if i in cpu_nodes or e < 0:
                if spec.has_compute(i):
                    strategy.data_cpu[tk, i] = 1.0
                continue
            strategy.data_edge[tk, e] = 1.0
        else:
            if e >= 0:
                strategy.result_edge[tk, e] = 1.0


def default_init(spec: NetworkSpec, tasks: TaskSet,
                 mask: Optional[ForwardingMask] = None) -> Strategy:
    """Loop-free finite-cost start.

    First tries computing at every compute-capable node (data stays local
    where possible, otherwise follows a cheapest-entry tree), with results on
    zero-flow shortest-path trees.  If the cost is infinite, retries with all
    data of each task routed to its single cheapest compute node, and then
    with capacity-aware variants of both placements.  Raises InitError when
    every attempt has infinite cost.
    """
    ctx = _InitContext(spec, tasks)
    strat = Strategy.zeros(spec, tasks)
    compute_here = set(ctx.compute_nodes)
    for tk, (d, m) in enumerate(tasks.tasks):
        _, next_res = ctx.result_tree(d)
        _apply_tree_rows(strat, spec, tk, next_res, "result")
        _, next_cmp = ctx.compute_tree(m)
        _apply_tree_rows(strat, spec, tk, next_cmp, "data", cpu_nodes=compute_here)
    flow = propagate(spec, tasks, strat)
    if math.isfinite(flow.total):
        return strat

    # Fallback: one compute site per task, picked by zero-flow marginals.
    n = spec.num_nodes
    r = tasks.rate_matrix(n)
    strat2 = Strategy.zeros(spec, tasks)
    for tk, (d, m) in enumerate(tasks.tasks):
        dist_res, next_res = ctx.result_tree(d)
        lm, lp = tasks.data_size[m], tasks.result_size[m]
        best, best_cost = None, np.inf
        total_rate = r[tk].sum()
        sourced = r[tk] > 0
        for k in ctx.compute_nodes:
            _, c1, _ = spec.comp_cost[k].eval(0.0)
            dist_k, _ = ctx.site_tree(k)
            cost = (
                lm * float(r[tk][sourced] @ dist_k[sourced])
                + total_rate * spec.weight(k, m) * c1
                + lp * total_rate * dist_res[k]
            )
            if cost < best_cost:
                best, best_cost = k, cost
        if best is None:
            raise InitError("no computation unit in the network")
        _, next_data = ctx.site_tree(best)
        _apply_tree_rows(strat2, spec, tk, next_data, "data", cpu_nodes={best})
        _apply_tree_rows(strat2, spec, tk, next_res, "result")
    flow2 = propagate(spec, tasks, strat2)
    if math.isfinite(flow2.total):
        return strat2

    for attempt in (lambda: _local_compute_init(spec, tasks, ctx, True),
                    lambda: _spread_init(spec, tasks, ctx)):
        strat3 = attempt()
        if strat3 is not None and math.isfinite(
                propagate(spec, tasks, strat3).total):
            return strat3
    raise InitError("no finite-cost loop-free starting strategy found")


def _link_rooms(spec: NetworkSpec, margin=1.05):
    from .model import Queue

    g = spec.graph
    room = np.full(g.m, np.inf)
    for e, lk in enumerate(g.links):
        fn = spec.link_cost[lk]
        if isinstance(fn, Queue):
            room[e] = fn.capacity / margin
    return room


def _charge_tree(g, next_edge, origins, stop_node=None, max_hops=None):
    """Per-edge bit loads when each origin rate follows the tree."""
    loads = np.zeros(g.m)
    hops = max_hops if max_hops is not None else g.n + 1
    for node, bits in origins:
        node = int(node)
        for _ in range(hops):
            if node == stop_node:
                break
            e = next_edge[node]
            if e < 0:
                break
            loads[e] += bits
            node = int(g.dst[e])
    return loads


def _capped_tree(spec, weights, seeds, link_room, origins, rounds=6):
    """Tree toward seeds whose accumulated load fits the per-link rooms.

    Iteratively excludes overloaded links and reroutes; returns (next_edge,
    loads) or None when no fitting tree exists.
    """
    g = spec.graph
    usable = link_room > 0
    for _ in range(rounds):
        dist, nxt = _tree_toward(spec, weights, seeds, usable)
        if not all(math.isfinite(dist[int(node)]) for node, _ in origins):
            return None
        loads = _charge_tree(g, nxt, origins)
        over = loads > link_room + 1e-12
        if not over.any():
            return nxt, loads
        usable &= ~over
    return None


def _local_compute_init(spec: NetworkSpec, tasks: TaskSet, ctx: "_InitContext",
                        capacity_aware: bool):
    """Compute at every capable node; results on (optionally capped) trees."""
    n = spec.num_nodes
    r = tasks.rate_matrix(n)
    strat = Strategy.zeros(spec, tasks)
    link_room = _link_rooms(spec) if capacity_aware else None
    compute_here = set(ctx.compute_nodes)
    order = np.argsort([-r[tk].sum() for tk in range(tasks.num_tasks)])
    for tk in order:
        d, m = tasks.tasks[tk]
        _, next_cmp = ctx.compute_tree(m)
        _apply_tree_rows(strat, spec, tk, next_cmp, "data",
                         cpu_nodes=compute_here)
        lp = tasks.result_size[m]
        origins = [(i, lp * r[tk, i]) for i in np.nonzero(r[tk] > 0)[0]]
        if capacity_aware:
            capped = _capped_tree(spec, lp * ctx.d1z, {d: 0.0}, link_room,
                                  origins)
            if capped is None:
                return None
            next_res, loads = capped
            link_room = link_room - loads
        else:
            _, next_res = ctx.result_tree(d)
        _apply_tree_rows(strat, spec, tk, next_res, "result")
    return strat


def _spread_init(spec: NetworkSpec, tasks: TaskSet, ctx: "_InitContext"):
    """Capacity-aware single-site placement, largest task first.

    Candidate sites are scored with the cached zero-flow trees and verified
    against residual link/workload headroom in score order.
    """
    from .model import Queue

    n = spec.num_nodes
    r = tasks.rate_matrix(n)
    link_room = _link_rooms(spec)
    comp_room = np.full(n, np.inf)
    for i in range(n):
        fn = spec.comp_cost.get(i)
        if fn is None:
            comp_room[i] = 0.0
        elif isinstance(fn, Queue):
            comp_room[i] = fn.capacity / 1.05
    strat = Strategy.zeros(spec, tasks)
    order = np.argsort([-r[tk].sum() for tk in range(tasks.num_tasks)])
    for tk in order:
        d, m = tasks.tasks[tk]
        lm, lp = tasks.data_size[m], tasks.result_size[m]
        total_rate = r[tk].sum()
        sourced = r[tk] > 0
        data_origins = [(i, lm * r[tk, i]) for i in np.nonzero(sourced)[0]]
        dist_res, _ = ctx.result_tree(d)
        scored = []
        for k in ctx.compute_nodes:
            need = total_rate * spec.weight(k, m)
            if comp_room[k] < need:
                continue
            _, c1, _ = spec.comp_cost[k].eval(0.0)
            dist_k, _ = ctx.site_tree(k)
            cost = (lm * float(r[tk][sourced] @ dist_k[sourced])
                    + need * c1 + lp * total_rate * dist_res[k])
            if math.isfinite(cost):
                scored.append((cost, k))
        placed = False
        for _, k in sorted(scored):
            dat = _capped_tree(spec, lm * ctx.d1z, {k: 0.0}, link_room,
                               data_origins)
            if dat is None:
                continue
            res = _capped_tree(spec, lp * ctx.d1z, {d: 0.0},
                               link_room - dat[1], [(k, lp * total_rate)])
            if res is None:
                continue
            next_data, data_loads = dat
            next_res, res_loads = res
            _apply_tree_rows(strat, spec, tk, next_data, "data", cpu_nodes={k})
            _apply_tree_rows(strat, spec, tk, next_res, "result")
            comp_room[k] -= total_rate * spec.weight(k, m)
            link_room = link_room - data_loads - res_loads
            placed = True
            break
        if not placed:
            return None
    return strat


# ---------------------------------------------------------------------------
# Events
# ---------------------------------------------------------------------------

def _apply_server_failure(prob: Problem, strategy: Strategy, event: Event):
    """Remove a node's links, computation, sourcing, and destination role."""
    spec, tasks = prob.spec, prob.tasks
    node = event.node
    keep_links = [lk for lk in spec.links if node not in lk]
    new_spec = NetworkSpec(
        spec.num_nodes,
        keep_links,
        {lk: spec.link_cost[lk] for lk in keep_links},
        {i: fn for i, fn in spec.comp_cost.items() if i != node},
        {k: w for k, w in spec.comp_weight.items() if k[0] != node},
    )
    keep_tasks = [t for t in tasks.tasks if t[0] != node]
    if not keep_tasks:
        raise InfeasibleAfterEvent("no tasks survive the failure")
    new_tasks = TaskSet(
        keep_tasks,
        dict(tasks.data_size),
        dict(tasks.result_size),
        {
            (i, t): rate
            for (i, t), rate in tasks.input_rates.items()
            if i != node and t in keep_tasks
        },
    )
    g_new = new_spec.graph
    active = np.ones(spec.num_nodes, dtype=bool)
    active[node] = False
    if not _connected_over(g_new, active):
        raise InfeasibleAfterEvent("surviving graph is not strongly connected")

    old_g = spec.graph
    new_strat = Strategy.zeros(new_spec, new_tasks)
    old_idx = {t: k for k, t in enumerate(tasks.tasks)}
    edge_map = {lk: e for e, lk in enumerate(g_new.links)}
    d1_zero = _zero_flow_link_d1(new_spec)
    for tk_new, task in enumerate(new_tasks.tasks):
        tk_old = old_idx[task]
        for e_old, lk in enumerate(old_g.links):
            e_new = edge_map.get(lk)
            if e_new is not None:
                new_strat.data_edge[tk_new, e_new] = strategy.data_edge[tk_old, e_old]
                new_strat.result_edge[tk_new, e_new] = strategy.result_edge[tk_old, e_old]
        new_strat.data_cpu[tk_new] = strategy.data_cpu[tk_old]
        new_strat.data_cpu[tk_new, node] = 0.0
        _repair_task_rows(new_spec, new_tasks, new_strat, tk_new, node, d1_zero)
    new_prob = Problem(new_spec, new_tasks, _failure_mask(new_spec, new_tasks, node))
    return new_prob, new_strat


def _failure_mask(spec, tasks, failed):
    mask = ForwardingMask.full(spec, tasks)
    mask.data_cpu[:, failed] = False
    return mask


def _connected_over(g, active) -> bool:
    idx = np.nonzero(active)[0]
    if len(idx) <= 1:
        return True
    start = int(idx[0])

    def sweep(ptr, eids, towards):
        seen = np.zeros(g.n, dtype=bool)
        seen[start] = True
        stack = [start]
        while stack:
            i = stack.pop()
            for e in eids[ptr[i]:ptr[i + 1]]:
                j = int(towards[e])
                if active[j] and not seen[j]:
                    seen[j] = True
                    stack.append(j)
        return bool(seen[active].all())

    return sweep(g.out_ptr, g.out_eids, g.dst) and sweep(g.in_ptr, g.in_eids, g.src)


def _repair_task_rows(spec, tasks, strat, tk, failed, d1_zero):
    """Renormalize rows that lost mass toward the failed node; rebuild the
    rows that lost everything from zero-flow trees, falling back to a full
    per-task rebuild if that introduces a cycle."""
    g = spec.graph
    d, m = tasks.tasks[tk]
    next_res = None
    next_cmp = None
    for i in range(spec.num_nodes):
        if i == failed:
            for e in g.out_edges(i):
                strat.data_edge[tk, e] = 0.0
                strat.result_edge[tk, e] = 0.0
            strat.data_cpu[tk, i] = 0.0
            continue
        eids = g.out_edges(i)
        s = strat.data_edge[tk, eids].sum() + strat.data_cpu[tk, i]
        if abs(s - 1.0) > 1e-9:
            if s > SNAP:
                strat.data_edge[tk, eids] /= s
                strat.data_cpu[tk, i] /= s
            elif spec.has_compute(i):
                strat.data_cpu[tk, i] = 1.0
            else:
                if next_cmp is None:
                    _, next_cmp = _compute_tree(spec, tasks, tk, d1_zero)
                if next_cmp[i] >= 0:
                    strat.data_edge[tk, next_cmp[i]] = 1.0
        if i != d:
            rs = strat.result_edge[tk, eids].sum()
            if abs(rs - 1.0) > 1e-9:
                if rs > SNAP:
                    strat.result_edge[tk, eids] /= rs
                else:
                    if next_res is None:
                        _, next_res = _result_tree(spec, tasks, tk, d1_zero)
                    if next_res[i] >= 0:
                        strat.result_edge[tk, next_res[i]] = 1.0
    # cycles can only appear when repaired rows mix with survivors
    ok_m, _ = K.kahn_topo(g.n, g.out_ptr, g.out_eids, g.dst,
                          (strat.data_edge[tk] > SNAP).astype(np.uint8))
    if not ok_m:
        _, next_cmp = _compute_tree(spec, tasks, tk, d1_zero)
        strat.data_edge[tk] = 0.0
        strat.data_cpu[tk] = 0.0
        compute_here = {i for i in range(spec.num_nodes)
                        if spec.has_compute(i) and i != failed}
        _apply_tree_rows(strat, spec, tk, next_cmp, "data", cpu_nodes=compute_here)
    ok_p, _ = K.kahn_topo(g.n, g.out_ptr, g.out_eids, g.dst,
                          (strat.result_edge[tk] > SNAP).astype(np.uint8))
    if not ok_p:
        _, next_res = _result_tree(spec, tasks, tk, d1_zero)
        strat.result_edge[tk] = 0.0
        _apply_tree_rows(strat, spec, tk, next_res, "result")


# ---------------------------------------------------------------------------
# The optimizer loop
# ---------------------------------------------------------------------------

def _row_schedule(prob: Problem):
    rows = []
    for tk in range(prob.tasks.num_tasks):
        for i in range(prob.graph.n):
            rows.append((i, tk, "data"))
            if i != prob.dests[tk]:
                rows.append((i, tk, "result"))
    return rows


def run(spec, tasks, init: Strategy, config: Optional[RunConfig] = None,
        mask: Optional[ForwardingMask] = None) -> RunResult:
    """Iterate to the sufficient-condition residual or the iteration cap."""
    cfg = config or RunConfig()
    start = time.perf_counter()
    prob = Problem(spec, tasks, mask)
    strat = init.copy()
    strat.snap()
    try:
        flow = propagate(prob, strategy=strat)
    except LoopError as exc:
        raise InitError(f"initial strategy has loops: {exc}") from exc
    if not math.isfinite(flow.total):
        raise InitError("initial total cost is infinite")
    events = {}
    for it_ev, ev in cfg.events:
        events.setdefault(it_ev, []).append(ev)
    rows = _row_schedule(prob)
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    perm: list = []
    trace: list = []
    converged = False
    residual = math.inf
    damp = 1.0
    it = 0
    while it < cfg.max_iters:
        event_flag = False
        if it in events:
            for ev in events[it]:
                if ev.kind != "server_failure":
                    raise ValueError(f"unknown event kind {ev.kind}")
                prob, strat = _apply_server_failure(prob, strat, ev)
            try:
                flow = propagate(prob, strategy=strat)
            except LoopError as exc:
                raise InfeasibleAfterEvent(str(exc)) from exc
            if not math.isfinite(flow.total):
                strat = default_init(prob.spec, prob.tasks)
                flow = propagate(prob, strategy=strat)
                if not math.isfinite(flow.total):
                    raise InfeasibleAfterEvent("no finite-cost strategy after event")
            rows = _row_schedule(prob)
            perm = []
            event_flag = True
        marg = compute_marginals(prob, prob.tasks, strat, flow)
        residual = sufficient_residual(prob, strat, flow, marg)
        node_id = -1
        if cfg.schedule != "sync":
            if cfg.schedule == "roundrobin":
                row = rows[it % len(rows)]
            elif cfg.schedule == "random":
                if not perm:
                    perm = [rows[k] for k in rng.permutation(len(rows))]
                row = perm.pop()
            else:
                raise ValueError(f"unknown schedule {cfg.schedule}")
            node_id = row[0]
        trace.append(TraceRow(it, flow.total, residual, node_id, event_flag))
        if residual < cfg.tol:
            converged = True
            break
        bounds = (None if cfg.scaling == "hessian" or cfg.algorithm == "gp"
                  else _Bounds.at_state(prob, flow, cfg.scaling))
        if cfg.schedule == "sync":
            proposal = _update_all(prob, strat, flow, marg, bounds, cfg, damp)
        else:
            proposal = _update_one(prob, strat, flow, marg, bounds, cfg,
                                   row[0], row[1], row[2])
        strat, flow, frac = _safeguarded_apply(prob, strat, flow, proposal)
        if cfg.algorithm != "gp":
            if frac >= 1.0:
                damp = max(1.0, damp * 0.7)
            elif frac > 0.0:
                damp = min(damp / frac, 1e9)
        if frac == 0.0 and cfg.schedule == "sync":
            break  # no improving point along the update direction
        it += 1
    else:
        marg = compute_marginals(prob, prob.tasks, strat, flow)
        residual = sufficient_residual(prob, strat, flow, marg)
        trace.append(TraceRow(cfg.max_iters, flow.total, residual, -1, False))
        converged = residual < cfg.tol
    wall_ms = (time.perf_counter() - start) * 1e3
    return RunResult(strat, trace, converged, trace[-1].iteration, flow.total,
                     residual, wall_ms, prob.spec, prob.tasks, flow)
