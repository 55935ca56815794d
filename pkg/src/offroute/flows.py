"""Forwarding strategies and derived flow states.

Traffic is derived per task by topological sweeps over the support DAGs of
the forwarding fractions (loop-free strategies are a hard precondition); a
dense linear-solve path exists for validation and for states whose support is
not acyclic (interpolations between strategies).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels as K
from .errors import DegenerateError, LoopError
from .model import ForwardingMask, NetworkSpec, TaskSet

# Fractions below this are treated as structural zeros when building DAGs;
# prevents phantom loops from numerical dust.
SNAP = 1e-12


@dataclass
class Strategy:
    """Per-task forwarding fractions, aligned with the graph's edge ids.

    ``data_edge[tk, e]`` is the data fraction on directed edge e, ``data_cpu``
    the fraction handed to the local CPU, ``result_edge`` the result fraction.
    Every data row (CPU slot plus out-edges) sums to 1; result rows sum to 1
    except at the task destination where they are all zero.
    """

    data_edge: np.ndarray
    data_cpu: np.ndarray
    result_edge: np.ndarray

    @classmethod
    def zeros(cls, spec: NetworkSpec, tasks: TaskSet) -> "Strategy":
        g = spec.graph
        nt = tasks.num_tasks
        return cls(
            np.zeros((nt, g.m)), np.zeros((nt, spec.num_nodes)), np.zeros((nt, g.m))
        )

    def copy(self) -> "Strategy":
        return Strategy(
            self.data_edge.copy(), self.data_cpu.copy(), self.result_edge.copy()
        )

    def snap(self) -> None:
        self.data_edge[self.data_edge < SNAP] = 0.0
        self.data_cpu[self.data_cpu < SNAP] = 0.0
        self.result_edge[self.result_edge < SNAP] = 0.0

    # -- row accessors (convenience for fixtures and dumps) -----------------

    def set_data_row(self, spec, tk, i, row: dict) -> None:
        g = spec.graph
        for e in g.out_edges(i):
            self.data_edge[tk, e] = 0.0
        self.data_cpu[tk, i] = 0.0
        for key, val in row.items():
            if key == "cpu":
                self.data_cpu[tk, i] = val
            else:
                self.data_edge[tk, g.edge_id[(i, key)]] = val

    def set_result_row(self, spec, tk, i, row: dict) -> None:
        g = spec.graph
        for e in g.out_edges(i):
            self.result_edge[tk, e] = 0.0
        for j, val in row.items():
            self.result_edge[tk, g.edge_id[(i, j)]] = val

    def data_row(self, spec, tk, i) -> dict:
        g = spec.graph
        row = {"cpu": float(self.data_cpu[tk, i])}
        for e in g.out_edges(i):
            row[int(g.dst[e])] = float(self.data_edge[tk, e])
        return row

    def result_row(self, spec, tk, i) -> dict:
        g = spec.graph
        return {int(g.dst[e]): float(self.result_edge[tk, e]) for e in g.out_edges(i)}

    def row_sum_violations(self, spec, tasks, tol=1e-9) -> list:
        g = spec.graph
        bad = []
        for tk, (d, _) in enumerate(tasks.tasks):
            sums = np.zeros(spec.num_nodes)
            np.add.at(sums, g.src, self.data_edge[tk])
            sums += self.data_cpu[tk]
            for i in np.nonzero(np.abs(sums - 1.0) > tol)[0]:
                bad.append(("data", tk, int(i), float(sums[i])))
            rsums = np.zeros(spec.num_nodes)
            np.add.at(rsums, g.src, self.result_edge[tk])
            target = np.ones(spec.num_nodes)
            target[d] = 0.0
            for i in np.nonzero(np.abs(rsums - target) > tol)[0]:
                bad.append(("result", tk, int(i), float(rsums[i])))
        return bad


class Problem:
    """Pre-indexed (spec, tasks) bundle used by the engines' hot loops."""

    def __init__(self, spec: NetworkSpec, tasks: TaskSet,
                 mask: Optional[ForwardingMask] = None,
                 rates: Optional[np.ndarray] = None):
        self.spec = spec
        self.tasks = tasks
        self.graph = spec.graph
        self.mask = mask if mask is not None else ForwardingMask.full(spec, tasks)
        self.r = rates if rates is not None else tasks.rate_matrix(spec.num_nodes)
        self.Lm, self.Lp = tasks.sizes()
        nt, n = tasks.num_tasks, spec.num_nodes
        self.W = np.empty((nt, n))
        for tk, (_, m) in enumerate(tasks.tasks):
            for i in range(n):
                self.W[tk, i] = spec.weight(i, m) if spec.has_compute(i) else 0.0
        self.dests = np.array([d for d, _ in tasks.tasks], dtype=np.int32)

    def with_rates(self, rates) -> "Problem":
        return Problem(self.spec, self.tasks, self.mask, rates)


@dataclass
class FlowState:
    """All derived traffics, flows, workloads, and the total cost."""

    t_minus: np.ndarray
    t_plus: np.ndarray
    f_minus: np.ndarray
    f_plus: np.ndarray
    g: np.ndarray
    F: np.ndarray
    G: np.ndarray
    total: float
    order_minus: np.ndarray
    order_plus: np.ndarray
    act_minus: np.ndarray
    act_plus: np.ndarray


def detect_loops(spec: NetworkSpec, tasks: TaskSet, strategy: Strategy) -> list:
    """Per-task report of data/result support cycles.

    Concatenated data-then-result cycles are not loops: the two stages are
    checked independently.
    """
    g = spec.graph
    report = []
    for tk in range(tasks.num_tasks):
        ok_m, _ = K.kahn_topo(
            g.n, g.out_ptr, g.out_eids, g.dst,
            (strategy.data_edge[tk] > SNAP).astype(np.uint8),
        )
        ok_p, _ = K.kahn_topo(
            g.n, g.out_ptr, g.out_eids, g.dst,
            (strategy.result_edge[tk] > SNAP).astype(np.uint8),
        )
        report.append({"task": tasks.tasks[tk], "data_loop": not ok_m,
                       "result_loop": not ok_p})
    return report


def loop_free(spec, tasks, strategy) -> bool:
    return all(
        not row["data_loop"] and not row["result_loop"]
        for row in detect_loops(spec, tasks, strategy)
    )


def total_cost(spec: NetworkSpec, F: np.ndarray, G: np.ndarray) -> float:
    link_val, _ = spec.link_cost_arrays(F)
    comp_val, _ = spec.comp_cost_arrays(G)
    return float(link_val.sum() + comp_val.sum())


def propagate(spec_or_problem, tasks: Optional[TaskSet] = None,
              strategy: Optional[Strategy] = None,
              result_injection: Optional[np.ndarray] = None,
              rates: Optional[np.ndarray] = None) -> FlowState:
    """Derive the full FlowState for a loop-free strategy.

    ``result_injection`` adds exogenous result traffic (per task, per node)
    without touching workloads; used by finite-difference checks.
    """
    if isinstance(spec_or_problem, Problem):
        prob = spec_or_problem if rates is None else spec_or_problem.with_rates(rates)
    else:
        prob = Problem(spec_or_problem, tasks, rates=rates)
    g = prob.graph
    nt, n, m = prob.tasks.num_tasks, g.n, g.m
    t_minus = np.empty((nt, n))
    t_plus = np.empty((nt, n))
    g_rate = np.empty((nt, n))
    f_minus = np.empty((nt, m))
    f_plus = np.empty((nt, m))
    order_minus = np.empty((nt, n), dtype=np.int32)
    order_plus = np.empty((nt, n), dtype=np.int32)
    act_minus = np.empty((nt, m), dtype=np.uint8)
    act_plus = np.empty((nt, m), dtype=np.uint8)
    strat = strategy
    for tk in range(nt):
        am = (strat.data_edge[tk] > SNAP).astype(np.uint8)
        ok, om = K.kahn_topo(n, g.out_ptr, g.out_eids, g.dst, am)
        if not ok:
            raise LoopError(f"data loop in task {prob.tasks.tasks[tk]}")
        tm = K.sweep_traffic(om, g.out_ptr, g.out_eids, g.dst,
                             strat.data_edge[tk], am, prob.r[tk])
        gt = tm * strat.data_cpu[tk]
        inj = gt if result_injection is None else gt + result_injection[tk]
        ap = (strat.result_edge[tk] > SNAP).astype(np.uint8)
        ok, op = K.kahn_topo(n, g.out_ptr, g.out_eids, g.dst, ap)
        if not ok:
            raise LoopError(f"result loop in task {prob.tasks.tasks[tk]}")
        tp = K.sweep_traffic(op, g.out_ptr, g.out_eids, g.dst,
                             strat.result_edge[tk], ap, inj)
        t_minus[tk] = tm
        t_plus[tk] = tp
        g_rate[tk] = gt
        f_minus[tk] = np.where(am, tm[g.src] * strat.data_edge[tk], 0.0)
        f_plus[tk] = np.where(ap, tp[g.src] * strat.result_edge[tk], 0.0)
        order_minus[tk] = om
        order_plus[tk] = op
        act_minus[tk] = am
        act_plus[tk] = ap
    F = prob.Lm @ f_minus + prob.Lp @ f_plus
    G = (prob.W * g_rate).sum(axis=0)
    total = total_cost(prob.spec, F, G)
    return FlowState(t_minus, t_plus, f_minus, f_plus, g_rate, F, G, total,
                     order_minus, order_plus, act_minus, act_plus)


# ---------------------------------------------------------------------------
# Dense linear-solve path: validation of the sweeps, and evaluation of
# strategies whose support is not acyclic (flow-domain interpolations).
# ---------------------------------------------------------------------------

def dense_traffic(spec: NetworkSpec, tasks: TaskSet, strategy: Strategy,
                  rates: Optional[np.ndarray] = None):
    """Solve (I - Phi^T) t = injections per task instead of sweeping."""
    g = spec.graph
    nt, n = tasks.num_tasks, spec.num_nodes
    r = rates if rates is not None else tasks.rate_matrix(n)
    t_minus = np.empty((nt, n))
    t_plus = np.empty((nt, n))
    for tk in range(nt):
        phi_m = np.zeros((n, n))
        phi_m[g.src, g.dst] = strategy.data_edge[tk]
        try:
            t_minus[tk] = np.linalg.solve(np.eye(n) - phi_m.T, r[tk])
        except np.linalg.LinAlgError as exc:
            raise DegenerateError("data flow system is singular") from exc
        gt = t_minus[tk] * strategy.data_cpu[tk]
        phi_p = np.zeros((n, n))
        phi_p[g.src, g.dst] = strategy.result_edge[tk]
        try:
            t_plus[tk] = np.linalg.solve(np.eye(n) - phi_p.T, gt)
        except np.linalg.LinAlgError as exc:
            raise DegenerateError("result flow system is singular") from exc
    return t_minus, t_plus


def dense_total_cost(spec: NetworkSpec, tasks: TaskSet, strategy: Strategy,
                     rates: Optional[np.ndarray] = None) -> float:
    """Total cost via the dense path; tolerates cyclic support."""
    g = spec.graph
    t_minus, t_plus = dense_traffic(spec, tasks, strategy, rates)
    Lm, Lp = tasks.sizes()
    f_minus = t_minus[:, g.src] * strategy.data_edge
    f_plus = t_plus[:, g.src] * strategy.result_edge
    F = Lm @ f_minus + Lp @ f_plus
    prob = Problem(spec, tasks, rates=rates)
    G = (prob.W * (t_minus * strategy.data_cpu)).sum(axis=0)
    return total_cost(spec, F, G)


# ---------------------------------------------------------------------------
# phi <-> flow-domain mappings
# ---------------------------------------------------------------------------

def flows_from_phi(spec, tasks, strategy, rates=None):
    """Map a strategy to its flow-domain vector (f-, f+, g)."""
    fs = propagate(spec, tasks, strategy, rates=rates)
    return fs.f_minus, fs.f_plus, fs.g


def phi_from_flows(spec, tasks, f_minus, f_plus, g_rate,
                   rates: Optional[np.ndarray] = None,
                   traffic_floor: float = 1e-13) -> Strategy:
    """Map flow-domain packet rates back to forwarding fractions.

    The mapping requires strictly positive data and result traffic at every
    node; a zero-traffic node is a reflection point with no unique preimage.
    """
    g = spec.graph
    n = spec.num_nodes
    r = rates if rates is not None else tasks.rate_matrix(n)
    nt = tasks.num_tasks
    strat = Strategy.zeros(spec, tasks)
    for tk, (d, _) in enumerate(tasks.tasks):
        t_minus = r[tk].copy()
        np.add.at(t_minus, g.dst, f_minus[tk])
        t_plus = g_rate[tk].copy()
        np.add.at(t_plus, g.dst, f_plus[tk])
        if t_minus.min() <= traffic_floor or t_plus.min() <= traffic_floor:
            raise DegenerateError(
                f"zero traffic at a node for task {tasks.tasks[tk]}"
            )
        strat.data_edge[tk] = f_minus[tk] / t_minus[g.src]
        strat.data_cpu[tk] = g_rate[tk] / t_minus
        strat.result_edge[tk] = f_plus[tk] / t_plus[g.src]
        # exact renormalization against float drift
        sums = np.zeros(n)
        np.add.at(sums, g.src, strat.data_edge[tk])
        sums += strat.data_cpu[tk]
        strat.data_edge[tk] /= sums[g.src]
        strat.data_cpu[tk] /= sums
        rsums = np.zeros(n)
        np.add.at(rsums, g.src, strat.result_edge[tk])
        rsums[d] = 1.0
        keep = rsums > 0
        scale = np.where(keep, rsums, 1.0)
        strat.result_edge[tk] /= scale[g.src]
        strat.result_edge[tk, g.src == d] = 0.0
    return strat
