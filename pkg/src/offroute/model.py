"""Network, task, and cost-function model.

A network is a directed graph with bidirectional links.  Every link has a
congestion-dependent transmission cost and every node may carry a computation
unit with its own congestion-dependent cost.  Tasks are (destination,
computation-type) pairs fed by exogenous data sources; a task converts data
packets of size ``data_size[m]`` into result packets of size
``result_size[m]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

INF = math.inf


# ---------------------------------------------------------------------------
# Cost functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Linear:
    """Cost d*x with constant marginal d >= 0."""

    slope: float

    def eval(self, x):
        return self.slope * x, self.slope, 0.0

    def curvature_bound(self, total_budget):
        return 0.0


@dataclass(frozen=True)
class Queue:
    """M/M/1-style cost x/(mu - x): the mean queue length at utilization x/mu.

    Evaluates to +inf at or beyond capacity, which callers treat as a uniform
    infeasibility signal rather than an error.
    """

    capacity: float

    def eval(self, x):
        mu = self.capacity
        if x >= mu:
            return INF, INF, INF
        gap = mu - x
        return x / gap, mu / gap**2, 2.0 * mu / gap**3

    def curvature_bound(self, total_budget):
        # Largest second derivative over loads x with cost(x) <= budget:
        # x* = mu*b/(1+b), so mu - x* = mu/(1+b) and d2 = 2(1+b)^3 / mu^2.
        b = total_budget
        if not math.isfinite(b):
            return INF
        return 2.0 * (1.0 + b) ** 3 / self.capacity**2


CostFn = Union[Linear, Queue]

# Codes used by the vectorized evaluators.
_KIND_LINEAR = 0
_KIND_QUEUE = 1
_KIND_OTHER = 2


def cost_eval(fn, x: float):
    """Evaluate a cost function: returns (value, 1st derivative, 2nd derivative)."""
    return fn.eval(x)


def _pack_costs(fns):
    """Split a cost list into vectorizable (linear/queue) params + leftovers."""
    kind = np.full(len(fns), _KIND_OTHER, dtype=np.int32)
    param = np.zeros(len(fns))
    others = {}
    for k, fn in enumerate(fns):
        if isinstance(fn, Linear):
            kind[k] = _KIND_LINEAR
            param[k] = fn.slope
        elif isinstance(fn, Queue):
            kind[k] = _KIND_QUEUE
            param[k] = fn.capacity
        else:
            others[k] = fn
    return kind, param, others


def _eval_packed(kind, param, others, x, out_value, out_d1, out_d2=None):
    lin = kind == _KIND_LINEAR
    out_value[lin] = param[lin] * x[lin]
    out_d1[lin] = param[lin]
    if out_d2 is not None:
        out_d2[lin] = 0.0
    qu = kind == _KIND_QUEUE
    mu = param[qu]
    load = x[qu]
    with np.errstate(divide="ignore", invalid="ignore"):
        gap = mu - load
        sat = gap <= 0.0
        val = np.where(sat, INF, load / np.where(sat, 1.0, gap))
        d1 = np.where(sat, INF, mu / np.where(sat, 1.0, gap) ** 2)
    out_value[qu] = val
    out_d1[qu] = d1
    if out_d2 is not None:
        out_d2[qu] = np.where(sat, INF, 2.0 * mu / np.where(sat, 1.0, gap) ** 3)
    for k, fn in others.items():
        v, d1k, d2k = fn.eval(float(x[k]))
        out_value[k] = v
        out_d1[k] = d1k
        if out_d2 is not None:
            out_d2[k] = d2k


# ---------------------------------------------------------------------------
# Graph index
# ---------------------------------------------------------------------------

class GraphIndex:
    """CSR adjacency over the directed link list, shared by all engines."""

    def __init__(self, n, links):
        self.n = n
        self.m = len(links)
        self.links = list(links)
        self.edge_id = {lk: e for e, lk in enumerate(self.links)}
        src = np.array([i for i, _ in self.links], dtype=np.int32)
        dst = np.array([j for _, j in self.links], dtype=np.int32)
        self.src, self.dst = src, dst
        order = np.argsort(src, kind="stable").astype(np.int32)
        self.out_eids = order
        self.out_ptr = np.zeros(n + 1, dtype=np.int32)
        np.add.at(self.out_ptr, src + 1, 1)
        np.cumsum(self.out_ptr, out=self.out_ptr)
        order_in = np.argsort(dst, kind="stable").astype(np.int32)
        self.in_eids = order_in
        self.in_ptr = np.zeros(n + 1, dtype=np.int32)
        np.add.at(self.in_ptr, dst + 1, 1)
        np.cumsum(self.in_ptr, out=self.in_ptr)

    def out_edges(self, i):
        return self.out_eids[self.out_ptr[i]:self.out_ptr[i + 1]]

    def in_edges(self, i):
        return self.in_eids[self.in_ptr[i]:self.in_ptr[i + 1]]

    def neighbors(self, i):
        return self.dst[self.out_edges(i)]


# ---------------------------------------------------------------------------
# Network and tasks
# ---------------------------------------------------------------------------

@dataclass
class NetworkSpec:
    """Directed network with per-link and per-node congestion costs.

    ``comp_cost[i] is None`` marks a node without a computation unit; its CPU
    slot is excluded from every forwarding simplex.
    """

    num_nodes: int
    links: list
    link_cost: dict
    comp_cost: dict
    comp_weight: dict = field(default_factory=dict)

    def __post_init__(self):
        self._graph: Optional[GraphIndex] = None
        self._packed = None

    @property
    def graph(self) -> GraphIndex:
        if self._graph is None:
            self._graph = GraphIndex(self.num_nodes, self.links)
        return self._graph

    def has_compute(self, i) -> bool:
        return self.comp_cost.get(i) is not None

    def weight(self, i, m) -> float:
        return self.comp_weight.get((i, m), 1.0)

    # -- vectorized cost evaluation over a full flow assignment -------------

    def _packed_costs(self):
        if self._packed is None:
            g = self.graph
            link_fns = [self.link_cost[lk] for lk in g.links]
            comp_fns = [
                self.comp_cost.get(i) if self.comp_cost.get(i) is not None else Linear(0.0)
                for i in range(self.num_nodes)
            ]
            self._packed = (_pack_costs(link_fns), _pack_costs(comp_fns))
        return self._packed

    def link_cost_arrays(self, F, want_d2=False):
        """Per-edge (value, d1[, d2]) at aggregate bit rates F."""
        (kind, param, others), _ = self._packed_costs()
        val = np.empty_like(F)
        d1 = np.empty_like(F)
        d2 = np.empty_like(F) if want_d2 else None
        _eval_packed(kind, param, others, F, val, d1, d2)
        return (val, d1, d2) if want_d2 else (val, d1)

    def comp_cost_arrays(self, G, want_d2=False):
        _, (kind, param, others) = self._packed_costs()
        val = np.empty_like(G)
        d1 = np.empty_like(G)
        d2 = np.empty_like(G) if want_d2 else None
        _eval_packed(kind, param, others, G, val, d1, d2)
        return (val, d1, d2) if want_d2 else (val, d1)

    def curvature_bounds(self, total_budget):
        """Per-edge and per-node second-derivative bounds used for scaling."""
        g = self.graph
        a_link = np.array(
            [self.link_cost[lk].curvature_bound(total_budget) for lk in g.links]
        )
        a_comp = np.array(
            [
                self.comp_cost[i].curvature_bound(total_budget)
                if self.has_compute(i)
                else 0.0
                for i in range(self.num_nodes)
            ]
        )
        return a_link, a_comp


@dataclass
class TaskSet:
    """Tasks (d, m) with packet sizes and exogenous input rates.

    ``input_rates`` maps (node, (d, m)) -> rate; several sources per task are
    allowed, including the destination itself.
    """

    tasks: list
    data_size: dict
    result_size: dict
    input_rates: dict

    def __post_init__(self):
        self.index = {t: k for k, t in enumerate(self.tasks)}

    @property
    def num_tasks(self):
        return len(self.tasks)

    def rate_matrix(self, n) -> np.ndarray:
        r = np.zeros((len(self.tasks), n))
        for (i, task), rate in self.input_rates.items():
            r[self.index[task], i] = rate
        return r

    def sizes(self) -> tuple[np.ndarray, np.ndarray]:
        lm = np.array([self.data_size[m] for _, m in self.tasks])
        lp = np.array([self.result_size[m] for _, m in self.tasks])
        return lm, lp

    def scaled_rates(self, n, scale=1.0):
        r = self.rate_matrix(n)
        return r * scale


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _strongly_connected(graph: GraphIndex) -> bool:
    n = graph.n
    if n <= 1:
        return True

    def reach(adj_ptr, adj_eids, towards):
        seen = np.zeros(n, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            i = stack.pop()
            for e in adj_eids[adj_ptr[i]:adj_ptr[i + 1]]:
                j = towards[e]
                if not seen[j]:
                    seen[j] = True
                    stack.append(j)
        return seen.all()

    return reach(graph.out_ptr, graph.out_eids, graph.dst) and reach(
        graph.in_ptr, graph.in_eids, graph.src
    )


def validate(spec: NetworkSpec, tasks: TaskSet) -> list:
    """Structural checks; returns a list of violation strings (empty = ok)."""
    problems = []
    g = spec.graph
    link_set = set(spec.links)
    for (i, j) in spec.links:
        if (j, i) not in link_set:
            problems.append(f"missing reverse link ({j}, {i})")
        if i == j:
            problems.append(f"self-loop link ({i}, {j})")
        if not (0 <= i < spec.num_nodes and 0 <= j < spec.num_nodes):
            problems.append(f"link ({i}, {j}) references unknown node")
    if not _strongly_connected(g):
        problems.append("graph is not strongly connected")
    for lk in spec.links:
        fn = spec.link_cost.get(lk)
        if fn is None:
            problems.append(f"no cost function for link {lk}")
        elif isinstance(fn, Queue) and fn.capacity <= 0:
            problems.append(f"nonpositive capacity on link {lk}")
        elif isinstance(fn, Linear) and fn.slope < 0:
            problems.append(f"negative slope on link {lk}")
    for i in range(spec.num_nodes):
        fn = spec.comp_cost.get(i)
        if isinstance(fn, Queue) and fn.capacity <= 0:
            problems.append(f"nonpositive computation capacity at node {i}")
    for (i, m), w in spec.comp_weight.items():
        if w <= 0:
            problems.append(f"nonpositive computation weight at ({i}, {m})")
    for d, m in tasks.tasks:
        if not (0 <= d < spec.num_nodes):
            problems.append(f"task ({d}, {m}) has invalid destination")
        if tasks.data_size.get(m, 0) <= 0:
            problems.append(f"nonpositive data packet size for type {m}")
        if tasks.result_size.get(m, 0) <= 0:
            problems.append(f"nonpositive result packet size for type {m}")
    for (i, task), rate in tasks.input_rates.items():
        if task not in tasks.index:
            problems.append(f"input rate for unknown task {task}")
        if rate < 0:
            problems.append(f"negative input rate at ({i}, {task})")
    if not any(spec.has_compute(i) for i in range(spec.num_nodes)):
        problems.append("no node carries a computation unit")
    return problems


# ---------------------------------------------------------------------------
# Per-(node, task) coordinate masks
# ---------------------------------------------------------------------------

class ForwardingMask:
    """Boolean masks restricting which forwarding coordinates are usable.

    Shapes: ``data_edge`` and ``result_edge`` are (tasks, edges), ``data_cpu``
    is (tasks, nodes).  The CPU slot is disabled wherever the node has no
    computation unit; restricted optimizers (offloading-only, congestion
    gateways) narrow the masks further.
    """

    def __init__(self, data_edge, data_cpu, result_edge):
        self.data_edge = data_edge
        self.data_cpu = data_cpu
        self.result_edge = result_edge

    @classmethod
    def full(cls, spec: NetworkSpec, tasks: TaskSet) -> "ForwardingMask":
        g = spec.graph
        nt = tasks.num_tasks
        data_edge = np.ones((nt, g.m), dtype=bool)
        result_edge = np.ones((nt, g.m), dtype=bool)
        cpu = np.zeros((nt, spec.num_nodes), dtype=bool)
        has = np.array([spec.has_compute(i) for i in range(spec.num_nodes)])
        cpu[:, has] = True
        for tk, (d, _) in enumerate(tasks.tasks):
            result_edge[tk, g.src == d] = False
        return cls(data_edge, cpu, result_edge)

    def copy(self) -> "ForwardingMask":
        return ForwardingMask(
            self.data_edge.copy(), self.data_cpu.copy(), self.result_edge.copy()
        )
