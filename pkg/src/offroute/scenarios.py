"""Reproducible scenario generation: topologies, cost draws, tasks, rates.

All randomness flows through counter-based Philox generators keyed by
(seed, stream, attempt) SeedSequences, so identical inputs give bit-identical
instances on any platform.  The seven benchmark presets pin node/edge/task
counts exactly; the Abilene/LHC/GEANT adjacencies ship as plain-text edge
lists ("n <count>" header, one "i j" pair per line).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import InfeasibleError, ParamError
from .flows import propagate
from .model import Linear, NetworkSpec, Queue, TaskSet
from .sgp import default_init


@dataclass(frozen=True)
class ScenarioPreset:
    name: str
    num_nodes: int
    num_edges: int  # undirected
    num_tasks: int
    sources_per_task: int
    link_kind: str  # "linear" | "queue"
    link_mean: float
    comp_kind: str
    comp_mean: float
    num_types: int = 5
    rate_min: float = 0.5
    rate_max: float = 1.5


PRESETS = {
    p.name: p
    for p in [
        ScenarioPreset("connected_er", 20, 40, 15, 5, "queue", 10, "queue", 12),
        ScenarioPreset("balanced_tree", 15, 14, 20, 5, "queue", 20, "queue", 15),
        ScenarioPreset("fog", 19, 30, 30, 5, "queue", 20, "queue", 17),
        ScenarioPreset("abilene", 11, 14, 10, 3, "queue", 15, "queue", 10),
        ScenarioPreset("lhc", 16, 31, 30, 5, "queue", 15, "queue", 15),
        ScenarioPreset("geant", 22, 33, 40, 7, "queue", 20, "queue", 20),
        ScenarioPreset("sw_linear", 100, 320, 120, 10, "linear", 20, "linear", 20),
        ScenarioPreset("sw_queue", 100, 320, 120, 10, "queue", 20, "queue", 20),
    ]
}


def _rng(seed, stream, attempt=0):
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence((seed, stream, attempt)))
    )


# ---------------------------------------------------------------------------
# Topologies (undirected edge lists)
# ---------------------------------------------------------------------------

def read_edge_list(text: str):
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if not lines[0].startswith("n "):
        raise ParamError("edge list must start with a 'n <count>' header")
    n = int(lines[0].split()[1])
    edges = []
    for ln in lines[1:]:
        i, j = (int(tok) for tok in ln.split())
        edges.append((i, j))
    return n, edges


def write_edge_list(n, edges) -> str:
    out = [f"n {n}"]
    out += [f"{i} {j}" for i, j in edges]
    return "\n".join(out) + "\n"


def _fixed_topology(name):
    text = resources.files("offroute.data").joinpath(f"{name}.txt").read_text()
    return read_edge_list(text)


def _connected_er(n, target, seed, p=0.1):
    edges = [(i, i + 1) for i in range(n - 1)]
    have = set(edges)
    candidates = [
        (i, j) for i in range(n) for j in range(i + 1, n) if (i, j) not in have
    ]
    if target < len(edges) or target > len(edges) + len(candidates):
        raise ParamError(f"cannot hit {target} edges on {n} nodes")
    rng = _rng(seed, 1)
    picked = [c for c in candidates if rng.random() < p]
    need = target - len(edges)
    if len(picked) > need:
        keep = rng.choice(len(picked), size=need, replace=False)
        picked = [picked[k] for k in sorted(keep)]
    elif len(picked) < need:
        rest = [c for c in candidates if c not in set(picked)]
        extra = rng.choice(len(rest), size=need - len(picked), replace=False)
        picked += [rest[k] for k in sorted(extra)]
    return edges + picked


def _balanced_tree(n):
    return [((i - 1) // 2, i) for i in range(1, n)]


def _fog(n, target):
    """Complete binary tree plus same-layer chains added until the budget."""
    edges = _balanced_tree(n)
    if target < len(edges):
        raise ParamError("edge budget below the spanning tree")
    layers = []
    start, width = 0, 1
    while start < n:
        layers.append(list(range(start, min(start + width, n))))
        start += width
        width *= 2
    for layer in layers:
        for a, b in zip(layer, layer[1:]):
            if len(edges) >= target:
                return edges
            edges.append((a, b))
    if len(edges) != target:
        raise ParamError(f"fog topology cannot reach {target} edges")
    return edges


def _small_world(n, target, seed):
    edges = [(i, (i + 1) % n) for i in range(n)]
    have = {(min(i, j), max(i, j)) for i, j in edges}
    for i in range(n):
        j = (i + 2) % n
        key = (min(i, j), max(i, j))
        if len(edges) >= target:
            return edges
        if key not in have:
            have.add(key)
            edges.append(key)
    rng = _rng(seed, 2)
    guard = 0
    while len(edges) < target:
        i = int(rng.integers(n))
        j = int(rng.integers(n))
        key = (min(i, j), max(i, j))
        if i == j or key in have:
            guard += 1
            if guard > 100 * target:
                raise ParamError("could not place enough chords")
            continue
        have.add(key)
        edges.append(key)
    return edges


def gen_topology(kind, n, target_edges=None, seed=0):
    """Undirected edge list for a named topology family."""
    if kind == "connected_er":
        return n, _connected_er(n, target_edges, seed)
    if kind == "balanced_tree":
        edges = _balanced_tree(n)
        if target_edges is not None and target_edges != len(edges):
            raise ParamError("a tree on n nodes has exactly n-1 edges")
        return n, edges
    if kind == "fog":
        return n, _fog(n, target_edges)
    if kind in ("abilene", "lhc", "geant"):
        n_fixed, edges = _fixed_topology(kind)
        if n != n_fixed:
            raise ParamError(f"{kind} topology has {n_fixed} nodes")
        return n_fixed, edges
    if kind in ("sw", "sw_linear", "sw_queue", "small_world"):
        return n, _small_world(n, target_edges, seed)
    raise ParamError(f"unknown topology kind {kind!r}")


# ---------------------------------------------------------------------------
# Instance sampling
# ---------------------------------------------------------------------------

def _truncated_exp(rng, mean, lo, hi, size):
    out = np.empty(size)
    for k in range(size):
        draw = rng.exponential(mean)
        while not (lo <= draw <= hi):
            draw = rng.exponential(mean)
        out[k] = draw
    return out


def sample_instance(preset, seed, rate_scale=1.0, result_ratio=None):
    """Draw a full (NetworkSpec, TaskSet) for a preset, reproducibly.

    Sizes: every data packet is 1; result packets are Exp(0.5) truncated to
    [0.1, 5] per type unless ``result_ratio`` pins them.  Queue computation
    capacities are drawn memorylessly above the node's pure-local workload so
    that computing at the sources stays feasible (the regime the benchmark
    baselines assume).  Instances whose default start has infinite cost are
    resampled up to 100 times.
    """
    if isinstance(preset, str):
        preset = PRESETS[preset]
    topo_kind = preset.name if preset.name in ("abilene", "lhc", "geant",
                                               "balanced_tree", "fog",
                                               "connected_er") else "sw"
    for attempt in range(100):
        n, edges = gen_topology(topo_kind, preset.num_nodes,
                                preset.num_edges, seed + 100000 * attempt)
        if len(edges) != preset.num_edges:
            raise ParamError("edge budget mismatch")
        rng_tasks = _rng(seed, 10, attempt)
        rng_sizes = _rng(seed, 11, attempt)
        rng_rates = _rng(seed, 12, attempt)
        rng_w = _rng(seed, 13, attempt)
        rng_link = _rng(seed, 14, attempt)
        rng_comp = _rng(seed, 15, attempt)

        nm = preset.num_types
        if result_ratio is not None:
            l_plus = np.full(nm, float(result_ratio))
        else:
            l_plus = _truncated_exp(rng_sizes, 0.5, 0.1, 5.0, nm)
        pairs = rng_tasks.choice(n * nm, size=preset.num_tasks, replace=False)
        tasks_list = [(int(p // nm), int(p % nm)) for p in pairs]
        rates = {}
        for task in tasks_list:
            srcs = rng_rates.choice(n, size=preset.sources_per_task,
                                    replace=False)
            for i in srcs:
                rates[(int(i), task)] = rate_scale * float(
                    rng_rates.uniform(preset.rate_min, preset.rate_max)
                )
        w = rng_w.uniform(1.0, 5.0, size=(n, nm))

        links = []
        link_cost = {}
        for (i, j) in edges:
            param = float(rng_link.uniform(0.0, 2.0 * preset.link_mean))
            fn = Linear(param) if preset.link_kind == "linear" else Queue(param)
            links += [(i, j), (j, i)]
            link_cost[(i, j)] = fn
            link_cost[(j, i)] = fn

        local_load = np.zeros(n)
        for (i, (d, m)), rate in rates.items():
            local_load[i] += w[i, m] * rate
        comp_cost = {}
        for i in range(n):
            if preset.comp_kind == "linear":
                comp_cost[i] = Linear(float(rng_comp.uniform(0.0, 2.0 * preset.comp_mean)))
            else:
                cap = 1.05 * local_load[i] + float(rng_comp.exponential(preset.comp_mean))
                comp_cost[i] = Queue(cap)
        comp_weight = {(i, m): float(w[i, m]) for i in range(n) for m in range(nm)}
        spec = NetworkSpec(n, links, link_cost, comp_cost, comp_weight)
        tasks = TaskSet(
            tasks_list,
            {m: 1.0 for m in range(nm)},
            {m: float(l_plus[m]) for m in range(nm)},
            rates,
        )
        try:
            start = default_init(spec, tasks)
        except Exception:
            continue
        if math.isfinite(propagate(spec, tasks, start).total):
            return spec, tasks
    raise InfeasibleError(
        f"no finite-cost instance found for {preset.name} seed {seed}"
    )


def sample_small_instance(seed, max_nodes=6, max_tasks=2):
    """Small mixed-cost instance with utilization headroom, for oracle tests.

    Queue capacities are assigned a 2x-4x margin over an all-or-nothing
    routing of the demand, keeping the optimum safely inside capacity.
    """
    rng = _rng(seed, 20)
    n = int(rng.integers(3, max_nodes + 1))
    edges = [(i, i + 1) for i in range(n - 1)]
    have = set(edges)
    for i in range(n):
        for j in range(i + 2, n):
            if rng.random() < 0.45:
                have.add((i, j))
                edges.append((i, j))
    nt = int(rng.integers(1, max_tasks + 1))
    nm = nt
    tasks_list = []
    while len(tasks_list) < nt:
        cand = (int(rng.integers(n)), len(tasks_list))
        tasks_list.append(cand)
    rates = {}
    for task in tasks_list:
        for i in rng.choice(n, size=int(rng.integers(1, 3)), replace=False):
            rates[(int(i), task)] = float(rng.uniform(0.5, 1.5))
    w = rng.uniform(1.0, 3.0, size=(n, nm))
    l_plus = {m: float(rng.uniform(0.3, 1.5)) for m in range(nm)}

    # provisional linear costs to get a load profile, then assign kinds
    slopes = {e: float(rng.uniform(0.5, 2.0)) for e in edges}
    links, link_cost = [], {}
    for (i, j) in edges:
        links += [(i, j), (j, i)]
    spec0 = NetworkSpec(
        n, links,
        {lk: Linear(slopes[(min(lk), max(lk))]) for lk in links},
        {i: Linear(float(rng.uniform(0.2, 1.0))) for i in range(n)},
        {(i, m): float(w[i, m]) for i in range(n) for m in range(nm)},
    )
    tasks = TaskSet(tasks_list, {m: 1.0 for m in range(nm)}, l_plus, rates)
    probe = propagate(spec0, tasks, default_init(spec0, tasks))

    for lk in links:
        und = (min(lk), max(lk))
        e = spec0.graph.edge_id[lk]
        load = max(probe.F[e], probe.F[spec0.graph.edge_id[(lk[1], lk[0])]])
        if rng.random() < 0.5:
            link_cost[lk] = link_cost.get((lk[1], lk[0])) or Linear(slopes[und])
        else:
            cap = float(load * rng.uniform(2.0, 4.0) + rng.uniform(1.0, 3.0))
            link_cost[lk] = link_cost.get((lk[1], lk[0])) or Queue(cap)
    comp_cost = {}
    for i in range(n):
        if rng.random() < 0.5:
            comp_cost[i] = Linear(float(rng.uniform(0.2, 1.0)))
        else:
            cap = float(probe.G[i] * rng.uniform(2.0, 4.0) + rng.uniform(2.0, 4.0))
            comp_cost[i] = Queue(cap)
    spec = NetworkSpec(n, links, link_cost, comp_cost,
                       {(i, m): float(w[i, m]) for i in range(n) for m in range(nm)})
    return spec, tasks
