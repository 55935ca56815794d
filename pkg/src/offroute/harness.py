"""Experiment orchestration: configs, runs, metrics, and CSV outputs.

A config names scenarios, algorithms, seeds, and optional rate-scale or
result-size-ratio sweeps; each (scenario, sweep, seed, algorithm) tuple runs
to convergence and lands in three files per output directory: ``trace.csv``
(per-iteration rows), ``summary.csv`` (one row per run), ``normalized.csv``
(costs scaled by the worst finite algorithm per scenario), plus one strategy
or flow dump per run under ``strategies/``.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import baselines
from .errors import ConfigError, InfeasibleError, InitError, OffrouteError, \
    ZeroDenominatorError
from .flows import FlowState, Problem, Strategy, propagate
from .model import NetworkSpec, Queue, TaskSet
from .oracle import FlowVector, oracle_total
from .scenarios import PRESETS, sample_instance
from .sgp import RunConfig, default_init, run, server_failure

ALGORITHMS = ("sgp", "gp", "spoo", "lcor", "lpr", "oracle")


@dataclass
class ExperimentConfig:
    scenarios: list
    algorithms: list
    seeds: list
    output_dir: str
    rate_scales: list = field(default_factory=lambda: [1.0])
    result_ratios: list = field(default_factory=lambda: [None])
    events: list = field(default_factory=list)
    tol: float = 1e-5
    max_iters: int = 500
    gp_beta: float = 1.0
    deterministic: bool = False

    def validate(self):
        if not self.algorithms:
            raise ConfigError("at least one algorithm is required")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not self.scenarios:
            raise ConfigError("at least one scenario is required")
        for alg in self.algorithms:
            if alg not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {alg!r}")
        for sc in self.scenarios:
            if sc not in PRESETS:
                raise ConfigError(f"unknown scenario preset {sc!r}")
        for ev in self.events:
            if "iteration" not in ev or "node" not in ev:
                raise ConfigError("events need 'iteration' and 'node'")


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    if str(path).endswith((".yaml", ".yml")):
        raw = yaml.safe_load(text)
    else:
        raw = json.loads(text)
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        cfg = ExperimentConfig(**raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def compute_metrics(flow_or_fv, rates: np.ndarray):
    """Average data and result hop counts per packet.

    L_data sums data-link packet rates over the injected rate; L_result sums
    result-link packet rates over the computed rate (equal to the injected
    rate by conservation).
    """
    if isinstance(flow_or_fv, FlowState):
        f_minus, f_plus, g = flow_or_fv.f_minus, flow_or_fv.f_plus, flow_or_fv.g
    else:
        f_minus, f_plus, g = flow_or_fv.f_minus, flow_or_fv.f_plus, flow_or_fv.g
    total_r = float(rates.sum())
    total_g = float(g.sum())
    if total_r <= 0 or total_g <= 0:
        raise ZeroDenominatorError("no injected traffic")
    return float(f_minus.sum()) / total_r, float(f_plus.sum()) / total_g


# ---------------------------------------------------------------------------
# Strategy and flow dumps
# ---------------------------------------------------------------------------

def dump_strategy(spec: NetworkSpec, tasks: TaskSet, strategy: Strategy) -> str:
    g = spec.graph
    out = ["strategy v1", f"sizes {spec.num_nodes} {tasks.num_tasks} {g.m}"]
    for e, (i, j) in enumerate(g.links):
        out.append(f"edge {e} {i} {j}")
    for tk, (d, m) in enumerate(tasks.tasks):
        out.append(f"task {tk} {d} {m}")
    for tk in range(tasks.num_tasks):
        for i in range(spec.num_nodes):
            if strategy.data_cpu[tk, i] > 0:
                out.append(f"data {tk} {i} cpu {strategy.data_cpu[tk, i]:.12g}")
        for e in range(g.m):
            if strategy.data_edge[tk, e] > 0:
                out.append(f"data {tk} {g.src[e]} {g.dst[e]} "
                           f"{strategy.data_edge[tk, e]:.12g}")
            if strategy.result_edge[tk, e] > 0:
                out.append(f"result {tk} {g.src[e]} {g.dst[e]} "
                           f"{strategy.result_edge[tk, e]:.12g}")
    return "\n".join(out) + "\n"


def load_strategy(spec: NetworkSpec, tasks: TaskSet, text: str) -> Strategy:
    g = spec.graph
    strat = Strategy.zeros(spec, tasks)
    lines = text.strip().splitlines()
    if lines[0].split()[0] != "strategy":
        raise ValueError("not a strategy dump")
    for ln in lines[1:]:
        tok = ln.split()
        if tok[0] == "data" and tok[3] == "cpu":
            strat.data_cpu[int(tok[1]), int(tok[2])] = float(tok[4])
        elif tok[0] == "data":
            e = g.edge_id[(int(tok[2]), int(tok[3]))]
            strat.data_edge[int(tok[1]), e] = float(tok[4])
        elif tok[0] == "result":
            e = g.edge_id[(int(tok[2]), int(tok[3]))]
            strat.result_edge[int(tok[1]), e] = float(tok[4])
    return strat


def dump_flows(spec: NetworkSpec, tasks: TaskSet, fv: FlowVector) -> str:
    g = spec.graph
    out = ["flows v1", f"sizes {spec.num_nodes} {tasks.num_tasks} {g.m}"]
    for tk in range(tasks.num_tasks):
        for e in range(g.m):
            if fv.f_minus[tk, e] > 0:
                out.append(f"fminus {tk} {g.src[e]} {g.dst[e]} {fv.f_minus[tk, e]:.12g}")
            if fv.f_plus[tk, e] > 0:
                out.append(f"fplus {tk} {g.src[e]} {g.dst[e]} {fv.f_plus[tk, e]:.12g}")
        for i in range(spec.num_nodes):
            if fv.g[tk, i] > 0:
                out.append(f"g {tk} {i} {fv.g[tk, i]:.12g}")
    return "\n".join(out) + "\n"


def load_flows(spec: NetworkSpec, tasks: TaskSet, text: str) -> FlowVector:
    g = spec.graph
    nt = tasks.num_tasks
    fv = FlowVector(np.zeros((nt, g.m)), np.zeros((nt, g.m)),
                    np.zeros((nt, spec.num_nodes)))
    lines = text.strip().splitlines()
    if lines[0].split()[0] != "flows":
        raise ValueError("not a flow dump")
    for ln in lines[1:]:
        tok = ln.split()
        if tok[0] == "fminus":
            fv.f_minus[int(tok[1]), g.edge_id[(int(tok[2]), int(tok[3]))]] = float(tok[4])
        elif tok[0] == "fplus":
            fv.f_plus[int(tok[1]), g.edge_id[(int(tok[2]), int(tok[3]))]] = float(tok[4])
        elif tok[0] == "g":
            fv.g[int(tok[1]), int(tok[2])] = float(tok[3])
    return fv


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------

def resolve_event_node(spec: NetworkSpec, tasks: TaskSet, node_spec):
    """Resolve an event node; 'strongest_server' picks the largest-capacity
    compute node whose removal keeps the surviving graph connected."""
    if node_spec != "strongest_server":
        return int(node_spec)
    from .sgp import _connected_over

    caps = []
    for i in range(spec.num_nodes):
        fn = spec.comp_cost.get(i)
        if isinstance(fn, Queue):
            caps.append((fn.capacity, i))
        elif fn is not None:
            caps.append((0.0, i))
    for _, i in sorted(caps, reverse=True):
        keep_links = [lk for lk in spec.links if i not in lk]
        trial = NetworkSpec(spec.num_nodes, keep_links,
                            {lk: spec.link_cost[lk] for lk in keep_links},
                            {}, {})
        active = np.ones(spec.num_nodes, dtype=bool)
        active[i] = False
        if any(d != i for d, _ in tasks.tasks) and _connected_over(trial.graph, active):
            return i
    raise InfeasibleError("no removable server keeps the network connected")


def _scenario_label(name, rate_scale, result_ratio):
    label = name
    if rate_scale != 1.0:
        label += f"[rate={rate_scale:g}]"
    if result_ratio is not None:
        label += f"[a_m={result_ratio:g}]"
    return label


def run_single(spec, tasks, algorithm, cfg: ExperimentConfig, seed: int):
    """Run one algorithm on one instance; returns a result record dict."""
    events = []
    for ev in cfg.events:
        node = resolve_event_node(spec, tasks, ev["node"])
        events.append((int(ev["iteration"]), server_failure(node)))
    rc = RunConfig(max_iters=cfg.max_iters, tol=cfg.tol, events=events,
                   seed=seed)
    t0 = time.perf_counter()
    prob = Problem(spec, tasks)
    trace = []
    strategy = None
    flows = None
    if algorithm == "sgp":
        res = baselines.run_sgp(spec, tasks, rc)
    elif algorithm == "gp":
        res = baselines.run_gp(spec, tasks, rc, beta=cfg.gp_beta)
    elif algorithm == "spoo":
        res = baselines.run_spoo(spec, tasks, rc)
    elif algorithm == "lcor":
        res = baselines.run_lcor(spec, tasks, rc)
    elif algorithm == "lpr":
        res = baselines.run_lpr(spec, tasks)
    elif algorithm == "oracle":
        res = baselines.run_oracle(spec, tasks, tol=cfg.tol)
    else:
        raise ConfigError(f"unknown algorithm {algorithm!r}")
    wall_ms = (time.perf_counter() - t0) * 1e3
    if res.run_result is not None:
        trace = res.run_result.trace
        wall_ms = res.run_result.wall_ms
        final_spec, final_tasks = res.run_result.spec, res.run_result.tasks
        flow = res.run_result.flow
        rates = Problem(final_spec, final_tasks).r
        strategy = res.strategy
    else:
        flow = res.flows
        rates = prob.r
        flows = res.flows
    try:
        l_data, l_result = compute_metrics(flow, rates)
    except ZeroDenominatorError:
        l_data = l_result = math.nan
    return {
        "result": res,
        "trace": trace,
        "strategy": strategy,
        "flows": flows,
        "l_data": l_data,
        "l_result": l_result,
        "wall_ms": wall_ms,
    }


def run_experiment(config: ExperimentConfig) -> int:
    """Execute every configured run; returns the process exit code."""
    try:
        config.validate()
    except ConfigError:
        raise
    outdir = Path(config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "strategies").mkdir(exist_ok=True)
    trace_rows = []
    summary_rows = []
    errored = False
    hit_cap = False
    for name in config.scenarios:
        for rate_scale in config.rate_scales:
            for ratio in config.result_ratios:
                label = _scenario_label(name, rate_scale, ratio)
                for seed in config.seeds:
                    try:
                        spec, tasks = sample_instance(
                            name, seed, rate_scale=rate_scale,
                            result_ratio=ratio,
                        )
                    except (InfeasibleError, InitError) as exc:
                        errored = True
                        summary_rows.append([label, seed, "-", "inf", 0,
                                             False, "", "", 0.0,
                                             f"instance: {exc}"])
                        continue
                    for alg in config.algorithms:
                        try:
                            rec = run_single(spec, tasks, alg, config, seed)
                        except OffrouteError as exc:
                            errored = True
                            summary_rows.append([label, seed, alg, "inf", 0,
                                                 False, "", "", 0.0, str(exc)])
                            continue
                        res = rec["result"]
                        if not res.converged and alg in ("sgp", "gp", "spoo",
                                                         "lcor", "oracle"):
                            hit_cap = True
                        for row in rec["trace"]:
                            trace_rows.append([
                                label, seed, alg, row.iteration,
                                f"{row.total:.12g}", f"{row.residual:.12g}",
                                int(row.event),
                            ])
                        if not rec["trace"]:
                            trace_rows.append([label, seed, alg, 0,
                                               f"{res.total:.12g}", "", 0])
                        wall = 0.0 if config.deterministic else rec["wall_ms"]
                        summary_rows.append([
                            label, seed, alg, f"{res.total:.12g}",
                            res.iterations, res.converged,
                            _fmt(rec["l_data"]), _fmt(rec["l_result"]),
                            f"{wall:.3f}", "",
                        ])
                        dump_path = outdir / "strategies" / \
                            f"{label}_s{seed}_{alg}.txt"
                        if rec["strategy"] is not None:
                            dspec, dtasks = spec, tasks
                            if res.run_result is not None:
                                dspec = res.run_result.spec
                                dtasks = res.run_result.tasks
                            dump_path.write_text(
                                dump_strategy(dspec, dtasks, rec["strategy"])
                            )
                        elif rec["flows"] is not None:
                            dump_path.write_text(
                                dump_flows(spec, tasks, rec["flows"])
                            )
    header = [] if config.deterministic else [
        ["# generated", time.strftime("%Y-%m-%dT%H:%M:%S")]
    ]
    _write_csv(outdir / "trace.csv", header + [[
        "scenario", "seed", "algorithm", "iter", "T", "residual", "event",
    ]] + trace_rows)
    _write_csv(outdir / "summary.csv", header + [[
        "scenario", "seed", "algorithm", "T_final", "iters", "converged",
        "L_data", "L_result", "wall_ms", "error",
    ]] + summary_rows)
    _write_csv(outdir / "normalized.csv",
               header + _normalized_table(summary_rows))
    if errored:
        return 4
    if hit_cap:
        return 2
    return 0


def _fmt(x):
    return "" if (isinstance(x, float) and math.isnan(x)) else f"{x:.12g}"


def _normalized_table(summary_rows):
    """Costs per scenario scaled by the worst finite algorithm (averaged over
    seeds first)."""
    sums = {}
    counts = {}
    for row in summary_rows:
        label, seed, alg, t_final = row[0], row[1], row[2], row[3]
        if alg == "-" or row[9]:
            continue
        t = float(t_final)
        if not math.isfinite(t):
            continue
        sums[(label, alg)] = sums.get((label, alg), 0.0) + t
        counts[(label, alg)] = counts.get((label, alg), 0) + 1
    rows = [["scenario", "algorithm", "T_mean", "T_normalized"]]
    labels = sorted({k[0] for k in sums})
    for label in labels:
        algs = sorted({a for (lb, a) in sums if lb == label})
        means = {a: sums[(label, a)] / counts[(label, a)] for a in algs}
        worst = max(means.values())
        for a in algs:
            rows.append([label, a, f"{means[a]:.12g}",
                         f"{means[a] / worst:.12g}" if worst > 0 else ""])
    return rows


def _write_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in rows:
            writer.writerow(row)
