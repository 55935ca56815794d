#!/usr/bin/env python3
"""Benchmark the compiled sweep kernels against the pure-Python twins.

Times the four hot kernels and a full optimizer iteration on a mid-size
instance.  Run directly:  python benchmarks/bench_kernels.py [preset] [seed]
"""

import sys
import time

import numpy as np

from offroute import _kernels
from offroute._kernels import _py
from offroute.flows import Problem, propagate
from offroute.marginals import compute_marginals
from offroute.scenarios import sample_instance
from offroute.sgp import RunConfig, _update_all, default_init
from offroute import sgp as sgp_mod


def _time(fn, reps):
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(preset="sw_queue", seed=0, reps=5):
    try:
        compiled = __import__("offroute._kernels._cy", fromlist=["_cy"])
    except ImportError:
        compiled = None
        print("compiled backend unavailable; timing pure Python only")
    spec, tasks = sample_instance(preset, seed)
    prob = Problem(spec, tasks)
    strat = default_init(spec, tasks)
    flow = propagate(prob, strategy=strat)
    marg = compute_marginals(prob, tasks, strat, flow)
    g = spec.graph
    tk = 0
    active = flow.act_minus[tk]
    coef = prob.Lm[tk] * marg.d1_link
    cpu_term = prob.W[tk] * marg.d1_comp + marg.dT_dtplus[tk]

    cases = {
        "kahn_topo": lambda impl: impl.kahn_topo(
            g.n, g.out_ptr, g.out_eids, g.dst, active),
        "sweep_traffic": lambda impl: impl.sweep_traffic(
            flow.order_minus[tk], g.out_ptr, g.out_eids, g.dst,
            strat.data_edge[tk], active, prob.r[tk]),
        "sweep_marginal_data": lambda impl: impl.sweep_marginal_data(
            flow.order_minus[tk], g.out_ptr, g.out_eids, g.dst,
            strat.data_edge[tk], active, coef, cpu_term,
            strat.data_cpu[tk]),
        "sweep_marginal_result": lambda impl: impl.sweep_marginal_result(
            flow.order_plus[tk], g.out_ptr, g.out_eids, g.dst,
            strat.result_edge[tk], flow.act_plus[tk],
            prob.Lp[tk] * marg.d1_link, int(prob.dests[tk])),
    }
    impls = [("python", _py)] + ([("cython", compiled)] if compiled else [])
    print(f"preset={preset} seed={seed}: |V|={spec.num_nodes} "
          f"|E|={g.m} |T|={tasks.num_tasks}\n")
    print(f"{'kernel':24s}" + "".join(f"{name:>12s}" for name, _ in impls)
          + ("     speedup" if compiled else ""))
    for label, call in cases.items():
        times = [
            _time(lambda impl=impl: [call(impl) for _ in range(50)], reps) / 50
            for _, impl in impls
        ]
        row = f"{label:24s}" + "".join(f"{t * 1e6:10.1f}us" for t in times)
        if compiled:
            row += f"{times[0] / times[-1]:11.1f}x"
        print(row)

    # full synchronous iteration (update every forwarding row once)
    def full_iteration(impl):
        saved = (_kernels.kahn_topo, _kernels.sweep_traffic,
                 _kernels.sweep_marginal_result, _kernels.sweep_marginal_data,
                 _kernels.qp_row, _kernels.update_rows)
        _kernels.kahn_topo = impl.kahn_topo
        _kernels.sweep_traffic = impl.sweep_traffic
        _kernels.sweep_marginal_result = impl.sweep_marginal_result
        _kernels.sweep_marginal_data = impl.sweep_marginal_data
        _kernels.qp_row = impl.qp_row
        _kernels.update_rows = impl.update_rows
        try:
            fl = propagate(prob, strategy=strat)
            mg = compute_marginals(prob, tasks, strat, fl)
            _update_all(prob, strat, fl, mg, None, RunConfig())
        finally:
            (_kernels.kahn_topo, _kernels.sweep_traffic,
             _kernels.sweep_marginal_result, _kernels.sweep_marginal_data,
             _kernels.qp_row, _kernels.update_rows) = saved

    times = [_time(lambda impl=impl: full_iteration(impl), reps)
             for _, impl in impls]
    row = f"{'full iteration':24s}" + "".join(f"{t * 1e3:10.2f}ms" for t in times)
    if compiled:
        row += f"{times[0] / times[-1]:11.1f}x"
    print(row)


if __name__ == "__main__":
    preset = sys.argv[1] if len(sys.argv) > 1 else "sw_queue"
    seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0
    bench(preset, seed)
