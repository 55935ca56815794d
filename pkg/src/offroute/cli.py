"""Command-line entry points.

``offroute run --config cfg.yaml`` executes an experiment config and writes
CSV outputs; ``offroute presets`` lists the built-in scenarios; ``offroute
topology`` dumps a topology as a plain-text edge list.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigError, InfeasibleError, ParamError
from .harness import load_config, run_experiment
from .scenarios import PRESETS, gen_topology, write_edge_list


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="offroute",
        description="Joint routing and computation offloading simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("--config", required=True, help="YAML or JSON config")
    p_run.add_argument("--out", help="override the config output directory")
    p_run.add_argument("--deterministic", action="store_true",
                       help="suppress timestamps and wall-clock columns")

    sub.add_parser("presets", help="list built-in scenario presets")

    p_topo = sub.add_parser("topology", help="write a topology edge list")
    p_topo.add_argument("--kind", required=True,
                        help="connected_er|balanced_tree|fog|abilene|lhc|"
                             "geant|sw")
    p_topo.add_argument("--nodes", type=int, default=None)
    p_topo.add_argument("--edges", type=int, default=None)
    p_topo.add_argument("--seed", type=int, default=0)
    p_topo.add_argument("--out", default="-", help="output file or - (stdout)")

    args = parser.parse_args(argv)
    if args.command == "run":
        try:
            cfg = load_config(args.config)
            if args.out:
                cfg.output_dir = args.out
            if args.deterministic:
                cfg.deterministic = True
            return run_experiment(cfg)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 3
        except InfeasibleError as exc:
            print(f"infeasible: {exc}", file=sys.stderr)
            return 4
    if args.command == "presets":
        for name, p in PRESETS.items():
            print(f"{name}: |V|={p.num_nodes} |E|={p.num_edges} "
                  f"|T|={p.num_tasks} R={p.sources_per_task} "
                  f"link={p.link_kind}({p.link_mean}) "
                  f"comp={p.comp_kind}({p.comp_mean})")
        return 0
    if args.command == "topology":
        defaults = {
            "connected_er": (20, 40), "balanced_tree": (15, 14),
            "fog": (19, 30), "abilene": (11, 14), "lhc": (16, 31),
            "geant": (22, 33), "sw": (100, 320),
        }
        nodes, edges = defaults.get(args.kind, (None, None))
        nodes = args.nodes if args.nodes is not None else nodes
        edges = args.edges if args.edges is not None else edges
        try:
            n, edge_list = gen_topology(args.kind, nodes, edges, args.seed)
        except ParamError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 3
        text = write_edge_list(n, edge_list)
        if args.out == "-":
            sys.stdout.write(text)
        else:
            with open(args.out, "w") as fh:
                fh.write(text)
        return 0
    return 3


if __name__ == "__main__":
    sys.exit(main())
