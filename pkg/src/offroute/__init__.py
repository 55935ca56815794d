"""Joint routing and computation offloading with congestion-dependent costs.

Core objects: ``NetworkSpec``/``TaskSet`` describe a problem instance,
``Strategy`` holds per-node forwarding fractions, ``propagate`` derives flows
and cost, and ``run`` optimizes a strategy by scaled gradient projection.
"""

from ._kernels import BACKEND
from .baselines import (BaselineResult, run_gp, run_lcor, run_lpr, run_oracle,
                        run_sgp, run_spoo)
from .congestion import (CCReport, CCResult, ExtendedNetwork, UtilityFn,
                         UtilityLoss, admitted_rates, all_reject_start,
                         build_extended, check_sufficient_cc, run_sgp_cc,
                         utility_minus_cost)
from .errors import (ConfigError, DegenerateError, InfeasibleAfterEvent,
                     InfeasibleError, InitError, LoopError, OffrouteError,
                     ParamError, ZeroDenominatorError)
from .flows import (FlowState, Strategy, detect_loops, flows_from_phi,
                    loop_free, phi_from_flows, propagate, total_cost)
from .harness import (ExperimentConfig, compute_metrics, dump_strategy,
                      load_config, load_strategy, run_experiment)
from .marginals import (MarginalState, broadcast_stage1, broadcast_stage2,
                        compute_blocked, compute_deltas, compute_marginals)
from .model import (CostFn, ForwardingMask, Linear, NetworkSpec, Queue,
                    TaskSet, cost_eval, validate)
from .optimality import (OptimalityReport, check_kkt, check_sufficient,
                         geodesic_probe, verify)
from .oracle import FlowVector, OracleResult, convex_oracle
from .scenarios import (PRESETS, ScenarioPreset, gen_topology,
                        read_edge_list, sample_instance,
                        sample_small_instance, write_edge_list)
from .sgp import (Event, RunConfig, RunResult, default_init, run,
                  scaling_matrix, server_failure, sgp_step)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CostFn", "Linear", "Queue", "cost_eval",
    "NetworkSpec", "TaskSet", "ForwardingMask", "validate",
    "Strategy", "FlowState", "propagate", "detect_loops", "loop_free",
    "total_cost", "flows_from_phi", "phi_from_flows",
    "MarginalState", "broadcast_stage1", "broadcast_stage2",
    "compute_deltas", "compute_blocked", "compute_marginals",
    "OptimalityReport", "check_kkt", "check_sufficient", "verify",
    "geodesic_probe",
    "RunConfig", "RunResult", "Event", "server_failure", "run",
    "default_init", "sgp_step", "scaling_matrix",
    "BaselineResult", "run_sgp", "run_gp", "run_spoo", "run_lcor",
    "run_lpr", "run_oracle",
    "FlowVector", "OracleResult", "convex_oracle",
    "UtilityFn", "UtilityLoss", "ExtendedNetwork", "build_extended",
    "all_reject_start", "run_sgp_cc", "check_sufficient_cc",
    "admitted_rates", "utility_minus_cost", "CCResult", "CCReport",
    "PRESETS", "ScenarioPreset", "gen_topology", "sample_instance",
    "sample_small_instance", "read_edge_list", "write_edge_list",
    "ExperimentConfig", "load_config", "run_experiment", "compute_metrics",
    "dump_strategy", "load_strategy",
    "OffrouteError", "LoopError", "InfeasibleError", "InitError",
    "InfeasibleAfterEvent", "DegenerateError", "ParamError",
    "ZeroDenominatorError", "ConfigError",
]
