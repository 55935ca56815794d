"""Backend selection for the hot sweep kernels.

Prefers the compiled Cython module; falls back to the pure-Python twin when
the extension is missing or OFFROUTE_PURE_PYTHON=1 is set.  ``BACKEND`` names
the active implementation; ``benchmarks/bench_kernels.py`` compares the two.
"""

import os

if os.environ.get("OFFROUTE_PURE_PYTHON"):
    from . import _py as _impl

    BACKEND = "python"
else:
    try:
        from . import _cy as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        from . import _py as _impl

        BACKEND = "python"

kahn_topo = _impl.kahn_topo
sweep_traffic = _impl.sweep_traffic
sweep_marginal_result = _impl.sweep_marginal_result
sweep_marginal_data = _impl.sweep_marginal_data
qp_row = _impl.qp_row
update_rows = _impl.update_rows

__all__ = [
    "BACKEND",
    "kahn_topo",
    "sweep_traffic",
    "sweep_marginal_result",
    "sweep_marginal_data",
    "qp_row",
    "update_rows",
]
