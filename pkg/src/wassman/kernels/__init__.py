"""Kernel backend dispatch.

Prefers the compiled extension; falls back to the NumPy reference when the
extension is missing or when WASSMAN_NO_EXTENSION is set in the environment.
Both backends expose identical signatures (see _ref.py for the contracts).
"""

import os

if os.environ.get("WASSMAN_NO_EXTENSION"):
    from wassman.kernels import _ref as _impl

    HAVE_EXTENSION = False
else:
    try:
        from wassman.kernels import _core as _impl  # type: ignore[no-redef]

        HAVE_EXTENSION = True
    except ImportError:
        from wassman.kernels import _ref as _impl  # type: ignore[no-redef]

        HAVE_EXTENSION = False

BACKEND = "compiled" if HAVE_EXTENSION else "numpy"

sinkhorn_block = _impl.sinkhorn_block
plan_reduce = _impl.plan_reduce
jacobi_eigh = _impl.jacobi_eigh
dijkstra_all = _impl.dijkstra_all

__all__ = [
    "BACKEND",
    "HAVE_EXTENSION",
    "dijkstra_all",
    "jacobi_eigh",
    "plan_reduce",
    "sinkhorn_block",
]
