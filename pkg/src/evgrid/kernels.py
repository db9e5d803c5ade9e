"""Backend selection for the numerical hot loops.

The compiled extension ``evgrid._kernels`` is used when it was built;
otherwise the numpy implementation in ``evgrid._kernels_py`` is used.
Setting ``EVGRID_PURE_PYTHON=1`` forces the fallback.
"""

import os

from . import _kernels_py

if os.environ.get("EVGRID_PURE_PYTHON", "").strip() not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = "python" if _impl is _kernels_py else "cython"

all_nonnegative = _impl.all_nonnegative
waterfill = _impl.waterfill
waterfill_rows = _impl.waterfill_rows
repair_negatives = _impl.repair_negatives
disaggregate = _impl.disaggregate
aggregate_schedule = _impl.aggregate_schedule
solve_power_flow_batch = _impl.solve_power_flow_batch


def available_backends():
    """Map backend name to module for every backend importable here."""
    found = {"python": _kernels_py}
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        found["cython"] = _kernels
    return found
