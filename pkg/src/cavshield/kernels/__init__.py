"""Kernel backend selection.

The compiled extension is preferred when importable; set
CAVSHIELD_BACKEND=python or CAVSHIELD_BACKEND=compiled to force one.
Both backends implement identical arithmetic (see pure.py).
"""

import os

from . import pure as _pure

_FORCE = os.environ.get("CAVSHIELD_BACKEND", "").strip().lower()

if _FORCE == "python":
    _impl = _pure
elif _FORCE == "compiled":
    from . import _speedups as _impl
else:
    try:
        from . import _speedups as _impl
    except ImportError:
        _impl = _pure

BACKEND = _impl.BACKEND
QP_FEASIBLE = _impl.QP_FEASIBLE
QP_INFEASIBLE = _impl.QP_INFEASIBLE

solve_qp_2d = _impl.solve_qp_2d
step_bicycle = _impl.step_bicycle
wrap_angle = _impl.wrap_angle
rect_overlap = _impl.rect_overlap


def available_backends():
    """Names of importable kernel backends."""
    names = ["python"]
    try:
        from . import _speedups  # noqa: F401
    except ImportError:
        pass
    else:
        names.append("compiled")
    return names


def get_backend(name):
    """Return the kernel module for an explicit backend name."""
    if name == "python":
        return _pure
    if name == "compiled":
        from . import _speedups

        return _speedups
    raise ValueError(f"unknown backend {name!r}")
