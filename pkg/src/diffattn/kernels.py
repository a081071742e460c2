"""Kernel selection: the compiled extension when importable, else numpy.

Set ``DIFFATTN_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _pykernels

BACKEND = "python"
if os.environ.get("DIFFATTN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
else:
    _impl = _pykernels

knn_query = _impl.knn_query
assign_nearest = _impl.assign_nearest

__all__ = ["BACKEND", "knn_query", "assign_nearest"]
