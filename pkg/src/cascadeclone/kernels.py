"""Kernel dispatch: the compiled extension when importable, else pure Python.

Set ``CASCADECLONE_PURE=1`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _pykernels

BACKEND = "python"

if os.environ.get("CASCADECLONE_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl

        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _pykernels
else:
    _impl = _pykernels

cascade_trace = _impl.cascade_trace
cascade_accumulate = _impl.cascade_accumulate
histogram = _impl.histogram

draw_uniform = _pykernels.draw_uniform
DRAW_INFECT = _pykernels.DRAW_INFECT
DRAW_DELAY = _pykernels.DRAW_DELAY
DRAW_QUOTE = _pykernels.DRAW_QUOTE
DELAY_EXPONENTIAL = _pykernels.DELAY_EXPONENTIAL
DELAY_CONSTANT = _pykernels.DELAY_CONSTANT

__all__ = [
    "BACKEND",
    "cascade_trace",
    "cascade_accumulate",
    "histogram",
    "draw_uniform",
]
