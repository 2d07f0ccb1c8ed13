"""Kernel selection: the compiled extension when importable, numpy otherwise.

Set ``OPUSKETCH_PURE_PYTHON=1`` to force the numpy fallback.
"""

import os

from . import _fallback

compiled = None
if not os.environ.get("OPUSKETCH_PURE_PYTHON"):
    try:
        from . import _kernels as compiled
    except ImportError:
        compiled = None

if compiled is not None:
    accumulate_phases = compiled.accumulate_phases
    BACKEND = "compiled"
else:
    accumulate_phases = _fallback.accumulate_phases
    BACKEND = "python"

__all__ = ["BACKEND", "accumulate_phases", "compiled"]
