"""Backend selection for the agglomeration kernel.

Prefers the compiled extension; falls back to the pure-Python twin when the
extension was not built or ``CSFM_PURE_PYTHON=1`` is set.
"""
from __future__ import annotations

import os

from . import _cnm_py

if os.environ.get("CSFM_PURE_PYTHON", "") not in ("", "0"):
    merge_trace = _cnm_py.merge_trace
    BACKEND = "python"
else:
    try:
        from . import _cnm_fast

        merge_trace = _cnm_fast.merge_trace
        BACKEND = "cython"
    except ImportError:
        merge_trace = _cnm_py.merge_trace
        BACKEND = "python"


def backend_name() -> str:
    """Which kernel is active: "cython" or "python"."""
    return BACKEND
