"""Kernel backend selection.

The compiled Cython backend is preferred when its extension module built;
otherwise the pure-Python twin is used. Set MMDESIGN_PURE_PYTHON=1 to force
the fallback regardless of what is installed.
"""

from __future__ import annotations

import os

if os.environ.get("MMDESIGN_PURE_PYTHON", "").strip() not in ("", "0"):
    from . import _kernels_py as kernels

    BACKEND = "python"
else:
    try:
        from . import _kernels_cy as kernels  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        from . import _kernels_py as kernels  # type: ignore[no-redef]

        BACKEND = "python"


def backend_name() -> str:
    """Name of the active kernel backend: "compiled" or "python"."""
    return BACKEND
