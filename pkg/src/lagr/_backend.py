"""Pick the compiled core when available; ``LAGR_PURE_PYTHON=1`` forces the fallback."""
import os

from . import _core_py

if os.environ.get("LAGR_PURE_PYTHON", "") not in ("", "0"):
    core = _core_py
    BACKEND = "python"
else:
    try:
        from . import _core as core
    except ImportError:  # extension not built
        core = _core_py
        BACKEND = "python"
    else:
        BACKEND = "cython"
