"""Pick the compiled core if available, else the numpy fallback.

Set ``CPNLAB_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _core_py

if os.environ.get("CPNLAB_PURE_PYTHON", "") not in ("", "0"):
    core = _core_py
    COMPILED = False
else:
    try:
        from . import _core as core  # type: ignore[attr-defined]

        COMPILED = True
    except ImportError:
        core = _core_py
        COMPILED = False

BACKENDS = {"python": _core_py}
if COMPILED:
    BACKENDS["compiled"] = core

__all__ = ["core", "COMPILED", "BACKENDS"]
