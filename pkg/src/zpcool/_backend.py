"""Select the trajectory kernel at import.

The compiled extension is preferred; ``ZPCOOL_BACKEND=python`` forces the
numpy fallback and ``ZPCOOL_BACKEND=compiled`` makes a missing extension an
import error.
"""

from __future__ import annotations

import os

from . import _kernels_py

_choice = os.environ.get("ZPCOOL_BACKEND", "auto").strip().lower()

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None
    if _choice == "compiled":
        raise

if _choice == "python" or _compiled is None:
    kernels = _kernels_py
    BACKEND = "python"
else:
    kernels = _compiled
    BACKEND = "compiled"

advance = kernels.advance


def available() -> dict:
    """Backends importable in this interpreter, by name."""
    out = {"python": _kernels_py}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out
