"""Pick the compiled kernel when it imports, else the numpy one.

Set ``BAGKERNEL_BACKEND=python`` to force the fallback.
"""

import os

from . import _fallback

BACKENDS = {"python": _fallback.kernel_rowsums}

try:
    from ._core import kernel_rowsums as _compiled
except ImportError:  # extension not built
    _compiled = None
else:
    BACKENDS["cython"] = _compiled

if os.environ.get("BAGKERNEL_BACKEND", "").lower() == "python" or _compiled is None:
    BACKEND = "python"
else:
    BACKEND = "cython"

kernel_rowsums = BACKENDS[BACKEND]
