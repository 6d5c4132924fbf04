"""Kernel backend selection.

The numerical core (staggered operators and energy kernels) has two
implementations with identical signatures: a compiled Cython module
``mfgrid._core`` and the pure NumPy module ``mfgrid._kernels_np``. The
compiled one is used when it was built; setting the environment variable
``MFGRID_PURE_PYTHON=1`` forces the NumPy fallback (useful for debugging and
for the parity tests and benchmarks, which exercise both).

Higher-level modules import ``from mfgrid.backend import kernels`` and never
touch either implementation directly.
"""

from __future__ import annotations

import os

from . import _kernels_np

BACKEND: str
kernels = _kernels_np

if os.environ.get("MFGRID_PURE_PYTHON", "") not in ("", "0"):
    BACKEND = "python"
else:
    try:
        from . import _core  # type: ignore[attr-defined]

        kernels = _core
        BACKEND = "compiled"
    except ImportError:
        BACKEND = "python"


def active_backend() -> str:
    """Name of the kernel backend in use: 'compiled' or 'python'."""
    return BACKEND
