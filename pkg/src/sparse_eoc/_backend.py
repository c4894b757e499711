"""Select the kernel implementation at import time.

The compiled extension is used when it is importable; setting
``SPARSE_EOC_PURE_PYTHON=1`` forces the pure-Python fallback.
"""
import os

from . import _kernels_py

if os.environ.get("SPARSE_EOC_PURE_PYTHON", "") not in ("", "0"):
    kernels = _kernels_py
else:
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]
    except ImportError:
        kernels = _kernels_py

BACKEND = kernels.BACKEND
