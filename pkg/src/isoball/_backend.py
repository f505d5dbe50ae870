"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy fallback
is used. Setting ``ISOBALL_BACKEND=python`` forces the fallback.
"""
import os

from . import _pykernels

if os.environ.get("ISOBALL_BACKEND", "").strip().lower() in ("python", "py", "pure"):
    kernels = _pykernels
else:
    try:
        from . import _ckernels as kernels
    except ImportError:  # extension not built
        kernels = _pykernels

BACKEND = "python" if kernels is _pykernels else "cython"


def available_backends():
    """Map backend name to kernel module for every backend that imports."""
    found = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        found["cython"] = _ckernels
    return found
