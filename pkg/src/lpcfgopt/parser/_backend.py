"""Kernel backend selection.

The compiled extension is used when it imports; ``LPCFGOPT_PURE_PYTHON=1``
forces the reference implementation.
"""
import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels

if os.environ.get("LPCFGOPT_PURE_PYTHON") or _ckernels is None:
    BACKEND = "python"
else:
    BACKEND = "cython"


def get(name: str | None = None):
    return BACKENDS[name or BACKEND]
