"""Kernel backend selection.

The compiled extension is used when it imports; setting the environment
variable ``CLVDA_BACKEND=python`` forces the numpy fallback.
"""
import os

from clvda import _pykernels

if os.environ.get("CLVDA_BACKEND", "").lower() == "python":
    kernels = _pykernels
    BACKEND = "python"
else:
    try:
        from clvda import _ckernels as kernels
    except ImportError:
        kernels = _pykernels
        BACKEND = "python"
    else:
        BACKEND = "cython"

__all__ = ["BACKEND", "kernels"]
