"""Kernel dispatch: compiled Cython core when importable, numpy otherwise.

Set ``BARRON_ICL_PURE_PYTHON=1`` to force the numpy path.
"""
import os

from . import _pykernels

if os.environ.get("BARRON_ICL_PURE_PYTHON"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

logistic = _impl.logistic
logistic_attention = _impl.logistic_attention
soft_threshold = _impl.soft_threshold
ista_path = _impl.ista_path

__all__ = ["BACKEND", "logistic", "logistic_attention", "soft_threshold", "ista_path"]
