"""Hot-loop kernels with a compiled backend and a numpy fallback.

The compiled extension ``nextbuy._ckernels`` is used when it imports;
otherwise, or when ``NEXTBUY_PURE_PYTHON`` is set to a non-empty value other
than ``0``, the numpy implementations in ``nextbuy._pykernels`` are used.
"""

import os
from types import ModuleType

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _select() -> tuple[str, ModuleType]:
    if os.environ.get("NEXTBUY_PURE_PYTHON", "") not in ("", "0"):
        return "python", _pykernels
    if _ckernels is None:
        return "python", _pykernels
    return "cython", _ckernels


BACKEND, _impl = _select()


def available_backends() -> dict[str, ModuleType]:
    backends = {"python": _pykernels}
    if _ckernels is not None:
        backends["cython"] = _ckernels
    return backends


rolling_stats = _impl.rolling_stats
im2col = _impl.im2col
col2im = _impl.col2im
embedding_backward = _impl.embedding_backward
grouped_best_thresholds = _impl.grouped_best_thresholds

__all__ = [
    "BACKEND",
    "available_backends",
    "rolling_stats",
    "im2col",
    "col2im",
    "embedding_backward",
    "grouped_best_thresholds",
]
