"""Hot kernels with a compiled core and a numpy fallback.

The compiled extension is used when it was built and ``OCFL_PURE_PYTHON`` is
not set to ``1``. ``BACKEND`` names the active implementation.
"""
from __future__ import annotations

import os
from types import ModuleType

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_forced_python = os.environ.get("OCFL_PURE_PYTHON", "") == "1"

_active: ModuleType = _pykernels if (_ckernels is None or _forced_python) else _ckernels
BACKEND = "python" if _active is _pykernels else "cython"

cosine_divergence = _active.cosine_divergence
mutual_reachability_mst = _active.mutual_reachability_mst
flat_mean_shift = _active.flat_mean_shift


def available_backends() -> dict[str, ModuleType]:
    backends: dict[str, ModuleType] = {"python": _pykernels}
    if _ckernels is not None:
        backends["cython"] = _ckernels
    return backends


__all__ = [
    "BACKEND",
    "available_backends",
    "cosine_divergence",
    "flat_mean_shift",
    "mutual_reachability_mst",
]
