"""Simulation kernel backend selection.

The compiled Cython kernel is used when the extension built; otherwise the
pure-NumPy fallback takes over.  Set GAITFORGE_PURE=1 to force the fallback
(useful for benchmarking and twin-equivalence testing).
"""

from __future__ import annotations

import os

from . import fallback
from .fallback import SimulationDiverged
from .packing import PackedModel, pack_model

if os.environ.get("GAITFORGE_PURE") == "1":
    _impl = fallback
else:
    try:
        from . import _kernel as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = fallback

backend = _impl
BACKEND_NAME = _impl.BACKEND_NAME

__all__ = ["backend", "fallback", "BACKEND_NAME", "PackedModel", "pack_model", "SimulationDiverged"]
