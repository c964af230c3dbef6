"""Hot numeric kernels with a selectable backend.

Set PPBOOST_KERNELS=numpy to force the pure-NumPy fallback, =numba to require
the JIT backend, or leave unset/auto to use numba when importable. Both
backends expose identical signatures; benchmarks/bench_kernels.py compares
them for speed and agreement.
"""
from __future__ import annotations

import os

from ..types import ConfigError

_choice = os.environ.get("PPBOOST_KERNELS", "auto").lower()
if _choice not in ("auto", "numba", "numpy"):
    raise ConfigError(f"PPBOOST_KERNELS must be auto|numba|numpy, got {_choice!r}")

if _choice == "numpy":
    from . import numpy_backend as _impl

    BACKEND = "numpy"
else:
    try:
        from . import numba_backend as _impl

        BACKEND = "numba"
    except ImportError:
        if _choice == "numba":
            raise
        from . import numpy_backend as _impl

        BACKEND = "numpy"

upsample_bilinear = _impl.upsample_bilinear
upsample_nearest = _impl.upsample_nearest
nms_keep = _impl.nms_keep
window_design = _impl.window_design
scores_deltas = _impl.scores_deltas
detection_loss_grad = _impl.detection_loss_grad
count_within_tol = _impl.count_within_tol
