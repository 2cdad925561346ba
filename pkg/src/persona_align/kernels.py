"""Kernel dispatch: the compiled extension when importable, NumPy otherwise.

Set ``PERSONA_ALIGN_PURE_PYTHON=1`` to force the NumPy path.
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"

if os.environ.get("PERSONA_ALIGN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]
    except ImportError:
        _compiled = None
    else:
        BACKEND = "cython"
else:
    _compiled = None

_impl = _compiled if _compiled is not None else _kernels_py

loading_matrix = _impl.loading_matrix
weighted_loglik_grad = _impl.weighted_loglik_grad

__all__ = ["BACKEND", "loading_matrix", "weighted_loglik_grad"]
