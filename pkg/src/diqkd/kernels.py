"""Kernel selection: the compiled extension if it imports, else numpy.

Set ``DIQKD_PURE_PYTHON=1`` to force the numpy fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("DIQKD_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "compiled"

schur_block = _impl.schur_block
toeplitz_hash_batch = _impl.toeplitz_hash_batch
decode_min_weight = _impl.decode_min_weight
