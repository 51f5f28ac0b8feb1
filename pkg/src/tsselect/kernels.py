"""Backend selection for the numeric hot loops.

The compiled extension is used when it imports; otherwise the pure-Python
module is used. Setting ``TSSELECT_PURE_PYTHON=1`` forces the fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("TSSELECT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

exp_smooth = _impl.exp_smooth
forest_predict = _impl.forest_predict
splitmix64_stream = _impl.splitmix64_stream

__all__ = ["BACKEND", "exp_smooth", "forest_predict", "splitmix64_stream"]
