"""Hot-loop kernels with backend selection at import time.

The compiled ``_ckernels`` extension is used when present; otherwise the
pure-Python ``_pykernels`` are used. Set ``AMTL_PURE_PYTHON=1`` to force the
fallback.
"""
import os

from amtl import _pykernels

if os.environ.get("AMTL_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from amtl import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

ctc_forward_backward = _impl.ctc_forward_backward
edit_ops = _impl.edit_ops

__all__ = ["BACKEND", "ctc_forward_backward", "edit_ops"]
