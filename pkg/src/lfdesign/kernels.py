"""Backend selection for the hot kernels.

The compiled extension is preferred; set ``LFDESIGN_PURE_PYTHON=1`` to force
the numpy fallback.
"""

import os

from . import _pykernels

if os.environ.get("LFDESIGN_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
        BACKEND = "python"

mh_scan = _impl.mh_scan
gauss_mixture_logsumexp = _impl.gauss_mixture_logsumexp
uniform_hits = _impl.uniform_hits
geyer_ims = _impl.geyer_ims
updated_quad = _impl.updated_quad


def available_backends():
    """Map backend name to kernel module for every importable backend."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels
        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
