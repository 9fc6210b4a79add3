"""Hot kernels with a compiled core and a numpy fallback.

The backend is chosen once at import: the Cython extension ``_ext`` when it
was built, unless ``FBZERO_PURE=1``. ``BACKEND`` names the active one. Both
backends accept float32 arrays (float64 for :func:`assign`) and return new
arrays; float64 inputs to the elementwise kernels always go through numpy so
that gradient checks can run in double precision.
"""
import os

import numpy as np

from . import _pure

try:
    if os.environ.get("FBZERO_PURE") == "1":
        raise ImportError("disabled by FBZERO_PURE")
    from . import _ext
except ImportError:
    _ext = None

BACKEND = "cython" if _ext is not None else "python"


def _fast(*arrays):
    return _ext is not None and all(a.dtype == np.float32 for a in arrays)


def mish_fwd(x):
    if _fast(x):
        return _ext.mish_fwd(np.ascontiguousarray(x))
    return _pure.mish_fwd(x)


def mish_bwd(x, g):
    if _fast(x, g):
        return _ext.mish_bwd(np.ascontiguousarray(x), np.ascontiguousarray(g))
    return _pure.mish_bwd(x, g)


def layernorm_fwd(x, gamma, beta, eps=1e-6):
    """Returns ``(y, xhat, rstd)``; normalization over the last axis."""
    if _fast(x, gamma, beta):
        return _ext.layernorm_fwd(
            np.ascontiguousarray(x), np.ascontiguousarray(gamma), np.ascontiguousarray(beta), eps
        )
    return _pure.layernorm_fwd(x, gamma, beta, eps)


def layernorm_bwd(g, xhat, rstd, gamma):
    """Returns ``(dx, dgamma, dbeta)``."""
    if _fast(g, xhat, rstd, gamma):
        return _ext.layernorm_bwd(
            np.ascontiguousarray(g),
            np.ascontiguousarray(xhat),
            np.ascontiguousarray(rstd),
            np.ascontiguousarray(gamma),
        )
    return _pure.layernorm_bwd(g, xhat, rstd, gamma)


def assign(cost):
    """Column index for every row of a minimum-cost assignment (rows <= cols)."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] > cost.shape[1]:
        raise ValueError(f"cost matrix must be 2-D with rows <= cols, got {cost.shape}")
    if _ext is not None:
        return _ext.assign(np.ascontiguousarray(cost))
    return _pure.assign(cost)
