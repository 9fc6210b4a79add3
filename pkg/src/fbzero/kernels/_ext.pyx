# cython: boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled kernels. Array arguments must be C-contiguous; the dispatcher in
``fbzero.kernels`` takes care of that."""
import numpy as np

cdef extern from "fbk.h":
    void fbk_mish_fwd(const float *x, float *y, long n) nogil
    void fbk_mish_bwd(const float *x, const float *g, float *dx, long n) nogil
    void fbk_layernorm_fwd(const float *x, const float *gamma, const float *beta,
                           float *y, float *xhat, float *rstd,
                           long rows, long cols, float eps) nogil
    void fbk_layernorm_bwd(const float *g, const float *xhat, const float *rstd,
                           const float *gamma, float *dx, float *dgamma,
                           float *dbeta, long rows, long cols) nogil
    int fbk_assign(const double *cost, long rows, long cols, long *col_of_row) nogil


def mish_fwd(x):
    cdef float[::1] xv = x.reshape(-1)
    y = np.empty_like(x)
    cdef float[::1] yv = y.reshape(-1)
    cdef long n = xv.shape[0]
    if n:
        with nogil:
            fbk_mish_fwd(&xv[0], &yv[0], n)
    return y


def mish_bwd(x, g):
    cdef float[::1] xv = x.reshape(-1)
    cdef float[::1] gv = g.reshape(-1)
    dx = np.empty_like(x)
    cdef float[::1] dv = dx.reshape(-1)
    cdef long n = xv.shape[0]
    if n:
        with nogil:
            fbk_mish_bwd(&xv[0], &gv[0], &dv[0], n)
    return dx


def layernorm_fwd(x, gamma, beta, float eps):
    cdef long cols = x.shape[x.ndim - 1]
    cdef long rows = x.size // cols
    y = np.empty_like(x)
    xhat = np.empty_like(x)
    rstd = np.empty(x.shape[:x.ndim - 1], dtype=np.float32)
    cdef float[::1] xv = x.reshape(-1)
    cdef float[::1] yv = y.reshape(-1)
    cdef float[::1] hv = xhat.reshape(-1)
    cdef float[::1] rv = rstd.reshape(-1)
    cdef float[::1] gv = gamma
    cdef float[::1] bv = beta
    if rows:
        with nogil:
            fbk_layernorm_fwd(&xv[0], &gv[0], &bv[0], &yv[0], &hv[0], &rv[0], rows, cols, eps)
    return y, xhat, rstd


def layernorm_bwd(g, xhat, rstd, gamma):
    cdef long cols = g.shape[g.ndim - 1]
    cdef long rows = g.size // cols
    dx = np.empty_like(g)
    dgamma = np.zeros(cols, dtype=np.float32)
    dbeta = np.zeros(cols, dtype=np.float32)
    cdef float[::1] gv = g.reshape(-1)
    cdef float[::1] hv = xhat.reshape(-1)
    cdef float[::1] rv = rstd.reshape(-1)
    cdef float[::1] gam = gamma
    cdef float[::1] dv = dx.reshape(-1)
    cdef float[::1] dgv = dgamma
    cdef float[::1] dbv = dbeta
    if rows:
        with nogil:
            fbk_layernorm_bwd(&gv[0], &hv[0], &rv[0], &gam[0], &dv[0], &dgv[0], &dbv[0], rows, cols)
    return dx, dgamma, dbeta


def assign(cost):
    cdef long rows = cost.shape[0]
    cdef long cols = cost.shape[1]
    out = np.empty(rows, dtype=np.int64)
    cdef double[::1] cv = cost.reshape(-1)
    cdef long[::1] ov = out
    cdef int status = 0
    if rows:
        with nogil:
            status = fbk_assign(&cv[0], rows, cols, &ov[0])
    if status != 0:
        raise MemoryError("assignment scratch allocation failed")
    return out
