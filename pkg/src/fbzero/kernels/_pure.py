"""numpy reference implementations of the compiled kernels.

Same formulas as ``fbk.h``; used when the extension is unavailable or
``FBZERO_PURE=1`` is set, and as the comparison baseline in the benchmark.
"""
import numpy as np


def mish_fwd(x):
    e = np.exp(np.minimum(x, 20.0))
    q = e * (e + 2.0)
    return x - 2.0 * x / (q + 2.0)


def mish_bwd(x, g):
    e = np.exp(np.minimum(x, 20.0))
    q = e * (e + 2.0)
    r = 1.0 / (q + 2.0)
    return g * (q * r + x * 4.0 * e * (e + 1.0) * r * r)


def layernorm_fwd(x, gamma, beta, eps):
    mean = x.mean(axis=-1, keepdims=True, dtype=np.float64).astype(x.dtype)
    d = x - mean
    var = np.mean(np.square(d, dtype=np.float64), axis=-1, keepdims=True)
    rstd = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = d * rstd
    return xhat * gamma + beta, xhat, rstd[..., 0]


def layernorm_bwd(g, xhat, rstd, gamma):
    cols = g.shape[-1]
    flat_g = g.reshape(-1, cols)
    flat_h = xhat.reshape(-1, cols)
    dgamma = (flat_g * flat_h).sum(axis=0)
    dbeta = flat_g.sum(axis=0)
    dh = g * gamma
    m1 = dh.mean(axis=-1, keepdims=True)
    m2 = (dh * xhat).mean(axis=-1, keepdims=True)
    dx = rstd[..., None] * (dh - m1 - xhat * m2)
    return dx, dgamma, dbeta


def assign(cost):
    """Shortest-augmenting-path assignment; rows <= cols. Returns column per row."""
    rows, cols = cost.shape
    c = cost.tolist()
    inf = float("inf")
    u = [0.0] * (rows + 1)
    v = [0.0] * (cols + 1)
    p = [0] * (cols + 1)
    way = [0] * (cols + 1)
    for i in range(1, rows + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (cols + 1)
        used = [False] * (cols + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = 0
            row = c[i0 - 1]
            ui0 = u[i0]
            for j in range(1, cols + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(cols + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    out = np.empty(rows, dtype=np.int64)
    for j in range(1, cols + 1):
        if p[j]:
            out[p[j] - 1] = j - 1
    return out
