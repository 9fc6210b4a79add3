"""Zero-shot prompting: latent embeddings for tasks, plus Q estimates and slerp.

All prompt latents are projected onto the sqrt(d) sphere before they
condition the policy. :func:`reward_embedding` can also return the raw
weighted mean, which is what :func:`q_estimate` expects.
"""
from __future__ import annotations

import numpy as np

from .fbcore import UninformativeLatentError, project_sphere


class UninformativeRewardError(ValueError):
    pass


class UndefinedGeodesicError(ValueError):
    pass


def reward_embedding_from_values(b_values, rewards, raw=False):
    """(1/N) sum_i r_i B_i, optionally projected."""
    b = np.asarray(b_values, dtype=np.float64)
    r = np.asarray(rewards, dtype=np.float64).reshape(-1)
    if len(r) == 0 or len(r) != len(b):
        raise ValueError("reward probe must be nonempty and match the state count")
    if not np.all(np.isfinite(r)):
        raise ValueError("reward probe contains non-finite values")
    if not np.any(r):
        raise UninformativeRewardError("all probe rewards are zero")
    z = (r[:, None] * b).mean(axis=0)
    if raw:
        return z.astype(np.float32)
    try:
        return project_sphere(z)
    except UninformativeLatentError:
        raise UninformativeRewardError("reward-weighted embedding vanishes") from None


def reward_embedding(model, states, obs, rewards, raw=False, chunk=8192):
    b = np.concatenate([model.backward_embed(states[i:i + chunk], obs[i:i + chunk])
                        for i in range(0, len(states), chunk)]) if len(states) else np.zeros((0, model.dims.latent))
    return reward_embedding_from_values(b, rewards, raw=raw)


def goal_embedding(model, s_goal, o_goal):
    """z_g = project(B(s_g, o_g)); accepts one goal or a batch."""
    s = np.atleast_2d(np.asarray(s_goal, dtype=np.float32))
    o = np.atleast_2d(np.asarray(o_goal, dtype=np.float32))
    z = project_sphere(model.backward_embed(s, o))
    return z[0] if np.ndim(s_goal) == 1 else z


def tracking_from_values(b_values, lookahead):
    """z_t = project(sum_{t'=t}^{min(t+H, T-1)} B_t') for every frame t."""
    if lookahead < 0:
        raise ValueError("lookahead must be >= 0")
    b = np.asarray(b_values, dtype=np.float64)
    T = len(b)
    if T < 1:
        raise ValueError("motion needs at least one frame")
    csum = np.vstack([np.zeros((1, b.shape[1])), np.cumsum(b, axis=0)])
    hi = np.minimum(np.arange(T) + lookahead + 1, T)
    return project_sphere(csum[hi] - csum[np.arange(T)])


def tracking_embeddings(model, motion, lookahead):
    return tracking_from_values(model.backward_embed(motion.states, motion.obs), lookahead)


def q_estimate_from_values(f_values, z_r):
    """Ensemble-min of F^T z_r; ``f_values`` is ``(d,)``, ``(n, d)`` or ``(E, n, d)``."""
    f = np.asarray(f_values, dtype=np.float64)
    q = f @ np.asarray(z_r, dtype=np.float64)
    return q.min(axis=0) if f.ndim == 3 else q


def q_estimate(model, x, a, z_policy, z_r):
    """Q(x, a) ~ F(x, a, z_policy)^T z_r with the raw (unprojected) z_r."""
    x, a, z = (np.atleast_2d(np.asarray(v, dtype=np.float32)) for v in (x, a, z_policy))
    if len(z) != len(x):
        z = np.broadcast_to(z, (len(x), z.shape[1]))
    return q_estimate_from_values(model.forward_f(x, a, z), z_r)


def act(model, o_h, z, mode="eval", rng=None):
    return model.act(np.atleast_2d(o_h), np.atleast_2d(z), mode=mode, rng=rng)


def slerp(z0, z1, t, eps=1e-6):
    """Geodesic interpolation on the sphere through ``z0`` and ``z1``."""
    z0 = np.asarray(z0, dtype=np.float64)
    z1 = np.asarray(z1, dtype=np.float64)
    radius = np.sqrt(z0.shape[-1])
    u0, u1 = z0 / np.linalg.norm(z0), z1 / np.linalg.norm(z1)
    omega = float(np.arccos(np.clip(u0 @ u1, -1.0, 1.0)))
    if omega > np.pi - 1e-3:
        raise UndefinedGeodesicError(f"latents are (nearly) antipodal: angle {omega:.6f}")
    if t == 0:
        return z0.astype(np.float32)
    if t == 1:
        return z1.astype(np.float32)
    if omega < eps:
        v = (1.0 - t) * u0 + t * u1
    else:
        v = (np.sin((1.0 - t) * omega) * u0 + np.sin(t * omega) * u1) / np.sin(omega)
    return (radius * v / np.linalg.norm(v)).astype(np.float32)
