"""Batched latent-conditioned rollouts shared across the package."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import toyenv


@dataclass
class Trajectory:
    """Arrays with leading ``(n_envs, steps)`` axes.

    ``features`` holds ``steps + 1`` entries (initial state included);
    ``aux`` and ``actions`` hold one entry per control step.
    """

    features: np.ndarray
    actions: np.ndarray
    aux: np.ndarray

    @property
    def poses(self):
        return self.features[..., :2]

    @property
    def velocities(self):
        return self.features[..., 2:4]


def _latent_at(z, t):
    if callable(z):
        return z(t)
    return z if z.ndim == 2 else z[:, min(t, z.shape[1] - 1)]


def rollout(env_cfg, model, z, inits, n_steps, rng, mode="eval", params=None, on_step=None):
    """Roll out ``len(inits)`` environments for ``n_steps`` control steps.

    ``z`` is ``(n, d)`` (constant), ``(n, T, d)`` (per step, the last entry
    repeats) or a callable ``t -> (n, d)``. ``params`` overrides the
    randomized episode parameters. ``on_step(t, state, next_state, a)`` is
    called after every step and may return a per-env reward row that is
    collected in the returned ``rewards`` array.
    """
    state, hist = toyenv.reset(env_cfg, rng, inits)
    if params is not None:
        state.params[:] = np.broadcast_to(np.asarray(params, dtype=np.float32), state.params.shape)
    n = state.n
    feats = np.empty((n, n_steps + 1, env_cfg.state_dim), dtype=np.float32)
    acts = np.empty((n, n_steps, env_cfg.act_dim), dtype=np.float32)
    aux = np.empty((n, n_steps, 3), dtype=np.float32)
    rewards = np.zeros((n, n_steps), dtype=np.float32)
    feats[:, 0] = toyenv.state_features(env_cfg, state)
    for t in range(n_steps):
        a = model.act(hist.flat(), _latent_at(z, t), mode=mode, rng=rng)
        nxt, obs, r_aux = toyenv.step(env_cfg, state, a, rng)
        hist.push(a, obs)
        feats[:, t + 1] = toyenv.state_features(env_cfg, nxt)
        acts[:, t] = a
        aux[:, t] = r_aux
        if on_step is not None:
            r = on_step(t, state, nxt, a)
            if r is not None:
                rewards[:, t] = r
        state = nxt
    return Trajectory(feats, acts, aux), rewards
