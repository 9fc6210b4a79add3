"""Few-shot latent adaptation without touching network weights.

Both optimizers maximize a vectorized objective ``J(candidates) -> values``
where candidates are stacked latents ``(k, d)`` (CEM) or latent sequences
``(k, L, d)`` (annealed trajectory optimization). :func:`make_objective`
builds such a function from an :class:`AdaptObjective` by rolling out the
policy; any other callable (e.g. an analytic test function) works too.

The rollout objective is

    J(z) = mean over episodes of sum_t ( r_task(s_t) + alpha_R * sum_k r_k(s_t) )

where the auxiliary rewards ``r_k`` are non-positive penalties, so a larger
``alpha_R`` always lowers J for a policy that triggers them.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from . import evaluation, toyenv
from .fbcore import project_sphere
from .rollout import rollout


class AdaptationError(RuntimeError):
    pass


@dataclass
class AdaptObjective:
    task: str = "reach"
    params: dict = field(default_factory=dict)
    alpha_r: float = 0.02
    rollout_len: int = 200
    episodes_per_eval: int = 4
    env_overrides: dict = field(default_factory=dict)  # e.g. {"mass_scale": 1.5}
    init: str = "default"
    seed: int = 0
    reference: np.ndarray | None = None  # (L, state_dim) motion for task == "track"

    def validate(self, env_cfg=None):
        if self.episodes_per_eval < 1:
            raise ValueError("episodes_per_eval must be >= 1")
        if self.rollout_len < 1:
            raise ValueError("rollout_len must be >= 1")
        if env_cfg is not None and self.rollout_len > env_cfg.episode_len:
            raise ValueError("rollout_len must not exceed the episode length")
        if self.task == "track" and self.reference is None:
            raise ValueError("tracking objective needs a reference motion")
        if self.task not in evaluation.TASKS and self.task not in ("track", "none"):
            raise evaluation.UnknownTaskError(
                f"unknown task {self.task!r}; registry: {sorted(evaluation.TASKS) + ['none', 'track']}")


@dataclass
class CemConfig:
    iterations: int = 20
    population: int = 64
    elite_frac: float = 0.125
    init_std: float = 0.3
    std_floor: float = 0.02
    seed: int = 0

    def validate(self):
        if self.population < 4:
            raise ValueError("population must be >= 4")
        if self.n_elite < 1:
            raise ValueError("elite count must be >= 1")

    @property
    def n_elite(self):
        return int(round(self.elite_frac * self.population))


@dataclass
class AnnealConfig:
    particles: int = 2048
    beta1: float = 0.85
    beta2: float = 0.9
    iterations: int = 6
    chunks: int = 8
    base_std: float = 0.2
    temperature: float = 0.1  # lambda = max(1e-6, temperature * (max J - min J))
    seed: int = 0

    def validate(self):
        if self.particles < 1:
            raise ValueError("particles must be >= 1")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must be in (0, 1)")
        if self.chunks < 1 or self.iterations < 0:
            raise ValueError("chunks must be >= 1 and iterations >= 0")


def _episode_params(env_cfg, overrides):
    """Nominal parameters with overrides; returns None when there is nothing to fix."""
    if not overrides:
        return None
    base = {"mass_scale": 1.0, "friction": 0.0, "gain_scale": 1.0, "action_offset": 0.0}
    unknown = set(overrides) - set(base)
    if unknown:
        raise ValueError(f"unknown env overrides {sorted(unknown)}; choose from {sorted(base)}")
    base.update(overrides)
    return np.array([base[k] for k in toyenv.PARAM_NAMES], dtype=np.float32)


def eval_objective(z, obj: AdaptObjective, env_cfg, model, rng=None):
    """J for latents ``(k, d)`` or latent sequences ``(k, L, d)``; returns ``(k,)``.

    Every candidate is rolled out ``episodes_per_eval`` times with the same
    random stream (common random numbers), so J is deterministic in the seed.
    """
    obj.validate(env_cfg)
    z = np.asarray(z, dtype=np.float32)
    single = z.ndim == 1 or (z.ndim == 2 and obj.task == "track" and z.shape[0] == obj.rollout_len)
    if single:
        z = z[None]
    k, e = len(z), obj.episodes_per_eval
    zz = np.repeat(z, e, axis=0)
    rng = np.random.default_rng(obj.seed) if rng is None else rng
    if obj.task == "track":
        inits = [toyenv.MotionFrame(obj.reference, 0)] * (k * e)
    else:
        inits = [obj.init] * (k * e)
    params = _episode_params(env_cfg, obj.env_overrides)
    ref_q = None if obj.reference is None else toyenv.features_to_pose(np.asarray(obj.reference))[0]

    def reward(t, s, nxt, a):
        if obj.task == "none":
            return None
        if obj.task == "track":
            return -np.linalg.norm(nxt.q - ref_q[min(t + 1, len(ref_q) - 1)], axis=-1)
        return evaluation.task_reward(obj.task, obj.params, (nxt.q, nxt.qd), env_cfg.env_kind)

    traj, rew = rollout(env_cfg, model, zz, inits, obj.rollout_len, rng, params=params, on_step=reward)
    per_ep = rew.sum(axis=1) + obj.alpha_r * traj.aux.sum(axis=(1, 2))
    j = per_ep.reshape(k, e).mean(axis=1).astype(np.float64)
    return j[0] if single else j


def make_objective(obj, env_cfg, model):
    def fn(z):
        return eval_objective(z, obj, env_cfg, model)
    return fn


def top_k(values, k):
    """Indices of the ``k`` largest values, best first (stable on ties)."""
    order = np.argsort(-np.asarray(values, dtype=np.float64), kind="stable")
    return order[:k]


def _check_finite(j, what):
    j = np.asarray(j, dtype=np.float64)
    if not np.any(np.isfinite(j)):
        raise AdaptationError(f"{what}: every candidate produced a non-finite objective ({j[:4]} ...)")
    return np.where(np.isfinite(j), j, -np.inf)


def cem_adapt(z_init, objective, cfg: CemConfig):
    """Cross-entropy search over one latent; returns ``(z_best, history rows)``.

    History rows are dicts with ``iteration``, ``best_j`` (best ever),
    ``mean_j`` (population mean) and ``sigma`` (mean std after refit).
    Iteration 0 evaluates ``z_init`` alone.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    z0 = np.asarray(z_init, dtype=np.float32).reshape(-1)
    d = len(z0)
    best_z = z0.copy()
    best_j = float(_check_finite(np.atleast_1d(objective(z0[None])), "initial latent")[0])
    history = [{"iteration": 0, "best_j": best_j, "mean_j": best_j, "sigma": cfg.init_std}]
    mu = z0.astype(np.float64)
    sigma = np.full(d, cfg.init_std)
    for it in range(1, cfg.iterations + 1):
        raw = mu + sigma * rng.standard_normal((cfg.population, d))
        if np.all(sigma == 0):
            pop = np.repeat(z0[None], cfg.population, axis=0)
        else:
            pop = project_sphere(raw)
        j = _check_finite(objective(pop), f"CEM iteration {it}")
        elite = top_k(j, cfg.n_elite)
        if j[elite[0]] > best_j:
            best_j, best_z = float(j[elite[0]]), pop[elite[0]].copy()
        mu = pop[elite].astype(np.float64).mean(axis=0)
        sigma = np.maximum(pop[elite].astype(np.float64).std(axis=0), cfg.std_floor) if cfg.init_std > 0 else sigma
        history.append({"iteration": it, "best_j": best_j, "mean_j": float(np.mean(j[np.isfinite(j)])),
                        "sigma": float(sigma.mean())})
    return best_z, history


def noise_schedule(cfg: AnnealConfig, i, n_chunks=None):
    """sigma_{i,t} = base_std * beta1^i * beta2^(L - 1 - t) for chunks t = 0..L-1."""
    L = cfg.chunks if n_chunks is None else n_chunks
    t = np.arange(L)
    return cfg.base_std * cfg.beta1**i * cfg.beta2 ** (L - 1 - t)


def chunk_index(length, n_chunks):
    """Chunk id of every sequence position (contiguous, near-equal blocks)."""
    n_chunks = max(1, min(n_chunks, length))
    return np.minimum((np.arange(length) * n_chunks) // length, n_chunks - 1), n_chunks


def annealed_traj_opt(z_seq_init, objective, cfg: AnnealConfig):
    """Dual-loop annealed sampling over a latent sequence ``(L, d)``.

    Returns ``(best sequence, history rows)``; the best-ever sequence is
    retained, so the result is never worse than the initialization.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    cur = np.asarray(z_seq_init, dtype=np.float32)
    L, d = cur.shape
    cid, n_chunks = chunk_index(L, cfg.chunks)
    best = cur.copy()
    best_j = float(_check_finite(np.atleast_1d(objective(cur[None])), "initial sequence")[0])
    history = [{"iteration": 0, "best_j": best_j, "mean_j": best_j, "sigma": 0.0}]
    for i in range(cfg.iterations):
        sig = noise_schedule(cfg, i, n_chunks)
        noise = rng.standard_normal((cfg.particles, n_chunks, d)) * sig[None, :, None]
        cand = cur[None].astype(np.float64) + noise[:, cid, :]
        cand = project_sphere(cand.reshape(-1, d)).reshape(cfg.particles, L, d)
        j = _check_finite(objective(cand), f"annealing iteration {i}")
        k = int(np.argmax(j))
        if j[k] > best_j:
            best_j, best = float(j[k]), cand[k].copy()
        fin = np.isfinite(j)
        lam = max(1e-6, cfg.temperature * float(j[fin].max() - j[fin].min()))
        w = np.where(fin, np.exp((j - j[fin].max()) / lam), 0.0)
        w /= w.sum()
        cur = project_sphere(np.einsum("p,pld->ld", w, cand.astype(np.float64)))
        history.append({"iteration": i + 1, "best_j": best_j, "mean_j": float(j[fin].mean()),
                        "sigma": float(sig.mean())})
    return best, history


def write_history(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "best_j", "mean_j", "sigma"])
        for r in rows:
            w.writerow([r["iteration"], repr(r["best_j"]), repr(r["mean_j"]), repr(r["sigma"])])


def with_overrides(obj: AdaptObjective, **kw):
    return replace(obj, **kw)
