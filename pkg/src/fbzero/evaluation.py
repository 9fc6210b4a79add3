"""Metrics and the toy task registry, plus checkpoint-level evaluation.

Task rewards (all in [0, 1], functions of the post-step state):

=============  =====================================================  =========
name           formula                                                env
=============  =====================================================  =========
move-dir       exp(-(v.u - v*)^2/0.25) exp(-(v.u_perp)^2/0.25)          pointmass
stand          exp(-|v|^2/0.01)                                       both
reach          1{|p - p*| < tol}, p = position or end effector         both
raise          clamp(1 - |ee_y - h*|/0.3, 0, 1)                       arm2
hold-pose      exp(-|q - q*|^2/0.1)                                   both
lift-still     1{ee_y > h, every |qdot_j| < vmax}                     arm2
=============  =====================================================  =========
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import fbcore, inference, kernels, toyenv
from .rollout import rollout


class UnknownTaskError(KeyError):
    pass


# ---------------------------------------------------------------- metrics

def mpjpe(poses, reference):
    """Mean Euclidean pose error; ``reference`` is one pose or one per step."""
    p = np.asarray(poses, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    if p.ndim == 1:
        p = p[:, None]
    if r.ndim == 0:
        r = r[None]
    if r.ndim == p.ndim:
        if r.shape != p.shape:
            raise ValueError(f"tracking reference has shape {r.shape}, episode {p.shape}")
    elif r.shape != p.shape[-1:]:
        raise ValueError(f"goal pose has shape {r.shape}, episode poses {p.shape}")
    return float(np.mean(np.linalg.norm(p - r, axis=-1)))


def emd(a, b, max_points=64, rng=None):
    """Exact earth mover's distance between equal-size point sets.

    Sets larger than ``max_points`` are subsampled uniformly without
    replacement, with the same indices for both (``rng`` defaults to a
    fixed seed, so results are reproducible).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if len(a) == 0 or len(b) == 0:
        raise ValueError("emd of an empty point set")
    if len(a) != len(b):
        raise ValueError(f"emd needs equal-size sets, got {len(a)} and {len(b)}")
    if len(a) > max_points:
        rng = np.random.default_rng(0) if rng is None else rng
        # one index draw for both sets, so identical inputs stay at distance 0
        idx = np.sort(rng.choice(len(a), max_points, replace=False))
        a, b = a[idx], b[idx]
    cost = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    cols = kernels.assign(cost)
    return math.fsum(cost[np.arange(len(a)), cols]) / len(a)


# ---------------------------------------------------------------- task rewards

def _pos(env_kind, q):
    return toyenv.end_effector(q) if env_kind == "arm2" else q


def _move_dir(env_kind, q, qd, theta=0.0, speed=1.0):
    u = np.array([math.cos(theta), math.sin(theta)])
    up = np.array([-math.sin(theta), math.cos(theta)])
    return np.exp(-((qd @ u - speed) ** 2) / 0.25) * np.exp(-((qd @ up) ** 2) / 0.25)


def _stand(env_kind, q, qd):
    return np.exp(-np.sum(qd**2, axis=-1) / 0.01)


def _reach(env_kind, q, qd, target=(1.0, 1.0), tol=0.1):
    d = np.linalg.norm(_pos(env_kind, q) - np.asarray(target), axis=-1)
    return (d < tol).astype(np.float64)


def _raise(env_kind, q, qd, height=1.5):
    ee_y = toyenv.end_effector(q)[..., 1]
    return np.clip(1.0 - np.abs(ee_y - height) / 0.3, 0.0, 1.0)


def _hold_pose(env_kind, q, qd, pose=(0.0, 0.0)):
    return np.exp(-np.sum((q - np.asarray(pose)) ** 2, axis=-1) / 0.1)


def _lift_still(env_kind, q, qd, height=0.5, vmax=0.5):
    ee_y = toyenv.end_effector(q)[..., 1]
    return ((ee_y > height) & np.all(np.abs(qd) < vmax, axis=-1)).astype(np.float64)


TASKS = {
    "move-dir": (_move_dir, ("pointmass",)),
    "stand": (_stand, ("pointmass", "arm2")),
    "reach": (_reach, ("pointmass", "arm2")),
    "raise": (_raise, ("arm2",)),
    "hold-pose": (_hold_pose, ("pointmass", "arm2")),
    "lift-still": (_lift_still, ("arm2",)),
}


def task_reward(name, params, features, env_kind="arm2"):
    """Reward of ``name`` at state features ``(..., state_dim)`` (or ``(q, qd)``)."""
    if name not in TASKS:
        raise UnknownTaskError(f"unknown task {name!r}; registry: {sorted(TASKS)}")
    fn, kinds = TASKS[name]
    if env_kind not in kinds:
        raise ValueError(f"task {name!r} is defined for {kinds}, not {env_kind!r}")
    if isinstance(features, tuple):
        q, qd = (np.asarray(v, dtype=np.float64) for v in features)
    else:
        q, qd = (np.asarray(v, dtype=np.float64) for v in toyenv.features_to_pose(features))
    return fn(env_kind, q, qd, **(params or {}))


# ---------------------------------------------------------------- suites

@dataclass
class TaskSpec:
    kind: str  # reward | goal | tracking
    name: str = ""
    params: dict = field(default_factory=dict)
    goal: list | None = None  # state features of the goal frame
    motion: str | None = None  # motion id for tracking
    lookahead: int = 8
    episode_len: int = 200
    episodes: int = 10
    seed: int = 0
    init: str = "default"

    def validate(self, env_cfg=None):
        if self.kind not in ("reward", "goal", "tracking"):
            raise ValueError(f"task kind must be reward, goal or tracking: {self.kind!r}")
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if self.episode_len < 1:
            raise ValueError("episode_len must be >= 1")
        if self.kind == "reward" and self.name not in TASKS:
            raise UnknownTaskError(f"unknown task {self.name!r}; registry: {sorted(TASKS)}")
        if self.kind == "goal" and self.goal is None:
            raise ValueError("goal task needs a goal frame")
        if self.kind == "tracking" and not self.motion:
            raise ValueError("tracking task needs a motion id")

    @property
    def task_id(self):
        if self.kind == "reward":
            extra = ",".join(f"{k}={v}" for k, v in sorted(self.params.items()))
            return f"reward:{self.name}({extra})"
        if self.kind == "goal":
            return "goal:" + ",".join(f"{v:.3f}" for v in np.asarray(self.goal)[:4])
        return f"tracking:{self.motion}"


def goal_observation(goal_features):
    q, qd = toyenv.features_to_pose(np.asarray(goal_features, dtype=np.float32))
    return np.concatenate([q, qd], axis=-1)


def run_reward_task(model, env_cfg, task, z, rng):
    """Returns per-episode returns of the task reward under latent ``z``."""
    n = task.episodes
    zz = np.broadcast_to(np.atleast_2d(z), (n, model.dims.latent)).astype(np.float32)  # (1,d) or (n,d)

    def reward(t, s, nxt, a):
        return task_reward(task.name, task.params, (nxt.q, nxt.qd), env_cfg.env_kind)

    _, rew = rollout(env_cfg, model, zz, [task.init] * n, task.episode_len, rng, on_step=reward)
    return rew.sum(axis=1)


def run_goal_task(model, env_cfg, goal_features, z, episodes, episode_len, rng, init="default"):
    """Per-episode E_mpjpe to the goal pose (executed steps only)."""
    zz = np.broadcast_to(np.atleast_2d(z), (episodes, model.dims.latent)).astype(np.float32)
    traj, _ = rollout(env_cfg, model, zz, [init] * episodes, episode_len, rng)
    goal_q = toyenv.features_to_pose(np.asarray(goal_features))[0]
    return np.array([mpjpe(traj.poses[i, 1:], goal_q) for i in range(episodes)])


def tracking_latents_for_rollout(z_frames):
    """Latent used at control step t: the embedding of frame t + 1 (last repeats)."""
    return np.vstack([z_frames[1:], z_frames[-1:]]) if len(z_frames) > 1 else z_frames


def run_tracking(model, env_cfg, motion, z_seq, rng, episodes=1):
    """Roll out from the motion's first frame; returns ``(per-episode E_mpjpe, trajectory)``.

    ``z_seq`` is ``(L, d)`` per-step latents or a single ``(d,)`` latent.
    """
    L = len(motion)
    z_seq = np.asarray(z_seq, dtype=np.float32)
    zz = np.broadcast_to(z_seq, (episodes,) + z_seq.shape).copy()
    inits = [toyenv.MotionFrame(motion.states, 0)] * episodes
    traj, _ = rollout(env_cfg, model, zz, inits, L - 1, rng)
    ref = toyenv.features_to_pose(motion.states)[0]
    errs = np.array([mpjpe(traj.poses[i], ref) for i in range(episodes)])
    return errs, traj


def track_motion(model, env_cfg, motion, lookahead, rng, episodes=1):
    z = tracking_latents_for_rollout(inference.tracking_embeddings(model, motion, lookahead))
    return run_tracking(model, env_cfg, motion, z, rng, episodes)


def tracking_emd(traj_features, motion):
    """EMD between pose-velocity point sets of a rollout and its motion."""
    a = np.asarray(traj_features)[..., :4].reshape(-1, 4)
    b = np.asarray(motion.states)[:, :4]
    n = min(len(a), len(b))
    return emd(a[:n], b[:n])


@dataclass
class EvalRow:
    task: str
    metric: str
    mean: float
    std: float
    episodes: int


@dataclass
class EvalReport:
    rows: list
    config_hash: str = ""
    checkpoint: str = ""

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["task", "metric", "mean", "std", "episodes", "config_hash", "checkpoint"])
            for r in self.rows:
                w.writerow([r.task, r.metric, repr(r.mean), repr(r.std), r.episodes,
                            self.config_hash, self.checkpoint])

    def get(self, task, metric):
        for r in self.rows:
            if r.task == task and r.metric == metric:
                return r
        raise KeyError((task, metric))


def _row(task_id, metric, values):
    v = np.asarray(values, dtype=np.float64)
    return EvalRow(task_id, metric, float(v.mean()), float(v.std()), len(v))


def evaluate_checkpoint(model, suite, env_cfg, probe=None, motion_set=None, config_hash="", checkpoint=""):
    """Zero-shot evaluation of every task plus a uniform-latent baseline.

    ``probe`` is ``(states, obs)`` used for reward inference. Each task runs
    with its own seed, so the report does not depend on suite order.
    """
    if not suite:
        raise ValueError("evaluation suite is empty")
    rows = []
    d = model.dims.latent
    for task in suite:
        task.validate(env_cfg)
        tid = task.task_id
        if task.kind == "reward":
            if probe is None:
                raise ValueError("reward tasks need a probe state set")
            s, o = probe
            r = task_reward(task.name, task.params, s, env_cfg.env_kind)
            z = inference.reward_embedding(model, s, o, r)
            rows.append(_row(tid, "return", run_reward_task(model, env_cfg, task, z, np.random.default_rng(task.seed))))
            zb = fbcore.uniform_sphere(task.episodes, d, np.random.default_rng([task.seed, 1]))
            base = run_reward_task(model, env_cfg, task, zb, np.random.default_rng(task.seed))
            rows.append(_row(tid, "return_random_latent", base))
        elif task.kind == "goal":
            g = np.asarray(task.goal, dtype=np.float32)
            z = inference.goal_embedding(model, g, goal_observation(g))
            errs = run_goal_task(model, env_cfg, g, z, task.episodes, task.episode_len,
                                 np.random.default_rng(task.seed), task.init)
            rows.append(_row(tid, "mpjpe", errs))
            zb = fbcore.uniform_sphere(task.episodes, d, np.random.default_rng([task.seed, 1]))
            base = run_goal_task(model, env_cfg, g, zb, task.episodes, task.episode_len,
                                 np.random.default_rng(task.seed), task.init)
            rows.append(_row(tid, "mpjpe_random_latent", base))
        else:
            if motion_set is None:
                raise ValueError("tracking tasks need a motion set")
            m = motion_set.by_id(task.motion)
            errs, traj = track_motion(model, env_cfg, m, task.lookahead,
                                      np.random.default_rng(task.seed), task.episodes)
            rows.append(_row(tid, "mpjpe", errs))
            rows.append(_row(tid, "emd", [tracking_emd(traj.features[i], m) for i in range(task.episodes)]))
    return EvalReport(rows, config_hash, checkpoint)
