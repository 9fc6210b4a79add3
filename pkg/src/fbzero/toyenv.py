"""Deterministic toy physics: a 2-D point mass and a 2-joint planar arm.

Both environments are vectorized over a leading batch axis and use float32
state. ``pointmass`` takes a bounded acceleration command; ``arm2`` takes PD
position targets ``q* = pi * a`` for two decoupled unit-inertia joints.

The policy sees noisy proprioceptive observations ``(q - q_nominal, qdot)``
stacked into a fixed-length history; critics additionally get the noiseless
state features and the randomized episode parameters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

ENV_KINDS = ("pointmass", "arm2")
PARAM_NAMES = ("mass_scale", "friction", "gain_scale", "action_offset")
AUX_NAMES = ("action_rate", "limit", "velocity")
LINK_LENGTHS = (1.0, 1.0)

_DOF = 2


class InvalidInitError(ValueError):
    pass


class NumericalBlowUp(FloatingPointError):
    pass


def _default_dr():
    return {
        "mass_scale": (0.95, 1.05),
        "friction": (0.25, 0.5),
        "gain_scale": (0.9, 1.1),
        "action_offset": (-0.02, 0.02),
    }


@dataclass
class EnvConfig:
    env_kind: str = "pointmass"
    dt: float = 0.05
    episode_len: int = 200
    history_len: int = 4
    dr_ranges: dict = field(default_factory=_default_dr)
    noise_scales: dict = field(default_factory=lambda: {"pose": 0.01, "velocity": 0.05})
    push_prob: float = 0.01
    push_speed_max: float = 0.5
    fall_init_prob: float = 0.3
    aux_weights: dict = field(
        default_factory=lambda: {"action_rate": 0.1, "limit": 10.0, "velocity": 1.0}
    )
    pose_limit: float | None = None
    velocity_limit: float | None = None
    arena: float | None = None  # pointmass torus half-width; arm2 joints always stop at +-pi
    kp: float = 20.0
    kd: float = 0.5

    def __post_init__(self):
        if self.env_kind not in ENV_KINDS:
            raise ValueError(f"env_kind must be one of {ENV_KINDS}, got {self.env_kind!r}")
        if self.pose_limit is None:
            self.pose_limit = 2.5 if self.env_kind == "pointmass" else 0.9 * math.pi
        if self.arena is None and self.env_kind == "pointmass":
            self.arena = 2.5
        if self.velocity_limit is None:
            self.velocity_limit = 2.0 if self.env_kind == "pointmass" else 10.0
        self.dr_ranges = {k: tuple(float(x) for x in v) for k, v in self.dr_ranges.items()}
        self.validate()

    def validate(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if self.episode_len < 2:
            raise ValueError("episode_len must be >= 2")
        if self.history_len < 0:
            raise ValueError("history_len must be >= 0")
        for name in PARAM_NAMES:
            if name not in self.dr_ranges:
                raise ValueError(f"dr_ranges is missing {name!r}")
            lo, hi = self.dr_ranges[name]
            if lo > hi:
                raise ValueError(f"dr_ranges[{name!r}] is empty: ({lo}, {hi})")
        if self.dr_ranges["mass_scale"][0] <= 0:
            raise ValueError("mass_scale interval must be positive")
        for name in ("push_prob", "fall_init_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        for name in ("pose", "velocity"):
            if self.noise_scales.get(name, 0.0) < 0:
                raise ValueError("noise half-widths must be >= 0")
        for name in AUX_NAMES:
            if self.aux_weights.get(name, 0.0) < 0:
                raise ValueError("aux weights are penalty magnitudes and must be >= 0")

    # dimensions
    @property
    def obs_dim(self):
        return 2 * _DOF

    @property
    def act_dim(self):
        return _DOF

    @property
    def state_dim(self):
        return 4 if self.env_kind == "pointmass" else 10

    @property
    def param_dim(self):
        return len(PARAM_NAMES)

    @property
    def history_dim(self):
        return self.history_len * (self.obs_dim + self.act_dim) + self.obs_dim

    def nominal(self):
        """Copy with every source of randomness disabled."""
        return replace(
            self,
            dr_ranges={"mass_scale": (1.0, 1.0), "friction": (0.0, 0.0),
                       "gain_scale": (1.0, 1.0), "action_offset": (0.0, 0.0)},
            noise_scales={"pose": 0.0, "velocity": 0.0},
            push_prob=0.0,
        )


@dataclass
class PrivilegedState:
    """Batched simulator state; every array has a leading batch axis."""

    q: np.ndarray
    qd: np.ndarray
    prev_action: np.ndarray
    params: np.ndarray
    step_index: np.ndarray

    @property
    def n(self):
        return self.q.shape[0]

    def copy(self):
        return PrivilegedState(*(np.array(a, copy=True) for a in
                                 (self.q, self.qd, self.prev_action, self.params, self.step_index)))

    def select(self, idx):
        return PrivilegedState(self.q[idx], self.qd[idx], self.prev_action[idx],
                               self.params[idx], self.step_index[idx])

    def assign(self, idx, other):
        self.q[idx] = other.q
        self.qd[idx] = other.qd
        self.prev_action[idx] = other.prev_action
        self.params[idx] = other.params
        self.step_index[idx] = other.step_index


class ObsHistory:
    """Last ``H`` (observation, action) pairs plus the current observation."""

    def __init__(self, n, history_len, obs_dim, act_dim):
        self.history_len = history_len
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.pairs = np.zeros((n, history_len, obs_dim + act_dim), dtype=np.float32)
        self.current = np.zeros((n, obs_dim), dtype=np.float32)

    def push(self, action, next_obs):
        if self.history_len:
            self.pairs[:, :-1] = self.pairs[:, 1:]
            self.pairs[:, -1, : self.obs_dim] = self.current
            self.pairs[:, -1, self.obs_dim:] = action
        self.current = np.array(next_obs, dtype=np.float32, copy=True)

    def reset_rows(self, idx, obs):
        self.pairs[idx] = 0.0
        self.current[idx] = obs

    def flat(self):
        n = self.current.shape[0]
        return np.concatenate([self.pairs.reshape(n, -1), self.current], axis=1)


# ---------------------------------------------------------------- operations

def randomize(cfg: EnvConfig, rng: np.random.Generator, n: int = 1):
    """Episode parameters ``(n, 4)`` drawn i.i.d. uniform from ``cfg.dr_ranges``."""
    cols = []
    for name in PARAM_NAMES:
        lo, hi = cfg.dr_ranges[name]
        cols.append(rng.uniform(lo, hi, size=n))
    return np.stack(cols, axis=1).astype(np.float32)


def observe(cfg: EnvConfig, state: PrivilegedState, rng: np.random.Generator):
    """Noisy proprioceptive observation ``(q - q_nominal, qdot)``."""
    n = state.n
    hp = cfg.noise_scales.get("pose", 0.0)
    hv = cfg.noise_scales.get("velocity", 0.0)
    noise = np.concatenate(
        [rng.uniform(-hp, hp, size=(n, _DOF)), rng.uniform(-hv, hv, size=(n, _DOF))], axis=1
    ).astype(np.float32)
    return np.concatenate([state.q, state.qd], axis=1) + noise


def end_effector(q):
    """Planar forward kinematics of the arm; ``q`` is ``(..., 2)``."""
    l1, l2 = LINK_LENGTHS
    a1 = q[..., 0]
    a12 = q[..., 0] + q[..., 1]
    return np.stack([l1 * np.cos(a1) + l2 * np.cos(a12), l1 * np.sin(a1) + l2 * np.sin(a12)], axis=-1)


def state_features(cfg: EnvConfig, state: PrivilegedState):
    """Noiseless state vector fed to the backward map and discriminator."""
    base = [state.q, state.qd]
    if cfg.env_kind == "arm2":
        base += [np.sin(state.q), np.cos(state.q), end_effector(state.q)]
    return np.concatenate(base, axis=1).astype(np.float32)


def features_to_pose(features):
    """(q, qdot) stored at the front of every state-feature vector."""
    f = np.asarray(features)
    return f[..., :_DOF], f[..., _DOF: 2 * _DOF]


@dataclass(frozen=True)
class MotionFrame:
    """Initialize from frame ``index`` of a motion's state features."""

    features: np.ndarray
    index: int


def _fall_pose(cfg, rng, n):
    if cfg.env_kind == "arm2":
        q = rng.uniform(-math.pi, math.pi, size=(n, _DOF))
    else:
        q = rng.uniform(-2.0, 2.0, size=(n, _DOF))
    qd = rng.uniform(-1.0, 1.0, size=(n, _DOF))
    return q.astype(np.float32), qd.astype(np.float32)


def reset(cfg: EnvConfig, rng: np.random.Generator, inits=("default",)):
    """Start one episode per entry of ``inits``.

    Each entry is ``"default"`` (nominal pose, at rest), ``"fall"`` (wide
    uniform pose and velocity) or a :class:`MotionFrame`. Returns
    ``(state, history)`` with freshly randomized episode parameters and a
    zero-padded history holding only the current observation.
    """
    n = len(inits)
    q = np.zeros((n, _DOF), dtype=np.float32)
    qd = np.zeros((n, _DOF), dtype=np.float32)
    for i, init in enumerate(inits):
        if isinstance(init, MotionFrame):
            frames = np.asarray(init.features)
            if not 0 <= init.index < len(frames):
                raise InvalidInitError(
                    f"motion frame index {init.index} out of range for length {len(frames)}"
                )
            qi, qdi = features_to_pose(frames[init.index])
            q[i], qd[i] = qi, qdi
        elif init == "fall":
            fq, fqd = _fall_pose(cfg, rng, 1)
            q[i], qd[i] = fq[0], fqd[0]
        elif init != "default":
            raise InvalidInitError(f"unknown init source {init!r}")
    state = PrivilegedState(
        q=q,
        qd=qd,
        prev_action=np.zeros((n, _DOF), dtype=np.float32),
        params=randomize(cfg, rng, n),
        step_index=np.zeros(n, dtype=np.int64),
    )
    hist = ObsHistory(n, cfg.history_len, cfg.obs_dim, cfg.act_dim)
    hist.current = observe(cfg, state, rng)
    return state, hist


def aux_rewards(cfg: EnvConfig, state: PrivilegedState, action, prev_action):
    """Non-positive regularization rewards ``(n, 3)``: action rate, limit, velocity."""
    w = cfg.aux_weights
    rate = -w.get("action_rate", 0.0) * np.sum(np.square(action - prev_action), axis=1)
    over_q = np.maximum(0.0, np.abs(state.q) - cfg.pose_limit)
    over_v = np.maximum(0.0, np.abs(state.qd) - cfg.velocity_limit)
    lim = -w.get("limit", 0.0) * np.sum(np.square(over_q), axis=1)
    vel = -w.get("velocity", 0.0) * np.sum(np.square(over_v), axis=1)
    return np.stack([rate, lim, vel], axis=1).astype(np.float32)


def step(cfg: EnvConfig, state: PrivilegedState, action, rng: np.random.Generator):
    """Advance every environment one control step (semi-implicit Euler).

    Returns ``(next_state, observation, aux_rewards)``; ``state`` is not
    modified. Raises :class:`NumericalBlowUp` if any state becomes
    non-finite.
    """
    a = np.clip(np.asarray(action, dtype=np.float32), -1.0, 1.0)
    m = state.params[:, 0:1]
    c = state.params[:, 1:2]
    gain = state.params[:, 2:3]
    offset = state.params[:, 3:4]
    dt = np.float32(cfg.dt)
    q, qd = state.q, state.qd
    if cfg.env_kind == "pointmass":
        acc = (a + offset) / m - c * qd
    else:
        target = a * np.float32(math.pi) + offset
        tau = np.float32(cfg.kp) * gain * (target - q) - np.float32(cfg.kd) * qd
        acc = tau / m - c * qd
    qd_new = (qd + dt * acc).astype(np.float32)
    if cfg.push_prob > 0:
        hit = rng.random(state.n) < cfg.push_prob
        speed = rng.uniform(0.0, cfg.push_speed_max, size=state.n)
        angle = rng.uniform(0.0, 2.0 * math.pi, size=state.n)
        impulse = np.stack([np.cos(angle), np.sin(angle)], axis=1) * (speed * hit)[:, None]
        qd_new = qd_new + impulse.astype(np.float32)
    q_new = (q + dt * qd_new).astype(np.float32)
    if cfg.env_kind == "arm2":
        bound = np.float32(math.pi)
        clamped = np.abs(q_new) > bound
        q_new = np.clip(q_new, -bound, bound)
        qd_new = np.where(clamped, np.float32(0.0), qd_new)
    elif cfg.arena is not None:
        # periodic arena: leaving one side re-enters on the opposite side
        half = np.float32(cfg.arena)
        outside = np.abs(q_new) >= half
        if outside.any():
            q_new = np.where(outside, np.mod(q_new + half, 2 * half) - half, q_new).astype(np.float32)
    if not (np.all(np.isfinite(q_new)) and np.all(np.isfinite(qd_new))):
        raise NumericalBlowUp("non-finite state after step")
    nxt = PrivilegedState(
        q=q_new,
        qd=qd_new,
        prev_action=a,
        params=state.params,
        step_index=state.step_index + 1,
    )
    obs = observe(cfg, nxt, rng)
    return nxt, obs, aux_rewards(cfg, nxt, a, state.prev_action)
