"""Synthetic expert motions: generation, chunking, prioritized sampling, files.

Every motion is a noiseless rollout of a scripted controller under nominal
dynamics, recorded as ``(observation, state_features)`` frames. Actions are
not stored.

File format (``.motions.jsonl``), one JSON object per line::

    {"schema": 1, "kind": "motion", "env": "arm2", "id": "...",
     "frames_dim_o": 4, "frames_dim_s": 10, "n_frames": 200,
     "generator": "sinusoid_joints", "source_params": {...}, "priority": 1.0}
    {"o": [...], "s": [...]}          <- n_frames lines
    ...next motion header...

Floats are written with the shortest repr that round-trips float32. Unknown
keys are ignored on read.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import toyenv

SCHEMA_VERSION = 1
GENERATORS = {
    "pointmass": ("waypoint_loops",),
    "arm2": ("sinusoid_joints", "figure_eight"),
}


class EmptyDatasetError(ValueError):
    pass


class MotionFormatError(ValueError):
    def __init__(self, line, field_name, message):
        super().__init__(f"line {line}: field {field_name!r}: {message}")
        self.line = line
        self.field = field_name


@dataclass
class Motion:
    id: str
    obs: np.ndarray  # (T, obs_dim)
    states: np.ndarray  # (T, state_dim)
    source_params: dict = field(default_factory=dict)
    generator: str = ""

    def __post_init__(self):
        self.obs = np.asarray(self.obs, dtype=np.float32)
        self.states = np.asarray(self.states, dtype=np.float32)
        if len(self.obs) != len(self.states):
            raise ValueError(f"motion {self.id}: obs/state length mismatch")
        if len(self.obs) < 1:
            raise ValueError(f"motion {self.id}: no frames")

    def __len__(self):
        return len(self.obs)


class MotionSet:
    """Motions plus strictly positive sampling priorities."""

    def __init__(self, motions, env_kind, priorities=None, generator=""):
        self.motions = list(motions)
        self.env_kind = env_kind
        self.generator = generator
        if priorities is None:
            priorities = np.ones(len(self.motions))
        self.set_priorities(priorities)

    def set_priorities(self, priorities):
        p = np.asarray(priorities, dtype=np.float64)
        if p.shape != (len(self.motions),):
            raise ValueError(f"need {len(self.motions)} priorities, got shape {p.shape}")
        if np.any(~np.isfinite(p)) or np.any(p <= 0):
            raise ValueError("priorities must be finite and strictly positive")
        self.priorities = p

    def __len__(self):
        return len(self.motions)

    def __iter__(self):
        return iter(self.motions)

    def __getitem__(self, i):
        return self.motions[i]

    def by_id(self, motion_id):
        for m in self.motions:
            if m.id == motion_id:
                return m
        raise KeyError(motion_id)

    @property
    def total_frames(self):
        return sum(len(m) for m in self.motions)


# ---------------------------------------------------------------- generation

def _rollout(cfg, q0, qd0, controller, n_frames):
    """Noiseless nominal rollout; ``controller(t, q, qd) -> action``."""
    nom = cfg.nominal()
    rng = np.random.default_rng(0)  # unused draws: nominal config has no noise/pushes
    state, _ = toyenv.reset(nom, rng, ["default"])
    state.q[0] = q0
    state.qd[0] = qd0
    obs, feats = [], []
    for t in range(n_frames):
        obs.append(np.concatenate([state.q[0], state.qd[0]]))
        feats.append(toyenv.state_features(nom, state)[0])
        if t == n_frames - 1:
            break
        a = controller(t, state.q[0].astype(np.float64), state.qd[0].astype(np.float64))
        state, _, _ = toyenv.step(nom, state, np.asarray(a, dtype=np.float32)[None], rng)
    return np.array(obs, dtype=np.float32), np.array(feats, dtype=np.float32)


def _waypoint_motion(cfg, rng, n_frames, max_tries=20):
    """Loop through 3 random waypoints and return to the start."""
    kp, kd = 3.0, 2.5
    for _ in range(max_tries):
        start = rng.uniform(-1.0, 1.0, size=2)
        mids = rng.uniform(-1.5, 1.5, size=(2, 2))
        waypoints = np.vstack([mids, start[None]])
        seg = n_frames // len(waypoints)

        def ctrl(t, q, qd, waypoints=waypoints, seg=seg):
            w = waypoints[min(t // seg, len(waypoints) - 1)]
            return np.clip(kp * (w - q) - kd * qd, -1.0, 1.0)

        obs, feats = _rollout(cfg, start, np.zeros(2), ctrl, n_frames)
        # generator self-check: the loop must close on its last waypoint
        if np.linalg.norm(obs[-1, :2] - waypoints[-1]) < 0.1:
            params = {"start": start.tolist(), "waypoints": waypoints.tolist(), "kp": kp, "kd": kd}
            return obs, feats, params
    raise RuntimeError("waypoint controller failed to converge; increase motion length")


def _pd_feedforward(cfg, q_des, qd_des, qdd_des, qd):
    """Action whose PD torque realizes the desired acceleration at nominal dynamics."""
    target = q_des + (qdd_des + cfg.kd * qd) / cfg.kp
    # velocity error feedback on top of the exact feedforward
    target = target + 0.5 * (qd_des - qd) / cfg.kp * cfg.kd
    return np.clip(target / math.pi, -1.0, 1.0)


def _sinusoid_motion(cfg, rng, n_frames, amplitude=None):
    amp = rng.uniform(0.2, 1.2, size=2) if amplitude is None else np.asarray(amplitude, float)
    omega = rng.uniform(0.5, 2.5, size=2)
    phase = rng.uniform(0.0, 2.0 * math.pi, size=2)
    dt = cfg.dt

    def desired(t):
        arg = omega * t * dt + phase
        return amp * np.sin(arg), amp * omega * np.cos(arg), -amp * omega**2 * np.sin(arg)

    def ctrl(t, q, qd):
        # aim at the state one step ahead
        q_d, qd_d, qdd_d = desired(t + 1)
        return _pd_feedforward(cfg, q_d, qd_d, qdd_d, qd)

    q0, qd0, _ = desired(0)
    obs, feats = _rollout(cfg, q0, qd0, ctrl, n_frames)
    params = {"amplitude": amp.tolist(), "omega": omega.tolist(), "phase": phase.tolist()}
    return obs, feats, params


def _inverse_kinematics(p):
    l1, l2 = toyenv.LINK_LENGTHS
    x, y = p
    c2 = np.clip((x * x + y * y - l1 * l1 - l2 * l2) / (2 * l1 * l2), -1.0, 1.0)
    q2 = math.acos(c2)
    q1 = math.atan2(y, x) - math.atan2(l2 * math.sin(q2), l1 + l2 * math.cos(q2))
    return np.array([q1, q2])


def _figure_eight_motion(cfg, rng, n_frames):
    centre = np.array([rng.uniform(0.8, 1.3), rng.uniform(-0.3, 0.3)])
    radii = np.array([rng.uniform(0.15, 0.4), rng.uniform(0.15, 0.4)])
    omega = rng.uniform(0.6, 1.5)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    dt = cfg.dt

    def q_of(t):
        s = omega * t * dt + phase
        p = centre + radii * np.array([math.sin(s), math.sin(2.0 * s)])
        return _inverse_kinematics(p)

    def derivs(t):
        h = dt
        qm, q0, qp = q_of(t - 1), q_of(t), q_of(t + 1)
        return q0, (qp - qm) / (2 * h), (qp - 2 * q0 + qm) / (h * h)

    def ctrl(t, q, qd):
        q_d, qd_d, qdd_d = derivs(t + 1)
        return _pd_feedforward(cfg, q_d, qd_d, qdd_d, qd)

    q0, qd0, _ = derivs(0)
    obs, feats = _rollout(cfg, q0, qd0, ctrl, n_frames)
    params = {"centre": centre.tolist(), "radii": radii.tolist(), "omega": omega, "phase": phase}
    return obs, feats, params


def generate_motion_set(env_cfg, generator, n_motions, seed, n_frames=200, amplitude=None):
    """Deterministic synthetic dataset of ``n_motions`` scripted rollouts.

    ``amplitude`` overrides the sampled joint amplitudes of
    ``sinusoid_joints`` (zero gives the constant nominal-pose motion).
    """
    if n_motions <= 0:
        raise EmptyDatasetError("n_motions must be positive")
    if generator not in GENERATORS[env_cfg.env_kind]:
        raise ValueError(
            f"generator {generator!r} not available for {env_cfg.env_kind}; "
            f"choose from {GENERATORS[env_cfg.env_kind]}"
        )
    rng = np.random.default_rng(seed)
    motions = []
    for i in range(n_motions):
        if generator == "waypoint_loops":
            obs, feats, params = _waypoint_motion(env_cfg, rng, n_frames)
        elif generator == "sinusoid_joints":
            obs, feats, params = _sinusoid_motion(env_cfg, rng, n_frames, amplitude)
        else:
            obs, feats, params = _figure_eight_motion(env_cfg, rng, n_frames)
        motions.append(Motion(f"{generator}-{seed}-{i:03d}", obs, feats, params, generator))
    return MotionSet(motions, env_cfg.env_kind, generator=generator)


# ---------------------------------------------------------------- chunking / sampling

def chunk_bounds(length, chunk_len):
    """Chunk boundaries; a short remainder (< chunk_len / 2) merges into the last chunk."""
    if chunk_len < 2:
        raise ValueError("chunk_len must be >= 2")
    if length <= chunk_len:
        return [(0, length)]
    bounds = [(s, s + chunk_len) for s in range(0, length - chunk_len + 1, chunk_len)]
    rest = length - bounds[-1][1]
    if rest:
        if 2 * rest >= chunk_len:
            bounds.append((bounds[-1][1], length))
        else:
            bounds[-1] = (bounds[-1][0], length)
    return bounds


def chunk_motions(ms: MotionSet, chunk_len: int) -> MotionSet:
    out = []
    for m in ms:
        for k, (lo, hi) in enumerate(chunk_bounds(len(m), chunk_len)):
            out.append(Motion(f"{m.id}#{k}", m.obs[lo:hi], m.states[lo:hi],
                              dict(m.source_params), m.generator))
    return MotionSet(out, ms.env_kind, generator=ms.generator)


def sample_frame(ms: MotionSet, rng: np.random.Generator):
    """``(motion_index, frame_index)``: motion by priority, frame uniform."""
    if len(ms) == 0:
        raise EmptyDatasetError("cannot sample from an empty motion set")
    p = ms.priorities / ms.priorities.sum()
    i = int(rng.choice(len(ms), p=p))
    return i, int(rng.integers(len(ms.motions[i])))


def sample_sequences(ms: MotionSet, n_seq, seq_len, rng, weighted=False):
    """``n_seq`` windows of ``seq_len`` consecutive frames.

    Motions are chosen uniformly, or by priority when ``weighted``. Returns ``(obs, states)`` of shape ``(n_seq, seq_len, dim)``. Motions
    shorter than ``seq_len`` are padded by repeating their last frame.
    """
    if len(ms) == 0:
        raise EmptyDatasetError("cannot sample from an empty motion set")
    if weighted:
        idx = rng.choice(len(ms), size=n_seq, p=ms.priorities / ms.priorities.sum())
    else:
        idx = rng.integers(len(ms), size=n_seq)
    obs, states = [], []
    for i in idx:
        m = ms.motions[int(i)]
        start = int(rng.integers(max(1, len(m) - seq_len + 1)))
        rows = np.minimum(np.arange(start, start + seq_len), len(m) - 1)
        obs.append(m.obs[rows])
        states.append(m.states[rows])
    return np.stack(obs), np.stack(states)


# ---------------------------------------------------------------- persistence

def _fmt(arr):
    return "[" + ",".join(repr(float(x)) for x in np.asarray(arr, dtype=np.float32)) + "]"


def save_motion_set(ms: MotionSet, path):
    lines = []
    for m, pr in zip(ms.motions, ms.priorities):
        header = {
            "schema": SCHEMA_VERSION,
            "kind": "motion",
            "env": ms.env_kind,
            "id": m.id,
            "frames_dim_o": int(m.obs.shape[1]),
            "frames_dim_s": int(m.states.shape[1]),
            "n_frames": len(m),
            "generator": m.generator or ms.generator,
            "source_params": m.source_params,
            "priority": float(pr),
        }
        lines.append(json.dumps(header, sort_keys=True))
        for o, s in zip(m.obs, m.states):
            lines.append(f'{{"o":{_fmt(o)},"s":{_fmt(s)}}}')
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def _require(obj, key, lineno, kind):
    if key not in obj:
        raise MotionFormatError(lineno, key, "missing")
    val = obj[key]
    if kind is int and (not isinstance(val, int) or isinstance(val, bool)):
        raise MotionFormatError(lineno, key, f"expected integer, got {val!r}")
    if kind is str and not isinstance(val, str):
        raise MotionFormatError(lineno, key, f"expected string, got {val!r}")
    return val


def _vector(obj, key, dim, lineno):
    val = _require(obj, key, lineno, list)
    if not isinstance(val, list) or len(val) != dim:
        raise MotionFormatError(lineno, key, f"expected {dim} numbers")
    try:
        arr = np.array(val, dtype=np.float64)
    except (TypeError, ValueError):
        raise MotionFormatError(lineno, key, "non-numeric entry") from None
    return arr.astype(np.float32)


def parse_motion_lines(lines, start_line=1):
    """Parse motion records; returns ``(motions, priorities, env_kind, generator)``."""
    motions, priorities = [], []
    env_kind = generator = None
    i = 0
    lines = list(lines)
    while i < len(lines):
        lineno = start_line + i
        raw = lines[i].strip()
        i += 1
        if not raw:
            continue
        try:
            head = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise MotionFormatError(lineno, "<json>", str(exc)) from None
        schema = _require(head, "schema", lineno, int)
        if schema != SCHEMA_VERSION:
            raise MotionFormatError(lineno, "schema", f"unsupported version {schema}")
        env = _require(head, "env", lineno, str)
        if env not in toyenv.ENV_KINDS:
            raise MotionFormatError(lineno, "env", f"unknown environment {env!r}")
        if env_kind is not None and env != env_kind:
            raise MotionFormatError(lineno, "env", "mixed environments in one file")
        env_kind = env
        mid = _require(head, "id", lineno, str)
        do = _require(head, "frames_dim_o", lineno, int)
        ds = _require(head, "frames_dim_s", lineno, int)
        n = _require(head, "n_frames", lineno, int)
        if n < 1:
            raise MotionFormatError(lineno, "n_frames", "must be >= 1")
        prio = head.get("priority", 1.0)
        gen = head.get("generator", "")
        generator = generator or gen
        obs = np.empty((n, do), dtype=np.float32)
        states = np.empty((n, ds), dtype=np.float32)
        for k in range(n):
            if i >= len(lines):
                raise MotionFormatError(start_line + i, "o", f"file ends after {k} of {n} frames")
            flineno = start_line + i
            try:
                frame = json.loads(lines[i])
            except json.JSONDecodeError as exc:
                raise MotionFormatError(flineno, "<json>", str(exc)) from None
            i += 1
            if not isinstance(frame, dict):
                raise MotionFormatError(flineno, "<json>", "frame must be an object")
            obs[k] = _vector(frame, "o", do, flineno)
            states[k] = _vector(frame, "s", ds, flineno)
        motions.append(Motion(mid, obs, states, head.get("source_params", {}), gen))
        priorities.append(float(prio))
    return motions, priorities, env_kind, generator or ""


def load_motion_set(path) -> MotionSet:
    with open(path) as fh:
        text = fh.read()
    if text and not text.endswith("\n"):
        # a writer always terminates the last record; anything else is truncation
        raise MotionFormatError(text.count("\n") + 1, "<json>", "truncated final record")
    motions, priorities, env_kind, generator = parse_motion_lines(text.splitlines())
    if not motions:
        raise EmptyDatasetError(f"{path}: no motions")
    return MotionSet(motions, env_kind, priorities, generator)
