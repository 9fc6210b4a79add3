"""Pre-training loop: rollouts into a replay buffer, then the per-round update sequence.

One iteration steps every environment once and then runs ``n_ups`` update
rounds, each in the order discriminator, forward-backward, style critic,
auxiliary critic, actor, then Polyak target updates. Every ``eval_every``
iterations all motion chunks are tracked under nominal dynamics and their
sampling priorities are refreshed from the tracking EMD.

Metrics CSV columns are listed in :data:`METRIC_COLUMNS`; ``kind`` is
``update`` for per-round loss rows and ``eval`` for tracking rows. Wall
clock goes to a separate ``timing.csv`` so that the metrics file is
bitwise reproducible.
"""
from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import evaluation, fbcore, inference, toyenv
from . import motions as mot
from .nets import autograd as ag
from .nets import checkpoint as ckpt
from .nets.optim import Adam
from .nets.store import NETS, TARGETED, Dims, Model, ModelConfig, config_hash
from .rollout import rollout

METRIC_COLUMNS = (
    "kind", "iteration", "round", "env_steps",
    "loss_d", "loss_fb", "fb_td", "fb_ortho", "loss_qd", "loss_qr", "loss_pi",
    "emd_mean", "mpjpe_mean",
)
LOSS_NAMES = ("loss_d", "loss_fb", "loss_qd", "loss_qr", "loss_pi")


class EmptyBufferError(ValueError):
    pass


class TrainingDiverged(FloatingPointError):
    def __init__(self, loss_name, value):
        super().__init__(f"{loss_name} was non-finite for 3 consecutive rounds (last value {value})")
        self.loss_name = loss_name


@dataclass
class TrainConfig:
    n_env: int = 16
    batch_size: int = 256
    n_ups: int = 2
    n_grad_total: int = 40000
    eval_every: int | None = None  # env iterations; default total/20
    gamma: float = 0.98
    seeding_iters: int = 10  # iterations of uniform random actions (10 * n_env steps)
    lr_f: float = 3e-4
    lr_b: float = 1e-5
    lr_d: float = 1e-5
    lr_pi: float = 3e-4
    lr_qd: float = 3e-4
    lr_qr: float = 3e-4
    alpha_d: float = 0.05
    alpha_r: float = 0.02
    ortho_coeff: float = 100.0
    gp_coeff: float = 10.0
    seq_len: int = 8
    tau: float = 0.005
    buffer_mult: int = 64
    chunk_len: int = 100
    probe_size: int = 20000
    seed: int = 0

    def validate(self):
        for name in ("n_env", "batch_size", "n_ups", "n_grad_total", "seq_len", "buffer_mult", "chunk_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("lr_f", "lr_b", "lr_d", "lr_pi", "lr_qd", "lr_qr"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("alpha_d", "alpha_r", "ortho_coeff", "gp_coeff"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must be in (0, 1]")
        if self.n_grad_total % self.n_ups:
            raise ValueError("n_grad_total must be a multiple of n_ups")
        if self.eval_every is not None and self.eval_every < 1:
            raise ValueError("eval_every must be positive")

    @property
    def total_iters(self):
        return self.n_grad_total // self.n_ups

    @property
    def eval_interval(self):
        return self.eval_every or max(1, self.total_iters // 20)


# ---------------------------------------------------------------- replay

_FIELDS = ("oh", "s", "p", "a", "oh2", "s2", "z", "aux")


@dataclass
class Batch:
    oh: np.ndarray
    s: np.ndarray
    p: np.ndarray
    a: np.ndarray
    oh2: np.ndarray
    s2: np.ndarray
    z: np.ndarray
    aux: np.ndarray
    s_plus: np.ndarray
    o_plus: np.ndarray
    obs_dim: int = 4

    @property
    def o(self):
        return self.oh[:, -self.obs_dim:]

    @property
    def o2(self):
        return self.oh2[:, -self.obs_dim:]

    def __len__(self):
        return len(self.s)


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions with uniform sampling."""

    def __init__(self, capacity, dims: Dims):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.obs_dim = dims.obs
        widths = {"oh": dims.history, "s": dims.state, "p": dims.env_params, "a": dims.act,
                  "oh2": dims.history, "s2": dims.state, "z": dims.latent, "aux": 1}
        self.data = {k: np.zeros((self.capacity, w), dtype=np.float32) for k, w in widths.items()}
        self.ptr = 0
        self.size = 0

    def __len__(self):
        return self.size

    def push(self, **rows):
        n = len(rows["s"])
        idx = (self.ptr + np.arange(n)) % self.capacity
        for k in _FIELDS:
            self.data[k][idx] = np.asarray(rows[k], dtype=np.float32).reshape(n, -1)
        self.ptr = int((self.ptr + n) % self.capacity)
        self.size = int(min(self.capacity, self.size + n))

    def sample(self, n, rng):
        if n and self.size == 0:
            raise EmptyBufferError("cannot sample from an empty replay buffer")
        idx = rng.integers(self.size, size=n) if n else np.zeros(0, dtype=np.int64)
        fut = rng.integers(self.size, size=n) if n else np.zeros(0, dtype=np.int64)
        rows = {k: self.data[k][idx] for k in _FIELDS}
        rows["aux"] = rows["aux"][:, 0]
        return Batch(**rows, s_plus=self.data["s2"][fut],
                     o_plus=self.data["oh2"][fut, -self.obs_dim:], obs_dim=self.obs_dim)

    def sample_states(self, n, rng):
        """``(s, o)`` of ``n`` uniformly drawn next-states."""
        if self.size == 0:
            raise EmptyBufferError("cannot sample from an empty replay buffer")
        idx = rng.integers(self.size, size=n)
        return self.data["s2"][idx], self.data["oh2"][idx, -self.obs_dim:]

    def state_arrays(self):
        return {f"buffer/{k}": v[: self.size] for k, v in self.data.items()}

    def load_state_arrays(self, arrays, ptr, size):
        for k in _FIELDS:
            self.data[k][:size] = arrays[f"buffer/{k}"]
        self.ptr, self.size = int(ptr), int(size)


# ---------------------------------------------------------------- priorities

def update_motion_priorities(tracking_emds):
    """p(m) proportional to 2^(4 clip(EMD, 0.5, 2)), normalized to sum 1."""
    e = np.asarray(tracking_emds, dtype=np.float64)
    if np.any(e < 0) or np.any(~np.isfinite(e)):
        raise ValueError("EMD values must be finite and nonnegative")
    raw = np.exp2(np.clip(e, 0.5, 2.0) * 4.0)
    return raw / raw.sum()


# ---------------------------------------------------------------- trainer

def _rng_state(rng):
    return rng.bit_generator.state


def _set_rng_state(rng, state):
    rng.bit_generator.state = state


class Trainer:
    """Holds every piece of mutable training state; see :func:`run_pretraining`."""

    def __init__(self, env_cfg: toyenv.EnvConfig, motion_set: mot.MotionSet, cfg: TrainConfig,
                 model_cfg: ModelConfig | None = None, sampler_cfg: fbcore.LatentSamplerConfig | None = None,
                 out_dir=None, run_hash=""):
        cfg.validate()
        if len(motion_set) == 0:
            raise mot.EmptyDatasetError("training needs at least one motion")
        self.env_cfg = env_cfg
        self.cfg = cfg
        self.model_cfg = model_cfg or ModelConfig()
        self.sampler_cfg = sampler_cfg or fbcore.LatentSamplerConfig(seq_len=cfg.seq_len)
        self.out_dir = out_dir
        self.run_hash = run_hash
        self.dims = Dims.from_env(env_cfg, self.model_cfg.latent_dim)
        self.model = Model(self.dims, self.model_cfg, seed=cfg.seed)
        self.chunks = mot.chunk_motions(motion_set, cfg.chunk_len)
        self.rng = np.random.default_rng([cfg.seed, 1])
        self.buffer = ReplayBuffer(cfg.buffer_mult * cfg.n_env * env_cfg.episode_len, self.dims)
        lrs = {"F": cfg.lr_f, "B": cfg.lr_b, "D": cfg.lr_d, "pi": cfg.lr_pi, "QD": cfg.lr_qd, "QR": cfg.lr_qr}
        self.opts = {net: Adam(self.model.names(net), lrs[net]) for net in NETS}
        self.iteration = 0  # env iterations after seeding
        self.seeded = 0
        self.rounds = 0
        self.bad_rounds = {k: 0 for k in LOSS_NAMES}
        self.state = None
        self.hist = None
        self.z = None
        self.metrics = []

    # -- environment side

    def _initial_sources(self, n):
        srcs = []
        for _ in range(n):
            if self.rng.random() < self.env_cfg.fall_init_prob:
                srcs.append("fall")
            else:
                i, f = mot.sample_frame(self.chunks, self.rng)
                srcs.append(toyenv.MotionFrame(self.chunks[i].states, f))
        return srcs

    def _reset_rows(self, idx):
        new_state, new_hist = toyenv.reset(self.env_cfg, self.rng, self._initial_sources(len(idx)))
        if self.state is None:
            self.state, self.hist = new_state, new_hist
            self.z = np.zeros((len(idx), self.dims.latent), dtype=np.float32)
        else:
            self.state.assign(idx, new_state)
            self.hist.reset_rows(idx, new_hist.current)
        self.z[idx] = fbcore.sample_latents(self.sampler_cfg, self.buffer, self.chunks, self.model,
                                            len(idx), self.rng)

    def env_iteration(self, random_actions=False):
        if self.state is None:
            self._reset_rows(np.arange(self.cfg.n_env))
        done = np.flatnonzero(self.state.step_index >= self.env_cfg.episode_len)
        if len(done):
            self._reset_rows(done)
        oh = self.hist.flat()
        if random_actions:
            a = self.rng.uniform(-1.0, 1.0, size=(self.cfg.n_env, self.dims.act)).astype(np.float32)
        else:
            a = self.model.act(oh, self.z, mode="sample", rng=self.rng)
        s = toyenv.state_features(self.env_cfg, self.state)
        try:
            nxt, obs, aux = toyenv.step(self.env_cfg, self.state, a, self.rng)
        except toyenv.NumericalBlowUp:
            # abort every episode and start fresh; nothing is stored
            self.state.step_index[:] = self.env_cfg.episode_len
            return
        self.hist.push(a, obs)
        self.buffer.push(oh=oh, s=s, p=self.state.params, a=a, oh2=self.hist.flat(),
                         s2=toyenv.state_features(self.env_cfg, nxt), z=self.z,
                         aux=aux.sum(axis=1))
        self.state = nxt

    # -- update side

    def _apply(self, net, grads):
        self.opts[net].step(self.model.params, grads)

    def _guard(self, name, fn):
        try:
            value, grads = fn()
        except ag.DivergenceError as exc:
            self.bad_rounds[name] += 1
            if self.bad_rounds[name] >= 3:
                raise TrainingDiverged(name, str(exc)) from None
            return float("nan"), None
        self.bad_rounds[name] = 0
        return value, grads

    def update_round(self):
        cfg, model, rng = self.cfg, self.model, self.rng
        batch = self.buffer.sample(cfg.batch_size, rng)
        n_seq = max(1, cfg.batch_size // cfg.seq_len)
        e_obs, e_states = mot.sample_sequences(self.chunks, n_seq, cfg.seq_len, rng, weighted=True)
        row = {}

        def d_step():
            return ag.value_and_grad(
                lambda t: fbcore.discriminator_loss(model, t, e_states, e_obs, batch.s, batch.o, batch.z,
                                                    cfg.gp_coeff),
                model.subset("D"))

        row["loss_d"], g = self._guard("loss_d", d_step)
        if g is not None:
            self._apply("D", g)

        a_next = model.act(batch.oh2, batch.z, mode="sample", rng=rng)
        terms = {}

        def fb_step():
            def loss(t):
                total, tm = fbcore.fb_loss(model, t, batch, a_next, cfg.gamma, cfg.ortho_coeff, return_terms=True)
                terms.update(tm)
                return total
            return ag.value_and_grad(loss, {**model.subset("F"), **model.subset("B")})

        row["loss_fb"], g = self._guard("loss_fb", fb_step)
        if g is not None:
            self._apply("F", g)
            self._apply("B", g)
            row["fb_td"] = float(terms["td"].data)
            row["fb_ortho"] = float(terms["ortho_pair"].data + terms["ortho_trace"].data)

        with ag.no_grad():
            _, logit = fbcore.disc_prob(model, None, batch.s, batch.o, batch.z)
        r_d = fbcore.disc_reward_from_logit(logit.data[:, 0])
        for net, name, reward in (("QD", "loss_qd", r_d), ("QR", "loss_qr", batch.aux)):
            row[name], g = self._guard(name, lambda: ag.value_and_grad(
                lambda t: fbcore.critic_loss(model, t, net, batch, reward, a_next, cfg.gamma),
                model.subset(net)))
            if g is not None:
                self._apply(net, g)

        row["loss_pi"], g = self._guard("loss_pi", lambda: ag.value_and_grad(
            lambda t: fbcore.actor_loss(model, t, batch, rng, cfg.alpha_d, cfg.alpha_r),
            model.subset("pi")))
        if g is not None:
            self._apply("pi", g)

        tau = np.float32(cfg.tau)
        for net in TARGETED:
            for k in model.names(net):
                tgt = model.params[f"target_{k}"]
                tgt *= np.float32(1.0) - tau
                tgt += tau * model.params[k]
        self.rounds += 1
        return row

    # -- evaluation / priorities

    def evaluate_tracking(self):
        """Track every chunk under nominal dynamics; returns per-chunk (EMD, E_mpjpe)."""
        nominal = self.env_cfg.nominal()
        rng = np.random.default_rng([self.cfg.seed, 2, self.iteration])
        emds = np.zeros(len(self.chunks))
        errs = np.zeros(len(self.chunks))
        by_len = {}
        for i, m in enumerate(self.chunks):
            by_len.setdefault(len(m), []).append(i)
        for length, idx in sorted(by_len.items()):
            zs = np.stack([evaluation.tracking_latents_for_rollout(
                inference.tracking_embeddings(self.model, self.chunks[i], self.cfg.seq_len)) for i in idx])
            inits = [toyenv.MotionFrame(self.chunks[i].states, 0) for i in idx]
            traj, _ = rollout(nominal, self.model, zs, inits, length - 1, rng)
            for j, i in enumerate(idx):
                m = self.chunks[i]
                errs[i] = evaluation.mpjpe(traj.poses[j], m.states[:, :2])
                emds[i] = evaluation.tracking_emd(traj.features[j], m)
        return emds, errs

    def eval_and_prioritize(self):
        emds, errs = self.evaluate_tracking()
        self.chunks.set_priorities(update_motion_priorities(emds))
        return {"emd_mean": float(emds.mean()), "mpjpe_mean": float(errs.mean())}

    # -- logging

    def _log(self, kind, row):
        full = {"kind": kind, "iteration": self.iteration, "round": self.rounds,
                "env_steps": (self.seeded + self.iteration) * self.cfg.n_env}
        full.update(row)
        self.metrics.append(full)
        if self.out_dir:
            path = os.path.join(self.out_dir, "metrics.csv")
            new = not os.path.exists(path)
            with open(path, "a", newline="") as fh:
                w = csv.writer(fh)
                if new:
                    w.writerow(METRIC_COLUMNS)
                w.writerow([_fmt(full.get(c, "")) for c in METRIC_COLUMNS])

    def _log_time(self, t0):
        if self.out_dir:
            path = os.path.join(self.out_dir, "timing.csv")
            new = not os.path.exists(path)
            with open(path, "a") as fh:
                if new:
                    fh.write("iteration,round,wall_clock_s\n")
                fh.write(f"{self.iteration},{self.rounds},{time.time() - t0:.3f}\n")

    # -- main loop

    def seed_buffer(self):
        while self.seeded < self.cfg.seeding_iters:
            self.env_iteration(random_actions=True)
            self.seeded += 1

    def run(self, until=None, checkpoint_every=None, progress=None):
        """Run iterations up to ``until`` (default: the configured total)."""
        t0 = time.time()
        self.seed_buffer()
        until = self.cfg.total_iters if until is None else min(until, self.cfg.total_iters)
        every = self.cfg.eval_interval
        while self.iteration < until:
            self.env_iteration()
            self.iteration += 1
            for _ in range(self.cfg.n_ups):
                self._log("update", self.update_round())
            if self.iteration % every == 0 or self.iteration == self.cfg.total_iters:
                self._log("eval", self.eval_and_prioritize())
                self._log_time(t0)
                if self.out_dir:
                    self.save_checkpoint(os.path.join(self.out_dir, "model.ckpt"))
                if progress:
                    progress(self)
            if checkpoint_every and self.out_dir and self.iteration % checkpoint_every == 0:
                self.save_snapshot(os.path.join(self.out_dir, "snapshot.ckpt"))
        return self.model, self.metrics

    # -- persistence

    def probe_arrays(self):
        rng = np.random.default_rng([self.cfg.seed, 3])
        n = min(self.cfg.probe_size, len(self.buffer))
        idx = np.sort(rng.choice(len(self.buffer), n, replace=False)) if n else np.zeros(0, int)
        return {"probe/s": self.buffer.data["s2"][idx],
                "probe/o": self.buffer.data["oh2"][idx, -self.dims.obs:]}

    def checkpoint_extra(self):
        return {
            "dims": asdict(self.dims),
            "model": asdict(self.model_cfg),
            "env": env_to_dict(self.env_cfg),
            "train": asdict(self.cfg),
            "iteration": self.iteration,
            "rounds": self.rounds,
        }

    def save_checkpoint(self, path):
        arrays = dict(self.model.params)
        arrays.update(self.probe_arrays())
        ckpt.save(path, arrays, self.run_hash or model_hash(self.env_cfg, self.model_cfg),
                  step=self.rounds, extra=self.checkpoint_extra())

    def save_snapshot(self, path):
        """Everything needed to continue bitwise-identically."""
        arrays = dict(self.model.params)
        for net, opt in self.opts.items():
            arrays.update(opt.state_arrays(f"adam/{net}"))
        arrays.update(self.buffer.state_arrays())
        st = self.state
        arrays.update({"env/q": st.q, "env/qd": st.qd, "env/prev_action": st.prev_action,
                       "env/params": st.params, "env/step_index": st.step_index.astype(np.float32),
                       "env/hist_pairs": self.hist.pairs, "env/hist_current": self.hist.current,
                       "env/z": self.z})
        extra = self.checkpoint_extra()
        extra.update({
            "snapshot": True,
            "seeded": self.seeded,
            "adam_steps": {net: opt.step_count for net, opt in self.opts.items()},
            "buffer": {"ptr": self.buffer.ptr, "size": self.buffer.size},
            "rng": _rng_state(self.rng),
            "priorities": [float(p) for p in self.chunks.priorities],
            "bad_rounds": self.bad_rounds,
        })
        ckpt.save(path, arrays, self.run_hash or model_hash(self.env_cfg, self.model_cfg),
                  step=self.rounds, extra=extra)

    def load_snapshot(self, path):
        arrays, header = ckpt.load(path)
        ex = header["extra"]
        if not ex.get("snapshot"):
            raise ckpt.CheckpointError(f"{path} is a model checkpoint, not a training snapshot")
        for k in self.model.params:
            if arrays[k].shape != self.model.params[k].shape:
                raise ckpt.ShapeMismatch(k, arrays[k].shape, self.model.params[k].shape)
            self.model.params[k] = arrays[k].copy()
        for net, opt in self.opts.items():
            opt.load_state_arrays(f"adam/{net}", arrays, ex["adam_steps"][net])
        self.buffer.load_state_arrays(arrays, ex["buffer"]["ptr"], ex["buffer"]["size"])
        self.state = toyenv.PrivilegedState(
            arrays["env/q"].copy(), arrays["env/qd"].copy(), arrays["env/prev_action"].copy(),
            arrays["env/params"].copy(), arrays["env/step_index"].astype(np.int64))
        self.hist = toyenv.ObsHistory(self.cfg.n_env, self.env_cfg.history_len, self.dims.obs, self.dims.act)
        self.hist.pairs = arrays["env/hist_pairs"].copy()
        self.hist.current = arrays["env/hist_current"].copy()
        self.z = arrays["env/z"].copy()
        _set_rng_state(self.rng, ex["rng"])
        self.chunks.set_priorities(ex["priorities"])
        self.iteration, self.rounds, self.seeded = ex["iteration"], ex["rounds"], ex["seeded"]
        self.bad_rounds = dict(ex["bad_rounds"])
        return header


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def env_to_dict(env_cfg):
    d = asdict(env_cfg)
    d["dr_ranges"] = {k: list(v) for k, v in d["dr_ranges"].items()}
    return d


def env_from_dict(d):
    return toyenv.EnvConfig(**d)


def model_hash(env_cfg, model_cfg):
    """Hash of everything that determines parameter shapes and semantics."""
    return config_hash({"env": env_to_dict(env_cfg), "model": asdict(model_cfg)})


def run_pretraining(env_cfg, motion_set, cfg: TrainConfig, model_cfg=None, sampler_cfg=None,
                    out_dir=None, progress=None, checkpoint_every=None):
    """Train from scratch; returns ``(model, metrics rows)``."""
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        for name in ("metrics.csv", "timing.csv"):
            path = os.path.join(out_dir, name)
            if os.path.exists(path):
                os.remove(path)
    tr = Trainer(env_cfg, motion_set, cfg, model_cfg, sampler_cfg, out_dir)
    tr.run(progress=progress, checkpoint_every=checkpoint_every)
    return tr.model, tr.metrics


def load_model(path, expected_hash=None, check_hash=True):
    """Rebuild a :class:`Model` from a checkpoint; returns ``(model, env_cfg, header, arrays)``."""
    with open(path, "rb") as fh:
        header = ckpt.read_header(fh)
    ex = header["extra"]
    dims = Dims(**ex["dims"])
    mc = ModelConfig(**ex["model"])
    shell = Model(dims, mc, params={})
    shell_shapes = _expected_shapes(shell)
    arrays, header = ckpt.load(path, expected_hash, shell_shapes, check_hash)
    model = Model(dims, mc, params={k: arrays[k] for k in shell_shapes})
    return model, env_from_dict(ex["env"]), header, arrays


def _expected_shapes(shell):
    from .nets import layers

    shapes = {}
    for net in NETS:
        arch = shell.archs[net]
        lead = (arch.ensemble_size,) if arch.ensemble_size > 1 else ()
        for suffix, shape in layers._shapes(arch):
            shapes[f"{net}/{suffix}"] = lead + shape
    for net in TARGETED:
        for k in list(shapes):
            if k.startswith(f"{net}/"):
                shapes[f"target_{k}"] = shapes[k]
    return shapes
