"""Parameter store for the full model: F, B, pi, D, Q_D, Q_R and targets.

Input layouts (all concatenated along the last axis):

* ``F``, ``Q_D``, ``Q_R``: ``(o_H, s, env_params, a, z)``
* ``pi``:                   ``(o_H, z)``, output ``(mean, log_std)``
* ``D``:                    ``(s, o, z)``
* ``B``:                    ``(s, o)``

``s`` is the privileged feature vector from :func:`fbzero.toyenv.state_features`.
Targets carry the prefix ``target_`` and start as exact copies.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from . import layers
from .layers import ArchSpec

NETS = ("F", "B", "pi", "D", "QD", "QR")
TARGETED = ("F", "B", "QD", "QR")
LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0


@dataclass
class ModelConfig:
    latent_dim: int = 32
    critic_hidden: int = 256
    critic_embedding_blocks: int = 1
    critic_residual_blocks: int = 2
    actor_hidden: int = 256
    actor_embedding_blocks: int = 1
    actor_residual_blocks: int = 2
    b_hidden: int = 256
    d_hidden: int = 256
    ensemble_size: int = 2

    def validate(self):
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.ensemble_size not in (1, 2):
            raise ValueError("ensemble_size must be 1 or 2")


@dataclass
class Dims:
    obs: int
    act: int
    state: int
    env_params: int
    history: int
    latent: int

    @classmethod
    def from_env(cls, env_cfg, latent_dim):
        return cls(env_cfg.obs_dim, env_cfg.act_dim, env_cfg.state_dim, env_cfg.param_dim,
                   env_cfg.history_dim, latent_dim)

    @property
    def critic_x(self):
        return self.history + self.state + self.env_params


def build_archs(dims: Dims, mc: ModelConfig):
    d = dims.latent
    crit_in = dims.critic_x + dims.act + d

    def critic(out):
        return ArchSpec(crit_in, out, mc.critic_embedding_blocks, mc.critic_residual_blocks,
                        mc.critic_hidden, "mish", True, mc.ensemble_size)

    return {
        "F": critic(d),
        "QD": critic(1),
        "QR": critic(1),
        "pi": ArchSpec(dims.history + d, 2 * dims.act, mc.actor_embedding_blocks,
                       mc.actor_residual_blocks, mc.actor_hidden, "mish", True, 1),
        "D": ArchSpec(dims.state + dims.obs + d, 1, 2, 0, mc.d_hidden, "relu", False, 1),
        "B": ArchSpec(dims.state + dims.obs, d, 1, 0, mc.b_hidden, "relu", False, 1),
    }


class Model:
    """Flat dict of named float32 arrays plus the architecture of each network."""

    def __init__(self, dims: Dims, mc: ModelConfig, params=None, seed=0):
        mc.validate()
        self.dims = dims
        self.config = mc
        self.archs = build_archs(dims, mc)
        if params is None:
            rng = np.random.default_rng(seed)
            params = {}
            for name in NETS:
                params.update(layers.init_params(self.archs[name], name, rng))
            for name in TARGETED:
                for k in self.names(name):
                    params[f"target_{k}"] = params[k].copy()
        self.params = params

    def names(self, net):
        return layers.param_names(self.archs[net], net)

    def subset(self, net, target=False):
        pre = "target_" if target else ""
        return {k: self.params[pre + k] for k in self.names(net)}

    def apply(self, net, x, params=None, target=False):
        """Forward pass; ``params`` overrides the stored arrays (e.g. with Tensors)."""
        if params is None:
            params = self.subset(net, target)
        return layers.forward(params, self.archs[net], x, net)

    def copy(self):
        return Model(self.dims, self.config, {k: v.copy() for k, v in self.params.items()})

    def expected_shapes(self):
        return {k: v.shape for k, v in self.params.items()}

    # convenience evaluators (no gradient tracking)
    def backward_embed(self, s, o):
        with ag.no_grad():
            return self.apply("B", np.concatenate([s, o], axis=-1)).data

    def policy_stats(self, o_h, z):
        with ag.no_grad():
            out = self.apply("pi", np.concatenate([o_h, z], axis=-1)).data
        a = self.dims.act
        return out[..., :a], np.clip(out[..., a:], LOG_STD_MIN, LOG_STD_MAX)

    def act(self, o_h, z, mode="eval", rng=None):
        mean, log_std = self.policy_stats(o_h, z)
        if mode == "eval":
            return np.tanh(mean)
        if mode != "sample":
            raise ValueError(f"mode must be 'eval' or 'sample', got {mode!r}")
        eps = rng.standard_normal(mean.shape).astype(np.float32)
        return np.tanh(mean + np.exp(log_std) * eps)

    def forward_f(self, x, a, z, target=False):
        with ag.no_grad():
            return self.apply("F", np.concatenate([x, a, z], axis=-1), target=target).data


def config_hash(obj) -> str:
    """Stable short hash of a JSON-serializable config."""
    if hasattr(obj, "__dataclass_fields__"):
        obj = asdict(obj)
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ModelSpec:
    """What a checkpoint needs to rebuild a :class:`Model`."""

    dims: dict
    model: dict
    extra: dict = field(default_factory=dict)

    @classmethod
    def of(cls, model: Model):
        return cls(asdict(model.dims), asdict(model.config))

    def build(self, params):
        return Model(Dims(**self.dims), ModelConfig(**self.model), params)
