"""Residual MLP family shared by every network in the model.

Layout, in order:

* ``embedding_blocks`` blocks of ``linear -> [layernorm] -> activation``;
  the first maps ``input_dim`` to ``hidden_units``.
* ``residual_blocks`` blocks of ``x + linear(act(linear([layernorm](x))))``.
* a linear head to ``output_dim``.

With no blocks at all the network is a single linear map. Ensembles keep a
leading member axis on every parameter; a ``(batch, in)`` input is shared by
all members and the output is ``(ensemble, batch, out)``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag

ACTIVATIONS = {"mish": ag.mish, "relu": ag.relu, "tanh": ag.tanh}


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class ArchSpec:
    input_dim: int
    output_dim: int
    embedding_blocks: int = 1
    residual_blocks: int = 2
    hidden_units: int = 256
    activation: str = "mish"
    use_layernorm: bool = True
    ensemble_size: int = 1

    def __post_init__(self):
        if min(self.input_dim, self.output_dim, self.hidden_units) < 1:
            raise ValueError(f"dimensions must be positive: {self}")
        if self.embedding_blocks < 0 or self.residual_blocks < 0:
            raise ValueError("block counts must be >= 0")
        if self.ensemble_size not in (1, 2):
            raise ValueError("ensemble_size must be 1 or 2")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    def to_dict(self):
        return asdict(self)

    @property
    def width(self):
        return self.hidden_units if self.embedding_blocks else self.input_dim


def _shapes(arch: ArchSpec):
    """(suffix, shape) for every parameter, without the ensemble axis."""
    out = []
    d_in = arch.input_dim
    h = arch.hidden_units
    for i in range(arch.embedding_blocks):
        out += [(f"emb{i}/w", (d_in, h)), (f"emb{i}/b", (1, h))]
        if arch.use_layernorm:
            out += [(f"emb{i}/ln_g", (h,)), (f"emb{i}/ln_b", (h,))]
        d_in = h
    w = arch.width
    for i in range(arch.residual_blocks):
        if arch.use_layernorm:
            out += [(f"res{i}/ln_g", (w,)), (f"res{i}/ln_b", (w,))]
        out += [
            (f"res{i}/w1", (w, h)),
            (f"res{i}/b1", (1, h)),
            (f"res{i}/w2", (h, w)),
            (f"res{i}/b2", (1, w)),
        ]
    out += [("head/w", (w, arch.output_dim)), ("head/b", (1, arch.output_dim))]
    return out


def init_params(arch: ArchSpec, prefix: str, rng: np.random.Generator, dtype=np.float32):
    """Uniform(+-1/sqrt(fan_in)) weights and biases; layernorm at identity."""
    params = {}
    e = arch.ensemble_size
    lead = (e,) if e > 1 else ()
    for suffix, shape in _shapes(arch):
        name = f"{prefix}/{suffix}"
        kind = suffix.rsplit("/", 1)[1]
        if kind == "ln_g":
            arr = np.ones(lead + shape, dtype=dtype)
        elif kind == "ln_b":
            arr = np.zeros(lead + shape, dtype=dtype)
        else:
            fan_in = shape[0] if kind.startswith("w") else _fan_in_of_bias(arch, suffix)
            bound = 1.0 / np.sqrt(fan_in)
            arr = rng.uniform(-bound, bound, size=lead + shape).astype(dtype)
        params[name] = arr
    return params


def _fan_in_of_bias(arch, suffix):
    block, kind = suffix.split("/")
    if block.startswith("emb"):
        return arch.input_dim if block == "emb0" else arch.hidden_units
    if block == "head":
        return arch.width
    return arch.width if kind == "b1" else arch.hidden_units


def param_names(arch: ArchSpec, prefix: str):
    return [f"{prefix}/{s}" for s, _ in _shapes(arch)]


def _t(p):
    return p if isinstance(p, ag.Tensor) else ag.Tensor(p)


def _linear(params, name, x):
    w = _t(params[f"{name}/w"])
    if x.shape[-1] != w.shape[-2]:
        raise DimensionError(f"{name}: expected last dimension {w.shape[-2]}, got {x.shape[-1]}")
    return x @ w + _t(params[f"{name}/b"])


def forward(params, arch: ArchSpec, x, prefix: str):
    """Apply the network named ``prefix`` to ``x`` (Tensor or array)."""
    x = _t(x)
    if x.shape[-1] != arch.input_dim:
        raise DimensionError(
            f"{prefix}: input last dimension {x.shape[-1]} != input_dim {arch.input_dim}"
        )
    e = arch.ensemble_size
    if e > 1 and x.ndim == 2:
        x = ag.broadcast_to(x.reshape(1, *x.shape), (e,) + x.shape)
    act = ACTIVATIONS[arch.activation]
    for i in range(arch.embedding_blocks):
        name = f"{prefix}/emb{i}"
        x = _linear(params, name, x)
        if arch.use_layernorm:
            x = ag.layer_norm(x, _t(params[f"{name}/ln_g"]), _t(params[f"{name}/ln_b"]))
        x = act(x)
    for i in range(arch.residual_blocks):
        name = f"{prefix}/res{i}"
        h = x
        if arch.use_layernorm:
            h = ag.layer_norm(h, _t(params[f"{name}/ln_g"]), _t(params[f"{name}/ln_b"]))
        h = act(h @ _t(params[f"{name}/w1"]) + _t(params[f"{name}/b1"]))
        x = x + (h @ _t(params[f"{name}/w2"]) + _t(params[f"{name}/b2"]))
    return _linear(params, f"{prefix}/head", x)
