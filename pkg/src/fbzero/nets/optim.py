"""Adam and Polyak averaging over dicts of named float32 arrays (in place)."""
from __future__ import annotations

import numpy as np


class Adam:
    """Adaptive-moment optimizer with bias correction; one moment pair per tensor."""

    def __init__(self, names, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.names = list(names)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**t
        c2 = 1.0 - b2**t
        for name in self.names:
            g = grads[name]
            p = params[name]
            if g.shape != p.shape:
                raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            p -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self, prefix):
        out = {}
        for name in self.names:
            if name in self.m:
                out[f"{prefix}/m/{name}"] = self.m[name]
                out[f"{prefix}/v/{name}"] = self.v[name]
        return out

    def load_state_arrays(self, prefix, arrays, step_count):
        self.step_count = int(step_count)
        for name in self.names:
            key = f"{prefix}/m/{name}"
            if key in arrays:
                self.m[name] = np.array(arrays[key], copy=True)
                self.v[name] = np.array(arrays[f"{prefix}/v/{name}"], copy=True)


def adam_step(params, grads, lr, step_count, moments=None, beta1=0.9, beta2=0.999, eps=1e-8):
    """Functional form: returns ``(new_params, new_moments)`` without mutating inputs."""
    opt = Adam(params.keys(), lr, beta1, beta2, eps)
    opt.step_count = step_count - 1
    if moments is not None:
        opt.m = {k: np.array(v, copy=True) for k, v in moments[0].items()}
        opt.v = {k: np.array(v, copy=True) for k, v in moments[1].items()}
    new = {k: np.array(v, copy=True) for k, v in params.items()}
    opt.step(new, grads)
    return new, (opt.m, opt.v)


def polyak_update(target, online, tau):
    """target <- (1 - tau) * target + tau * online, for matching names."""
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must be in (0, 1], got {tau}")
    for name, t in target.items():
        t *= 1.0 - tau
        t += tau * online[name]
    return target
