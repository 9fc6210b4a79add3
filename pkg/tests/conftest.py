import numpy as np
import pytest

from fbzero import toyenv
from fbzero.nets.store import Dims, Model, ModelConfig


def tiny_model(env_kind="pointmass", latent=3, hidden=8, dtype=np.float32, seed=0, blocks=2):
    """A small model with every network present; float64 for gradient checks."""
    env = toyenv.EnvConfig(env_kind=env_kind, history_len=1)
    mc = ModelConfig(latent_dim=latent, critic_hidden=hidden, critic_embedding_blocks=1,
                     critic_residual_blocks=blocks, actor_hidden=hidden, actor_embedding_blocks=1,
                     actor_residual_blocks=blocks, b_hidden=hidden, d_hidden=hidden)
    model = Model(Dims.from_env(env, latent), mc, seed=seed)
    if dtype != np.float32:
        model.params = {k: v.astype(dtype) for k, v in model.params.items()}
    return env, model


def fd_check(loss_fn, params, names=None, eps=1e-3, max_elems=40, seed=0):
    """Worst per-tensor relative error between autograd and central differences.

    ``loss_fn`` maps a dict of arrays/Tensors to a scalar Tensor. A random
    subset of at most ``max_elems`` entries per tensor is perturbed.
    """
    from fbzero.nets import autograd as ag

    names = list(params) if names is None else names
    sub = {k: params[k] for k in names}

    def full(t):
        merged = dict(params)
        merged.update(t)
        return loss_fn(merged)

    _, grads = ag.value_and_grad(full, sub)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in names:
        p = sub[k]
        flat = p.reshape(-1)
        idx = rng.choice(flat.size, min(max_elems, flat.size), replace=False)
        num = np.empty(len(idx))
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + eps
            up = float(full({k: p}).data)
            flat[i] = old - eps
            dn = float(full({k: p}).data)
            flat[i] = old
            num[j] = (up - dn) / (2 * eps)
        ana = grads[k].reshape(-1)[idx]
        scale = max(np.linalg.norm(ana), np.linalg.norm(num), 1e-6)
        worst = max(worst, float(np.linalg.norm(ana - num) / scale))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(0)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
