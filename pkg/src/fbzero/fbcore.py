"""Losses and latent-space primitives of the forward-backward model.

The ``*_from_values`` functions take network outputs directly and are what
the formula tests exercise; the remaining functions wire them to a
:class:`~fbzero.nets.store.Model`. All tensors are :class:`ag.Tensor`;
anything passed as a plain array is a constant (stop-gradient).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import motions as mot
from .nets import autograd as ag

D_CLAMP = 1e-6
REWARD_CLIP = 10.0


class UninformativeLatentError(ValueError):
    pass


class BatchTooSmallError(ValueError):
    pass


# ---------------------------------------------------------------- latents

def project_sphere(z_raw, eps=1e-8):
    """Rescale each row of ``z_raw`` to norm sqrt(d)."""
    z = np.asarray(z_raw, dtype=np.float64)
    norm = np.linalg.norm(z, axis=-1, keepdims=True)
    if np.any(norm <= eps):
        raise UninformativeLatentError(f"latent norm {float(norm.min()):.3g} is too small to project")
    return (np.sqrt(z.shape[-1]) * z / norm).astype(np.float32)


def uniform_sphere(n, d, rng):
    while True:
        z = rng.standard_normal((n, d))
        if np.all(np.linalg.norm(z, axis=-1) > 1e-8):
            return project_sphere(z)


def encode_from_values(b_values):
    """Project the frame-mean of B outputs ``(..., T, d)`` onto the sphere."""
    return project_sphere(np.mean(np.asarray(b_values, dtype=np.float64), axis=-2))


def encode_trajectory(model, states, obs):
    """z_tau for one ``(T, .)`` sequence or a batch ``(m, T, .)`` of sequences."""
    return encode_from_values(model.backward_embed(states, obs))


@dataclass
class LatentSamplerConfig:
    mix_weights: tuple = (0.5, 0.25, 0.25)  # uniform, buffer B, expert encoding
    seq_len: int = 8

    def validate(self):
        w = np.asarray(self.mix_weights, dtype=float)
        if w.shape != (3,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"mix_weights must be 3 nonnegative numbers summing to 1: {self.mix_weights}")


def sample_latents(cfg: LatentSamplerConfig, buffer, motion_set, model, n, rng):
    """Draw ``n`` latents from the mixture nu; empty sources fall back to uniform."""
    cfg.validate()
    d = model.dims.latent
    kinds = rng.choice(3, size=n, p=np.asarray(cfg.mix_weights, dtype=float))
    if buffer is None or len(buffer) == 0:
        kinds[kinds == 1] = 0
    if motion_set is None or len(motion_set) == 0:
        kinds[kinds == 2] = 0
    out = np.empty((n, d), dtype=np.float32)
    # fixed draw order keeps the stream reproducible: uniform, buffer, expert
    idx = np.flatnonzero(kinds == 0)
    if len(idx):
        out[idx] = uniform_sphere(len(idx), d, rng)
    idx = np.flatnonzero(kinds == 1)
    if len(idx):
        s, o = buffer.sample_states(len(idx), rng)
        out[idx] = _project_or_uniform(model.backward_embed(s, o), rng)
    idx = np.flatnonzero(kinds == 2)
    if len(idx):
        obs, states = mot.sample_sequences(motion_set, len(idx), cfg.seq_len, rng)
        out[idx] = _project_or_uniform(model.backward_embed(states, obs).mean(axis=-2), rng)
    return out


def _project_or_uniform(raw, rng):
    raw = np.asarray(raw, dtype=np.float64)
    bad = np.linalg.norm(raw, axis=-1) <= 1e-8
    if np.any(bad):
        raw[bad] = rng.standard_normal((int(bad.sum()), raw.shape[-1]))
    return project_sphere(raw)


# ---------------------------------------------------------------- FB loss

def _offdiag(n):
    return 1.0 - np.eye(n, dtype=np.float32)


def fb_loss_terms(F, B_next, Ft_next, Bt_next, z, sigma, gamma):
    """The five FB loss terms from network outputs.

    F        online F(x_i, a_i, z_i), ``(n, d)`` or ensemble ``(E, n, d)``
    B_next   online B(s'_i, o'_i), ``(n, d)``
    Ft_next  target F(x'_i, a'_i, z_i), ``(n, d)`` (already reduced over members)
    Bt_next  target B(s'_i, o'_i), ``(n, d)``
    z        latents ``(n, d)``; sigma ``(d, d)``

    Returns a dict with keys ``td``, ``attract``, ``ortho_pair``,
    ``ortho_trace`` and ``zalign``; F-dependent terms are averaged over
    ensemble members.
    """
    F = F if isinstance(F, ag.Tensor) else ag.Tensor(F)
    B_next = B_next if isinstance(B_next, ag.Tensor) else ag.Tensor(B_next)
    n = B_next.shape[-2]
    if n < 2:
        raise BatchTooSmallError(f"FB loss needs at least 2 samples, got {n}")
    Ft_next = np.asarray(Ft_next.data if isinstance(Ft_next, ag.Tensor) else Ft_next)
    Bt_next = np.asarray(Bt_next.data if isinstance(Bt_next, ag.Tensor) else Bt_next)
    z = np.asarray(z.data if isinstance(z, ag.Tensor) else z, dtype=F.dtype)
    sigma = np.asarray(sigma, dtype=F.dtype)
    mask = _offdiag(n).astype(F.dtype)
    pairs = 2.0 * n * (n - 1)
    members = F.shape[0] if F.ndim == 3 else 1

    M = F @ B_next.mT  # (E, n, n)
    Mt = (gamma * Ft_next @ Bt_next.T).astype(F.dtype)
    td = ((M - Mt) ** 2 * mask).sum() * (1.0 / (pairs * members))
    attract = (F * B_next).sum() * (-1.0 / (n * members))

    G = B_next @ B_next.mT
    ortho_pair = (G**2 * mask).sum() * (1.0 / pairs)
    ortho_trace = (B_next * B_next).sum() * (-1.0 / n)

    fz = (F * z).sum(axis=-1)  # (E, n)
    const = ((Bt_next @ sigma) * z).sum(-1) + gamma * (Ft_next * z).sum(-1)
    zalign = ((fz - const.astype(F.dtype)) ** 2).sum() * (1.0 / (n * members))
    return {"td": td, "attract": attract, "ortho_pair": ortho_pair,
            "ortho_trace": ortho_trace, "zalign": zalign}


def fb_loss_from_values(F, B_next, Ft_next, Bt_next, z, sigma, gamma, ortho_coeff):
    t = fb_loss_terms(F, B_next, Ft_next, Bt_next, z, sigma, gamma)
    return t["td"] + t["attract"] + ortho_coeff * (t["ortho_pair"] + t["ortho_trace"]) + t["zalign"]


def select_target_f(Ft_all, z):
    """Per sample, the target-F member with the smaller F^T z."""
    Ft_all = np.asarray(Ft_all)
    if Ft_all.ndim == 2:
        return Ft_all
    fz = np.einsum("end,nd->en", Ft_all, z)
    pick = np.argmin(fz, axis=0)
    return Ft_all[pick, np.arange(Ft_all.shape[1])]


def second_moment(b):
    b = np.asarray(b, dtype=np.float64)
    return (b.T @ b / len(b)).astype(np.float32)


def critic_x(oh, s, p):
    return np.concatenate([oh, s, p], axis=-1)


def fb_loss(model, tensors, batch, a_next, gamma, ortho_coeff, return_terms=False):
    """FB loss of ``batch`` with online F, B taken from ``tensors``.

    ``tensors`` maps parameter names to arrays or Tensors (the F and B
    entries); targets are read from ``model`` and never differentiated.
    """
    x = critic_x(batch.oh, batch.s, batch.p)
    x2 = critic_x(batch.oh2, batch.s2, batch.p)
    F = model.apply("F", np.concatenate([x, batch.a, batch.z], -1), _sub(tensors, model, "F"))
    sb2 = np.concatenate([batch.s2, batch.o2], -1)
    B_next = model.apply("B", sb2, _sub(tensors, model, "B"))
    with ag.no_grad():
        Ft_all = model.apply("F", np.concatenate([x2, a_next, batch.z], -1), target=True).data
        Bt_next = model.apply("B", sb2, target=True).data
        Bt_plus = model.apply("B", np.concatenate([batch.s_plus, batch.o_plus], -1), target=True).data
    Ft = select_target_f(Ft_all, batch.z)
    sigma = second_moment(Bt_plus)
    terms = fb_loss_terms(F, B_next, Ft, Bt_next, batch.z, sigma, gamma)
    total = terms["td"] + terms["attract"] + ortho_coeff * (terms["ortho_pair"] + terms["ortho_trace"]) + terms["zalign"]
    return (total, terms) if return_terms else total


def _sub(tensors, model, net):
    if tensors is None:
        return None
    names = model.names(net)
    if all(k in tensors for k in names):
        return {k: tensors[k] for k in names}
    return None


# ---------------------------------------------------------------- discriminator

def disc_reward(d_value):
    """log D - log(1 - D), clipped to [-10, 10]."""
    d = np.asarray(d_value, dtype=np.float64)
    with np.errstate(divide="ignore"):
        r = np.log(d) - np.log1p(-d)
    return np.clip(r, -REWARD_CLIP, REWARD_CLIP)


def disc_reward_from_logit(logit):
    # the clamp on D bounds the logit at +-13.8, inside which the clip dominates
    return np.clip(np.asarray(logit, dtype=np.float64), -REWARD_CLIP, REWARD_CLIP).astype(np.float32)


def discriminator_loss_from_values(d_expert, d_agent, grad_sq=None, gp_coeff=10.0):
    """Classifier loss from D probabilities; ``grad_sq`` holds per-sample ||grad D||^2."""
    d_expert = d_expert if isinstance(d_expert, ag.Tensor) else ag.Tensor(d_expert)
    d_agent = d_agent if isinstance(d_agent, ag.Tensor) else ag.Tensor(d_agent)
    lo, hi = D_CLAMP, 1.0 - D_CLAMP
    loss = -ag.log(ag.clip(d_expert, lo, hi)).mean() - ag.log(1.0 - ag.clip(d_agent, lo, hi)).mean()
    if grad_sq is not None and gp_coeff:
        loss = loss + gp_coeff * (grad_sq if isinstance(grad_sq, ag.Tensor) else ag.Tensor(grad_sq)).mean()
    return loss


def disc_prob(model, tensors, s, o, z):
    logit = model.apply("D", ag.concat([_t(s), _t(o), _t(z)], -1), _sub(tensors, model, "D"))
    return ag.sigmoid(logit), logit


def _t(x):
    return x if isinstance(x, ag.Tensor) else ag.Tensor(x)


def discriminator_loss(model, tensors, expert_s, expert_o, agent_s, agent_o, agent_z, gp_coeff=10.0, z_expert=None):
    """Expert sequences ``(m, T, .)`` vs agent samples ``(n, .)``.

    Each expert sequence is paired with its own encoding z_tau (online B,
    no gradient). The penalty is the mean squared input gradient of D at
    the expert ``(s, o)`` points.
    """
    m, T = expert_s.shape[:2]
    if z_expert is None:
        z_expert = encode_trajectory(model, expert_s, expert_o)
    zs = np.repeat(z_expert, T, axis=0)
    so = ag.Tensor(np.concatenate([expert_s, expert_o], -1).reshape(m * T, -1), requires_grad=gp_coeff > 0)
    ds = expert_s.shape[-1]
    d_exp, _ = disc_prob(model, tensors, so[:, :ds], so[:, ds:], zs)
    grad_sq = None
    if gp_coeff:
        (g,) = ag.grad(d_exp.sum(), [so], create_graph=True)
        grad_sq = (g * g).sum(axis=-1)
    d_agent, _ = disc_prob(model, tensors, agent_s, agent_o, agent_z)
    return discriminator_loss_from_values(d_exp, d_agent, grad_sq, gp_coeff)


# ---------------------------------------------------------------- critics / actor

def critic_loss_from_values(q, reward, q_next_target, gamma):
    """Mean squared Bellman residual; ``q`` is ``(n,)``/``(n,1)`` or ``(E, n, 1)``.

    The target uses the elementwise minimum over target members.
    """
    q = q if isinstance(q, ag.Tensor) else ag.Tensor(q)
    qt = np.asarray(q_next_target.data if isinstance(q_next_target, ag.Tensor) else q_next_target)
    if qt.ndim == 3:
        qt = qt.min(axis=0)
    qt = qt.reshape(-1)
    target = (np.asarray(reward).reshape(-1) + gamma * qt).astype(q.dtype)
    shape = q.shape[:-1] if q.ndim >= 2 and q.shape[-1] == 1 else q.shape
    pred = q.reshape(shape)
    return ((pred - target) ** 2).mean()


def critic_loss(model, tensors, net, batch, reward, a_next, gamma):
    x = critic_x(batch.oh, batch.s, batch.p)
    x2 = critic_x(batch.oh2, batch.s2, batch.p)
    q = model.apply(net, np.concatenate([x, batch.a, batch.z], -1), _sub(tensors, model, net))
    with ag.no_grad():
        qt = model.apply(net, np.concatenate([x2, a_next, batch.z], -1), target=True).data
    return critic_loss_from_values(q, reward, qt, gamma)


def _min_members(t):
    if t.ndim == 3 and t.shape[0] == 2:
        return ag.minimum(t[0], t[1])
    if t.ndim == 3:
        return t[0]
    return t


def actor_loss_from_values(fz, qd, qr, alpha_d=0.05, alpha_r=0.02):
    """``-mean(F^T z + alpha_d Q_D + alpha_r Q_R)`` with ensemble-min reduction.

    ``fz`` is F^T z per sample, ``(n,)`` or ``(E, n)``; ``qd``/``qr`` are
    ``(n,)``, ``(n, 1)`` or ``(E, n, 1)``.
    """
    def reduce(t, vec):
        t = t if isinstance(t, ag.Tensor) else ag.Tensor(t)
        if not vec and t.shape[-1] == 1:
            t = t.reshape(t.shape[:-1])
        if t.ndim == 2:
            t = ag.minimum(t[0], t[1]) if t.shape[0] == 2 else t[0]
        return t

    total = reduce(fz, True) + alpha_d * reduce(qd, False) + alpha_r * reduce(qr, False)
    return -total.mean()


def sample_policy_action(model, tensors, oh, z, rng):
    """Reparameterized tanh-Gaussian sample, differentiable w.r.t. pi parameters."""
    out = model.apply("pi", np.concatenate([oh, z], -1), _sub(tensors, model, "pi"))
    a = model.dims.act
    mean = out[:, :a]
    log_std = ag.clip(out[:, a:], -5.0, 2.0)
    eps = rng.standard_normal(mean.shape).astype(np.float32)
    return ag.tanh(mean + ag.exp(log_std) * eps)


def actor_loss(model, tensors, batch, rng, alpha_d=0.05, alpha_r=0.02):
    u = sample_policy_action(model, tensors, batch.oh, batch.z, rng)
    x = critic_x(batch.oh, batch.s, batch.p)
    inp = ag.concat([ag.Tensor(x), u, ag.Tensor(batch.z)], -1)
    F = model.apply("F", inp)
    fz = (F * batch.z).sum(axis=-1)
    qd = model.apply("QD", inp)
    qr = model.apply("QR", inp)
    return actor_loss_from_values(fz, qd, qr, alpha_d, alpha_r)
