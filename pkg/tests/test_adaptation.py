import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fbzero import adaptation, evaluation, fbcore

from conftest import tiny_model


def _analytic(target):
    def J(z):
        z = np.atleast_2d(z).astype(np.float64)
        return -np.sum((z - target) ** 2, axis=-1)
    return J


def test_cem_analytic_objective():
    d = 8
    rng = np.random.default_rng(0)
    z_init, target = fbcore.uniform_sphere(2, d, rng)
    z, hist = adaptation.cem_adapt(z_init, _analytic(target), adaptation.CemConfig(seed=1))
    best = [h["best_j"] for h in hist]
    assert len(hist) == 21
    assert all(b1 >= b0 for b0, b1 in zip(best, best[1:]))
    assert best[-1] > best[0]
    assert _analytic(target)(z)[0] == pytest.approx(best[-1])
    assert abs(np.linalg.norm(z.astype(np.float64)) - math.sqrt(d)) < 1e-5


def test_top_k_example():
    assert list(adaptation.top_k([3, 1, 4, 1, 5], 2)) == [4, 2]


def test_cem_zero_std_returns_init():
    z_init = fbcore.uniform_sphere(1, 4, np.random.default_rng(2))[0]
    target = -z_init
    z, hist = adaptation.cem_adapt(z_init, _analytic(target), adaptation.CemConfig(init_std=0.0, iterations=3))
    assert np.array_equal(z, z_init)
    assert hist[-1]["best_j"] == hist[0]["best_j"]


def test_cem_deterministic():
    rng = np.random.default_rng(3)
    z_init, target = fbcore.uniform_sphere(2, 5, rng)
    a = adaptation.cem_adapt(z_init, _analytic(target), adaptation.CemConfig(iterations=4, seed=7))
    b = adaptation.cem_adapt(z_init, _analytic(target), adaptation.CemConfig(iterations=4, seed=7))
    assert np.array_equal(a[0], b[0]) and a[1] == b[1]


def test_cem_all_nonfinite_aborts():
    with pytest.raises(adaptation.AdaptationError):
        adaptation.cem_adapt(np.ones(4), lambda z: np.full(len(np.atleast_2d(z)), np.nan), adaptation.CemConfig())


def test_noise_schedule_example():
    cfg = adaptation.AnnealConfig(base_std=0.2, beta1=0.85, beta2=0.9, chunks=4)
    sig = adaptation.noise_schedule(cfg, 2)
    assert sig[-1] == pytest.approx(0.2 * 0.85**2)
    assert sig[-1] == pytest.approx(0.1445)
    assert np.all(np.diff(sig) > 0)
    assert np.all(adaptation.noise_schedule(cfg, 3) < sig)


def _seq_objective(target):
    def J(zs):
        zs = np.asarray(zs, dtype=np.float64)
        if zs.ndim == 2:
            zs = zs[None]
        return -np.sum((zs - target) ** 2, axis=(1, 2))
    return J


def test_anneal_keeps_best_and_stays_on_sphere():
    rng = np.random.default_rng(4)
    L, d = 6, 3
    init = fbcore.uniform_sphere(L, d, rng)
    target = fbcore.uniform_sphere(L, d, rng)
    cfg = adaptation.AnnealConfig(particles=64, iterations=6, chunks=3, seed=0)
    best, hist = adaptation.annealed_traj_opt(init, _seq_objective(target), cfg)
    b = [h["best_j"] for h in hist]
    assert all(y >= x for x, y in zip(b, b[1:]))
    assert _seq_objective(target)(best)[0] == pytest.approx(b[-1])
    assert np.allclose(np.linalg.norm(best.astype(np.float64), axis=1), math.sqrt(d), atol=1e-5)


def test_anneal_single_particle_and_zero_noise():
    rng = np.random.default_rng(5)
    init = fbcore.uniform_sphere(4, 3, rng)
    J = _seq_objective(fbcore.uniform_sphere(4, 3, rng))
    best, hist = adaptation.annealed_traj_opt(init, J, adaptation.AnnealConfig(particles=1, iterations=3, chunks=2))
    assert len(hist) == 4 and np.all(np.isfinite(best))
    still, _ = adaptation.annealed_traj_opt(init, J, adaptation.AnnealConfig(particles=8, base_std=0.0, chunks=2))
    assert np.allclose(still, init, atol=1e-6)


@settings(max_examples=20, deadline=None)
@given(L=st.integers(1, 40), n=st.integers(1, 10))
def test_chunk_index_contiguous(L, n):
    cid, k = adaptation.chunk_index(L, n)
    assert k == min(n, L)
    assert cid[0] == 0 and cid[-1] == k - 1
    assert np.all(np.diff(cid) >= 0) and np.all(np.diff(cid) <= 1)


def test_eval_objective_examples():
    env, model = tiny_model("arm2", latent=3)
    z = fbcore.uniform_sphere(2, 3, np.random.default_rng(0))
    none = adaptation.AdaptObjective(task="none", alpha_r=0.0, rollout_len=10, episodes_per_eval=2)
    assert np.all(adaptation.eval_objective(z, none, env, model) == 0.0)

    obj = adaptation.AdaptObjective(task="raise", alpha_r=0.0, rollout_len=15, episodes_per_eval=3, seed=4)
    task = evaluation.TaskSpec("reward", "raise", episode_len=15, episodes=3)
    for k in range(2):
        # one candidate per call, so both rollouts see the same random stream
        jk = adaptation.eval_objective(z[k], obj, env, model)
        ret = evaluation.run_reward_task(model, env, task, z[k], np.random.default_rng(4))
        assert jk == pytest.approx(ret.mean(), rel=1e-6)
    j = adaptation.eval_objective(z, obj, env, model)
    assert np.array_equal(j, adaptation.eval_objective(z, obj, env, model))

    lift = adaptation.AdaptObjective(task="lift-still", alpha_r=0.0, rollout_len=12, episodes_per_eval=1)
    jl = adaptation.eval_objective(z, lift, env, model)
    assert np.all(jl == np.round(jl)) and np.all((0 <= jl) & (jl <= 12))


def test_eval_objective_penalties_lower_j():
    env, model = tiny_model("arm2", latent=3)
    z = fbcore.uniform_sphere(3, 3, np.random.default_rng(1))
    base = adaptation.AdaptObjective(task="raise", alpha_r=0.0, rollout_len=10, episodes_per_eval=1)
    pen = adaptation.with_overrides(base, alpha_r=1.0)
    assert np.all(adaptation.eval_objective(z, pen, env, model) <= adaptation.eval_objective(z, base, env, model))


def test_objective_validation():
    env, model = tiny_model("arm2", latent=3)
    with pytest.raises(ValueError):
        adaptation.eval_objective(np.ones(3), adaptation.AdaptObjective(episodes_per_eval=0), env, model)
    with pytest.raises(ValueError):
        adaptation.eval_objective(np.ones(3), adaptation.AdaptObjective(env_overrides={"wind": 1.0}, rollout_len=5),
                                  env, model)
    with pytest.raises(ValueError):
        adaptation.CemConfig(population=2).validate()
    with pytest.raises(ValueError):
        adaptation.AnnealConfig(beta1=1.0).validate()
