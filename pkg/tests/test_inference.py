import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fbzero import fbcore, inference, motions

from conftest import tiny_model


def test_reward_embedding_constant():
    b = np.tile([0.3, -1.2, 0.5], (7, 1))
    z = inference.reward_embedding_from_values(b, np.ones(7))
    assert np.allclose(z, fbcore.project_sphere(b[0]), atol=1e-6)


def test_reward_embedding_example():
    b = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    r = np.array([1.0, 0.0, 2.0])
    raw = inference.reward_embedding_from_values(b, r, raw=True)
    assert np.allclose(raw, [1.0, 2.0 / 3.0], atol=1e-6)
    z = inference.reward_embedding_from_values(b, r)
    # oracle: rescale the hand-computed mean to norm sqrt(2)
    want = np.array([1.0, 2.0 / 3.0]) * math.sqrt(2) / (math.sqrt(13) / 3)
    assert np.allclose(z, want, atol=1e-6)
    assert np.allclose(z, [1.1767, 0.7845], atol=1e-4)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), c=st.floats(1e-3, 1e3))
def test_reward_embedding_positive_scale_and_duplication(seed, c):
    rng = np.random.default_rng(seed)
    b = rng.standard_normal((9, 4))
    r = rng.uniform(0.1, 1.0, 9)
    z = inference.reward_embedding_from_values(b, r)
    assert np.allclose(inference.reward_embedding_from_values(b, c * r), z, atol=1e-5)
    assert np.allclose(inference.reward_embedding_from_values(np.vstack([b, b]), np.concatenate([r, r])), z,
                       atol=1e-5)
    assert abs(np.linalg.norm(z) - 2.0) < 1e-5


def test_reward_embedding_errors():
    with pytest.raises(inference.UninformativeRewardError):
        inference.reward_embedding_from_values(np.ones((3, 2)), np.zeros(3))
    with pytest.raises(ValueError):
        inference.reward_embedding_from_values(np.ones((0, 2)), np.zeros(0))
    with pytest.raises(ValueError):
        inference.reward_embedding_from_values(np.ones((2, 2)), [1.0, np.nan])


def test_tracking_examples():
    b = np.array([[1.0, 0.0], [0.0, 1.0]])
    z = inference.tracking_from_values(b, 1)
    assert np.allclose(z, [[1.0, 1.0], [0.0, math.sqrt(2)]], atol=1e-6)
    assert np.allclose(inference.tracking_from_values(b, 0), fbcore.project_sphere(b), atol=1e-7)
    const = inference.tracking_from_values(np.tile([0.2, 0.9], (5, 1)), 3)
    assert np.allclose(const, const[0], atol=1e-7)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), T=st.integers(1, 12), H=st.integers(0, 15))
def test_tracking_matches_loop_oracle(seed, T, H):
    b = np.random.default_rng(seed).standard_normal((T, 3))
    z = inference.tracking_from_values(b, H)
    assert z.shape == (T, 3)
    for t in range(T):
        s = sum(b[k] for k in range(t, min(t + H, T - 1) + 1))
        if np.linalg.norm(s) > 1e-3:
            assert np.allclose(z[t], np.sqrt(3) * s / np.linalg.norm(s), atol=1e-4)


def test_goal_and_tracking_on_model():
    env, model = tiny_model(latent=4)
    rng = np.random.default_rng(0)
    s = rng.standard_normal((6, 4)).astype(np.float32)
    o = rng.standard_normal((6, 4)).astype(np.float32)
    mot = motions.Motion("m", o, s)
    zs = inference.tracking_embeddings(model, mot, 0)
    goals = np.stack([inference.goal_embedding(model, s[t], o[t]) for t in range(6)])
    assert np.allclose(zs, goals, atol=1e-6)
    assert np.array_equal(inference.goal_embedding(model, s[2], o[2]), inference.goal_embedding(model, s[2], o[2]))
    one = fbcore.encode_trajectory(model, s[2:3], o[2:3])
    assert np.allclose(goals[2], one, atol=1e-6)


def test_q_estimate_examples():
    assert inference.q_estimate_from_values(np.array([1.0, 2.0]), np.array([1.0, 1.0])) == pytest.approx(3.0)
    assert inference.q_estimate_from_values(np.array([1.0, 2.0]), np.zeros(2)) == 0.0
    ens = np.array([[[1.0, 2.0]], [[0.0, 1.0]]])
    assert inference.q_estimate_from_values(ens, np.array([1.0, 1.0]))[0] == pytest.approx(1.0)


def test_act_bounds_and_determinism():
    env, model = tiny_model(latent=3)
    rng = np.random.default_rng(0)
    oh = 50 * rng.standard_normal((32, model.dims.history)).astype(np.float32)
    z = fbcore.uniform_sphere(32, 3, rng)
    for mode in ("eval", "sample"):
        a = inference.act(model, oh, z, mode=mode, rng=np.random.default_rng(1))
        assert np.all(np.abs(a) <= 1.0)
    assert np.array_equal(inference.act(model, oh, z), inference.act(model, oh, z))


def test_sample_mean_matches_eval_at_min_std():
    env, model = tiny_model(latent=3, seed=5)
    act_dim = model.dims.act
    head_w, head_b = model.params["pi/head/w"].copy(), model.params["pi/head/b"].copy()
    head_w[:, act_dim:] = 0.0
    head_b[:, act_dim:] = -20.0  # clipped to the minimum log-std
    model.params["pi/head/w"], model.params["pi/head/b"] = head_w, head_b
    rng = np.random.default_rng(2)
    oh = rng.standard_normal((1, model.dims.history)).astype(np.float32)
    z = fbcore.uniform_sphere(1, 3, rng)
    ev = inference.act(model, oh, z)[0].astype(np.float64)
    n = 10_000
    draws = inference.act(model, np.repeat(oh, n, 0), np.repeat(z, n, 0), mode="sample",
                          rng=np.random.default_rng(3)).astype(np.float64)
    sigma = math.exp(-5.0)
    assert np.all(np.abs(draws.mean(0) - ev) < 3 * sigma / 100)


def test_slerp_examples():
    z0 = np.array([math.sqrt(2), 0.0])
    z1 = np.array([0.0, math.sqrt(2)])
    assert np.allclose(inference.slerp(z0, z1, 0.5), [1.0, 1.0], atol=1e-6)
    assert np.allclose(inference.slerp(z0, z1, 0.0), z0, atol=1e-7)
    assert np.allclose(inference.slerp(z0, z1, 1.0), z1, atol=1e-7)
    with pytest.raises(inference.UndefinedGeodesicError):
        inference.slerp(z0, -z0, 0.5)
    near = inference.slerp(z0, z0 + np.array([0.0, 1e-9]), 0.3)
    assert np.allclose(near, z0, atol=1e-6)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6), d=st.integers(2, 16), t=st.floats(0, 1))
def test_slerp_properties(seed, d, t):
    rng = np.random.default_rng(seed)
    z0, z1 = fbcore.uniform_sphere(2, d, rng).astype(np.float64)
    if np.dot(z0, z1) / d < -0.999:
        return
    a = inference.slerp(z0, z1, t)
    assert abs(np.linalg.norm(a.astype(np.float64)) - math.sqrt(d)) < 1e-5
    assert np.allclose(a, inference.slerp(z1, z0, 1 - t), atol=1e-5)
