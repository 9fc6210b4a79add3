import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fbzero import toyenv


def _state(env, q=(0, 0), qd=(0, 0), params=None, prev=(0, 0)):
    if params is None:
        params = [1.0, 0.0, 1.0, 0.0]
    return toyenv.PrivilegedState(
        q=np.array([q], dtype=np.float32), qd=np.array([qd], dtype=np.float32),
        prev_action=np.array([prev], dtype=np.float32), params=np.array([params], dtype=np.float32),
        step_index=np.zeros(1, dtype=np.int64))


def test_config_validation():
    with pytest.raises(ValueError):
        toyenv.EnvConfig(dt=0.0)
    with pytest.raises(ValueError):
        toyenv.EnvConfig(episode_len=1)
    with pytest.raises(ValueError):
        toyenv.EnvConfig(push_prob=1.5)
    with pytest.raises(ValueError):
        toyenv.EnvConfig(dr_ranges={"mass_scale": (1, 0.5), "friction": (0, 0),
                                    "gain_scale": (1, 1), "action_offset": (0, 0)})
    with pytest.raises(ValueError):
        toyenv.EnvConfig(env_kind="humanoid")


def test_dims():
    pm = toyenv.EnvConfig()
    arm = toyenv.EnvConfig(env_kind="arm2", history_len=3)
    assert (pm.obs_dim, pm.act_dim, pm.state_dim) == (4, 2, 4)
    assert arm.state_dim == 10
    assert arm.history_dim == 3 * 6 + 4


def test_randomize_degenerate_interval(rng):
    cfg = toyenv.EnvConfig(dr_ranges={"mass_scale": (1, 1), "friction": (0, 0.5),
                                      "gain_scale": (1, 1), "action_offset": (0, 0)})
    p = toyenv.randomize(cfg, rng, 50)
    assert np.all(p[:, 0] == 1.0)


def test_randomize_wide_friction_interval(rng):
    cfg = toyenv.EnvConfig(dr_ranges={"mass_scale": (1, 1), "friction": (-0.5, 1.25),
                                      "gain_scale": (1, 1), "action_offset": (0, 0)})
    c = toyenv.randomize(cfg, rng, 2000)[:, 1]
    assert c.min() >= -0.5 and c.max() <= 1.25
    assert c.min() < -0.4 and c.max() > 1.15


def test_randomize_deterministic():
    cfg = toyenv.EnvConfig()
    a = toyenv.randomize(cfg, np.random.default_rng(7), 5)
    b = toyenv.randomize(cfg, np.random.default_rng(7), 5)
    assert np.array_equal(a, b)


def test_reset_sources(rng):
    cfg = toyenv.EnvConfig()
    st_, hist = toyenv.reset(cfg, rng, ["default"])
    assert np.all(st_.q == 0) and np.all(st_.qd == 0)
    feats = np.array([[0.5, -0.25, 0.1, 0.2], [1, 1, 0, 0]], dtype=np.float32)
    st_, _ = toyenv.reset(cfg, rng, [toyenv.MotionFrame(feats, 0)])
    assert np.array_equal(st_.q[0], feats[0, :2]) and np.array_equal(st_.qd[0], feats[0, 2:])
    with pytest.raises(toyenv.InvalidInitError):
        toyenv.reset(cfg, rng, [toyenv.MotionFrame(feats, 2)])
    st_, _ = toyenv.reset(cfg, rng, ["fall"] * 200)
    assert np.abs(st_.q).max() <= 2.0 and np.abs(st_.qd).max() <= 1.0


def test_reset_history_zero_padded(rng):
    cfg = toyenv.EnvConfig(history_len=3)
    _, hist = toyenv.reset(cfg, rng, ["default", "fall"])
    flat = hist.flat()
    assert flat.shape == (2, cfg.history_dim)
    assert np.all(flat[:, : 3 * 6] == 0)


def test_step_examples():
    cfg = toyenv.EnvConfig(push_prob=0.0).nominal()
    rng = np.random.default_rng(0)
    nxt, obs, aux = toyenv.step(cfg, _state(cfg), np.array([[1.0, 0.0]]), rng)
    assert np.allclose(nxt.qd[0], [0.05, 0.0], atol=1e-7)
    assert np.allclose(nxt.q[0], [0.0025, 0.0], atol=1e-7)
    nxt, _, _ = toyenv.step(cfg, _state(cfg, qd=(1, 0), params=[1, 1, 1, 0]), np.zeros((1, 2)), rng)
    assert np.allclose(nxt.qd[0], [0.95, 0.0], atol=1e-7)
    assert np.allclose(nxt.q[0], [0.0475, 0.0], atol=1e-7)


def test_action_rate_zero_for_repeated_action(rng):
    cfg = toyenv.EnvConfig()
    s = _state(cfg, prev=(0.3, -0.2))
    _, _, aux = toyenv.step(cfg, s, np.array([[0.3, -0.2]]), rng)
    assert aux[0, 0] == 0.0


def test_arm2_pd_target_and_clamp():
    cfg = toyenv.EnvConfig(env_kind="arm2").nominal()
    rng = np.random.default_rng(0)
    nxt, _, _ = toyenv.step(cfg, _state(cfg), np.array([[0.5, 0.0]]), rng)
    # tau = 20 * (pi/2 - 0), qdd = tau
    assert nxt.qd[0, 0] == pytest.approx(0.05 * 20 * math.pi / 2, rel=1e-6)
    s = _state(cfg, q=(3.1, 0), qd=(5, 0))
    nxt, _, _ = toyenv.step(cfg, s, np.array([[1.0, 0.0]]), rng)
    assert nxt.q[0, 0] == pytest.approx(math.pi) and nxt.qd[0, 0] == 0.0


def test_pointmass_periodic_arena():
    cfg = toyenv.EnvConfig(push_prob=0.0).nominal()
    s = _state(cfg, q=(2.49, 0), qd=(1, 0))
    nxt, _, _ = toyenv.step(cfg, s, np.zeros((1, 2)), np.random.default_rng(0))
    assert nxt.q[0, 0] == pytest.approx(-2.46, abs=1e-5)
    assert nxt.qd[0, 0] == 1.0


def test_observe_noise_bounds():
    cfg = toyenv.EnvConfig(noise_scales={"pose": 0.01, "velocity": 0.0})
    s = _state(cfg, q=(0.3, 0.4), qd=(1, 2))
    s = toyenv.PrivilegedState(*(np.repeat(a, 500, axis=0) for a in
                                 (s.q, s.qd, s.prev_action, s.params, s.step_index)))
    o = toyenv.observe(cfg, s, np.random.default_rng(1))
    assert np.all(np.abs(o[:, :2] - s.q) <= 0.01 + 1e-7)
    assert np.array_equal(o[:, 2:], s.qd)
    quiet = toyenv.EnvConfig(noise_scales={"pose": 0.0, "velocity": 0.0})
    assert np.array_equal(toyenv.observe(quiet, s, np.random.default_rng(1)), np.concatenate([s.q, s.qd], 1))
    a = toyenv.observe(cfg, s, np.random.default_rng(3))
    b = toyenv.observe(cfg, s, np.random.default_rng(3))
    assert np.array_equal(a, b)


def _roll(cfg, seed, actions):
    rng = np.random.default_rng(seed)
    s, hist = toyenv.reset(cfg, rng, ["fall", "default"])
    out = []
    for a in actions:
        s, o, aux = toyenv.step(cfg, s, a, rng)
        hist.push(a, o)
        out.append((s.q.copy(), s.qd.copy(), o, aux, hist.flat()))
    return out


action_seqs = st.lists(st.floats(-3, 3, allow_nan=False, width=32), min_size=4 * 6, max_size=4 * 6)


@settings(max_examples=25, deadline=None)
@given(vals=action_seqs, seed=st.integers(0, 2**16), kind=st.sampled_from(toyenv.ENV_KINDS))
def test_determinism_and_action_clamping(vals, seed, kind):
    cfg = toyenv.EnvConfig(env_kind=kind, push_prob=0.3)
    acts = np.array(vals, dtype=np.float32).reshape(6, 2, 2)
    a = _roll(cfg, seed, acts)
    b = _roll(cfg, seed, acts)
    c = _roll(cfg, seed, np.clip(acts, -1, 1))
    for x, y, z in zip(a, b, c):
        for u, v in zip(x, y):
            assert np.array_equal(u, v)
        # physics, observations and penalties see only the clamped command
        for u, w in zip(x[:4], z[:4]):
            assert np.array_equal(u, w)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**16), kind=st.sampled_from(toyenv.ENV_KINDS))
def test_aux_nonpositive_and_zero_iff_inactive(seed, kind):
    cfg = toyenv.EnvConfig(env_kind=kind)
    rng = np.random.default_rng(seed)
    s, _ = toyenv.reset(cfg, rng, ["fall"] * 8)
    for _ in range(5):
        a = rng.uniform(-1, 1, (8, 2))
        prev = s.prev_action.copy()
        s, _, aux = toyenv.step(cfg, s, a, rng)
        assert np.all(aux <= 0)
        clip_a = np.clip(a, -1, 1).astype(np.float32)
        active = (np.any(clip_a != prev, axis=1)
                  | np.any(np.abs(s.q) > cfg.pose_limit, axis=1)
                  | np.any(np.abs(s.qd) > cfg.velocity_limit, axis=1))
        assert np.array_equal(np.any(aux < 0, axis=1), active)


@settings(max_examples=25, deadline=None)
@given(steps=st.integers(0, 6), hl=st.integers(1, 5))
def test_history_zero_slots(steps, hl):
    cfg = toyenv.EnvConfig(history_len=hl)
    rng = np.random.default_rng(0)
    s, hist = toyenv.reset(cfg, rng, ["fall"])
    for _ in range(steps):
        a = np.full((1, 2), 0.5)
        s, o, _ = toyenv.step(cfg, s, a, rng)
        hist.push(a, o)
    pairs = hist.pairs[0]
    zero = max(0, hl - steps)
    assert np.all(pairs[:zero] == 0)
    assert np.all(np.any(pairs[zero:] != 0, axis=1))


@settings(max_examples=25, deadline=None)
@given(c=st.floats(0.01, 1.0), v=st.tuples(st.floats(-2, 2), st.floats(-2, 2)))
def test_energy_decay_without_push(c, v):
    cfg = toyenv.EnvConfig(push_prob=0.0, dr_ranges={"mass_scale": (1, 1), "friction": (c, c),
                                                     "gain_scale": (1, 1), "action_offset": (0, 0)})
    s = _state(cfg, qd=v, params=[1.0, c, 1.0, 0.0])
    rng = np.random.default_rng(0)
    speed = np.linalg.norm(s.qd)
    for _ in range(20):
        s, _, _ = toyenv.step(cfg, s, np.zeros((1, 2)), rng)
        nxt = np.linalg.norm(s.qd)
        assert nxt <= speed + 1e-7
        speed = nxt


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blowup_detected():
    cfg = toyenv.EnvConfig(push_prob=0.0)
    s = _state(cfg, qd=(np.inf, 0))
    with pytest.raises(toyenv.NumericalBlowUp):
        toyenv.step(cfg, s, np.zeros((1, 2)), np.random.default_rng(0))


def test_end_effector():
    assert np.allclose(toyenv.end_effector(np.array([0.0, 0.0])), [2.0, 0.0])
    assert np.allclose(toyenv.end_effector(np.array([math.pi / 2, 0.0])), [0.0, 2.0], atol=1e-12)
