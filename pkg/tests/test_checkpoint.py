import numpy as np
import pytest

from fbzero import toyenv, trainer
from fbzero.nets import checkpoint as ckpt
from fbzero.nets.store import Dims, Model, ModelConfig


def _model(latent):
    env = toyenv.EnvConfig(env_kind="arm2", history_len=1)
    mc = ModelConfig(latent_dim=latent, critic_hidden=8, actor_hidden=8, b_hidden=8, d_hidden=8)
    return env, mc, Model(Dims.from_env(env, latent), mc, seed=0)


def _save(path, env, mc, model):
    from dataclasses import asdict
    extra = {"dims": asdict(model.dims), "model": asdict(mc), "env": trainer.env_to_dict(env)}
    ckpt.save(path, model.params, trainer.model_hash(env, mc), step=7, extra=extra)


def test_roundtrip(tmp_path):
    env, mc, model = _model(4)
    path = str(tmp_path / "m.ckpt")
    _save(path, env, mc, model)
    loaded, env2, header, _ = trainer.load_model(path, trainer.model_hash(env, mc))
    assert header["step"] == 7
    assert env2 == env
    for k, v in model.params.items():
        assert np.array_equal(loaded.params[k], v)
    oh = np.zeros((3, loaded.dims.history), np.float32)
    z = np.ones((3, 4), np.float32)
    assert np.array_equal(loaded.act(oh, z), model.act(oh, z))


def test_truncated_file_rejected(tmp_path):
    env, mc, model = _model(4)
    path = tmp_path / "m.ckpt"
    _save(str(path), env, mc, model)
    data = path.read_bytes()
    path.write_bytes(data[:-10])
    with pytest.raises(ckpt.IntegrityError):
        ckpt.load(str(path))
    flipped = bytearray(data)
    flipped[-5] ^= 0xFF
    path.write_bytes(bytes(flipped))
    with pytest.raises(ckpt.IntegrityError):
        ckpt.load(str(path))
    path.write_bytes(b"garbage\n")
    with pytest.raises(ckpt.IntegrityError):
        ckpt.load(str(path))


def test_hash_mismatch_refused(tmp_path):
    env, mc, model = _model(4)
    path = str(tmp_path / "m.ckpt")
    _save(path, env, mc, model)
    with pytest.raises(ckpt.ConfigHashMismatch) as info:
        trainer.load_model(path, "deadbeef")
    assert info.value.expected == "deadbeef"
    assert info.value.found == trainer.model_hash(env, mc)
    trainer.load_model(path, "deadbeef", check_hash=False)


def test_shape_mismatch_names_tensor(tmp_path):
    env, mc32, m32 = _model(32)
    _, _, m64 = _model(64)
    path = str(tmp_path / "m.ckpt")
    _save(path, env, mc32, m32)
    expected = {k: v.shape for k, v in m64.params.items()}
    with pytest.raises(ckpt.ShapeMismatch) as info:
        ckpt.load(path, expected_shapes=expected)
    assert expected[info.value.name] != m32.params[info.value.name].shape


def test_atomic_write_leaves_no_temp(tmp_path):
    env, mc, model = _model(4)
    _save(str(tmp_path / "m.ckpt"), env, mc, model)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["m.ckpt"]
