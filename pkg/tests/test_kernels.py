import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linear_sum_assignment

from fbzero import kernels
from fbzero.kernels import _pure

needs_ext = pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled extension not built")


@needs_ext
def test_compiled_matches_fallback():
    rng = np.random.default_rng(0)
    x = (rng.standard_normal((64, 33)) * 4).astype(np.float32)
    g = rng.standard_normal((64, 33)).astype(np.float32)
    gamma = rng.standard_normal(33).astype(np.float32)
    beta = rng.standard_normal(33).astype(np.float32)
    assert np.allclose(kernels._ext.mish_fwd(x), _pure.mish_fwd(x), rtol=1e-5, atol=1e-6)
    assert np.allclose(kernels._ext.mish_bwd(x, g), _pure.mish_bwd(x, g), rtol=1e-4, atol=1e-5)
    a = kernels._ext.layernorm_fwd(x, gamma, beta, 1e-6)
    b = _pure.layernorm_fwd(x, gamma, beta, 1e-6)
    for u, v in zip(a, b):
        assert np.allclose(u, v, rtol=1e-4, atol=1e-5)
    a = kernels._ext.layernorm_bwd(g, b[1], b[2], gamma)
    b = _pure.layernorm_bwd(g, b[1], b[2], gamma)
    for u, v in zip(a, b):
        assert np.allclose(u, v, rtol=1e-4, atol=1e-4)


def test_float64_uses_numpy_path():
    x = np.linspace(-3, 3, 7)
    assert np.array_equal(kernels.mish_fwd(x), _pure.mish_fwd(x))


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 9), extra=st.integers(0, 3), seed=st.integers(0, 10**6))
def test_assignment_optimal_against_scipy(n, extra, seed):
    cost = np.random.default_rng(seed).random((n, n + extra))
    cols = kernels.assign(cost)
    assert len(set(cols.tolist())) == n
    r, c = linear_sum_assignment(cost)
    assert cost[np.arange(n), cols].sum() == pytest.approx(cost[r, c].sum(), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 7), seed=st.integers(0, 10**6))
def test_fallback_assignment_optimal(n, seed):
    cost = np.random.default_rng(seed).integers(0, 5, (n, n)).astype(float)
    cols = _pure.assign(cost)
    r, c = linear_sum_assignment(cost)
    assert cost[np.arange(n), cols].sum() == cost[r, c].sum()


def test_assign_rejects_tall():
    with pytest.raises(ValueError):
        kernels.assign(np.zeros((3, 2)))
