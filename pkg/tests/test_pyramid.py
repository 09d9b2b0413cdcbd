import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mra_attention.pyramid import build_pyramid


def block_mean_oracle(X, s):
    n = X.shape[0]
    return np.array([X[s * i : s * i + s].sum(axis=0) / s for i in range(n // s)])


def test_small_by_hand():
    pyr = build_pyramid(np.array([[1.0], [2.0], [3.0], [4.0]]), 4)
    np.testing.assert_array_equal(pyr.level(2), [[1.5], [3.5]])
    np.testing.assert_array_equal(pyr.level(4), [[2.5]])
    assert sorted(pyr.levels) == [1, 2, 4]


def test_constant_levels():
    pyr = build_pyramid(np.full((16, 3), 0.7), 16)
    for s, lvl in pyr.levels.items():
        assert lvl.shape == (16 // s, 3)
        np.testing.assert_array_equal(lvl, 0.7)


def test_block_means_random():
    X = np.random.default_rng(0).normal(size=(64, 8))
    pyr = build_pyramid(X, 64)
    assert pyr.level(1) is not None and np.array_equal(pyr.level(1), X)
    for s in (2, 4, 8, 16, 32, 64):
        np.testing.assert_allclose(pyr.level(s), block_mean_oracle(X, s), rtol=0, atol=1e-14)


def test_recursion_recomputable():
    X = np.random.default_rng(1).normal(size=(32, 4))
    pyr = build_pyramid(X, 32)
    for s in (2, 4, 8, 16, 32):
        prev = pyr.level(s // 2)
        np.testing.assert_array_equal(pyr.level(s), 0.5 * prev[0::2] + 0.5 * prev[1::2])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(-3, 3), st.floats(-3, 3))
def test_linearity_and_mean(seed, a, b):
    rng = np.random.default_rng(seed)
    X, Y = rng.normal(size=(2, 32, 3))
    px, py = build_pyramid(X, 16), build_pyramid(Y, 16)
    pz = build_pyramid(a * X + b * Y, 16)
    for s in pz.levels:
        np.testing.assert_allclose(pz.level(s), a * px.level(s) + b * py.level(s), atol=1e-13)
        np.testing.assert_allclose(px.level(s).mean(axis=0), X.mean(axis=0), atol=1e-14)


def test_non_power_of_two_n_allowed():
    pyr = build_pyramid(np.ones((24, 2)), 8)
    assert pyr.level(8).shape == (3, 2)


@pytest.mark.parametrize("rows, s", [(16, 3), (16, 32), (24, 16)])
def test_bad_scales(rows, s):
    with pytest.raises(ValueError):
        build_pyramid(np.ones((rows, 2)), s)


def test_missing_level():
    pyr = build_pyramid(np.ones((8, 1)), 2)
    with pytest.raises(KeyError):
        pyr.level(4)
