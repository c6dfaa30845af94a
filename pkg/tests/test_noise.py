import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from irrdrift.gridfn import from_callable
from irrdrift.noise import (
    SamplePath,
    bm_increments,
    gen_bm,
    gen_environment,
    gen_fbm,
    import_environment,
)


def test_sample_path_validation():
    with pytest.raises(ValueError):
        SamplePath(0.0, 0.0, [0.0, 1.0])
    with pytest.raises(ValueError):
        SamplePath(0.0, 0.1, [0.0, np.nan])


def test_single_point_path():
    p = gen_bm(4, 0.0, 0.1, 1)
    np.testing.assert_array_equal(p.values, [0.0])
    assert p.horizon == 0.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**63 - 1), st.integers(1, 300), st.floats(1e-4, 1.0))
def test_bm_reproducible_bitwise(seed, n, dt):
    a = gen_bm(seed, 0.0, dt, n)
    b = gen_bm(seed, 0.0, dt, n)
    np.testing.assert_array_equal(a.values, b.values)
    assert a.values[0] == 0.0
    assert a.t[1] - a.t[0] == pytest.approx(dt) if n > 1 else True


def test_bm_increments_independent_of_batching():
    full = bm_increments(9, 3000, 5, 0.01)
    part = bm_increments(9, 700, 5, 0.01, first_path=1500)
    np.testing.assert_array_equal(full[1500:2200], part)


def test_bm_terminal_moments():
    # W_1 over 1e5 paths: mean 0 and variance 1 within 3 standard errors
    n = 100_000
    w = bm_increments(0, n, 1, 1.0)[:, 0]
    assert abs(w.mean()) < 3 / np.sqrt(n)
    assert abs(w.var(ddof=1) - 1.0) < 3 * np.sqrt(2 / (n - 1))


def test_fbm_covariance_hurst_04():
    # E[B_0.5 B_1] = (0.5^0.8 + 1 - 0.5^0.8) / 2 = 0.5
    n = 10_000
    prod = np.array([gen_fbm(s, 0.4, 0.0, 0.5, 3).values[1:].prod() for s in range(n)])
    assert abs(prod.mean() - 0.5) < 3 * prod.std(ddof=1) / np.sqrt(n)


def test_fbm_half_is_brownian():
    n, m, dt = 10_000, 4, 0.25
    inc = np.array([np.diff(gen_fbm(s, 0.5, 0.0, dt, m + 1).values) for s in range(n)])
    cov = np.cov(inc, rowvar=False)
    # sample covariance of iid N(0, dt): entry SE is dt * sqrt(2/n) on the diagonal, dt / sqrt(n) off it
    se = np.where(np.eye(m, dtype=bool), dt * np.sqrt(2.0 / n), dt / np.sqrt(n))
    assert np.all(np.abs(cov - dt * np.eye(m)) < 3 * se)


def test_fbm_methods_agree_in_law():
    c = np.array([gen_fbm(s, 0.3, 0.0, 0.1, 11, method="cholesky").values[-1] for s in range(4000)])
    e = np.array([gen_fbm(s, 0.3, 0.0, 0.1, 11, method="circulant").values[-1] for s in range(4000)])
    var = 1.0**0.6
    for v in (c, e):
        assert abs(v.var(ddof=1) - var) < 3 * var * np.sqrt(2 / 3999)


def test_fbm_rejects_hurst():
    with pytest.raises(ValueError):
        gen_fbm(0, 1.0, 0.0, 0.1, 10)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**9), st.floats(0.35, 0.95))
def test_environment_anchored_and_bounded(seed, hurst):
    env = gen_environment(seed, hurst, 2.0, 401)
    assert env(0.0) == 0.0
    z1, z2 = env.bounds()
    e = np.exp(env.grid.values)
    assert np.all(z1 <= e) and np.all(e <= z2)


def test_environment_branches_independent():
    n = 4000
    pairs = np.array([[gen_environment(s, 0.5, 1.0, 3).grid.values[i] for i in (0, 2)] for s in range(n)])
    r = np.mean(pairs[:, 0] * pairs[:, 1])
    se = np.std(pairs[:, 0] * pairs[:, 1], ddof=1) / np.sqrt(n)
    assert abs(r) < 3 * se


def test_environment_low_hurst():
    with pytest.warns(UserWarning):
        env = gen_environment(0, 0.25, 1.0, 101)
    assert not env.spde_ready
    with pytest.raises(ValueError, match="1/3"):
        gen_environment(0, 0.25, 1.0, 101, for_spde=True)
    with pytest.raises(ValueError):
        gen_environment(0, 0.5, 1.0, 100)


def test_environment_subsample_keeps_origin():
    env = gen_environment(2, 0.5, 2.0, 4097)
    sub = env.subsample(16)
    assert sub.grid.n_points == 257
    assert sub(0.0) == 0.0
    np.testing.assert_array_equal(sub.grid.values, env.grid.values[::16])
    with pytest.raises(ValueError):
        env.subsample(3)


def test_import_environment_reanchors():
    g = from_callable(lambda x: 1.0 + np.sin(x), -1.0, 1.0, 21)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        env = import_environment(g, 0.5)
    assert env(0.0) == 0.0
    assert not import_environment(g, 0.2).spde_ready
