import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from irrdrift.gridfn import GridFunction, from_callable
from irrdrift.noise import SamplePath, gen_bm, gen_environment, gen_fbm
from irrdrift.regcalc import (
    DivergedError,
    EpsilonSweep,
    covariation,
    cubic_variation,
    definite_symmetric,
    definite_symmetric_integral,
    epsilon_sweep,
    forward_integral,
    ibp_window,
    lag_steps,
    shift_defect,
    symmetric_integral,
    young_integral,
)

DT = 1e-4
N = 10_001


def smooth(fn, dt=DT, n=N):
    return SamplePath(0.0, dt, fn(dt * np.arange(n)))


def bump(x, c=0.0, w=0.5):
    z = (x - c) / w
    out = np.zeros_like(x)
    inside = np.abs(z) < 1
    out[inside] = np.exp(-1 / (1 - z[inside] ** 2))
    return out


# ---------------------------------------------------------------------------
# forward and symmetric integrals


def test_forward_of_unit_integrand():
    X = smooth(lambda t: t**2)
    one = smooth(np.ones_like)
    errs = []
    for eps in (1e-2, 5e-3, 2.5e-3):
        r = forward_integral(one, X, eps)
        assert r.values.values[0] == 0.0
        assert r.epsilon == pytest.approx(eps)
        errs.append(abs(r.terminal - 1.0))
        assert errs[-1] < eps
    # constant extension past T leaves only the initial window: X(T) - eps^2 / 3
    assert errs[0] / errs[-1] == pytest.approx(16.0, rel=0.05)


def test_forward_against_bounded_variation_integrator():
    W = gen_bm(3, 0.0, DT, N)
    t = smooth(lambda s: s)
    ref = integrate.trapezoid(W.values, dx=DT)
    for eps in (1e-3, 1e-2):
        assert abs(forward_integral(W, t, eps).terminal - ref) < 10 * eps


def test_forward_ito_term():
    # int W d^-W -> (W_T^2 - W_0^2)/2 - T/2
    devs = []
    for s in range(16):
        W = gen_bm(s, 0.0, DT, N)
        target = 0.5 * W.values[-1] ** 2 - 0.5
        devs.append(abs(forward_integral(W, W, 10 * DT).terminal - target))
    assert np.median(devs) < 0.05


def test_symmetric_second_order_on_smooth_paths():
    Y = smooth(np.cos)
    X = smooth(lambda t: t**3)
    ref = integrate.quad(lambda t: np.cos(t) * 3 * t**2, 0, 1)[0]
    e1 = abs(symmetric_integral(Y, X, 1e-2).terminal - ref)
    e2 = abs(symmetric_integral(Y, X, 5e-3).terminal - ref)
    assert e1 < 1e-2 and e2 < e1


def test_symmetric_stratonovich_single_path():
    W = gen_bm(7, 0.0, DT, N)
    target = 0.5 * W.values[-1] ** 2
    got = symmetric_integral(W, W, 10 * DT).terminal
    assert abs(got - target) < 0.05 * max(abs(target), 0.1)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 40))
def test_window_identities_exact(seed, m):
    # sym = fwd + cov/2 + D/2 and the integration-by-parts window sum hold to round-off
    rng = np.random.default_rng(seed)
    n = 400
    X = SamplePath(0.0, 0.01, np.cumsum(rng.standard_normal(n)))
    Y = SamplePath(0.0, 0.01, np.cumsum(rng.standard_normal(n)))
    eps = m * 0.01
    sym = symmetric_integral(Y, X, eps).terminal
    fwd = forward_integral(Y, X, eps).terminal
    cov = covariation(Y, X, eps).terminal
    scale = 1 + abs(sym) + abs(fwd) + abs(cov)
    assert abs(sym - fwd - 0.5 * cov - 0.5 * shift_defect(Y, X, eps)) < 1e-11 * scale
    both = symmetric_integral(Y, X, eps).terminal + symmetric_integral(X, Y, eps).terminal
    assert abs(both - ibp_window(Y, X, eps)) < 1e-11 * scale


def test_ibp_window_tends_to_product():
    W = gen_bm(1, 0.0, DT, N)
    V = gen_bm(2, 0.0, DT, N)
    target = W.values[-1] * V.values[-1]
    gaps = [abs(ibp_window(V, W, e) - target) for e in (1e-2, 1e-3)]
    assert gaps[-1] < 0.05


def test_mismatched_grids():
    with pytest.raises(ValueError):
        forward_integral(gen_bm(0, 0.0, 0.1, 5), gen_bm(0, 0.0, 0.1, 6), 0.1)


# ---------------------------------------------------------------------------
# covariation


def test_brownian_bracket():
    W = gen_bm(11, 0.0, DT, N)
    sw = epsilon_sweep(lambda e: covariation(W, W, e).terminal, 1e-2, levels=5)
    assert abs(sw.extrapolated_limit - 1.0) < 0.05


def test_bracket_with_bounded_variation_vanishes():
    W = gen_bm(11, 0.0, DT, N)
    t = smooth(np.sin)
    vals = [abs(covariation(W, t, e).terminal) for e in (1e-2, 1e-3, 1e-4)]
    assert vals[0] > vals[1] > vals[2]


def test_bracket_of_functions():
    # [f(X), g(X)] against int f'(X) g'(X) d[X,X] = int f'g'(X) ds for Brownian X
    W = gen_bm(12, 0.0, DT, N)
    f, g = W.map(np.sin), W.map(lambda v: v**2)
    ref = integrate.trapezoid(np.cos(W.values) * 2 * W.values, dx=DT)
    got = covariation(f, g, 10 * DT).terminal
    assert abs(got - ref) < 0.1 * max(1.0, abs(ref))


# ---------------------------------------------------------------------------
# cubic variation


def test_cubic_smooth_path():
    X = SamplePath(0.0, 2.0**-14, np.sin(2 * np.pi * 2.0**-14 * np.arange(2**14 + 1)))
    assert abs(cubic_variation(X, 8 * X.dt).terminal) < 1e-6


@pytest.mark.parametrize("hurst", [0.4, 0.5])
def test_cubic_fbm_vanishes_and_strong_norm_bounded(hurst):
    dt, n = 2.0**-14, 2**14 + 1
    cells = (256, 64, 16, 4)
    med, strong = [], []
    for s in range(32):
        X = gen_fbm(s, hurst, 0.0, dt, n)
        med.append([abs(cubic_variation(X, c * dt).terminal) for c in cells])
        strong.append([cubic_variation(X, c * dt, strong=True).terminal for c in cells])
    med = np.median(med, axis=0)
    strong = np.median(strong, axis=0)
    assert med[-1] < med[0]
    assert strong.max() < 10 * strong.min()


# ---------------------------------------------------------------------------
# sweeps


def test_sweep_invariants():
    sw = epsilon_sweep(lambda e: 1.0 + e, 0.1, levels=4)
    assert np.all(np.diff(sw.epsilons) < 0)
    assert sw.extrapolated_limit == pytest.approx(1.0)
    assert not sw.diverged
    with pytest.raises(ValueError):
        EpsilonSweep(np.array([0.1, 0.2]), np.zeros(2), 0.0)
    assert epsilon_sweep(lambda e: 1.0 / e, 1.0, levels=4).diverged


def test_lag_steps():
    assert lag_steps(1e-3, 1e-4) == 10
    assert lag_steps(1e-9, 1e-4) == 1


# ---------------------------------------------------------------------------
# definite symmetric integral


def test_definite_against_identity_integrator():
    x = from_callable(lambda s: s, -1.0, 1.0, 2001)
    a = from_callable(bump, -1.0, 1.0, 2001)
    ref = integrate.quad(lambda s: bump(np.array([s]))[0], -0.5, 0.5)[0]
    assert definite_symmetric(a, x, 4 * x.dx) == pytest.approx(ref, abs=1e-8)


def test_definite_second_order():
    a = from_callable(bump, -1.0, 1.0, 4001)
    X = from_callable(np.sin, -1.0, 1.0, 4001)
    ref = integrate.quad(lambda s: bump(np.array([s]))[0] * np.cos(s), -0.5, 0.5)[0]
    sw = definite_symmetric_integral(a, X, levels=4)
    errs = np.abs(sw.terminal_values - ref)
    assert errs[-1] < 1e-6
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.2)


def test_definite_needs_compact_support():
    with pytest.raises(ValueError, match="vanish"):
        definite_symmetric_integral(from_callable(np.ones_like, -1, 1, 11), from_callable(np.sin, -1, 1, 11))


def test_definite_matches_young_on_brownian_environment():
    env = gen_environment(4, 0.5, 1.0, 8193).grid
    a = from_callable(bump, -1.0, 1.0, 8193)
    young = young_integral(a, env, 0.99, 0.45).values[-1]
    sym = definite_symmetric(a, env, 2 * env.dx)
    assert abs(sym - young) < 1e-2 * max(1.0, abs(young))


# ---------------------------------------------------------------------------
# Young integral


def test_young_polynomial():
    f = from_callable(lambda s: s, 0.0, 1.0, 1025)
    g = from_callable(lambda s: s**2, 0.0, 1.0, 1025)
    assert young_integral(f, g, 0.9, 0.9).values[-1] == pytest.approx(2 / 3, abs=1e-4)


def test_young_constant_integrator():
    f = from_callable(np.sin, 0.0, 1.0, 257)
    g = from_callable(lambda s: 0 * s + 2.0, 0.0, 1.0, 257)
    assert young_integral(f, g).values[-1] == 0.0


def test_young_flags_declared_exponents():
    f = from_callable(np.sin, 0.0, 1.0, 257)
    g = from_callable(lambda s: s, 0.0, 1.0, 257)
    assert not young_integral(f, g, 0.3, 0.3).meta["exponent_sum_ok"]
    assert young_integral(f, g, 0.6, 0.6).meta["exponent_sum_ok"]


def test_young_rough_pair_diverges():
    p = gen_fbm(0, 0.3, 0.0, 2.0**-12, 2**12 + 1).as_gridfunction()
    with pytest.raises(DivergedError) as info:
        young_integral(p, p, 0.25, 0.25)
    assert info.value.sweep is not None


def test_young_divergence_reported():
    f = GridFunction(0.0, 1.0, np.tile([0.0, 1.0], 8)[:-1])
    with pytest.raises(DivergedError):
        young_integral(f, f, tol=0.0, max_refine=3)


def test_young_chain_rule_under_refinement():
    res = []
    for n in (257, 1025, 4097):
        g = from_callable(lambda x: np.abs(x - 1 / 3) ** 0.6, 0.0, 1.0, n)
        F = from_callable(lambda x: np.abs(x - 0.3) ** 0.5, 0.0, 1.0, n)
        f = g.map(lambda v: np.cos(3 * v))
        G = young_integral(f, g, 0.6, 0.6)
        res.append(abs(young_integral(F, G, 0.5, 0.6).values[-1] - young_integral(F * f, g, 0.5, 0.6).values[-1]))
    assert res[0] > res[1] > res[2]
    assert res[-1] < 1e-3
