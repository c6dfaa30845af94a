import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from irrdrift.gridfn import (
    GridFunction,
    Mollifier,
    derivative,
    estimate_holder_exponent,
    from_callable,
    holder_norm,
    interp_tolerance,
    invert_monotone,
    mollify,
    primitive,
    read_csv,
    trapezoid,
)
from irrdrift.noise import gen_fbm


def test_rejects_bad_grids():
    with pytest.raises(ValueError):
        GridFunction(1.0, 0.0, [0.0, 1.0])
    with pytest.raises(ValueError):
        GridFunction(0.0, 1.0, [1.0])
    with pytest.raises(ValueError):
        GridFunction(0.0, 1.0, [0.0, 1.0], interp="cubic")


def test_identity_reproduced_and_clamped():
    f = from_callable(lambda x: x, -1.0, 1.0, 201)
    assert f(0.5) == pytest.approx(0.5, abs=1e-15)
    assert f(7.0) == 1.0
    assert f(-7.0) == -1.0


def test_square_interpolation_error():
    # dx^2 max|f''| / 8 = 2.5e-7
    f = from_callable(lambda x: x**2, -1.0, 1.0, 2001)
    assert abs(f(0.3) - 0.09) < 1e-6
    assert interp_tolerance(f) == pytest.approx(1e-6 * 2 / 8, rel=1e-6)


@given(st.integers(2, 400), st.floats(-5, 5), st.floats(0.1, 10))
def test_spacing_and_nodes(n, a, length):
    vals = np.cos(np.arange(n) * 0.7)
    f = GridFunction(a, a + length, vals)
    assert f.dx == pytest.approx(length / (n - 1))
    np.testing.assert_allclose(np.diff(f.x), f.dx, rtol=1e-9, atol=1e-12)
    # node evaluation returns the stored value
    np.testing.assert_array_equal(f(f.x), vals)


@given(st.floats(-100, 100))
def test_clamping_outside(x):
    f = from_callable(np.sin, -1.0, 1.0, 33)
    if x <= -1.0:
        assert f(x) == f.values[0]
    elif x >= 1.0:
        assert f(x) == f.values[-1]


def test_values_are_read_only():
    f = from_callable(np.sin, 0.0, 1.0, 5)
    with pytest.raises(ValueError):
        f.values[0] = 1.0


def test_csv_roundtrip(tmp_path):
    f = from_callable(np.exp, -1.0, 2.0, 17)
    g = read_csv(f.to_csv(tmp_path / "f.csv"))
    assert (g.x_min, g.x_max) == (f.x_min, f.x_max)
    np.testing.assert_array_equal(g.values, f.values)


def test_primitive_and_derivative():
    f = from_callable(np.cos, -2.0, 2.0, 4001)
    F = primitive(f)
    assert F(0.0) == 0.0
    assert abs(F(1.0) - np.sin(1.0)) < 1e-6
    d = derivative(from_callable(np.sin, -2.0, 2.0, 4001))
    assert d.sup_distance(f) < 1e-5
    assert trapezoid(f) == pytest.approx(2 * np.sin(2.0), abs=1e-6)


# ---------------------------------------------------------------------------
# Hoelder seminorm


def test_holder_constant_is_zero():
    f = from_callable(lambda x: 3.0 + 0 * x, 0.0, 1.0, 101)
    assert holder_norm(f, 0.5).norm == 0.0


def test_holder_identity_half():
    # |t-s|^(1/2) is maximal at |t-s| = 1
    f = from_callable(lambda x: x, 0.0, 1.0, 257)
    assert holder_norm(f, 0.5).norm == pytest.approx(1.0, abs=1e-12)


def test_holder_fbm_grows_under_refinement():
    norms = []
    for k in (8, 10, 12):
        p = gen_fbm(3, 0.4, 0.0, 2.0**-k, 2**k + 1)
        norms.append(holder_norm(p.as_gridfunction(), 0.45).norm)
    assert norms[0] < norms[1] < norms[2]


def test_holder_rejects_bad_interval():
    f = from_callable(np.sin, 0.0, 1.0, 11)
    with pytest.raises(ValueError):
        holder_norm(f, 0.5, -1.0, 0.5)
    with pytest.raises(ValueError):
        holder_norm(f, 1.5)


@settings(max_examples=30)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=40), st.floats(0.05, 0.95))
def test_holder_bounds_every_pair(vals, gamma):
    f = GridFunction(0.0, 1.0, vals)
    est = holder_norm(f, gamma)
    assert est.norm >= 0.0
    x, v = f.x, f.values
    i, j = 0, len(vals) - 1
    assert abs(v[j] - v[i]) <= est.norm * abs(x[j] - x[i]) ** gamma * (1 + 1e-12) + 1e-12


def test_holder_exponent_estimates():
    p = gen_fbm(5, 0.4, 0.0, 2.0**-14, 2**14 + 1)
    assert abs(estimate_holder_exponent(p.as_gridfunction()) - 0.4) < 0.1
    assert estimate_holder_exponent(from_callable(np.sin, 0, 1, 1001)) == pytest.approx(1.0, abs=0.02)


# ---------------------------------------------------------------------------
# mollifiers


@pytest.mark.parametrize("kind", ["gaussian", "compact_bump"])
@pytest.mark.parametrize("n", [1, 4, 32])
def test_kernel_unit_mass_and_scaling(kind, n):
    from scipy import integrate

    phi = Mollifier(kind, n)
    mass = integrate.quad(phi, -phi.half_width, phi.half_width, points=[0.0], limit=200)[0]
    assert mass == pytest.approx(1.0, abs=1e-6)
    x = np.linspace(-0.5, 0.5, 11)
    np.testing.assert_allclose(phi(x), n * phi.base(n * x))


@pytest.mark.parametrize("kind", ["gaussian", "compact_bump"])
def test_affine_reproduced(kind):
    f = from_callable(lambda x: 2.0 * x - 1.0, -4.0, 4.0, 801)
    g = mollify(f, Mollifier(kind, 8))
    inner = f.restrict(-3.0, 3.0).x
    np.testing.assert_allclose(g(inner), f(inner), atol=1e-12)


def test_mollified_abs_power_converges_at_holder_rate():
    # N_{1/2}(f - f_n) decays like (1/n)^{0.2} for f = |x|^0.7
    f = from_callable(lambda x: np.abs(x) ** 0.7, -2.0, 2.0, 8001)
    norms = []
    for n in (8, 16, 32, 64):
        fn = mollify(f, Mollifier("compact_bump", n))
        norms.append(holder_norm((f - fn).restrict(-1.0, 1.0), 0.5).norm)
    ratios = np.array(norms[1:]) / np.array(norms[:-1])
    assert np.all(ratios < 1.0)
    c = np.array(norms) * np.array([8, 16, 32, 64]) ** 0.2
    assert c.max() / c.min() < 2.0


def test_two_kernels_same_limit():
    f = from_callable(np.sin, -3.0, 3.0, 6001)
    a = mollify(f, Mollifier("gaussian", 256))
    b = mollify(f, Mollifier("compact_bump", 256))
    assert a.sup_distance(b, -2.0, 2.0) < 1e-3


def test_mollifier_wider_than_domain():
    with pytest.raises(ValueError):
        mollify(from_callable(np.sin, 0.0, 1.0, 11), Mollifier("gaussian", 1))


def test_mollifier_validation():
    with pytest.raises(ValueError):
        Mollifier("box", 2)
    with pytest.raises(ValueError):
        Mollifier("gaussian", 0)


# ---------------------------------------------------------------------------
# inverses


def test_invert_identity():
    f = from_callable(lambda x: x, -1.0, 1.0, 101)
    g = invert_monotone(f)
    np.testing.assert_allclose(g(g.x), g.x, atol=1e-14)


def test_invert_closed_form():
    f = from_callable(lambda x: (1 - np.exp(-2 * x)) / 2, -2.0, 2.0, 4001)
    g = invert_monotone(f)
    assert abs(g(0.43233) - (-0.5 * np.log(1 - 2 * 0.43233))) < 1e-4
    assert abs(g(0.43233) - 1.0) < 1e-4


def test_invert_non_monotone_fails():
    with pytest.raises(ValueError, match="not strictly monotone"):
        invert_monotone(from_callable(np.sin, 0.0, 2 * np.pi, 101))


@settings(max_examples=40)
@given(st.lists(st.floats(1.0, 8.0), min_size=3, max_size=60))
def test_invert_roundtrip(steps):
    # step ratios within max_refine, so the output grid resolves every cell
    vals = np.concatenate([[0.0], np.cumsum(steps)])
    f = GridFunction(0.0, 1.0, vals)
    g = invert_monotone(f)
    # resampling on a uniform grid of the range keeps each image within its cell
    np.testing.assert_allclose(g(f.values), f.x, atol=f.dx)
    assert g(f.values[0]) == 0.0 and g(f.values[-1]) == pytest.approx(1.0)
    assert np.all(np.diff(g.values) >= 0)
