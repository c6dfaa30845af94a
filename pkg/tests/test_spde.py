import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from irrdrift import spde
from irrdrift.gridfn import from_callable
from irrdrift.noise import gen_environment
from irrdrift.pde import CauchyProblem, FdSolution, solve_fd_field
from irrdrift.scale import CoefficientPair, build_scale_maps, compute_sigma_big

L, N = 2.0, 1025


def classical(n=N, T=1.0):
    """Smooth environment eta = sin / 2, so the symmetric pairing is int alpha A eta' dx."""
    eta = from_callable(lambda x: 0.5 * np.sin(x), -L, L, n)
    one = from_callable(np.ones_like, -L, L, n)
    c = CoefficientPair(one, eta, smooth=True)
    S = compute_sigma_big(c)
    u0 = from_callable(lambda x: np.exp(-(x**2)), -L, L, n)
    lam = from_callable(lambda x: 0.2 * np.cos(x), -L, L, n)
    u = solve_fd_field(CauchyProblem(c, build_scale_maps(c, S), u0, lam, T), 0.0, dt=T / 200, grid="mapped")
    return u, eta, lam, u0, S, one


@pytest.fixture(scope="module")
def solved():
    return classical()


@pytest.fixture(scope="module")
def bumps():
    return spde.test_bumps(L, N)


def test_bumps_vanish_at_ends(bumps):
    assert [b.meta["name"] for b in bumps] == ["left", "centre", "right"]
    for b in bumps:
        assert b.values[0] == 0.0 and b.values[-1] == 0.0
        assert b.values.max() > 0


def test_constant_field_has_zero_residual(bumps):
    c = 0.7
    t = np.linspace(0.0, 1.0, 11)
    x = np.linspace(-L, L, N)
    u = FdSolution(t, x, np.full((t.size, x.size), c))
    eta = gen_environment(3, 0.5, L, N).grid
    u0 = from_callable(lambda s: c + 0 * s, -L, L, N)
    for form in ("dual", "rig"):
        w = spde.weak_residual(u, form, bumps[1], 0.5, eta, None, u0, 4 * eta.dx)
        assert abs(w.residual) < 1e-14
        assert w.terms["diffusion_term"] == 0.0 and w.terms["drift_symmetric_term"] == 0.0


def test_residual_is_signed_sum_of_terms(solved, bumps):
    u, eta, lam, u0, _, _ = solved
    for form in ("dual", "rig"):
        w = spde.weak_residual(u, form, bumps[0], 0.25, eta, lam, u0, 4 * eta.dx)
        t = w.terms
        assert set(t) == set(spde.TERM_NAMES)
        assert w.residual == (t["mass_t"] + t["mass_0_or_T"] + t["diffusion_term"] + t["drift_symmetric_term"]
                              - t["source_term"])
        assert w.relative == abs(w.residual) / w.dominant


def test_transform_identities(solved):
    u = solved[0]
    v = spde.dual_transform(u)
    np.testing.assert_array_equal(v.u[0], u.u[-1])
    np.testing.assert_array_equal(spde.dual_transform(v).u, u.u)
    still = FdSolution(u.t, u.x, np.tile(u.u[0], (u.t.size, 1)))
    np.testing.assert_array_equal(spde.dual_transform(still).u, still.u)
    with pytest.raises(ValueError):
        spde.dual_transform(FdSolution(np.array([0.0, 0.1, 1.0]), u.x, u.u[:3]))


@settings(max_examples=15, deadline=None)
@given(st.sampled_from([0.25, 0.5, 0.75, 0.1, 0.9]), st.integers(0, 2), st.integers(1, 16))
def test_rig_equals_dual_at_reflected_time(solved, bumps, t, which, cells):
    u, eta, lam, u0, _, _ = solved
    v = spde.dual_transform(u)
    eps = cells * eta.dx
    rig = spde.weak_residual(v, "rig", bumps[which], t, eta, lam, u0, eps)
    dual = spde.weak_residual(u, "dual", bumps[which], 1.0 - t, eta, lam, u0, eps)
    for k in spde.TERM_NAMES:
        assert abs(rig.terms[k] - dual.terms[k]) < 1e-12
    assert abs(rig.residual - dual.residual) < 1e-12


def test_classical_oracle_residual(solved, bumps):
    u, eta, lam, u0, _, _ = solved
    for a in bumps:
        for t in (0.25, 0.5, 0.75):
            w = spde.weak_residual(u, "dual", a, t, eta, lam, u0, 4 * eta.dx)
            assert w.relative < 1e-2


def test_residual_drops_to_floor_under_refinement():
    rel = []
    for n in (129, 257, 513, 1025):
        u, eta, lam, u0, _, _ = classical(n)
        a = spde.test_bumps(L, n)[1]
        rel.append(spde.weak_residual(u, "dual", a, 0.5, eta, lam, u0, 4 * eta.dx).relative)
    # the fixed time step leaves a floor near 1e-5
    assert rel[0] > 5 * max(rel[2:])
    assert max(rel[1:]) < 1e-4


def test_integrated_identity_classical(solved, bumps):
    u, eta, lam, u0, S, one = solved
    for a in bumps:
        lhs, rhs = spde.lspdes_identity(u, a, 0.5, S, one, lam, u0, 4 * eta.dx)
        assert abs(lhs - rhs) < 1e-3 * max(abs(lhs), 1e-3)


def test_weak_residual_preconditions(solved):
    u, eta, lam, u0, _, _ = solved
    flat = from_callable(np.ones_like, -L, L, N)
    with pytest.raises(ValueError, match="vanish"):
        spde.weak_residual(u, "dual", flat, 0.5, eta, lam, u0, 0.01)
    a = spde.test_bumps(L, N)[0]
    with pytest.raises(ValueError, match="time node"):
        spde.weak_residual(u, "dual", a, 0.123, eta, lam, u0, 0.01)
    with pytest.raises(ValueError, match="form"):
        spde.weak_residual(u, "mild", a, 0.5, eta, lam, u0, 0.01)


# ---------------------------------------------------------------------------
# scenario and pipeline


def test_scenario_validation():
    assert spde.SpdeScenario(1).validate() == []
    errs = spde.SpdeScenario(1, hurst=0.25).validate()
    assert any("H >= 1/3" in e for e in errs)
    assert spde.SpdeScenario(1, sigma=2.0).validate()
    assert spde.SpdeScenario(1, sigma=lambda x: 1 + 0 * x).validate() == []
    assert spde.SpdeScenario(1, levels=2).validate()
    assert spde.SpdeScenario(1, n0=33).validate()
    with pytest.raises(ValueError, match="1/3"):
        spde.run_spde_pipeline(spde.SpdeScenario(1, hurst=0.25))


def test_certificate_for_brownian_environment():
    certs = [spde.cubic_certificate(gen_environment(s, 0.5, L, 4097)) for s in range(12)]
    assert all(c["strong_bounded"] for c in certs)
    assert len(certs[0]["epsilons"]) == len(certs[0]["cubic"]) == 5
    # single paths wander; the median magnitude shrinks with the window
    med = np.median([np.abs(c["cubic"]) for c in certs], axis=0)
    assert med[-1] < 0.5 * med[0]


@pytest.fixture(scope="module")
def small_report():
    sc = spde.SpdeScenario(5, hurst=0.5, n0=64, levels=3, n_t=100, mc_paths=200, mc_dt=1e-2)
    return spde.run_spde_pipeline(sc, keep_solution=True)


def test_pipeline_small(small_report, tmp_path):
    rep = small_report
    assert len(rep.stages) == 3
    assert [s["n_points"] for s in rep.stages] == [65, 129, 257]
    # 3 bumps x 3 times x 2 forms per stage
    assert len(rep.sweep) == 3 * 3 * 3 * 2
    np.testing.assert_allclose(rep.stage_medians("dual"), rep.stage_medians("rig"), atol=1e-12)
    assert rep.solution is not None and rep.solution.x.size == 257
    paths = rep.write(tmp_path)
    data = json.loads(paths[0].read_text())
    assert data["scenario"]["hurst"] == 0.5
    assert paths[1].read_text().startswith("stage,epsilon,mesh")
    assert len(paths[1].read_text().splitlines()) == 1 + len(rep.sweep)


def test_pipeline_fd_matches_mc(small_report):
    mc = small_report.mc_check
    for fd, est, se in zip(mc["fd"], mc["mc"], mc["se"]):
        assert abs(fd - est) < max(3 * se, 0.02 * abs(fd))


def test_stage_error_carries_stage():
    err = spde.StageError("solve", RuntimeError("boom"))
    assert err.stage == "solve" and "[solve]" in str(err)
