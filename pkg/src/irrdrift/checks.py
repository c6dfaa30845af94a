"""Named numerical checks shared by the command line runner and the test suite.

A :class:`Setup` bundles a coefficient pair, a Cauchy problem and solver
settings. Scenario checks take a setup and return a :class:`CheckResult`;
``criterion_<k>`` functions assemble the acceptance criteria from them.
Every metric is a deterministic function of the setup and its seed.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import stats

from .gridfn import GridFunction, Mollifier, from_callable, interp_tolerance, mollify
from .noise import SamplePath, gen_bm, gen_fbm
from .pde import (CauchyProblem, aronson_check, estimate_kernel, kde_tolerance, solve_fd, solve_fd_divergence,
                  solve_mc)
from .presets import PRESETS, coefficient_preset
from .regcalc import (covariation, cubic_variation, forward_integral, ibp_window, shift_defect,
                      symmetric_integral, young_integral)
from .scale import stieltjes_primitive as _stieltjes
from .scale import (CoefficientPair, apply_T, build_scale_maps, compute_sigma_big, divergence_normalizer,
                    feasibility, hat_L)
from .sde import (SdeRun, decomposition_residual, quadratic_variation_check, simulate, simulate_classical,
                  verify_martingale_problem)
from .spde import (SpdeScenario, dual_transform, lspdes_identity, run_spde_pipeline, test_bumps,
                   weak_residual)

__all__ = ["CheckResult", "Setup", "preset_setup", "SCENARIO_CHECKS", "CRITERIA", "run_check", "u0_preset",
           "lam_preset"]

ACCEPTANCE_SEED = 11


@dataclass
class CheckResult:
    name: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    message: str = ""
    warn: bool = False

    @property
    def status(self) -> str:
        if not self.passed:
            return "fail"
        return "warn" if self.warn else "pass"

    def line(self) -> str:
        return f"{self.status.upper():4s} {self.name}: {self.message}"

    def to_dict(self) -> dict:
        return {"name": self.name, "status": self.status, "metrics": _clean(self.metrics), "message": self.message}


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def _combine(name: str, parts: list[CheckResult]) -> CheckResult:
    ok = all(p.passed for p in parts)
    failed = [p.name for p in parts if not p.passed]
    msg = "all sub-checks pass" if ok else "failed: " + ", ".join(failed)
    return CheckResult(name, ok, {p.name: {"passed": p.passed, **p.metrics} for p in parts}, msg)


# ---------------------------------------------------------------------------
# problem data


def u0_preset(name: str, L: float, n: int) -> GridFunction:
    fns = {"sin": np.sin, "gaussian": lambda x: np.exp(-(x**2)), "one": np.ones_like,
           "zero": np.zeros_like}
    if name not in fns:
        raise ValueError(f"unknown u0 preset {name!r}; expected one of {sorted(fns)}")
    return from_callable(fns[name], -L, L, n)


def lam_preset(name: str, L: float, n: int) -> GridFunction | None:
    if name == "zero":
        return None
    fns = {"one": np.ones_like, "cos": lambda x: 0.2 * np.cos(x)}
    if name not in fns:
        raise ValueError(f"unknown lambda preset {name!r}; expected zero, one or cos")
    return from_callable(fns[name], -L, L, n)


@dataclass(eq=False)
class Setup:
    """Coefficients, problem data and solver settings of one scenario."""

    name: str
    coeffs: CoefficientPair
    u0: GridFunction
    lam: GridFunction | None = None
    T: float = 1.0
    dt: float = 1e-2
    n_paths: int = 2000
    seed: int = ACCEPTANCE_SEED
    hurst: float | None = None
    spde_seeds: tuple | None = None

    @property
    def rough(self) -> bool:
        return not self.coeffs.smooth

    @property
    def L(self) -> float:
        return self.coeffs.sigma.x_max

    @cached_property
    def Sigma(self) -> GridFunction:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return compute_sigma_big(self.coeffs)

    @cached_property
    def maps(self):
        return build_scale_maps(self.coeffs, self.Sigma)

    @cached_property
    def problem(self) -> CauchyProblem:
        return CauchyProblem(self.coeffs, self.maps, self.u0, self.lam, self.T)

    @property
    def mc_dt(self) -> float:
        # the rough presets need a fine Euler step on Y before MC matches FD
        return 1e-4 if self.rough else 1e-3

    @property
    def fd_grid(self) -> str:
        return "mapped" if self.rough else "uniform"


def preset_setup(name: str, seed: int = ACCEPTANCE_SEED, u0: str | None = None, lam: str = "zero",
                 **overrides) -> Setup:
    L = overrides.pop("L", 6.0)
    n = overrides.pop("n_points", 12001)
    coeffs = coefficient_preset(name, L, n)
    if u0 is None:
        u0 = "sin" if name == "heat_baseline" else "gaussian"
    hurst = {"brox_h05": 0.5, "fbm_h04": 0.4}.get(name)
    return Setup(name, coeffs, u0_preset(u0, L, n), lam_preset(lam, L, n), seed=seed, hurst=hurst, **overrides)


# ---------------------------------------------------------------------------
# scenario checks


def check_feasibility(st: Setup, out=None) -> CheckResult:
    rep = feasibility(st.coeffs, st.Sigma)
    if out is not None:
        rep.to_json(Path(out) / "feasibility.json")
        st.maps.to_csv(Path(out) / "maps")
    msg = f"nonexplosion {rep.nonexplosion_left}/{rep.nonexplosion_right}, c = {rep.aronson_c:.4g}, " \
          f"C = {rep.aronson_C:.4g}"
    return CheckResult("feasibility", rep.aronson_ok, rep.to_dict(), msg, warn=not rep.nonexplosion_ok)


def check_scale(st: Setup, out=None) -> CheckResult:
    m = st.maps
    h0, hp0 = float(m.h(0.0)), float(m.h_prime(0.0))
    H = divergence_normalizer(m, st.coeffs.sigma)
    Hk = H.compose(m.k)
    hk_err = float(np.max(np.abs(Hk.values - m.h.values)))
    hk_tol = 2.0 * interp_tolerance(H)
    metrics = {"h(0)": h0, "h'(0)": hp0, "H_of_k_error": hk_err, "H_of_k_tolerance": hk_tol}
    ok = h0 == 0.0 and hp0 == 1.0 and hk_err <= hk_tol
    if st.coeffs.smooth:
        f = apply_T(st.coeffs.b, m, st.coeffs, 1.0)
        t_err = float(np.max(np.abs(f.values - f.x)))
        metrics["T1b_minus_id"] = t_err
        ok &= t_err <= 1e-3
    msg = f"H o k - h = {hk_err:.3g} (tol {hk_tol:.3g})" + \
        (f", T^1 b - id = {metrics['T1b_minus_id']:.3g}" if "T1b_minus_id" in metrics else "")
    return CheckResult("scale", bool(ok), metrics, msg)


def check_operators(st: Setup, out=None) -> CheckResult:
    c = st.coeffs
    ident = from_callable(lambda x: x, c.sigma.x_min, c.sigma.x_max, c.sigma.n_points)
    lid = float(np.max(np.abs(hat_L(ident, c).values - c.b.values)))
    lh = float(np.max(np.abs(hat_L(st.maps.h, c).values)))
    ok = lid <= 1e-9 * max(1.0, float(np.max(np.abs(c.b.values)))) and lh < 1e-3
    return CheckResult("operators", ok, {"hatL_id_minus_b": lid, "sup_hatL_h": lh},
                       f"L^ id - b = {lid:.2g}, sup|L^ h| = {lh:.3g}")


def _ensemble(st: Setup, n_paths=None, dt=None, method="euler_on_Y", x=0.0, seed=None, T=None):
    run = SdeRun(st.maps, st.coeffs, x, T or st.T, dt or st.dt, n_paths or st.n_paths,
                 st.seed if seed is None else seed, 0.0, method)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return simulate(run)


def check_martingale(st: Setup, n_paths: int | None = None, out=None) -> CheckResult:
    ens = _ensemble(st, n_paths)
    if out is not None:
        ens.to_ndjson(Path(out) / "ensemble.ndjson")
    reps = [verify_martingale_problem(ens, t, st.maps, st.coeffs) for t in ("h", "h_squared")]
    z = {r.test_function: float(np.max(np.abs(r.increments_mean) / r.standard_errors)) for r in reps}
    ok = all(r.passed for r in reps)
    return CheckResult("martingale", ok, {"max_abs_z": z, "n_paths": ens.n_paths,
                                          "exit_fraction": ens.exit_fraction},
                       ", ".join(f"{k}: max |mean|/SE = {v:.2f}" for k, v in z.items()))


def check_quadratic_variation(st: Setup, out=None) -> CheckResult:
    dt = 1e-5 if (st.hurst is not None and st.hurst < 0.5) else 1e-4
    ens = _ensemble(st, n_paths=64, dt=dt)
    rep = quadratic_variation_check(ens, st.coeffs.sigma)
    return CheckResult("quadratic_variation", rep.residual < 0.05,
                       {"median_relative_deviation": rep.residual, **rep.params},
                       f"median |[X,X]_T - int sigma^2| / int sigma^2 = {rep.residual:.4f} at dt = {dt:g}")


def check_decomposition(st: Setup, n_paths: int = 1000, out=None) -> CheckResult:
    meds, ranges = [], []
    for dt in (st.dt, st.dt / 2):
        ens = _ensemble(st, n_paths=n_paths, dt=dt)
        meds.append(float(np.median(decomposition_residual(ens, st.maps, st.coeffs))))
        X = ens.X[ens.alive]
        ranges.append(float(np.median(X.max(axis=1) - X.min(axis=1))))
    ratio = meds[1] / meds[0] if meds[0] > 0 else float("nan")
    halves = meds[1] <= 0.5 * meds[0]
    small = meds[1] < 0.02 * ranges[1]
    return CheckResult("decomposition", bool(halves and small),
                       {"dt": [st.dt, st.dt / 2], "median_sup_residual": meds, "median_path_range": ranges,
                        "ratio": ratio, "halves": halves, "below_2pct_of_range": small},
                       f"median sup|R| {meds[0]:.3g} -> {meds[1]:.3g} (ratio {ratio:.3f}), "
                       f"{100 * meds[1] / ranges[1]:.2g}% of range")


def _ks(a, b) -> tuple[float, float]:
    ks = stats.ks_2samp(a, b).statistic
    n, m = a.size, b.size
    crit = 1.358 * math.sqrt((n + m) / (n * m))
    return float(ks), float(crit)


def check_classical_equivalence(st: Setup, n_paths: int = 10_000, dt: float = 1e-3, out=None) -> CheckResult:
    ens = _ensemble(st, n_paths=n_paths, dt=dt)
    cl = simulate_classical(st.coeffs, 0.0, st.T, dt, n_paths, st.seed)
    ks, crit = _ks(ens.X[ens.alive, -1], cl.X[cl.alive, -1])
    return CheckResult("classical_equivalence", ks < crit, {"ks": ks, "critical": crit, "dt": dt,
                                                            "n_paths": n_paths},
                       f"KS = {ks:.4f} vs critical {crit:.4f}")


def check_method_agreement(st: Setup, n_paths: int = 2000, out=None) -> CheckResult:
    dt = 1e-4 if st.rough else st.dt
    a = _ensemble(st, n_paths=n_paths, dt=dt)
    b = _ensemble(st, n_paths=n_paths, dt=dt, method="time_change")
    ks, crit = _ks(a.X[a.alive, -1], b.X[b.alive, -1])
    return CheckResult("method_agreement", ks < crit, {"ks": ks, "critical": crit, "dt": dt,
                                                       "exit_fraction": [a.exit_fraction, b.exit_fraction]},
                       f"KS(euler_on_Y, time_change) = {ks:.4f} vs critical {crit:.4f}")


def check_pde(st: Setup, probes=(-1.0, -0.5, 0.0, 0.5, 1.0), n_paths: int = 2000, out=None) -> CheckResult:
    P = st.problem
    dt_fd = 2.5e-3 if st.rough else 1e-3
    fd = solve_fd(P, 0.0, dt=dt_fd, grid=st.fd_grid)
    bound = P.bound()
    sup = float(np.max(np.abs(fd.values)))
    xs = np.asarray(probes)
    mc = solve_mc(P, 0.0, xs, n_paths, st.seed, dt=st.mc_dt)
    if out is not None:
        fd.to_csv(Path(out) / "u_fd.csv")
        mc.to_csv(Path(out) / "u_mc.csv")
    se = np.asarray(mc.meta["se"])
    span = float(np.ptp(fd.values))
    diff = np.abs(mc.values - fd(xs))
    tol = np.maximum(3 * se, 0.02 * span)
    metrics = {"probes": xs, "fd": fd(xs), "mc": mc.values, "se": se, "tolerance": tol, "sup_u": sup,
               "bound": bound, "fd_dt": dt_fd, "mc_dt": st.mc_dt, "grid": st.fd_grid}
    ok = bool(np.all(diff <= tol)) and sup <= bound * (1 + 1e-12)
    msg = f"max |MC - FD| / tol = {np.max(diff / tol):.3f}, sup|u| = {sup:.4f} <= {bound:.4f}"
    if st.coeffs.smooth:
        dv = solve_fd_divergence(P, 0.0, dt=dt_fd)
        dist = float(np.max(np.abs(dv(xs) - fd(xs))))
        metrics["divergence_form_distance"] = dist
        ok &= dist <= max(float(np.max(3 * se)), 0.02 * span)
    if st.name == "heat_baseline" and st.u0(0.5) == np.sin(0.5) and st.lam is None:
        exact = math.exp(-st.T / 2) * math.sin(0.5)
        interior = np.abs(fd.x) <= 3.0
        fd_err = float(np.max(np.abs(fd.values[interior] - math.exp(-st.T / 2) * np.sin(fd.x[interior]))))
        probe = solve_mc(P, 0.0, np.array([0.5, 0.75]), 10_000, st.seed, dt=st.dt)
        mc_err = float(probe.values[0] - exact)
        metrics.update({"heat_exact": exact, "heat_fd_error": fd_err, "heat_mc_error": mc_err,
                        "heat_mc_se": float(probe.meta["se"][0])})
        ok &= fd_err <= 1e-3 and abs(mc_err) <= 3 * probe.meta["se"][0]
        msg += f", heat FD error {fd_err:.2g}, MC error {mc_err:.3g} (SE {probe.meta['se'][0]:.2g})"
    return CheckResult("pde", bool(ok), metrics, msg)


def check_kernels(st: Setup, n_paths: int = 20_000, t: float = 1.0, out=None) -> CheckResult:
    xs = np.array([-1.0, 0.0, 1.0])
    m = st.maps
    K = estimate_kernel(st.coeffs, m, t, xs, n_paths, seed=st.seed, z_targets=m.k(xs))
    if out is not None:
        K.to_csv(Path(out) / "kernel.csv")
    probes = np.linspace(-2.0, 2.0, 41)
    metrics, ok = {}, True
    masses = [s.size / n_paths for s in K.samples]
    if st.name == "heat_baseline":
        ratio = 0.0
        for j, x in enumerate(xs):
            est = np.interp(probes, K.targets, K.density[j])
            tol = kde_tolerance(K.samples[j], probes, K.bandwidth[j], seed=st.seed, mass=masses[j])
            ratio = max(ratio, float(np.max(np.abs(est - stats.norm.pdf(probes, x, math.sqrt(t))) / tol)))
        metrics["gaussian_deviation_over_tolerance"] = ratio
        ok &= ratio < 1.0
    # symmetry of the divergence-form kernel
    zs = m.k(xs)
    ztol = [kde_tolerance(m.k(K.samples[j]), zs, K.z_bandwidth[j], seed=st.seed, mass=masses[j])
            for j in range(xs.size)]
    sym = 0.0
    for a in range(xs.size):
        for b in range(a + 1, xs.size):
            d = abs(K.z_density[a][b] - K.z_density[b][a])
            sym = max(sym, float(d / (ztol[a][b] + ztol[b][a])))
    metrics["symmetry_over_tolerance"] = sym
    ok &= sym < 1.0
    # change of variable p_t(x, x1) = r_t(k(x), k(x1)) k'(x1)
    cov = 0.0
    kp = m.k_prime(probes)
    zp = m.k(probes)
    for j in range(xs.size):
        zsamp = m.k(K.samples[j])
        p = np.interp(probes, K.targets, K.density[j])
        r = stats.gaussian_kde(zsamp, bw_method=K.z_bandwidth[j] / np.std(zsamp, ddof=1))(zp) * masses[j]
        tol = kde_tolerance(K.samples[j], probes, K.bandwidth[j], seed=st.seed, mass=masses[j]) + \
            kp * kde_tolerance(zsamp, zp, K.z_bandwidth[j], seed=st.seed, mass=masses[j])
        cov = max(cov, float(np.max(np.abs(p - r * kp) / tol)))
    metrics["change_of_variable_over_tolerance"] = cov
    ok &= cov < 1.0
    ar = aronson_check(K)
    metrics["aronson"] = ar.to_dict()
    ok &= ar.feasible and ar.M <= 10.0
    return CheckResult("kernels", bool(ok), metrics,
                       f"symmetry {sym:.3f}, change of variable {cov:.3g} (fractions of tolerance), "
                       f"Aronson M = {ar.M:.3g}")


def check_bounded_way(st: Setup, ns=(8, 16, 32, 64), kind: str = "gaussian", out=None) -> CheckResult:
    dt = 2.5e-3

    def solve(c):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            S = compute_sigma_big(c)
        P = CauchyProblem(c, build_scale_maps(c, S), st.u0, st.lam, st.T)
        return solve_fd(P, 0.0, dt=dt, grid="mapped")

    u = solve(st.coeffs)
    bound = st.problem.bound()
    probes = np.linspace(-2.0, 2.0, 9)
    dists, sups = [], []
    for n in ns:
        bn = mollify(st.coeffs.b, Mollifier(kind, n))
        un = solve(CoefficientPair(st.coeffs.sigma, bn - bn(0.0), "holder_young", st.coeffs.params))
        dists.append(float(np.max(np.abs(un(probes) - u(probes)))))
        sups.append(float(np.max(np.abs(un.values))))
    dec = bool(np.all(np.diff(dists) < 0))
    bounded = max(sups) <= bound
    return CheckResult("bounded_way", dec and bounded, {"ns": list(ns), "probe_distance": dists,
                                                        "sup_u_n": sups, "bound": bound, "kind": kind},
                       f"probe distance {' > '.join(f'{d:.3g}' for d in dists)}, max |u_n| = {max(sups):.3f} "
                       f"<= {bound:.3f}")


def check_spde(st: Setup, seeds=None, levels: int = 5, out=None) -> CheckResult:
    H = st.hurst if st.hurst is not None else 0.5
    if seeds is None:
        seeds = st.spde_seeds or (st.seed,)
    seeds = list(seeds)
    finals = []
    for k, s in enumerate(seeds):
        first = k == 0 and out is not None
        rep = run_spde_pipeline(SpdeScenario(env_seed=s, hurst=H, levels=levels, mc_paths=400 if first else 0),
                                forms=("dual", "rig") if first else ("dual",))
        if first:
            rep.write(Path(out) / "spde")
        finals.append(rep.stage_medians())
    med = np.median(np.array(finals), axis=0)
    dec = bool(np.all(np.diff(med[-3:]) < 0))
    ok = dec and med[-1] < 0.02
    return CheckResult("spde", ok, {"hurst": H, "seeds": seeds, "median_relative_residual": med},
                       f"H = {H}: stage medians {', '.join(f'{v:.4f}' for v in med)}")


SCENARIO_CHECKS = {
    "feasibility": check_feasibility,
    "scale": check_scale,
    "operators": check_operators,
    "martingale": check_martingale,
    "quadratic_variation": check_quadratic_variation,
    "decomposition": check_decomposition,
    "classical_equivalence": check_classical_equivalence,
    "method_agreement": check_method_agreement,
    "pde": check_pde,
    "kernels": check_kernels,
    "bounded_way": check_bounded_way,
    "spde": check_spde,
}

#: checks that need classical derivatives of b
SMOOTH_ONLY = ("operators", "classical_equivalence")


def run_check(name: str, st: Setup, out=None) -> CheckResult:
    if name not in SCENARIO_CHECKS:
        raise ValueError(f"unknown check {name!r}; expected one of {sorted(SCENARIO_CHECKS)}")
    if name in SMOOTH_ONLY and not st.coeffs.smooth:
        return CheckResult(name, True, {}, "not applicable to rough coefficients", warn=True)
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
    return SCENARIO_CHECKS[name](st, out=out)


# ---------------------------------------------------------------------------
# acceptance criteria


def _moll(f, kind, n):
    return mollify(f, Mollifier(kind, n))


def criterion_1() -> CheckResult:
    L, n = 2.0, 2001
    one = from_callable(np.ones_like, -L, L, n)
    b = from_callable(np.sin, -L, L, n)
    c = CoefficientPair(one, b, "sigma_bv", smooth=True)
    ref = 2.0 * b
    out = {"closed_form": ref, "sigma_bv": compute_sigma_big(c)}
    sweeps = {}
    for kind in ("gaussian", "compact_bump"):
        S = compute_sigma_big(c.with_route("mollifier_limit", kinds=(kind,)))
        out[f"mollifier_{kind}"] = S
        sweeps[kind] = S.meta["sweeps"][kind]["sup_differences"]
    # distance of each mollified Sigma_n to the closed form, before the sweep saturates at grid scale
    approach = {}
    for kind in ("gaussian", "compact_bump"):
        approach[kind] = [float(np.max(np.abs((2.0 * _stieltjes(1.0 / _moll(one * one, kind, k),
                                                                 _moll(b, kind, k))).values - ref.values)))
                          for k in (8, 16, 32, 64)]
    names = list(out)
    worst = max(float(np.max(np.abs(out[a].values - out[b].values))) for a in names for b in names)
    cauchy = all(d[-1] <= d[-2] for d in sweeps.values())
    return CheckResult("1 sigma route consistency", worst < 1e-2 and cauchy,
                       {"max_pairwise_sup": worst, "sweeps": sweeps, "distance_by_n_8_to_64": approach},
                       f"max pairwise sup distance {worst:.3g}, mollifier sweeps Cauchy: {cauchy}")


def criterion_2() -> CheckResult:
    parts = []
    for name in PRESETS:
        r = check_scale(preset_setup(name))
        r.name = name
        parts.append(r)
    return _combine("2 scale identities", parts)


def criterion_3() -> CheckResult:
    r = check_operators(preset_setup("smooth_sin"))
    r.name = "3 L-hat anchors"
    return r


def criterion_4() -> CheckResult:
    dt, n = 1e-4, 10_001
    eps = 10 * dt
    W = gen_bm(0, 0.0, dt, n)
    V = gen_bm(1, 0.0, dt, n)
    sym = symmetric_integral(V, W, eps).terminal
    fwd = forward_integral(V, W, eps).terminal
    cov = covariation(V, W, eps).terminal
    a_res = abs(sym - fwd - 0.5 * cov - 0.5 * shift_defect(V, W, eps))
    c_res = abs(symmetric_integral(V, W, eps).terminal + symmetric_integral(W, V, eps).terminal
                - ibp_window(V, W, eps))
    devs = []
    for s in range(64):
        B = gen_bm(s, 0.0, dt, n)
        target = 0.5 * (B.values[-1] ** 2 - B.values[0] ** 2)
        devs.append(abs(symmetric_integral(B, B, eps).terminal - target) / abs(target))
    strat = float(np.median(devs))
    # chain rule for Young integrals: int F dG = int F f dg with G = int f dg, on a Hoelder triple
    chain = []
    for n in (257, 513, 1025, 2049, 4097):
        g = from_callable(lambda x: np.abs(x - 1 / 3) ** 0.6, 0.0, 1.0, n)
        F = from_callable(lambda x: np.abs(x - 0.3) ** 0.5, 0.0, 1.0, n)
        f = g.map(lambda v: np.cos(3 * v))
        G = young_integral(f, g, 0.6, 0.6)
        lhs = young_integral(F, G, 0.5, 0.6).values[-1]
        rhs = young_integral(F * f, g, 0.5, 0.6).values[-1]
        chain.append(abs(lhs - rhs))
    dec = bool(np.all(np.diff(chain) < 0))
    ok = a_res < 1e-10 and c_res < 1e-10 and strat < 0.02 and dec and chain[-1] < 1e-3
    return CheckResult("4 regularization identities", ok,
                       {"window_identity_residual": a_res, "ibp_residual": c_res, "stratonovich_median_rel_dev": strat,
                        "chain_rule_residuals": chain},
                       f"identities {a_res:.1g}/{c_res:.1g}, int W d°W rel. dev. {strat:.4f}, "
                       f"chain rule {' > '.join(f'{v:.2g}' for v in chain)}")


def criterion_5(n_seeds: int = 64) -> CheckResult:
    dt, n = 2.0**-16, 2**16 + 1
    cells = (256, 128, 64, 32, 16, 8)
    rel = []
    for s in range(n_seeds):
        X = gen_fbm(s, 0.4, 0.0, dt, n)
        sup3 = float(np.max(np.abs(X.values))) ** 3
        rel.append([abs(cubic_variation(X, c * dt, strong=False).terminal) / sup3 for c in cells])
    med = np.median(np.array(rel), axis=0)
    dec = bool(np.all(np.diff(med) < 0))
    smooth = SamplePath(0.0, dt, np.sin(2 * np.pi * dt * np.arange(n)), 0, "deterministic")
    sm = abs(cubic_variation(smooth, 8 * dt).terminal)
    ok = dec and med[-1] < 1e-2 and sm < 1e-6
    return CheckResult("5 cubic variation", ok, {"epsilons": [c * dt for c in cells], "median_relative": med,
                                                 "smooth": sm},
                       f"median |[X,X,X]| / sup^3: {' > '.join(f'{v:.3g}' for v in med)}; smooth {sm:.2g}")


def criterion_6() -> CheckResult:
    parts = []
    for name in ("heat_baseline", "smooth_sin", "divergence", "brox_h05"):
        r = check_martingale(preset_setup(name), n_paths=100_000)
        r.name = name
        parts.append(r)
    return _combine("6 martingale problem", parts)


def criterion_7() -> CheckResult:
    parts = []
    for name in PRESETS:
        r = check_quadratic_variation(preset_setup(name))
        r.name = name
        parts.append(r)
    return _combine("7 quadratic variation", parts)


def criterion_8() -> CheckResult:
    parts = []
    for name in ("smooth_sin", "divergence"):
        r = check_decomposition(preset_setup(name))
        r.name = name
        parts.append(r)
    return _combine("8 decomposition", parts)


def criterion_9() -> CheckResult:
    r = check_classical_equivalence(preset_setup("smooth_sin"))
    r.name = "9 classical equivalence"
    return r


def criterion_10() -> CheckResult:
    parts = []
    for name in PRESETS:
        st = preset_setup(name)
        if not feasibility(st.coeffs, st.Sigma).aronson_ok:
            continue
        r = check_pde(st)
        r.name = name
        parts.append(r)
    return _combine("10 pde solvers", parts)


def criterion_11() -> CheckResult:
    parts = []
    for name in ("heat_baseline", "divergence"):
        r = check_kernels(preset_setup(name))
        r.name = name
        parts.append(r)
    return _combine("11 kernels", parts)


def criterion_12() -> CheckResult:
    r = check_bounded_way(preset_setup("brox_h05", lam="cos"))
    r.name = "12 bounded-way stability"
    return r


def _classical_spde(n: int, L: float = 2.0, T: float = 1.0):
    eta = from_callable(lambda x: 0.5 * np.sin(x), -L, L, n)
    one = from_callable(np.ones_like, -L, L, n)
    c = CoefficientPair(one, eta, "smooth_drift", smooth=True)
    S = compute_sigma_big(c)
    u0 = from_callable(lambda x: np.exp(-(x**2)), -L, L, n)
    lam = from_callable(lambda x: 0.2 * np.cos(x), -L, L, n)
    P = CauchyProblem(c, build_scale_maps(c, S), u0, lam, T)
    from .pde import solve_fd_field
    return solve_fd_field(P, 0.0, dt=T / 200, grid="mapped"), eta, lam, u0, S, one


def criterion_13(seeds=range(1, 9)) -> CheckResult:
    L = 2.0
    u, eta, lam, u0, S, one = _classical_spde(2049, L)
    eps = 4 * eta.dx
    bumps = test_bumps(L, 2049)
    v = dual_transform(u)
    dual_gap, classical, lsp = 0.0, 0.0, 0.0
    for a in bumps:
        for t in (0.25, 0.5, 0.75):
            rig = weak_residual(v, "rig", a, t, eta, lam, u0, eps)
            dual = weak_residual(u, "dual", a, 1.0 - t, eta, lam, u0, eps)
            dual_gap = max(dual_gap, max(abs(rig.terms[k] - dual.terms[k]) for k in rig.terms),
                           abs(rig.residual - dual.residual))
            w = weak_residual(u, "dual", a, t, eta, lam, u0, eps)
            classical = max(classical, w.relative)
            lhs, rhs = lspdes_identity(u, a, t, S, one, lam, u0, eps)
            lsp = max(lsp, abs(lhs - rhs) / w.dominant)
    parts = [CheckResult("duality", dual_gap < 1e-12, {"max_term_gap": dual_gap}),
             CheckResult("classical_oracle", classical < 0.01, {"max_relative_residual": classical,
                                                                 "lspdes_relative_gap": lsp})]
    for H in (0.4, 0.5):
        st = Setup(f"fbm_{H}", CoefficientPair(from_callable(np.ones_like, -1, 1, 3),
                                                from_callable(np.zeros_like, -1, 1, 3)),
                   from_callable(np.zeros_like, -1, 1, 3), hurst=H)
        r = check_spde(st, seeds=seeds)
        r.name = f"fbm_H{H}"
        parts.append(r)
    return _combine("13 spde weak residual", parts)


CRITERIA = {k: globals()[f"criterion_{k}"] for k in range(1, 14)}
