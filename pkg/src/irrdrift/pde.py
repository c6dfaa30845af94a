"""The backward Cauchy problem ``d_t u + L u = lambda``, ``u(T) = u0``.

Two solvers: Monte Carlo over simulated paths,
``u(s, x) = E[u0(X_T) - int_s^T lambda(r, X_r) dr]``, and Crank-Nicolson
finite differences on the scale-transformed equation
``d_t v + (sigma_h_tilde^2 / 2) v_yy = lambda o h^{-1}``, ``u = v o h``.
A divergence-form solve in ``z = k(x)`` and kernel estimation complete the
module.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate, linalg, stats

from .gridfn import GridFunction
from .noise import BLOCK
from .scale import CoefficientPair, ScaleMaps
from .sde import EXIT_WARN_FRACTION, SdeRun, simulate

__all__ = [
    "CauchyProblem",
    "FdSolution",
    "KernelEstimate",
    "AronsonReport",
    "StabilityError",
    "solve_mc",
    "solve_fd",
    "solve_fd_field",
    "solve_fd_divergence",
    "estimate_kernel",
    "kde_tolerance",
    "aronson_check",
    "aronson_bounds",
]


class StabilityError(ValueError):
    """The requested time step violates the scheme's step-ratio bound."""

    def __init__(self, message, required_dt):
        super().__init__(message)
        self.required_dt = required_dt


@dataclass(frozen=True, eq=False)
class CauchyProblem:
    """Terminal datum ``u0``, source ``lam`` and horizon ``T`` for a coefficient pair.

    ``lam`` is either a GridFunction (constant in time) or a callable
    ``t -> GridFunction``; ``None`` means ``lambda = 0``.
    """

    coeffs: CoefficientPair
    maps: ScaleMaps
    u0: GridFunction
    lam: GridFunction | Callable[[float], GridFunction] | None = None
    T: float = 1.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.u0.values)):
            raise ValueError("u0 must be bounded on the truncated domain")

    def lam_at(self, t: float) -> GridFunction | None:
        if self.lam is None:
            return None
        return self.lam(t) if callable(self.lam) and not isinstance(self.lam, GridFunction) else self.lam

    def lam_values(self, t: float, x: np.ndarray) -> np.ndarray:
        g = self.lam_at(t)
        return np.zeros_like(np.asarray(x, dtype=float)) if g is None else g(x)

    @property
    def max_u0(self) -> float:
        return float(np.max(np.abs(self.u0.values)))

    def max_lam(self, times=None) -> float:
        if self.lam is None:
            return 0.0
        times = np.linspace(0.0, self.T, 11) if times is None else times
        return float(max(np.max(np.abs(self.lam_at(t).values)) for t in times))

    def bound(self, times=None) -> float:
        """``max|u0| + T max|lambda|``, the maximum-principle bound."""
        return self.max_u0 + self.T * self.max_lam(times)


# ---------------------------------------------------------------------------
# Monte Carlo


def solve_mc(problem: CauchyProblem, s: float, x_grid, n_paths: int, seed: int, dt: float = 1e-2,
             method: str = "euler_on_Y") -> GridFunction:
    """``u(s, x)`` at the points of ``x_grid`` (a uniform array or GridFunction grid).

    The result's ``meta`` holds per-point standard errors and exit fractions;
    ``exit_warning`` lists points with more than 20% exits.
    """
    xs = np.asarray(x_grid.x if isinstance(x_grid, GridFunction) else x_grid, dtype=float)
    blocks = -(-n_paths // BLOCK)
    vals, ses, exits = [], [], []
    for j, x in enumerate(xs):
        run = SdeRun(problem.maps, problem.coeffs, float(x), problem.T, dt, n_paths, seed, s, method,
                     first_path=j * blocks * BLOCK)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ens = simulate(run)
        X = ens.X[ens.alive]
        payoff = problem.u0(X[:, -1])
        if problem.lam is not None:
            lam_path = np.stack([problem.lam_values(t, X[:, k]) for k, t in enumerate(ens.t)], axis=1)
            payoff = payoff - integrate.trapezoid(lam_path, dx=ens.dt, axis=1)
        vals.append(float(np.mean(payoff)) if payoff.size else float("nan"))
        ses.append(float(np.std(payoff, ddof=1) / np.sqrt(payoff.size)) if payoff.size > 1 else float("inf"))
        exits.append(ens.exit_fraction)
    meta = {"se": ses, "exit_fraction": exits, "n_paths": n_paths, "seed": seed, "dt": dt, "s": s,
            "x": xs.tolist(), "exit_warning": [float(x) for x, e in zip(xs, exits) if e > EXIT_WARN_FRACTION]}
    if xs.size < 2 or not np.allclose(np.diff(xs), xs[1] - xs[0]) or xs[1] <= xs[0]:
        raise ValueError("x_grid must hold at least two increasing, uniformly spaced points")
    return GridFunction(xs[0], xs[-1], vals, meta=meta)


# ---------------------------------------------------------------------------
# finite differences


def _operator_bands(nodes: np.ndarray, c: np.ndarray, p: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Tridiagonal ``A`` with ``(A v)_i = c_i (p_{i+} dv_+ / d_+ - p_{i-} dv_- / d_-) / (d_+ + d_-)``.

    ``c`` lives on nodes, ``p`` on the ``n-1`` cells; Dirichlet rows are zero.
    """
    d = np.diff(nodes)
    n = nodes.size
    lower, diag, upper = np.zeros(n), np.zeros(n), np.zeros(n)
    kappa = c[1:-1] / (d[1:] + d[:-1])
    wp = p[1:] / d[1:]
    wm = p[:-1] / d[:-1]
    lower[1:-1] = kappa * wm
    upper[1:-1] = kappa * wp
    diag[1:-1] = -kappa * (wp + wm)
    return lower, diag, upper


def _apply(lower, diag, upper, v):
    out = diag * v
    out[1:] += lower[1:] * v[:-1]
    out[:-1] += upper[:-1] * v[1:]
    return out


def _theta_step(bands, v, dtau, theta, src_old, src_new, bc_new):
    lower, diag, upper = bands
    rhs = v + (1.0 - theta) * dtau * _apply(lower, diag, upper, v)
    rhs -= dtau * ((1.0 - theta) * src_old + theta * src_new)
    ab = np.zeros((3, v.size))
    ab[0, 1:] = -theta * dtau * upper[:-1]
    ab[1] = 1.0 - theta * dtau * diag
    ab[2, :-1] = -theta * dtau * lower[1:]
    ab[1, 0] = ab[1, -1] = 1.0
    ab[0, 1] = 0.0
    ab[2, -2] = 0.0
    rhs[0], rhs[-1] = bc_new
    return linalg.solve_banded((1, 1), ab, rhs)


@dataclass
class FdSolution:
    """Solution fields ``u[j, i]`` at times ``t[j]`` (increasing) on the x-nodes ``x``."""

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    meta: dict = field(default_factory=dict)

    def at(self, s: float) -> GridFunction:
        j = int(np.argmin(np.abs(self.t - s)))
        if abs(self.t[j] - s) > 1e-9 * max(1.0, abs(s)):
            raise ValueError(f"s = {s} is not a solver time node")
        return GridFunction(self.x[0], self.x[-1], self.u[j], meta=dict(self.meta))


def _march(problem: CauchyProblem, nodes, c, p, x_of_nodes, s, dt, keep, r_max, rannacher=2):
    T = problem.T
    n_t = max(int(round((T - s) / dt)), 1)
    dtau = (T - s) / n_t
    d = np.diff(nodes)
    ratio = float(np.max(c[1:-1] * np.maximum(p[1:], p[:-1]) / np.minimum(d[1:], d[:-1]) ** 2)) * dtau
    if ratio > r_max:
        need = dtau * r_max / ratio
        raise StabilityError(f"step ratio {ratio:.3g} exceeds {r_max:g}; need dt <= {need:.3g}", need)
    bands = _operator_bands(nodes, c, p)
    v = problem.u0(x_of_nodes)
    xb = x_of_nodes[[0, -1]]
    times = T - dtau * np.arange(n_t + 1)
    src = lambda t: problem.lam_values(t, x_of_nodes)
    lam_b = np.array([problem.lam_values(t, xb) for t in times])
    # boundary values from the zero-diffusion ODE d_t u = lambda
    bc = problem.u0(xb)[None, :] - integrate.cumulative_trapezoid(lam_b, dx=dtau, axis=0, initial=0.0)
    fields = [v.copy()] if keep else None
    for n in range(n_t):
        t_old, t_new = times[n], times[n + 1]
        if n < rannacher:
            half = 0.5 * dtau
            t_mid = t_old - half
            bc_mid = 0.5 * (bc[n] + bc[n + 1])
            v = _theta_step(bands, v, half, 1.0, src(t_mid), src(t_mid), bc_mid)
            v = _theta_step(bands, v, half, 1.0, src(t_new), src(t_new), bc[n + 1])
        else:
            v = _theta_step(bands, v, dtau, 0.5, src(t_old), src(t_new), bc[n + 1])
        if keep:
            fields.append(v.copy())
    bound = problem.bound(times)
    vmax = float(np.max(np.abs(np.array(fields) if keep else v)))
    if vmax > bound * (1.0 + 1e-8) + 1e-12:
        raise AssertionError(f"maximum principle violated: max|u| = {vmax:.6g} > {bound:.6g}")
    meta = {"dt": dtau, "n_steps": n_t, "step_ratio": ratio, "bound": bound, "max_abs": vmax}
    return times, (fields if keep else [v]), meta


def _y_setup(problem: CauchyProblem, grid: str, n_y: int | None):
    maps = problem.maps
    if grid == "mapped":
        nodes = maps.h.values.copy()
        x_nodes = maps.h.x
        c = (problem.coeffs.sigma * maps.h_prime).values ** 2
    elif grid == "uniform":
        n_y = n_y or maps.h.n_points
        nodes = np.linspace(maps.h.values[0], maps.h.values[-1], n_y)
        x_nodes = maps.h_inv(nodes)
        c = maps.sigma_h_tilde(nodes) ** 2
    else:
        raise ValueError(f"unknown grid {grid!r}")
    return nodes, x_nodes, c, np.ones(nodes.size - 1)


def solve_fd_field(problem: CauchyProblem, s: float = 0.0, dt: float | None = None, grid: str = "uniform",
                   n_y: int | None = None, r_max: float = 1e4) -> FdSolution:
    """All time slices of the Crank-Nicolson solve in ``y = h(x)``, mapped back to the x-grid.

    ``grid="uniform"`` uses a uniform y-grid; ``grid="mapped"`` uses the
    images ``h(x_i)`` of the x-nodes, which keeps the step ratio bounded
    when ``sigma_h_tilde`` varies over orders of magnitude.
    """
    dt = dt or (problem.T - s) / 500
    nodes, x_nodes, c, p = _y_setup(problem, grid, n_y)
    times, fields, meta = _march(problem, nodes, c, p, x_nodes, s, dt, True, r_max)
    xg = problem.maps.h.x
    if grid == "mapped":
        u = np.array(fields)
    else:
        yx = problem.maps.h.values
        u = np.array([np.interp(yx, nodes, f) for f in fields])
    meta.update({"grid": grid, "n_nodes": int(nodes.size)})
    return FdSolution(times[::-1], xg, u[::-1], meta)


def solve_fd(problem: CauchyProblem, s: float = 0.0, dt: float | None = None, grid: str = "uniform",
             n_y: int | None = None, r_max: float = 1e4) -> GridFunction:
    """``u(s, .)`` on the x-grid of the coefficients; see :func:`solve_fd_field`."""
    dt = dt or (problem.T - s) / 500
    nodes, x_nodes, c, p = _y_setup(problem, grid, n_y)
    times, fields, meta = _march(problem, nodes, c, p, x_nodes, s, dt, False, r_max)
    v = fields[-1]
    h = problem.maps.h
    vals = v if grid == "mapped" else np.interp(h.values, nodes, v)
    meta.update({"grid": grid, "n_nodes": int(nodes.size), "s": s})
    return GridFunction(h.x_min, h.x_max, vals, meta=meta)


def solve_fd_divergence(problem: CauchyProblem, s: float = 0.0, dt: float | None = None,
                        r_max: float = 1e4) -> GridFunction:
    """Solve ``d_t w + (sigma_k_bar^2 w_z)_z / 2 = lambda o k^{-1}`` on the nodes ``z_i = k(x_i)``.

    The flux coefficient on a cell is the harmonic mean of ``sigma_k_bar^2``
    over it, computed in x by the trapezoid rule. Returns ``u(s, x) = w(s, k(x))``.
    """
    dt = dt or (problem.T - s) / 500
    maps = problem.maps
    z = maps.k.values.copy()
    inv = 1.0 / (problem.coeffs.sigma.values * maps.k_prime.values) ** 2 * maps.k_prime.values
    cell_int = 0.5 * (inv[1:] + inv[:-1]) * maps.k.dx
    p = np.diff(z) / cell_int
    c = np.ones(z.size)
    times, fields, meta = _march(problem, z, c, p, maps.k.x, s, dt, False, r_max)
    meta.update({"grid": "k_mapped", "s": s})
    return GridFunction(maps.k.x_min, maps.k.x_max, fields[-1], meta=meta)


# ---------------------------------------------------------------------------
# kernels


@dataclass(eq=False)
class KernelEstimate:
    """Estimated transition densities ``p_t(x, .)`` for each source ``x`` (rows).

    ``z_density`` holds the kernel of ``Z = k(X)`` from ``k(x)`` on ``z_targets``.
    Rows integrate to ``1 - exit_fraction`` up to the truncation of the targets.
    """

    t: float
    x_sources: np.ndarray
    targets: np.ndarray
    density: np.ndarray
    bandwidth: np.ndarray
    n_paths: int
    exit_fraction: np.ndarray
    samples: list
    z_targets: np.ndarray | None = None
    z_density: np.ndarray | None = None
    z_bandwidth: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = "source," + ",".join(f"{v:.10g}" for v in self.targets)
        np.savetxt(path, np.column_stack([self.x_sources, self.density]), delimiter=",", header=header,
                   comments="", fmt="%.17g")
        side = path.with_suffix(path.suffix + ".json")
        side.write_text(json.dumps({"t": self.t, "bandwidth": self.bandwidth.tolist(), "n_paths": self.n_paths,
                                    "exit_fraction": self.exit_fraction.tolist()}))
        return path


def _kde(samples: np.ndarray, at: np.ndarray, bw: float, mass: float = 1.0) -> np.ndarray:
    kde = stats.gaussian_kde(samples, bw_method=bw / np.std(samples, ddof=1))
    return mass * kde(at)


def _silverman(samples: np.ndarray) -> float:
    n = samples.size
    sd = np.std(samples, ddof=1)
    iqr = np.subtract(*np.percentile(samples, [75, 25]))
    return float(0.9 * min(sd, iqr / 1.34) * n ** (-0.2))


def estimate_kernel(coeffs: CoefficientPair, maps: ScaleMaps, t: float, x_sources, n_paths: int,
                    bandwidth: float | None = None, seed: int = 0, dt: float = 1e-2, targets=None,
                    z_targets=None, method: str = "euler_on_Y") -> KernelEstimate:
    """KDE of ``X_t^{0,x}`` for each source, plus the kernel of ``k(X)`` in z-coordinates.

    ``bandwidth=None`` applies Silverman's rule per source (always reported).
    """
    if bandwidth is not None and not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    xs = np.atleast_1d(np.asarray(x_sources, dtype=float))
    if targets is None:
        targets = np.linspace(coeffs.sigma.x_min, coeffs.sigma.x_max, 601)
    targets = np.asarray(targets, dtype=float)
    blocks = -(-n_paths // BLOCK)
    dens, zdens, bws, zbws, exits, samples = [], [], [], [], [], []
    for j, x in enumerate(xs):
        run = SdeRun(maps, coeffs, float(x), t, dt, n_paths, seed, 0.0, method, first_path=j * blocks * BLOCK)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ens = simulate(run)
        xt = ens.X[ens.alive, -1]
        mass = xt.size / n_paths
        bw = bandwidth or _silverman(xt)
        dens.append(_kde(xt, targets, bw, mass))
        zt = maps.k(xt)
        zb = bandwidth or _silverman(zt)
        zt_grid = maps.k(targets) if z_targets is None else np.asarray(z_targets)
        zdens.append(_kde(zt, zt_grid, zb, mass))
        bws.append(bw)
        zbws.append(zb)
        exits.append(ens.exit_fraction)
        samples.append(xt)
    zt_grid = maps.k(targets) if z_targets is None else np.asarray(z_targets)
    return KernelEstimate(t, xs, targets, np.array(dens), np.array(bws), n_paths, np.array(exits), samples,
                          zt_grid, np.array(zdens), np.array(zbws), {"seed": seed, "dt": dt})


def kde_tolerance(samples: np.ndarray, at: np.ndarray, bw: float, n_boot: int = 30, seed: int = 0,
                  mass: float = 1.0) -> np.ndarray:
    """Pointwise ``3 * bootstrap SE + bw^2 |rho''| / 2`` for a Gaussian KDE."""
    rng = np.random.default_rng(seed)
    boots = np.array([_kde(rng.choice(samples, samples.size), at, bw, mass) for _ in range(n_boot)])
    se = boots.std(axis=0, ddof=1)
    # curvature of the density from the estimate itself, on a fine local stencil
    step = bw / 4.0
    curv = (_kde(samples, at + step, bw, mass) - 2 * _kde(samples, at, bw, mass)
            + _kde(samples, at - step, bw, mass)) / step**2
    return 3.0 * se + 0.5 * bw**2 * np.abs(curv)


@dataclass
class AronsonReport:
    M: float
    M_lower: float
    M_upper: float
    feasible: bool
    n_bins_used: int
    cap: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def aronson_bounds(M: float, t: float, dist: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lo = np.exp(-M * dist**2 / t) / (M * np.sqrt(t))
    hi = M * np.exp(-(dist**2) / (M * t)) / np.sqrt(t)
    return lo, hi


def _smallest_M(ok, cap: float) -> float:
    if ok(1.0):
        return 1.0
    if not ok(cap):
        return float("inf")
    lo, hi = 1.0, cap
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        lo, hi = (lo, mid) if ok(mid) else (mid, hi)
    return hi


def aronson_check(kernel: KernelEstimate, n_bins: int = 60, min_count: int = 50, cap: float = 1e3,
                  histograms: list | None = None) -> AronsonReport:
    """Smallest ``M >= 1`` with ``exp(-M d^2/t)/(M sqrt t) <= p <= M exp(-d^2/(M t))/sqrt t`` on well-filled bins.

    Densities come from histograms of the kernel samples (``n_bins`` over
    each sample's range); only bins with at least ``min_count`` samples enter.
    ``histograms`` may supply ``(centers, density, counts)`` per source instead.
    """
    t = kernel.t
    dists, vals = [], []
    for j, x in enumerate(kernel.x_sources):
        if histograms is not None:
            centers, dens, counts = histograms[j]
        else:
            xt = kernel.samples[j]
            counts, edges = np.histogram(xt, bins=n_bins)
            centers = 0.5 * (edges[1:] + edges[:-1])
            dens = counts / (kernel.n_paths * np.diff(edges))
        keep = np.asarray(counts) >= min_count
        dists.append(np.abs(np.asarray(centers)[keep] - x))
        vals.append(np.asarray(dens)[keep])
    d = np.concatenate(dists)
    p = np.concatenate(vals)
    # compare logarithms: the lower bound underflows to 0 for large M and would admit empty bins
    with np.errstate(divide="ignore"):
        log_p = np.log(p)
    log_lo = lambda M: -M * d**2 / t - np.log(M * np.sqrt(t))
    log_hi = lambda M: np.log(M) - d**2 / (M * t) - 0.5 * np.log(t)
    M_lo = _smallest_M(lambda M: bool(np.all(log_lo(M) <= log_p)), cap)
    M_up = _smallest_M(lambda M: bool(np.all(log_p <= log_hi(M))), cap)
    M = max(M_lo, M_up)
    return AronsonReport(M, M_lo, M_up, bool(np.isfinite(M)), int(d.size), cap)
