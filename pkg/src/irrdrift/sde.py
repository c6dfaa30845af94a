"""Simulation of diffusions with distributional drift.

The process is simulated through its scale transform: ``Y = h(X)`` solves
the driftless equation ``dY = sigma_h_tilde(Y) dW`` and ``X = h^{-1}(Y)``.
Two schemes are provided, Euler-Maruyama on ``Y`` and a time change of a
Brownian motion. Paths leaving the truncated domain are stopped and
flagged, never reflected.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate

from .gridfn import GridFunction, derivative, second_derivative
from .noise import BLOCK, SamplePath, bm_increments, stream
from .regcalc import covariation
from .scale import CoefficientPair, ScaleMaps, apply_T

__all__ = [
    "SdeRun",
    "Ensemble",
    "ResidualReport",
    "MartingaleTestReport",
    "simulate",
    "simulate_classical",
    "quadratic_variation_check",
    "extended_drift",
    "extended_drift_paths",
    "decomposition_residual",
    "verify_martingale_problem",
    "checkpoint_times",
]

EXIT_WARN_FRACTION = 0.2


@dataclass(frozen=True, eq=False)
class SdeRun:
    maps: ScaleMaps
    coeffs: CoefficientPair
    x: float = 0.0
    T: float = 1.0
    dt: float = 1e-2
    n_paths: int = 1000
    seed: int = 0
    s: float = 0.0
    method: str = "euler_on_Y"
    first_path: int = 0

    def __post_init__(self):
        if not self.s <= self.T:
            raise ValueError(f"start time {self.s} exceeds horizon {self.T}")
        if not self.coeffs.sigma.x_min <= self.x <= self.coeffs.sigma.x_max:
            raise ValueError(f"start point {self.x} is outside the truncated domain")
        if self.method not in ("euler_on_Y", "time_change"):
            raise ValueError(f"unknown method {self.method!r}")
        if not self.dt > 0 or self.n_paths < 1:
            raise ValueError("dt must be positive and n_paths >= 1")

    @property
    def n_steps(self) -> int:
        return max(int(round((self.T - self.s) / self.dt)), 0)


@dataclass(eq=False)
class Ensemble:
    """Paths on the common grid ``t``; rows are paths.

    ``W`` is the driving Brownian motion (cumulative, starting at 0).
    Rows with ``exited`` set left the domain and are frozen from the exit
    step on; law-level statistics use :attr:`alive` rows only.
    """

    t: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    W: np.ndarray
    exited: np.ndarray
    seed: int
    meta: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if self.t.size > 1 else 0.0

    @property
    def n_paths(self) -> int:
        return self.X.shape[0]

    @property
    def exit_fraction(self) -> float:
        return float(np.mean(self.exited)) if self.exited.size else 0.0

    @property
    def alive(self) -> np.ndarray:
        return ~self.exited

    def path(self, i: int, which: str = "X") -> SamplePath:
        return SamplePath(float(self.t[0]), self.dt, getattr(self, which)[i], self.seed, "deterministic",
                          {"path": i})

    def to_ndjson(self, path, checkpoints: np.ndarray | None = None) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        idx = checkpoint_indices(self.t, 8) if checkpoints is None else checkpoints
        first = int(self.meta.get("first_path", 0))
        with path.open("w") as fh:
            for i in range(self.n_paths):
                rec = {
                    "seed": self.seed,
                    "path": first + i,
                    "exit_flag": bool(self.exited[i]),
                    "terminal_value": float(self.X[i, -1]),
                    "checkpoints": [float(v) for v in self.X[i, idx]],
                }
                fh.write(json.dumps(rec) + "\n")
        return path

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = "path," + ",".join(f"t={v:.10g}" for v in self.t)
        data = np.column_stack([np.arange(self.n_paths), self.X])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")
        return path


@dataclass
class ResidualReport:
    """A scalar residual and the terms of the identity that produced it."""

    name: str
    residual: float
    terms: dict
    params: dict
    passed: bool | None = None

    def to_dict(self) -> dict:
        return {"name": self.name, "residual": self.residual, "terms": self.terms,
                "params": self.params, "passed": self.passed}


@dataclass
class MartingaleTestReport:
    test_function: str
    checkpoints: np.ndarray
    increments_mean: np.ndarray
    standard_errors: np.ndarray
    n_paths: int
    exit_fraction: float

    @property
    def passed(self) -> bool:
        return bool(np.all(np.abs(self.increments_mean) <= 3.0 * self.standard_errors))

    def to_dict(self) -> dict:
        return {
            "test_function": self.test_function,
            "checkpoints": self.checkpoints.tolist(),
            "increments_mean": self.increments_mean.tolist(),
            "standard_errors": self.standard_errors.tolist(),
            "n_paths": self.n_paths,
            "exit_fraction": self.exit_fraction,
            "pass": self.passed,
        }


def checkpoint_indices(t: np.ndarray, n: int) -> np.ndarray:
    """``n`` indices spread evenly over ``(t[0], t[-1]]``."""
    steps = t.size - 1
    # round half to even can send the first index to 0 on very short grids
    return np.unique(np.maximum(np.round(np.linspace(0, steps, n + 1)[1:]).astype(int), 1))


def checkpoint_times(t: np.ndarray, n: int) -> np.ndarray:
    return t[checkpoint_indices(t, n)]


# ---------------------------------------------------------------------------
# simulation


def _check_sigma_tilde(maps: ScaleMaps):
    st = maps.sigma_h_tilde.values
    if np.min(st) <= 0.0:
        i = int(np.argmin(st))
        raise ValueError(f"sigma_h_tilde is not positive at y = {maps.sigma_h_tilde.x[i]:.6g}")


def _normals(seed: int, key: int, n_paths: int, n: int, first_path: int) -> np.ndarray:
    out = np.empty((n_paths, n))
    i = 0
    while i < n_paths:
        p = first_path + i
        blk, off = divmod(p, BLOCK)
        take = min(BLOCK - off, n_paths - i)
        out[i : i + take] = stream(seed, key, blk).standard_normal((BLOCK, n))[off : off + take]
        i += take
    return out


def _euler_on_Y(run: SdeRun, y_lo: float, y_hi: float):
    maps = run.maps
    n = run.n_steps
    dW = bm_increments(run.seed, run.n_paths, n, run.dt, run.first_path)
    Y = np.empty((run.n_paths, n + 1))
    Y[:, 0] = maps.h(run.x)
    exited = np.zeros(run.n_paths, dtype=bool)
    st = maps.sigma_h_tilde
    for k in range(n):
        y = Y[:, k]
        nxt = y + st(y) * dW[:, k]
        out = (nxt < y_lo) | (nxt > y_hi)
        nxt = np.where(exited, y, np.clip(nxt, y_lo, y_hi))
        exited |= out
        Y[:, k + 1] = nxt
    W = np.concatenate([np.zeros((run.n_paths, 1)), np.cumsum(dW, axis=1)], axis=1)
    return Y, W, exited


def _clock_horizon(run: SdeRun, quantile: float = 0.99, pilot_paths: int = 256) -> float:
    """B-time needed by most paths: a pilot Euler run estimates ``A_T = int sigma_h_tilde^2(Y) dt``."""
    st = run.maps.sigma_h_tilde
    n = max(run.n_steps, 1)
    z = _normals(run.seed, 5, pilot_paths, n, 0)
    y = np.full(pilot_paths, float(run.maps.h(run.x)))
    clock = np.zeros(pilot_paths)
    for k in range(n):
        s2 = st(y) ** 2
        clock += s2 * run.dt
        y = y + np.sqrt(s2 * run.dt) * z[:, k]
    return float(1.5 * np.quantile(clock, quantile))


def _time_change(run: SdeRun, y_lo: float, y_hi: float, fine: int = 8):
    """``Y_t = y0 + B_{A_t}`` with ``A`` the inverse of ``R_u = int_0^u dv / sigma_h_tilde^2(y0 + B_v)``.

    ``B`` lives on a grid ``fine`` times finer than the output grid, over a
    range sized by a pilot run; a path whose clock outruns the range is
    extended once and flagged if it still does.
    """
    maps = run.maps
    st = maps.sigma_h_tilde
    y0 = float(maps.h(run.x))
    n = run.n_steps
    horizon = run.T - run.s
    t_out = np.arange(n + 1) * run.dt
    du = run.dt / fine
    m = max(int(np.ceil(_clock_horizon(run) / du)), fine * max(n, 1))
    Y = np.empty((run.n_paths, n + 1))
    exited = np.zeros(run.n_paths, dtype=bool)
    extended = 0
    for i in range(run.n_paths):
        rng = stream(run.seed, 3, run.first_path + i)
        incs = np.sqrt(du) * rng.standard_normal(m)
        for attempt in range(2):
            B = np.concatenate([[0.0], np.cumsum(incs)])
            path_y = y0 + B
            R = integrate.cumulative_trapezoid(1.0 / st(path_y) ** 2, dx=du, initial=0.0)
            if R[-1] >= horizon or attempt == 1:
                break
            extended += 1
            incs = np.concatenate([incs, np.sqrt(du) * rng.standard_normal(m)])
        if R[-1] < horizon:
            exited[i] = True
        u = np.arange(B.size) * du
        A = np.interp(t_out, R, u)
        y = np.interp(A, u, path_y)
        # stop at the first time the B-path leaves the y-range
        hit = np.nonzero((path_y < y_lo) | (path_y > y_hi))[0]
        if hit.size and R[hit[0]] <= horizon:
            exited[i] = True
            k = int(np.searchsorted(t_out, R[hit[0]]))
            if k <= n:
                y[k:] = y[k]
        Y[i] = np.clip(y, y_lo, y_hi)
    dY = np.diff(Y, axis=1)
    dW = dY / st(Y[:, :-1])
    W = np.concatenate([np.zeros((run.n_paths, 1)), np.cumsum(dW, axis=1)], axis=1)
    return Y, W, exited, {"re_extended": extended, "clock_steps": m}


def simulate(run: SdeRun) -> Ensemble:
    """Simulate ``X^{s,x}`` on ``[s, T]`` with the run's method."""
    maps = run.maps
    _check_sigma_tilde(maps)
    y_lo, y_hi = float(maps.h.values[0]), float(maps.h.values[-1])
    meta = {"method": run.method, "dt": run.dt, "x": run.x, "s": run.s, "T": run.T,
            "first_path": run.first_path}
    if run.method == "euler_on_Y":
        Y, W, exited = _euler_on_Y(run, y_lo, y_hi)
    else:
        Y, W, exited, extra = _time_change(run, y_lo, y_hi)
        meta.update(extra)
    X = maps.h_inv(Y)
    t = run.s + run.dt * np.arange(run.n_steps + 1)
    ens = Ensemble(t, X, Y, W, exited, run.seed, meta)
    if ens.exit_fraction > EXIT_WARN_FRACTION:
        meta["exit_warning"] = True
        warnings.warn(f"{100 * ens.exit_fraction:.1f}% of paths left the truncated domain", stacklevel=2)
    return ens


def simulate_classical(coeffs: CoefficientPair, x: float, T: float, dt: float, n_paths: int, seed: int,
                       s: float = 0.0) -> Ensemble:
    """Direct Euler-Maruyama on ``dX = b'(X) dt + sigma(X) dW``; smooth pairs only."""
    if not coeffs.smooth:
        raise ValueError("the classical scheme needs a pair flagged smooth")
    bp = derivative(coeffs.b)
    sig = coeffs.sigma
    n = max(int(round((T - s) / dt)), 0)
    dW = np.sqrt(dt) * _normals(seed, 4, n_paths, n, 0)
    X = np.empty((n_paths, n + 1))
    X[:, 0] = x
    lo, hi = sig.x_min, sig.x_max
    exited = np.zeros(n_paths, dtype=bool)
    for k in range(n):
        xk = X[:, k]
        nxt = xk + bp(xk) * dt + sig(xk) * dW[:, k]
        out = (nxt < lo) | (nxt > hi)
        X[:, k + 1] = np.where(exited, xk, np.clip(nxt, lo, hi))
        exited |= out
    W = np.concatenate([np.zeros((n_paths, 1)), np.cumsum(dW, axis=1)], axis=1)
    t = s + dt * np.arange(n + 1)
    return Ensemble(t, X, np.full_like(X, np.nan), W, exited, seed, {"method": "classical_euler", "dt": dt})


# ---------------------------------------------------------------------------
# checks on simulated paths


def quadratic_variation_check(ens: Ensemble, sigma: GridFunction, eps_factor: int = 10,
                              max_paths: int = 64) -> ResidualReport:
    """Regularized ``[X, X]_T`` against ``int sigma^2(X) ds``, per path."""
    idx = np.nonzero(ens.alive)[0][:max_paths]
    eps = eps_factor * ens.dt
    devs, qv, ref = [], [], []
    for i in idx:
        p = ens.path(int(i))
        c = covariation(p, p, eps).terminal
        r = float(integrate.trapezoid(sigma(ens.X[i]) ** 2, dx=ens.dt))
        qv.append(c)
        ref.append(r)
        devs.append(abs(c - r) / abs(r))
    med = float(np.median(devs)) if devs else float("nan")
    return ResidualReport(
        "quadratic_variation", med,
        {"covariation": qv, "integral_sigma2": ref, "relative_deviation": devs},
        {"epsilon": eps, "dt": ens.dt, "n_paths": len(devs), "exit_fraction": ens.exit_fraction},
    )


def extended_drift_paths(X: np.ndarray, dW: np.ndarray, f: GridFunction, sigma: GridFunction) -> np.ndarray:
    """``f(X_t) - f(X_0) - int_0^t f'(X) sigma(X) dW`` with left-point sums; rows are paths."""
    fp = derivative(f)
    X = np.atleast_2d(X)
    dW = np.atleast_2d(dW)
    integrand = fp(X[:, :-1]) * sigma(X[:, :-1])
    ito = np.concatenate([np.zeros((X.shape[0], 1)), np.cumsum(integrand * dW, axis=1)], axis=1)
    fx = f(X)
    return fx - fx[:, :1] - ito


def extended_drift(X: SamplePath, W: SamplePath, ell: GridFunction, maps: ScaleMaps,
                   coeffs: CoefficientPair) -> SamplePath:
    """The path ``t -> A^X(l)_t`` with ``f = T l`` (``x1 = 0``)."""
    if X.n != W.n or X.dt != W.dt:
        raise ValueError("X and W must share a time grid")
    f = apply_T(ell, maps, coeffs, 0.0)
    vals = extended_drift_paths(X.values, np.diff(W.values), f, coeffs.sigma)[0]
    return SamplePath(X.t0, X.dt, vals, X.seed, "deterministic", {"ell": "user"})


def decomposition_residual(ens: Ensemble, maps: ScaleMaps, coeffs: CoefficientPair) -> np.ndarray:
    """Per-path sup over time of ``|X_t - X_0 - int sigma(X) dW - A^X(b)_t|``."""
    X = ens.X[ens.alive]
    dW = np.diff(ens.W[ens.alive], axis=1)
    f = apply_T(coeffs.b, maps, coeffs, 0.0)
    A = extended_drift_paths(X, dW, f, coeffs.sigma)
    ito = np.concatenate([np.zeros((X.shape[0], 1)),
                          np.cumsum(coeffs.sigma(X[:, :-1]) * dW, axis=1)], axis=1)
    R = X - X[:, :1] - ito - A
    return np.max(np.abs(R), axis=1)


def verify_martingale_problem(ens: Ensemble, test: str, maps: ScaleMaps, coeffs: CoefficientPair,
                              n_checkpoints: int = 8, f: GridFunction | None = None) -> MartingaleTestReport:
    """Zero-mean test of increments of ``M_t = g(X_t) - int_s^t (L g)(X_r) dr`` between checkpoints.

    ``test`` is ``h`` (``L h = 0``), ``h_squared`` (``L h^2 = (sigma h')^2``) or
    ``classical_f`` (a user ``f`` in ``C^2``, smooth coefficients only).
    The compensator uses left-point sums, matching the Ito discretization.
    """
    X = ens.X[ens.alive]
    dt = ens.dt
    if test == "h":
        M = maps.h(X)
    elif test == "h_squared":
        hx = maps.h(X)
        gen = (coeffs.sigma * maps.h_prime)(X[:, :-1]) ** 2
        M = hx**2 - np.concatenate([np.zeros((X.shape[0], 1)), np.cumsum(gen * dt, axis=1)], axis=1)
    elif test == "classical_f":
        if not coeffs.smooth:
            raise ValueError("classical_f needs coefficients flagged smooth")
        if f is None:
            raise ValueError("classical_f needs a test function f")
        Lf = 0.5 * coeffs.sigma2 * second_derivative(f) + derivative(coeffs.b) * derivative(f)
        gen = Lf(X[:, :-1])
        M = f(X) - np.concatenate([np.zeros((X.shape[0], 1)), np.cumsum(gen * dt, axis=1)], axis=1)
    else:
        raise ValueError(f"unknown test {test!r}")
    idx = np.concatenate([[0], checkpoint_indices(ens.t, n_checkpoints)])
    inc = np.diff(M[:, idx], axis=1)
    n = inc.shape[0]
    mean = inc.mean(axis=0)
    se = inc.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.full_like(mean, np.inf)
    return MartingaleTestReport(test, ens.t[idx[1:]], mean, se, n, ens.exit_fraction)
