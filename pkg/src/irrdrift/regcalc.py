"""Stochastic calculus via regularization on discrete paths.

All time integrals of difference quotients use the trapezoid rule on the
path grid; ``epsilon`` is rounded to an integer number ``m`` of steps and
paths are extended by their end values beyond the horizon.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .gridfn import GridFunction, holder_norm, estimate_holder_exponent
from .noise import SamplePath

__all__ = [
    "RegularizedIntegral",
    "EpsilonSweep",
    "DivergedError",
    "lag_steps",
    "forward_integral",
    "symmetric_integral",
    "covariation",
    "cubic_variation",
    "shift_defect",
    "ibp_window",
    "epsilon_sweep",
    "definite_symmetric",
    "definite_symmetric_integral",
    "young_integral",
    "young_sums",
]


class DivergedError(RuntimeError):
    """A refinement or epsilon sweep failed its Cauchy test; ``sweep`` holds the data."""

    def __init__(self, message, sweep=None):
        super().__init__(message)
        self.sweep = sweep


@dataclass(frozen=True, eq=False)
class RegularizedIntegral:
    epsilon: float
    values: SamplePath
    kind: str

    @property
    def terminal(self) -> float:
        return float(self.values.values[-1])


@dataclass(frozen=True, eq=False)
class EpsilonSweep:
    epsilons: np.ndarray
    terminal_values: np.ndarray
    extrapolated_limit: float
    diverged: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        eps = np.asarray(self.epsilons, dtype=float)
        if np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
            raise ValueError("epsilons must be positive and strictly decreasing")

    def to_csv(self, path):
        from pathlib import Path

        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(path, np.column_stack([self.epsilons, self.terminal_values]), delimiter=",",
                   header="epsilon,terminal_value", comments="", fmt="%.17g")
        return path


def lag_steps(epsilon: float, dt: float) -> int:
    return max(1, int(round(epsilon / dt)))


def _check_grids(Y: SamplePath, X: SamplePath):
    if Y.n != X.n or abs(Y.dt - X.dt) > 1e-12 * X.dt or abs(Y.t0 - X.t0) > 1e-12 * max(1.0, abs(X.t0)):
        raise ValueError("paths must share the same time grid")


def _ahead(v: np.ndarray, m: int) -> np.ndarray:
    return np.concatenate([v[m:], np.full(m, v[-1])])


def _behind(v: np.ndarray, m: int) -> np.ndarray:
    return np.concatenate([np.full(m, v[0]), v[:-m]])


def _running(X: SamplePath, integrand: np.ndarray, eps: float, kind: str, seed=None) -> RegularizedIntegral:
    run = integrate.cumulative_trapezoid(integrand, dx=X.dt, initial=0.0)
    path = SamplePath(X.t0, X.dt, run, X.seed if seed is None else seed, "deterministic",
                      {"epsilon": eps, "dt": X.dt, "kind": kind})
    return RegularizedIntegral(eps, path, kind)


def forward_integral(Y: SamplePath, X: SamplePath, epsilon: float) -> RegularizedIntegral:
    """``t -> int_0^t Y_s (X_{s+eps} - X_s) / eps ds``."""
    _check_grids(Y, X)
    m = lag_steps(epsilon, X.dt)
    eps = m * X.dt
    x = X.values
    return _running(X, Y.values * (_ahead(x, m) - x) / eps, eps, "forward")


def symmetric_integral(Y: SamplePath, X: SamplePath, epsilon: float) -> RegularizedIntegral:
    """``t -> int_0^t Y_s (X_{s+eps} - X_{s-eps}) / (2 eps) ds``."""
    _check_grids(Y, X)
    m = lag_steps(epsilon, X.dt)
    eps = m * X.dt
    x = X.values
    return _running(X, Y.values * (_ahead(x, m) - _behind(x, m)) / (2.0 * eps), eps, "symmetric")


def covariation(X: SamplePath, Y: SamplePath, epsilon: float) -> RegularizedIntegral:
    """``C^eps(X, Y)_t = (1/eps) int_0^t (X_{s+eps} - X_s)(Y_{s+eps} - Y_s) ds``."""
    _check_grids(Y, X)
    m = lag_steps(epsilon, X.dt)
    eps = m * X.dt
    x, y = X.values, Y.values
    return _running(X, (_ahead(x, m) - x) * (_ahead(y, m) - y) / eps, eps, "covariation")


def cubic_variation(X: SamplePath, epsilon: float, strong: bool = False) -> RegularizedIntegral:
    """``[X,X,X]^eps``, or its strong norm with ``|.|^3`` when ``strong``."""
    m = lag_steps(epsilon, X.dt)
    eps = m * X.dt
    d = _ahead(X.values, m) - X.values
    integrand = np.abs(d) ** 3 if strong else d**3
    return _running(X, integrand / eps, eps, "cubic_strong_norm" if strong else "cubic")


def _trap_weights(n: int, dt: float) -> np.ndarray:
    w = np.full(n, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


def _window_sum(R: np.ndarray, m: int, dt: float) -> float:
    """``sum_k w_k (R_{k} - R_{k+m})`` reduced to its boundary windows.

    ``R`` is indexed from ``-m`` to ``N + m`` (length ``N + 1 + 2m``). The
    interior coefficients cancel because the trapezoid weights are uniform
    there, leaving the first and last ``m + 1`` indices.
    """
    n = R.size - 2 * m
    w = _trap_weights(n, dt)
    coef = np.zeros(R.size)
    coef[m : m + n] += w
    coef[2 * m : 2 * m + n] -= w
    nz = np.flatnonzero(np.abs(coef) > 0.25 * dt * 1e-12)
    return float(np.dot(coef[nz], R[nz]))


def _extended(v: np.ndarray, m: int) -> np.ndarray:
    return np.concatenate([np.full(m, v[0]), v, np.full(m, v[-1])])


def shift_defect(Y: SamplePath, X: SamplePath, epsilon: float) -> float:
    """Terminal boundary defect ``D`` of ``sym = fwd + cov/2 + D/2`` at fixed ``epsilon``.

    Computed from the boundary windows only, independently of the three
    integrals it reconciles; it tends to zero with ``epsilon`` for
    continuous paths.
    """
    _check_grids(Y, X)
    m = lag_steps(epsilon, X.dt)
    eps = m * X.dt
    xe, ye = _extended(X.values, m), _extended(Y.values, m)
    # R_k = Y_k (X_k - X_{k-m}) on indices -m .. N + m
    R = ye * (xe - _behind(xe, m))
    R[:m] = 0.0  # X is constant before 0
    return _window_sum(R, m, X.dt) / eps


def ibp_window(Y: SamplePath, X: SamplePath, epsilon: float) -> float:
    """Exact discrete value of ``int Y d°X + int X d°Y`` at fixed ``epsilon``.

    Equals a difference of window averages of ``Y_k X_{k+m} + X_k Y_{k+m}``
    near the two ends, which tends to ``X_T Y_T - X_0 Y_0``.
    """
    _check_grids(Y, X)
    m = lag_steps(epsilon, X.dt)
    eps = m * X.dt
    xe, ye = _extended(X.values, m), _extended(Y.values, m)
    Q = ye * _ahead(xe, m) + xe * _ahead(ye, m)
    # sum_k w_k (Q_k - Q_{k-m}) = -sum_k w_k (Q_{k-m} - Q_k): shift R_j = Q_{j-m}
    Qs = _behind(Q, m)
    return -_window_sum(Qs, m, X.dt) / (2.0 * eps)


# ---------------------------------------------------------------------------
# epsilon sweeps


def _cauchy(values: np.ndarray) -> bool:
    d = np.abs(np.diff(values))
    if d.size < 2:
        return True
    return bool(d[-1] <= d[-2] * 1.0001 + 1e-15)


def epsilon_sweep(fn: Callable[[float], float], eps0: float, levels: int = 6, ratio: float = 2.0,
                  order: float = 1.0) -> EpsilonSweep:
    """Evaluate ``fn`` on ``eps0 / ratio^k`` and extrapolate with Richardson on the last two."""
    eps = eps0 / ratio ** np.arange(levels)
    vals = np.array([fn(e) for e in eps])
    if levels >= 2:
        r = ratio**order
        limit = (r * vals[-1] - vals[-2]) / (r - 1.0)
    else:
        limit = vals[-1]
    return EpsilonSweep(eps, vals, float(limit), diverged=not _cauchy(vals))


def definite_symmetric(Y: GridFunction, X: GridFunction, epsilon: float) -> float:
    """``int_R Y(x) (X(x+eps) - X(x-eps)) / (2 eps) dx`` on the grid of ``Y``.

    ``X`` is evaluated by interpolation (constant beyond its domain); with
    ``epsilon`` a multiple of a shared grid step this is an exact shift.
    """
    x = Y.x
    dq = (X(x + epsilon) - X(x - epsilon)) / (2.0 * epsilon)
    return float(integrate.trapezoid(Y.values * dq, dx=Y.dx))


def definite_symmetric_integral(Y: GridFunction, X: GridFunction, eps0: float | None = None,
                                levels: int = 5, tol: float = 1e-9) -> EpsilonSweep:
    """Sweep of :func:`definite_symmetric` for compactly supported ``Y``.

    ``Y`` must vanish at both ends of its domain (the compact-support
    requirement of the definite integral).
    """
    scale = max(1.0, float(np.max(np.abs(Y.values))))
    if abs(Y.values[0]) > tol * scale or abs(Y.values[-1]) > tol * scale:
        raise ValueError("Y must vanish at both domain ends (compact support)")
    step = X.dx if X.dx <= Y.dx else Y.dx
    if eps0 is None:
        eps0 = step * 2 ** (levels - 1)
    sw = epsilon_sweep(lambda e: definite_symmetric(Y, X, e), eps0, levels, order=2.0)
    return sw


# ---------------------------------------------------------------------------
# Young integration


def young_sums(f: np.ndarray, g: np.ndarray, sub: int) -> np.ndarray:
    """Per-cell left-point Riemann-Stieltjes sums with ``sub`` equal sub-cells.

    For the linear interpolants of ``f`` and ``g`` on one cell the sum is
    ``dg (f_i + df (sub - 1) / (2 sub))``; ``sub -> oo`` gives the trapezoid value.
    """
    df, dg = np.diff(f), np.diff(g)
    return dg * (f[:-1] + df * (sub - 1) / (2.0 * sub))


def young_integral(f: GridFunction, g: GridFunction, gamma: float = 0.5, beta: float = 0.6,
                   tol: float = 1e-12, max_refine: int = 40) -> GridFunction:
    """Running integral ``x -> int_{x_min}^x f d^(y) g`` by dyadic refinement.

    The partition starts at a coarse sub-grid of the nodes, is refined down
    to the native grid and then below it by interpolation, until two
    successive terminal values differ by less than ``tol`` (relative).
    ``gamma`` and ``beta`` are the caller's Hoelder exponents for ``f`` and
    ``g``; they and the measured seminorms are kept in ``meta``.
    """
    if (f.n_points, f.x_min, f.x_max) != (g.n_points, g.x_min, g.x_max):
        f = f.resample(g.n_points, g.x_min, g.x_max)
    n_cells = g.n_points - 1
    levels = []
    stride = 1
    while n_cells % (stride * 2) == 0 and n_cells // (stride * 2) >= 8:
        stride *= 2
    fv, gv = f.values, g.values
    while stride >= 1:
        levels.append(float(np.sum(young_sums(fv[::stride], gv[::stride], 1))))
        stride //= 2
    sub = 1
    history = []
    converged = False
    for _ in range(max_refine):
        sub *= 2
        levels.append(float(np.sum(young_sums(fv, gv, sub))))
        d = abs(levels[-1] - levels[-2])
        history.append(d)
        if d <= tol * max(1.0, abs(levels[-1])):
            converged = True
            break
        if len(history) >= 3 and history[-1] > history[-2] > history[-3]:
            break
    if not converged:
        raise DivergedError("Young refinement did not converge", sweep=np.array(levels))
    cells = young_sums(fv, gv, sub)
    running = np.concatenate([[0.0], np.cumsum(cells)])
    nf = holder_norm(f, gamma).norm if 0 < gamma < 1 else float("nan")
    ng = holder_norm(g, beta).norm if 0 < beta < 1 else float("nan")
    est_f, est_g = estimate_holder_exponent(f), estimate_holder_exponent(g)
    meta = {
        "gamma": gamma,
        "beta": beta,
        "holder_f": nf,
        "holder_g": ng,
        "estimated_exponents": (est_f, est_g),
        "exponent_sum_ok": bool(gamma + beta > 1.0 and est_f + est_g > 1.0),
        "refinement": levels,
    }
    return GridFunction(g.x_min, g.x_max, running, meta=meta)
