"""Sampled functions on uniform grids.

Every coefficient, scale map and solution slice in the package is a
:class:`GridFunction`: values on a uniform grid over a truncated interval,
evaluated by linear interpolation and extended by constants outside the
interval.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate

__all__ = [
    "GridFunction",
    "HolderEstimate",
    "Mollifier",
    "from_callable",
    "holder_norm",
    "estimate_holder_exponent",
    "mollify",
    "invert_monotone",
    "primitive",
    "derivative",
    "second_derivative",
    "cell_slopes",
    "interp_tolerance",
    "trapezoid",
    "read_csv",
]


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Real function sampled on ``n_points`` uniform nodes of ``[x_min, x_max]``."""

    x_min: float
    x_max: float
    values: np.ndarray
    interp: str = "linear"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 1 or vals.size < 2:
            raise ValueError("a grid function needs at least 2 values")
        if not self.x_min < self.x_max:
            raise ValueError(f"x_min={self.x_min} must be < x_max={self.x_max}")
        if self.interp != "linear":
            raise ValueError(f"unsupported interpolation {self.interp!r}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "x_min", float(self.x_min))
        object.__setattr__(self, "x_max", float(self.x_max))

    @property
    def n_points(self) -> int:
        return self.values.size

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n_points - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_points)

    def __call__(self, x):
        """Piecewise-linear evaluation, clamped to the boundary values outside."""
        out = np.interp(x, self.x, self.values)
        return float(out) if np.ndim(out) == 0 else out

    eval = __call__

    def with_values(self, values, **meta) -> "GridFunction":
        return GridFunction(self.x_min, self.x_max, values, meta=dict(meta))

    def resample(self, n_points: int, x_min=None, x_max=None) -> "GridFunction":
        lo = self.x_min if x_min is None else x_min
        hi = self.x_max if x_max is None else x_max
        x = np.linspace(lo, hi, n_points)
        return GridFunction(lo, hi, self(x))

    def subsample(self, stride: int) -> "GridFunction":
        if (self.n_points - 1) % stride:
            raise ValueError(f"stride {stride} does not divide {self.n_points - 1} cells")
        return GridFunction(self.x_min, self.x_max, self.values[::stride])

    def restrict(self, a: float, b: float) -> "GridFunction":
        """Nodes lying in ``[a, b]`` (snapped outwards to the grid)."""
        i0 = max(int(np.floor((a - self.x_min) / self.dx + 1e-9)), 0)
        i1 = min(int(np.ceil((b - self.x_min) / self.dx - 1e-9)), self.n_points - 1)
        x = self.x
        return GridFunction(x[i0], x[i1], self.values[i0 : i1 + 1])

    def sup_distance(self, other: "GridFunction", a=None, b=None) -> float:
        x = self.x
        mask = np.ones_like(x, dtype=bool)
        if a is not None:
            mask &= x >= a - 1e-12
        if b is not None:
            mask &= x <= b + 1e-12
        return float(np.max(np.abs(self.values[mask] - other(x[mask]))))

    # arithmetic on a shared grid; used heavily when composing scale maps
    def _binary(self, other, op):
        if isinstance(other, GridFunction):
            if (other.n_points, other.x_min, other.x_max) != (self.n_points, self.x_min, self.x_max):
                other = other(self.x)
            else:
                other = other.values
        return GridFunction(self.x_min, self.x_max, op(self.values, other))

    def __add__(self, other):
        return self._binary(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    __rmul__ = __mul__

    def __rsub__(self, other):
        return self._binary(other, lambda a, b: b - a)

    def __truediv__(self, other):
        return self._binary(other, np.divide)

    def __rtruediv__(self, other):
        return self._binary(other, lambda a, b: b / a)

    def __neg__(self):
        return GridFunction(self.x_min, self.x_max, -self.values)

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "GridFunction":
        return GridFunction(self.x_min, self.x_max, fn(self.values))

    def compose(self, inner: "GridFunction") -> "GridFunction":
        """``self ∘ inner`` sampled on the grid of ``inner``."""
        return GridFunction(inner.x_min, inner.x_max, self(inner.values))

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        data = np.column_stack([self.x, self.values])
        np.savetxt(path, data, delimiter=",", header="x,value", comments="", fmt="%.17g")
        sidecar = path.with_suffix(path.suffix + ".json")
        meta = {"x_min": self.x_min, "x_max": self.x_max, "n_points": self.n_points}
        sidecar.write_text(json.dumps(meta) + "\n" + json.dumps(_jsonable(self.meta)) + "\n")
        return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def read_csv(path) -> GridFunction:
    """Read a ``x,value`` CSV; the grid must be uniform."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    x, v = data[:, 0], data[:, 1]
    if not np.allclose(np.diff(x), (x[-1] - x[0]) / (x.size - 1), rtol=1e-6, atol=1e-12):
        raise ValueError(f"{path}: grid is not uniform")
    return GridFunction(x[0], x[-1], v)


def from_callable(fn, x_min: float, x_max: float, n_points: int) -> GridFunction:
    x = np.linspace(x_min, x_max, n_points)
    return GridFunction(x_min, x_max, np.broadcast_to(np.asarray(fn(x), dtype=float), x.shape))


# ---------------------------------------------------------------------------
# calculus on the grid


def trapezoid(f: GridFunction, a=None, b=None) -> float:
    g = f if a is None and b is None else f.restrict(
        f.x_min if a is None else a, f.x_max if b is None else b
    )
    return float(integrate.trapezoid(g.values, dx=g.dx))


def primitive(f: GridFunction, anchor: float = 0.0) -> GridFunction:
    """Cumulative trapezoid integral ``x -> int_anchor^x f``."""
    cum = integrate.cumulative_trapezoid(f.values, dx=f.dx, initial=0.0)
    x = f.x
    # exact anchoring when the anchor is a node, linear otherwise
    i = int(round((anchor - f.x_min) / f.dx))
    if 0 <= i < f.n_points and abs(x[i] - anchor) < 1e-9 * max(1.0, f.dx):
        offset = cum[i]
    else:
        offset = np.interp(anchor, x, cum)
    return GridFunction(f.x_min, f.x_max, cum - offset)


def derivative(f: GridFunction) -> GridFunction:
    """Central differences inside, second-order one-sided at the two ends."""
    if f.n_points < 3:
        return GridFunction(f.x_min, f.x_max, np.gradient(f.values, f.dx))
    return GridFunction(f.x_min, f.x_max, np.gradient(f.values, f.dx, edge_order=2))


def second_derivative(f: GridFunction) -> GridFunction:
    return derivative(derivative(f))


def cell_slopes(f: GridFunction) -> np.ndarray:
    """Slope of the linear interpolant on each of the ``n_points - 1`` cells."""
    return np.diff(f.values) / f.dx


def interp_tolerance(f: GridFunction) -> float:
    """Bound ``dx^2 max|f''| / 8`` on the linear interpolation error, from second differences."""
    if f.n_points < 3:
        return 0.0
    return float(np.max(np.abs(np.diff(f.values, 2)))) / 8.0


# ---------------------------------------------------------------------------
# Hoelder seminorms


@dataclass(frozen=True)
class HolderEstimate:
    gamma: float
    norm: float
    interval: tuple


def holder_norm(f: GridFunction, gamma: float, a: float | None = None, b: float | None = None) -> HolderEstimate:
    """Supremum of ``|f(t)-f(s)| / |t-s|^gamma`` over all node pairs in ``[a, b]``.

    Exact for the sampled values, hence a lower bound on the seminorm of any
    function that interpolates them.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    a = f.x_min if a is None else a
    b = f.x_max if b is None else b
    if a < f.x_min - 1e-12 or b > f.x_max + 1e-12 or not a < b:
        raise ValueError(f"[{a}, {b}] is not inside [{f.x_min}, {f.x_max}]")
    x = f.x
    v = f.values[(x >= a - 1e-12) & (x <= b + 1e-12)]
    best = 0.0
    for lag in range(1, v.size):
        m = np.max(np.abs(v[lag:] - v[:-lag]))
        if m > 0.0:
            best = max(best, m / (lag * f.dx) ** gamma)
    return HolderEstimate(gamma=gamma, norm=float(best), interval=(a, b))


def estimate_holder_exponent(f: GridFunction, max_lag: int | None = None) -> float:
    """Log-log slope of the mean absolute increment against the lag.

    Returns 1.0 for functions whose increments vanish (constants) and is
    capped at 1.0 for smooth ones.
    """
    n = f.n_points
    max_lag = max_lag or max(2, min(64, (n - 1) // 8))
    lags = np.unique(np.geomspace(1, max_lag, 12).astype(int))
    incs = np.array([np.mean(np.abs(f.values[k:] - f.values[:-k])) for k in lags])
    if np.all(incs <= 1e-14 * max(1.0, np.max(np.abs(f.values)))):
        return 1.0
    keep = incs > 0
    slope = np.polyfit(np.log(lags[keep] * f.dx), np.log(incs[keep]), 1)[0]
    return float(min(slope, 1.0))


# ---------------------------------------------------------------------------
# mollifiers


def _bump_profile(x):
    out = np.zeros_like(x, dtype=float)
    inside = np.abs(x) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - x[inside] ** 2))
    return out


_BUMP_MASS = integrate.quad(lambda s: float(_bump_profile(np.array([s]))[0]), -1.0, 1.0, epsabs=1e-14)[0]


@dataclass(frozen=True)
class Mollifier:
    """``Phi_n(x) = n Phi(nx)`` for a standard Gaussian or the compact bump."""

    kind: str = "gaussian"
    n: int = 1

    def __post_init__(self):
        if self.kind not in ("gaussian", "compact_bump"):
            raise ValueError(f"unknown mollifier kind {self.kind!r}")
        if self.n < 1:
            raise ValueError("scale index n must be positive")

    @property
    def half_width(self) -> float:
        # gaussian: effective support, 8 standard deviations
        return (8.0 if self.kind == "gaussian" else 1.0) / self.n

    def base(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "gaussian":
            return np.exp(-0.5 * x**2) / np.sqrt(2.0 * np.pi)
        return _bump_profile(x) / _BUMP_MASS

    def __call__(self, x):
        return self.n * self.base(self.n * np.asarray(x, dtype=float))


def mollify(f: GridFunction, phi: Mollifier) -> GridFunction:
    """Discrete convolution ``f * Phi_n`` on the grid of ``f``.

    ``f`` is extended by its boundary values; the sampled kernel weights are
    renormalised to unit sum so affine functions are reproduced exactly.
    """
    length = f.x_max - f.x_min
    if 2.0 * phi.half_width > length:
        raise ValueError(
            f"mollifier support {2 * phi.half_width:.4g} exceeds domain length {length:.4g}"
        )
    m = int(np.floor(phi.half_width / f.dx))
    if m == 0:
        return f.with_values(f.values.copy())
    offsets = np.arange(-m, m + 1) * f.dx
    w = phi(offsets)
    if w.sum() <= 0.0:
        return f.with_values(f.values.copy())
    w = w / w.sum()
    padded = np.concatenate([np.full(m, f.values[0]), f.values, np.full(m, f.values[-1])])
    # symmetric kernel, so correlation == convolution
    out = np.convolve(padded, w, mode="valid")
    return f.with_values(out)


# ---------------------------------------------------------------------------
# inverses


def invert_monotone(f: GridFunction, n_points: int | None = None, max_refine: int = 8) -> GridFunction:
    """Inverse of a strictly monotone grid function on a uniform grid of its range.

    By default the output step resolves the smallest step between sampled
    values, up to ``max_refine`` times the input resolution.
    """
    v = f.values
    d = np.diff(v)
    if np.all(d > 0):
        xs, ys = v, f.x
    elif np.all(d < 0):
        xs, ys = v[::-1], f.x[::-1]
    else:
        sign = 1.0 if v[-1] >= v[0] else -1.0
        bad = int(np.argmax(sign * d <= 0))
        raise ValueError(
            f"not strictly monotone: nodes {bad} and {bad + 1} "
            f"(x={f.x[bad]:.6g}, {f.x[bad + 1]:.6g}; f={v[bad]:.6g}, {v[bad + 1]:.6g})"
        )
    if n_points is None:
        span = xs[-1] - xs[0]
        need = int(np.ceil(span / np.min(np.diff(xs)))) + 1
        n_points = int(min(max(need, f.n_points), max_refine * (f.n_points - 1) + 1))
    n = n_points
    y = np.linspace(xs[0], xs[-1], n)
    return GridFunction(xs[0], xs[-1], np.interp(y, xs, ys))
