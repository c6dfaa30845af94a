"""Reproducible Brownian and fractional Brownian paths.

Randomness comes from Philox streams keyed by ``(seed, stream id)`` through
:class:`numpy.random.SeedSequence`, so a path depends only on its key and
never on the order in which paths are generated.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .gridfn import GridFunction

__all__ = [
    "SamplePath",
    "Environment",
    "stream",
    "normal_block",
    "bm_increments",
    "gen_bm",
    "gen_fbm",
    "fgn",
    "gen_environment",
    "import_environment",
]

#: paths per RNG stream in ensemble generation; fixed so results do not depend on workers
BLOCK = 1024


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *key])))


@dataclass(frozen=True, eq=False)
class SamplePath:
    """One realisation on the time grid ``t0, t0 + dt, ...``."""

    t0: float
    dt: float
    values: np.ndarray
    seed: int = 0
    kind: str = "deterministic"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        vals = np.array(self.values, dtype=float)
        if not np.all(np.isfinite(vals)):
            raise ValueError("path values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n)

    @property
    def horizon(self) -> float:
        return self.t0 + self.dt * (self.n - 1)

    def map(self, fn) -> "SamplePath":
        return SamplePath(self.t0, self.dt, fn(self.values), self.seed, self.kind, dict(self.meta))

    def subsample(self, stride: int) -> "SamplePath":
        return SamplePath(self.t0, self.dt * stride, self.values[::stride], self.seed, self.kind, dict(self.meta))

    def as_gridfunction(self) -> GridFunction:
        return GridFunction(self.t0, self.horizon, self.values, meta={"seed": self.seed, "kind": self.kind})

    def to_csv(self, path):
        from pathlib import Path

        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(path, np.column_stack([self.t, self.values]), delimiter=",",
                   header="t,value", comments="", fmt="%.17g")
        return path


def normal_block(seed: int, block: int, shape) -> np.ndarray:
    return stream(seed, 1, block).standard_normal(shape)


def bm_increments(seed: int, n_paths: int, n_steps: int, dt: float, first_path: int = 0) -> np.ndarray:
    """Brownian increments, shape ``(n_paths, n_steps)``.

    Paths are grouped in blocks of :data:`BLOCK`; each block owns one stream,
    so path ``i`` has the same increments whatever ensemble it belongs to.
    """
    out = np.empty((n_paths, n_steps))
    sd = np.sqrt(dt)
    i = 0
    while i < n_paths:
        p = first_path + i
        blk, off = divmod(p, BLOCK)
        take = min(BLOCK - off, n_paths - i)
        z = normal_block(seed, blk, (BLOCK, n_steps))
        out[i : i + take] = sd * z[off : off + take]
        i += take
    return out


def gen_bm(seed: int, t0: float, dt: float, n: int) -> SamplePath:
    """Brownian path with ``n`` points, started at 0 at time ``t0``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not dt > 0:
        raise ValueError("dt must be positive")
    inc = np.sqrt(dt) * stream(seed, 0).standard_normal(n - 1)
    return SamplePath(t0, dt, np.concatenate([[0.0], np.cumsum(inc)]), seed, "bm")


def _fgn_autocov(hurst: float, m: int) -> np.ndarray:
    k = np.arange(m + 1, dtype=float)
    h2 = 2.0 * hurst
    return 0.5 * (np.abs(k + 1) ** h2 - 2.0 * k**h2 + np.abs(k - 1) ** h2)


def fgn(rng: np.random.Generator, hurst: float, n: int, method: str = "auto"):
    """``n`` unit-step fractional Gaussian noise samples; returns ``(noise, method_used)``.

    Circulant embedding when its eigenvalues are nonnegative, Cholesky of
    the Toeplitz covariance otherwise.
    """
    if n == 0:
        return np.zeros(0), "none"
    if method in ("auto", "circulant"):
        m = 1 << int(np.ceil(np.log2(max(n, 2))))
        c = _fgn_autocov(hurst, m)
        row = np.concatenate([c, c[-2:0:-1]])
        lam = np.fft.fft(row).real
        if lam.min() >= -1e-10 * lam.max():
            lam = np.clip(lam, 0.0, None)
            size = row.size
            w = np.sqrt(lam / size) * (rng.standard_normal(size) + 1j * rng.standard_normal(size))
            return np.fft.fft(w).real[:n], "circulant"
        if method == "circulant":
            raise RuntimeError("circulant embedding is not nonnegative definite")
    cov = linalg.toeplitz(_fgn_autocov(hurst, n - 1)[:n])
    chol = linalg.cholesky(cov, lower=True)
    return chol @ rng.standard_normal(n), "cholesky"


def gen_fbm(seed: int, hurst: float, t0: float, dt: float, n: int, method: str = "auto") -> SamplePath:
    """Fractional Brownian motion with ``n`` points, value 0 at ``t0``.

    Covariance ``0.5 (s^2H + t^2H - |t-s|^2H)`` in the elapsed times.
    """
    if not 0.0 < hurst < 1.0:
        raise ValueError(f"hurst must lie in (0, 1), got {hurst}")
    if n < 1:
        raise ValueError("n must be >= 1")
    noise, used = fgn(stream(seed, 0), hurst, n - 1, method)
    values = np.concatenate([[0.0], np.cumsum(noise)]) * dt**hurst
    return SamplePath(t0, dt, values, seed, f"fbm({hurst:g})", {"method": used, "hurst": hurst})


@dataclass(frozen=True, eq=False)
class Environment:
    """Two-sided path ``x -> eta(x)`` on ``[-L, L]`` with ``eta(0) = 0``."""

    grid: GridFunction
    hurst: float
    seed: int
    spde_ready: bool = True

    @property
    def L(self) -> float:
        return self.grid.x_max

    def __call__(self, x):
        return self.grid(x)

    def subsample(self, stride: int) -> "Environment":
        n_half = (self.grid.n_points - 1) // 2
        if n_half % stride:
            raise ValueError("stride must divide the half-grid so that x = 0 stays a node")
        return Environment(self.grid.subsample(stride), self.hurst, self.seed, self.spde_ready)

    def bounds(self) -> tuple[float, float]:
        """``(Z1, Z2)`` with ``Z1 <= exp(eta) <= Z2`` on the truncation."""
        m = float(np.max(np.abs(self.grid.values)))
        return float(np.exp(-m)), float(np.exp(m))


def gen_environment(seed: int, hurst: float, L: float, n: int, for_spde: bool = False) -> Environment:
    """Glue two independent fBm branches at 0.

    ``n`` is the (odd) number of grid points on ``[-L, L]``. With
    ``for_spde`` the cubic-variation requirement ``hurst >= 1/3`` is enforced;
    otherwise violating it only sets ``spde_ready = False`` and warns.
    """
    if not 0.0 < hurst < 1.0:
        raise ValueError(f"hurst must lie in (0, 1), got {hurst}")
    if n < 3 or n % 2 == 0:
        raise ValueError("n must be odd and >= 3 so that x = 0 is a grid node")
    ready = hurst >= 1.0 / 3.0
    if not ready:
        if for_spde:
            raise ValueError(f"hurst = {hurst} violates the H >= 1/3 requirement of the SPDE pipeline")
        warnings.warn(f"hurst = {hurst} < 1/3: environment is not a strong zero cubic variation process",
                      stacklevel=2)
    half = (n - 1) // 2
    dx = L / half
    rng_right = stream(seed, 2, 0)
    rng_left = stream(seed, 2, 1)
    right, _ = fgn(rng_right, hurst, half)
    left, _ = fgn(rng_left, hurst, half)
    scale = dx**hurst
    vr = np.cumsum(right) * scale
    vl = np.cumsum(left) * scale
    values = np.concatenate([vl[::-1], [0.0], vr])
    grid = GridFunction(-L, L, values, meta={"seed": seed, "hurst": hurst})
    return Environment(grid, hurst, seed, ready)


def import_environment(grid: GridFunction, hurst: float = float("nan")) -> Environment:
    """Wrap a user-supplied environment, re-anchoring it so that ``eta(0) = 0``."""
    shifted = grid - grid(0.0)
    ready = not (hurst < 1.0 / 3.0)
    return Environment(shifted, hurst, -1, ready)
