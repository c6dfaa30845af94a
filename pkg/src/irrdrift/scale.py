"""Scale functions and the operators built on them.

From a coefficient pair ``(sigma, b)`` we build the exponent ``Sigma`` (the
limit of ``2 int b_n' / sigma_n^2``), the scale map ``h`` with
``h' = exp(-Sigma)``, the divergence-form map ``k`` with
``k' = exp(Sigma) / sigma^2``, the solution operator ``T`` of
``L f = l'`` and the integrated operator ``hat L``.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate

from .gridfn import (
    GridFunction,
    Mollifier,
    derivative,
    invert_monotone,
    mollify,
    primitive,
    second_derivative,
)
from .regcalc import DivergedError, young_integral

__all__ = [
    "ROUTES",
    "T_ROUTES",
    "CoefficientPair",
    "ScaleMaps",
    "FeasibilityReport",
    "compute_sigma_big",
    "build_scale_maps",
    "feasibility",
    "apply_T",
    "hat_L",
    "phi_bilinear",
    "stieltjes_primitive",
    "divergence_normalizer",
    "mollified_pair",
]

ROUTES = ("smooth_drift", "close_to_divergence", "sigma_bv", "holder_young", "mollifier_limit")
T_ROUTES = ("c1_quadrature", "close_to_divergence_closed_form", "young")


@dataclass(frozen=True, eq=False)
class CoefficientPair:
    """Diffusion coefficient ``sigma > 0`` and drift primitive ``b`` with ``b(0) = 0``.

    ``params`` carries route data: ``alpha`` and ``beta`` (a GridFunction) for
    ``close_to_divergence``; ``gamma`` and ``beta_exp`` (Hoelder exponents of
    ``1/sigma^2`` and ``b``) for ``holder_young``; ``ns`` and ``kinds`` for
    ``mollifier_limit``. ``smooth`` marks pairs on which classical
    derivatives of ``b`` may be taken.
    """

    sigma: GridFunction
    b: GridFunction
    route: str = "smooth_drift"
    params: dict = field(default_factory=dict)
    smooth: bool = False

    def __post_init__(self):
        if self.route not in ROUTES:
            raise ValueError(f"unknown route {self.route!r}; expected one of {ROUTES}")
        s, b = self.sigma, self.b
        if (s.n_points, s.x_min, s.x_max) != (b.n_points, b.x_min, b.x_max):
            object.__setattr__(self, "b", b.resample(s.n_points, s.x_min, s.x_max))
        if not s.x_min <= 0.0 <= s.x_max:
            raise ValueError("the domain must contain x = 0")
        if np.min(s.values) <= 0.0:
            raise ValueError(f"sigma must be positive, min is {np.min(s.values):.6g}")
        scale = max(1.0, float(np.max(np.abs(self.b.values))))
        if abs(self.b(0.0)) > 1e-10 * scale:
            raise ValueError(f"b(0) must be 0, got {self.b(0.0):.6g}")
        if self.route == "close_to_divergence" and "beta" not in self.params:
            raise ValueError("close_to_divergence needs params['beta']")

    @property
    def sigma2(self) -> GridFunction:
        return self.sigma * self.sigma

    @property
    def x(self) -> np.ndarray:
        return self.sigma.x

    def with_route(self, route: str, **params) -> "CoefficientPair":
        return CoefficientPair(self.sigma, self.b, route, {**self.params, **params}, self.smooth)


def _zero_at_origin(f: GridFunction) -> GridFunction:
    return f - f(0.0)


def stieltjes_primitive(f: GridFunction, g: GridFunction) -> GridFunction:
    """``x -> int_0^x f dg`` with the trapezoid rule on each cell.

    Exact for the linear interpolant of ``g`` paired with the cell mean of
    ``f``; this is the limit of the Young refinement on the grid.
    """
    cells = np.diff(g.values) * 0.5 * (f.values[1:] + f.values[:-1])
    run = np.concatenate([[0.0], np.cumsum(cells)])
    return _zero_at_origin(GridFunction(g.x_min, g.x_max, run))


# ---------------------------------------------------------------------------
# Sigma


def mollified_pair(coeffs: CoefficientPair, phi: Mollifier) -> tuple[GridFunction, GridFunction]:
    """``(sigma_n^2, b_n)``: truncate at level ``n`` then convolve with ``Phi_n``."""
    n = phi.n
    s2 = mollify(coeffs.sigma2.map(lambda v: np.minimum(v, n)), phi)
    bn = mollify(coeffs.b.map(lambda v: np.clip(v, -n, n)), phi)
    return s2, bn


def _sigma_mollified(coeffs, phi):
    s2, bn = mollified_pair(coeffs, phi)
    return 2.0 * stieltjes_primitive(1.0 / s2, bn)


def _default_ns(f: GridFunction) -> list[int]:
    # up to kernels narrower than the grid step, where the sampled sweep saturates
    n_max = 16.0 / f.dx
    ns, n = [], 8
    while n <= n_max:
        ns.append(n)
        n *= 2
    return ns


def _mollifier_sweep(coeffs: CoefficientPair, tol: float):
    ns = coeffs.params.get("ns") or _default_ns(coeffs.sigma)
    kinds = coeffs.params.get("kinds", ("gaussian", "compact_bump"))
    length = coeffs.sigma.x_max - coeffs.sigma.x_min
    finals, sweeps = {}, {}
    for kind in kinds:
        usable = [n for n in ns if 2.0 * Mollifier(kind, n).half_width <= length]
        seq = [_sigma_mollified(coeffs, Mollifier(kind, n)) for n in usable]
        diffs = [float(np.max(np.abs(a.values - b.values))) for a, b in zip(seq[1:], seq[:-1])]
        sweeps[kind] = {"ns": usable, "sup_differences": diffs}
        if len(diffs) < 1 or diffs[-1] > tol:
            raise DivergedError(f"mollifier_limit sweep ({kind}) is not Cauchy", sweep=sweeps)
        finals[kind] = seq[-1]
    first = finals[kinds[0]]
    cross = max(float(np.max(np.abs(first.values - f.values))) for f in finals.values())
    if cross > tol:
        raise DivergedError(f"mollifier kinds disagree by {cross:.3g}", sweep=sweeps)
    return first, {"sweeps": sweeps, "cross_kind_distance": cross}


def compute_sigma_big(coeffs: CoefficientPair, route: str | None = None, tol: float = 5e-3) -> GridFunction:
    """``Sigma`` with ``Sigma(0) = 0`` by the requested construction.

    ``route`` defaults to ``coeffs.route``. The result's ``meta`` records the
    route, a ``reliable`` flag and any sweep data.
    """
    route = route or coeffs.route
    s2 = coeffs.sigma2
    inv_s2 = 1.0 / s2
    b = coeffs.b
    meta = {"route": route, "reliable": True}
    if route == "smooth_drift":
        Sigma = 2.0 * primitive(derivative(b) * inv_s2)
    elif route == "close_to_divergence":
        alpha = float(coeffs.params.get("alpha", 1.0))
        beta = coeffs.params["beta"]
        if (beta.n_points, beta.x_min, beta.x_max) != (b.n_points, b.x_min, b.x_max):
            beta = beta.resample(b.n_points, b.x_min, b.x_max)
        implied = alpha * (s2 - s2(0.0)) * 0.5 + beta
        meta["b_mismatch"] = float(np.max(np.abs(implied.values - b.values)))
        Sigma = alpha * (s2 / s2(0.0)).map(np.log) + 2.0 * stieltjes_primitive(inv_s2, beta)
    elif route == "sigma_bv":
        Sigma = -2.0 * stieltjes_primitive(b, inv_s2) + 2.0 * b * inv_s2 - 2.0 * b(0.0) * inv_s2(0.0)
    elif route == "holder_young":
        gamma = float(coeffs.params.get("gamma", 0.9))
        beta_exp = float(coeffs.params.get("beta_exp", 0.45))
        run = young_integral(inv_s2, b, gamma=gamma, beta=beta_exp)
        Sigma = 2.0 * _zero_at_origin(run)
        meta.update({k: run.meta[k] for k in ("holder_f", "holder_g", "estimated_exponents")})
        meta["reliable"] = bool(run.meta["exponent_sum_ok"])
        if not meta["reliable"]:
            warnings.warn("holder_young: measured exponents do not sum above 1; Sigma marked unreliable",
                          stacklevel=2)
    elif route == "mollifier_limit":
        Sigma, info = _mollifier_sweep(coeffs, tol)
        meta.update(info)
    else:
        raise ValueError(f"unknown route {route!r}")
    Sigma = _zero_at_origin(Sigma)
    return GridFunction(Sigma.x_min, Sigma.x_max, Sigma.values, meta=meta)


# ---------------------------------------------------------------------------
# scale maps


@dataclass(frozen=True, eq=False)
class ScaleMaps:
    Sigma: GridFunction
    h: GridFunction
    h_prime: GridFunction
    h_inv: GridFunction
    k: GridFunction
    k_prime: GridFunction
    k_inv: GridFunction
    sigma_h_tilde: GridFunction
    sigma_k_bar: GridFunction

    def to_csv(self, directory) -> list[Path]:
        directory = Path(directory)
        out = []
        for name in ("Sigma", "h", "h_prime", "h_inv", "k", "k_prime", "k_inv", "sigma_h_tilde", "sigma_k_bar"):
            out.append(getattr(self, name).to_csv(directory / f"{name}.csv"))
        return out


def build_scale_maps(coeffs: CoefficientPair, Sigma: GridFunction | None = None) -> ScaleMaps:
    """``h``, ``k``, their inverses and the transformed diffusion coefficients."""
    if Sigma is None:
        Sigma = compute_sigma_big(coeffs)
    if not np.all(np.isfinite(Sigma.values)):
        raise ValueError("Sigma is not finite on the domain")
    h_prime = Sigma.map(lambda v: np.exp(-v))
    k_prime = Sigma.map(np.exp) / coeffs.sigma2
    h = primitive(h_prime)
    k = primitive(k_prime)
    h_inv = invert_monotone(h)
    k_inv = invert_monotone(k)
    sigma_h_tilde = (coeffs.sigma * h_prime).compose(h_inv)
    sigma_k_bar = (coeffs.sigma * k_prime).compose(k_inv)
    return ScaleMaps(Sigma, h, h_prime, h_inv, k, k_prime, k_inv, sigma_h_tilde, sigma_k_bar)


def divergence_normalizer(maps: ScaleMaps, sigma: GridFunction) -> GridFunction:
    """``H`` on the range of ``k`` with ``H' = 1 / sigma_k_bar^2`` and ``H(0) = 0``.

    ``H'`` is integrated by Simpson's rule over the images ``z_i = k(x_i)``
    of the nodes, where ``sigma_k_bar(z_i) = (sigma k')(x_i)``, then resampled
    on the uniform grid of ``k_inv``. ``H o k = h`` up to two interpolations
    for smooth coefficients.
    """
    z = maps.k.values
    Hp = 1.0 / (sigma.values * maps.k_prime.values) ** 2
    H_nodes = integrate.cumulative_simpson(Hp, x=z, initial=0.0)
    grid = maps.k_inv
    H = GridFunction(grid.x_min, grid.x_max, np.interp(grid.x, z, H_nodes))
    return H - H(0.0)


# ---------------------------------------------------------------------------
# feasibility


@dataclass
class FeasibilityReport:
    nonexplosion_left: str
    nonexplosion_right: str
    evidence: dict
    aronson_c: float
    aronson_C: float
    aronson_ok: bool

    @property
    def nonexplosion_ok(self) -> bool:
        return self.nonexplosion_left == "pass" and self.nonexplosion_right == "pass"

    def to_dict(self) -> dict:
        return {
            "nonexplosion_left": self.nonexplosion_left,
            "nonexplosion_right": self.nonexplosion_right,
            "evidence": self.evidence,
            "aronson_c": self.aronson_c,
            "aronson_C": self.aronson_C,
            "aronson_ok": self.aronson_ok,
        }

    def to_json(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path


def _growth(density: GridFunction, end: float, levels: int = 4) -> list[float]:
    """``int_0^{end / 2^j}`` of ``density`` for ``j = levels-1, ..., 0``."""
    run = primitive(density)
    return [abs(run(end / 2.0**j)) for j in range(levels - 1, -1, -1)]


def feasibility(coeffs: CoefficientPair, Sigma: GridFunction, growth_threshold: float = 0.25) -> FeasibilityReport:
    """Nonexplosion trend and Aronson constants on the truncated domain.

    A side passes when, for both the scale density ``exp(-Sigma)`` and the
    speed density ``exp(Sigma)/sigma^2``, doubling the integration range
    still adds at least ``growth_threshold`` of the accumulated integral.
    A convergent integral shows a vanishing increment and fails.
    """
    scale_d = Sigma.map(lambda v: np.exp(-v))
    speed_d = Sigma.map(np.exp) / coeffs.sigma2
    verdicts, evidence = {}, {}
    for side, end in (("left", Sigma.x_min), ("right", Sigma.x_max)):
        ok = True
        for name, dens in (("scale", scale_d), ("speed", speed_d)):
            seq = _growth(dens, end)
            rel = (seq[-1] - seq[-2]) / seq[-2] if seq[-2] > 0 else float("inf")
            evidence[f"{side}_{name}"] = {"nested_integrals": seq, "last_relative_growth": rel}
            ok &= rel >= growth_threshold
        verdicts[side] = "pass" if ok else "fail"
    c, C = float(np.min(speed_d.values)), float(np.max(speed_d.values))
    return FeasibilityReport(verdicts["left"], verdicts["right"], evidence, c, C,
                             bool(0.0 < c and np.isfinite(C)))


# ---------------------------------------------------------------------------
# operators


def apply_T(ell: GridFunction, maps: ScaleMaps, coeffs: CoefficientPair, x1: float = 0.0,
            route: str = "c1_quadrature", gamma: float = 0.9, beta: float = 0.45) -> GridFunction:
    """``f = T^{x1} l``: ``f(0) = 0`` and ``f' = exp(-Sigma) (2 int_0^x exp(Sigma) l' / sigma^2 + x1)``.

    Routes: ``c1_quadrature`` differentiates ``l`` on the grid;
    ``young`` integrates ``2 exp(Sigma)/sigma^2`` against ``l`` as a Young
    integral; ``close_to_divergence_closed_form`` needs no derivative of
    ``l`` and is valid for ``b = (sigma^2 - sigma^2(0))/2 + beta``.
    """
    Sigma = maps.Sigma
    if (ell.n_points, ell.x_min, ell.x_max) != (Sigma.n_points, Sigma.x_min, Sigma.x_max):
        ell = ell.resample(Sigma.n_points, Sigma.x_min, Sigma.x_max)
    s2 = coeffs.sigma2
    weight = 2.0 * Sigma.map(np.exp) / s2
    meta = {"route": route, "x1": x1, "reliable": True}
    if route == "c1_quadrature":
        fp = maps.h_prime * (primitive(weight * derivative(ell)) + x1)
    elif route == "young":
        run = young_integral(weight, ell, gamma=gamma, beta=beta)
        meta["reliable"] = bool(run.meta["exponent_sum_ok"])
        if not meta["reliable"]:
            warnings.warn("apply_T(young): measured exponents do not sum above 1", stacklevel=2)
        fp = maps.h_prime * (_zero_at_origin(run) + x1)
    elif route == "close_to_divergence_closed_form":
        if coeffs.route != "close_to_divergence" or float(coeffs.params.get("alpha", 1.0)) != 1.0:
            raise ValueError("closed form needs a close_to_divergence pair with alpha = 1")
        beta = coeffs.params["beta"]
        if (beta.n_points, beta.x_min, beta.x_max) != (ell.n_points, ell.x_min, ell.x_max):
            beta = beta.resample(ell.n_points, ell.x_min, ell.x_max)
        inv_s2 = 1.0 / s2
        B = stieltjes_primitive(inv_s2, beta)
        e2B = B.map(lambda v: np.exp(2.0 * v))
        inner = ell(0.0) + 2.0 * stieltjes_primitive(ell * e2B * inv_s2, beta)
        fp = 2.0 * inv_s2 * (ell - inner / e2B) + x1 * maps.h_prime
    else:
        raise ValueError(f"unknown T route {route!r}; expected one of {T_ROUTES}")
    f = primitive(fp)
    return GridFunction(f.x_min, f.x_max, f.values, meta=meta)


def hat_L(f: GridFunction, coeffs: CoefficientPair) -> GridFunction:
    """``x -> int_0^x (sigma^2/2 - b) f'' + (b f')(x) - (b f')(0)``."""
    fp = derivative(f)
    fpp = second_derivative(f)
    s2 = coeffs.sigma2
    b = coeffs.b
    if (f.n_points, f.x_min, f.x_max) != (s2.n_points, s2.x_min, s2.x_max):
        raise ValueError("f and the coefficients must share a grid")
    bfp = b * fp
    return primitive((0.5 * s2 - b) * fpp) + bfp - bfp(0.0)


def phi_bilinear(g: GridFunction, ell: GridFunction) -> GridFunction:
    """``Phi(g, l)(x) = (g l)(x) - (g l)(0) - int_0^x l g'``."""
    gl = g * ell
    return gl - gl(0.0) - primitive(ell * derivative(g))
