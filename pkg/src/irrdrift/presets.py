"""Named coefficient pairs used by the acceptance scenarios."""
from __future__ import annotations

import numpy as np

from .gridfn import from_callable
from .noise import gen_environment
from .scale import CoefficientPair

__all__ = ["PRESETS", "coefficient_preset", "ENV_SEED"]

#: environment seed of the rough presets, fixed once
ENV_SEED = 1

PRESETS = ("heat_baseline", "smooth_sin", "divergence", "brox_h05", "fbm_h04")


def coefficient_preset(name: str, L: float = 6.0, n_points: int = 12001, env_seed: int = ENV_SEED,
                       hurst: float | None = None) -> CoefficientPair:
    """Coefficient pair of a named scenario on ``[-L, L]`` (``n_points`` odd keeps 0 a node)."""
    one = from_callable(lambda x: np.ones_like(x), -L, L, n_points)
    if name == "heat_baseline":
        return CoefficientPair(one, 0.0 * one, "smooth_drift", smooth=True)
    if name == "smooth_sin":
        return CoefficientPair(one, from_callable(np.sin, -L, L, n_points), "smooth_drift", smooth=True)
    if name == "divergence":
        s2 = from_callable(lambda x: 2.0 + np.sin(x), -L, L, n_points)
        return CoefficientPair(s2.map(np.sqrt), 0.5 * (s2 - 2.0), "close_to_divergence",
                               {"alpha": 1.0, "beta": 0.0 * one}, smooth=True)
    if name in ("brox_h05", "fbm_h04"):
        H = hurst if hurst is not None else (0.5 if name == "brox_h05" else 0.4)
        env = gen_environment(env_seed, H, L, n_points)
        return CoefficientPair(one, env.grid, "holder_young", {"gamma": 0.99, "beta_exp": H - 0.05})
    raise ValueError(f"unknown preset {name!r}; expected one of {PRESETS}")
