"""Command line runner: ``irrdrift run <config>`` and ``irrdrift validate <config>``.

A config is a JSON document (``schema_version`` 1)::

    {
      "schema_version": 1,
      "name": "heat_baseline",
      "coefficients": {"preset": "heat_baseline"},
      "domain": {"L": 6.0, "n_points": 12001},
      "solver": {"dt": 0.01, "n_paths": 2000, "seed": 11},
      "problem": {"u0": "sin", "lambda": "zero", "T": 1.0},
      "checks": ["scale", "martingale", "pde"],
      "spde": {"seeds": [1, 2]}
    }

``coefficients`` is either ``{"preset": name}``, ``{"environment":
{"seed": s, "hurst": H}}`` or ``{"sigma": csv, "b": csv, "route": r}``;
``u0`` and ``lambda`` are preset names or CSV paths relative to the
config. Outputs go to ``<out>/<scenario hash>/``. Exit codes: 0 when all
requested checks pass, 1 when any fails, 2 on validation errors.
"""
from __future__ import annotations

import argparse
import copy
import datetime as _dt
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .checks import SCENARIO_CHECKS, CheckResult, Setup, lam_preset, run_check, u0_preset
from .gridfn import from_callable, read_csv
from .noise import gen_environment
from .presets import PRESETS, coefficient_preset
from .scale import ROUTES, CoefficientPair

SCHEMA_VERSION = 1
SEED_ENV = "IRRDRIFT_SEED"
U0_NAMES = ("sin", "gaussian", "one", "zero")
LAMBDA_NAMES = ("zero", "one", "cos")


class ValidationError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


def preset_config_path(name: str) -> Path:
    return Path(str(resources.files("irrdrift") / "configs" / f"{name}.json"))


def load_config(ref: str) -> tuple[dict, Path]:
    """Read a config file; a bare preset name resolves to the shipped config."""
    path = Path(ref)
    if not path.exists() and ref in PRESETS:
        path = preset_config_path(ref)
    if not path.exists():
        raise ValidationError([f"config {ref!r} not found"])
    try:
        return json.loads(path.read_text()), path.parent
    except json.JSONDecodeError as exc:
        raise ValidationError([f"config {ref!r} is not valid JSON: {exc}"]) from exc


def _file_ok(value, base: Path, what: str, names, errors: list[str]):
    if value in names:
        return
    if not isinstance(value, str) or not (base / value).exists():
        errors.append(f"{what}: {value!r} is neither one of {list(names)} nor an existing file")


def validate(cfg: dict, base: Path = Path(".")) -> list[str]:
    """Every violation of the schema, in document order."""
    errors: list[str] = []
    if cfg.get("schema_version") != SCHEMA_VERSION:
        errors.append(f"schema_version must be {SCHEMA_VERSION}, got {cfg.get('schema_version')!r}")
    if not isinstance(cfg.get("name"), str) or not cfg.get("name"):
        errors.append("name is required")
    checks = cfg.get("checks", [])
    if not isinstance(checks, list) or not checks:
        errors.append("checks must be a non-empty list")
        checks = []
    for c in checks:
        if c not in SCENARIO_CHECKS:
            errors.append(f"unknown check {c!r}; expected one of {sorted(SCENARIO_CHECKS)}")
    coeff = cfg.get("coefficients")
    if not isinstance(coeff, dict):
        errors.append("coefficients block is required")
        coeff = {}
    kinds = [k for k in ("preset", "environment", "sigma") if k in coeff]
    if len(kinds) != 1:
        errors.append("coefficients needs exactly one of preset, environment or sigma/b files")
    if "preset" in coeff and coeff["preset"] not in PRESETS:
        errors.append(f"unknown coefficient preset {coeff['preset']!r}; expected one of {list(PRESETS)}")
    hurst = None
    if "environment" in coeff:
        env = coeff["environment"]
        if not isinstance(env, dict) or not isinstance(env.get("seed"), int):
            errors.append("environment.seed must be an integer")
        hurst = env.get("hurst") if isinstance(env, dict) else None
        if not isinstance(hurst, (int, float)) or not 0.0 < hurst < 1.0:
            errors.append(f"environment.hurst must lie in (0, 1), got {hurst!r}")
            hurst = None
    if "sigma" in coeff:
        for key in ("sigma", "b"):
            if not isinstance(coeff.get(key), str) or not (base / coeff[key]).exists():
                errors.append(f"coefficients.{key}: file {coeff.get(key)!r} does not exist")
        if coeff.get("route") not in ROUTES:
            errors.append(f"coefficients.route must be one of {list(ROUTES)}")
    if "preset" in coeff and coeff.get("preset") in ("brox_h05", "fbm_h04"):
        hurst = 0.5 if coeff["preset"] == "brox_h05" else 0.4
    spde = cfg.get("spde", {})
    if "spde" in checks or "spde" in cfg:
        h = spde.get("hurst", hurst if hurst is not None else 0.5)
        if not isinstance(h, (int, float)) or h < 1.0 / 3.0:
            errors.append(f"hurst = {h} violates the SPDE requirement H >= 1/3 "
                          "(zero strong cubic variation of the environment)")
        if "seeds" in spde and not (isinstance(spde["seeds"], list) and all(isinstance(v, int) for v in spde["seeds"])):
            errors.append("spde.seeds must be a list of integers")
    dom = cfg.get("domain", {})
    L, n = dom.get("L", 6.0), dom.get("n_points", 12001)
    if not isinstance(L, (int, float)) or L <= 0:
        errors.append(f"domain.L must be positive, got {L!r}")
    if not isinstance(n, int) or n < 5 or n % 2 == 0:
        errors.append(f"domain.n_points must be an odd integer >= 5 (x = 0 a node), got {n!r}")
    sol = cfg.get("solver")
    if not isinstance(sol, dict) or "seed" not in sol:
        errors.append("solver.seed is required (no wall-clock seeding)")
    else:
        if not isinstance(sol["seed"], int) or sol["seed"] < 0:
            errors.append(f"solver.seed must be a non-negative integer, got {sol['seed']!r}")
        if not isinstance(sol.get("dt", 0.01), (int, float)) or not sol.get("dt", 0.01) > 0:
            errors.append("solver.dt must be positive")
        if not isinstance(sol.get("n_paths", 2000), int) or sol.get("n_paths", 2000) < 2:
            errors.append("solver.n_paths must be an integer >= 2")
    prob = cfg.get("problem", {})
    _file_ok(prob.get("u0", "gaussian"), base, "problem.u0", U0_NAMES, errors)
    _file_ok(prob.get("lambda", "zero"), base, "problem.lambda", LAMBDA_NAMES, errors)
    T = prob.get("T", 1.0)
    if not isinstance(T, (int, float)) or T <= 0:
        errors.append(f"problem.T must be positive, got {T!r}")
    return errors


def resolve_seed(cfg: dict) -> tuple[dict, dict]:
    """Apply ``IRRDRIFT_SEED`` when set; returns the effective config and the seed record."""
    cfg = copy.deepcopy(cfg)
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return cfg, {"value": cfg["solver"]["seed"], "source": "config"}
    try:
        seed = int(raw)
    except ValueError as exc:
        raise ValidationError([f"{SEED_ENV}={raw!r} is not an integer"]) from exc
    record = {"value": seed, "source": SEED_ENV, "config_value": cfg["solver"]["seed"]}
    cfg["solver"]["seed"] = seed
    return cfg, record


def scenario_hash(cfg: dict) -> str:
    blob = json.dumps({"config": cfg, "version": __version__}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _grid_data(value, base: Path, L: float, n: int, names: dict):
    if value in names:
        return names[value](value, L, n)
    return read_csv(base / value).resample(n, -L, L)


def build_setup(cfg: dict, base: Path) -> Setup:
    dom = cfg.get("domain", {})
    L, n = float(dom.get("L", 6.0)), int(dom.get("n_points", 12001))
    coeff = cfg["coefficients"]
    hurst = None
    if "preset" in coeff:
        coeffs = coefficient_preset(coeff["preset"], L, n)
        hurst = {"brox_h05": 0.5, "fbm_h04": 0.4}.get(coeff["preset"])
    elif "environment" in coeff:
        env = coeff["environment"]
        hurst = float(env["hurst"])
        grid = gen_environment(int(env["seed"]), hurst, L, n, for_spde=hurst >= 1 / 3).grid
        one = from_callable(np.ones_like, -L, L, n)
        coeffs = CoefficientPair(one, grid, "holder_young", {"gamma": 0.99, "beta_exp": max(hurst - 0.05, 0.01)})
    else:
        sigma = read_csv(base / coeff["sigma"]).resample(n, -L, L)
        b = read_csv(base / coeff["b"]).resample(n, -L, L)
        coeffs = CoefficientPair(sigma, b - b(0.0), coeff["route"], coeff.get("params", {}),
                                 bool(coeff.get("smooth", False)))
    prob = cfg.get("problem", {})
    u0 = _grid_data(prob.get("u0", "gaussian"), base, L, n, {k: u0_preset for k in U0_NAMES})
    lam = _grid_data(prob.get("lambda", "zero"), base, L, n, {k: lam_preset for k in LAMBDA_NAMES})
    sol = cfg["solver"]
    spde = cfg.get("spde", {})
    if "hurst" in spde:
        hurst = float(spde["hurst"])
    seeds = tuple(spde["seeds"]) if "seeds" in spde else None
    return Setup(cfg["name"], coeffs, u0, lam, float(prob.get("T", 1.0)), float(sol.get("dt", 1e-2)),
                 int(sol.get("n_paths", 2000)), int(sol["seed"]), hurst, seeds)


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def run_scenario(ref: str, out: str | Path = "runs", threads: int = 1, only: list[str] | None = None) -> tuple[dict, Path]:
    """Validate, run the requested checks and write the manifest; returns it with its directory."""
    cfg, base = load_config(ref)
    errors = validate(cfg, base)
    if errors:
        raise ValidationError(errors)
    cfg, seed_record = resolve_seed(cfg)
    checks = list(cfg["checks"])
    if only:
        unknown = [c for c in only if c not in checks]
        if unknown:
            raise ValidationError([f"check {c!r} is not listed in the config" for c in unknown])
        checks = [c for c in checks if c in only]
    digest = scenario_hash(cfg)
    outdir = Path(out) / digest
    outdir.mkdir(parents=True, exist_ok=True)
    started = _now()
    setup = build_setup(cfg, base)
    # shared lazy state is computed once before the checks fan out
    _ = setup.maps

    def one(name: str) -> tuple[CheckResult, str, str]:
        t0 = _now()
        try:
            res = run_check(name, setup, outdir / name)
        except Exception as exc:  # stage failure: recorded, later checks still run
            res = CheckResult(name, False, {"error": type(exc).__name__}, f"stage error: {exc}")
        return res, t0, _now()

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(one, checks))
    files = sorted(p for p in outdir.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "scenario_hash": digest,
        "tool_version": __version__,
        "scenario": cfg,
        "seed": seed_record,
        "checks_requested": checks,
        "checks": {n: r.to_dict() for (r, _, _), n in zip(results, checks)},
        "outputs": [{"path": str(p.relative_to(outdir)), "sha256": _file_digest(p)} for p in files],
        "timestamps": {"started": started, "finished": _now(), "threads": threads,
                       "checks": {n: {"started": a, "finished": b} for (_, a, b), n in zip(results, checks)}},
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest, outdir


def _cmd_validate(args) -> int:
    try:
        cfg, base = load_config(args.config)
    except ValidationError as exc:
        for e in exc.errors:
            print(f"error: {e}", file=sys.stderr)
        return 2
    errors = validate(cfg, base)
    for e in errors:
        print(f"error: {e}", file=sys.stderr)
    if errors:
        return 2
    print(f"{args.config}: valid")
    return 0


def _cmd_run(args) -> int:
    only = [c.strip() for c in args.checks.split(",") if c.strip()] if args.checks else None
    try:
        manifest, outdir = run_scenario(args.config, args.out, args.threads, only)
    except ValidationError as exc:
        for e in exc.errors:
            print(f"error: {e}", file=sys.stderr)
        return 2
    failed = False
    for name, rec in manifest["checks"].items():
        print(f"{rec['status'].upper():4s} {name}: {rec['message']}")
        failed |= rec["status"] == "fail"
    print(f"manifest: {outdir / 'manifest.json'}")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="irrdrift", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"irrdrift {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario config (or a shipped preset name)")
    run.add_argument("config")
    run.add_argument("--out", default="runs", help="parent directory of the output (default: runs)")
    run.add_argument("--threads", type=int, default=1, help="checks run concurrently on this many threads")
    run.add_argument("--checks", default=None, help="comma-separated subset of the config's checks")
    run.set_defaults(func=_cmd_run)
    val = sub.add_parser("validate", help="validate a scenario config")
    val.add_argument("config")
    val.set_defaults(func=_cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
