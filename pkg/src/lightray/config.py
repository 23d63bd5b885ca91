"""Experiment configuration: JSON files merged over per-subcommand defaults.

A config file is a JSON object.  Its keys are merged into the defaults of
the subcommand (nested objects merge key by key), then validated.  Unknown
keys are rejected so that typos surface as a config error naming the field
instead of being silently ignored.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .stationary import get_geometry

SCHEMA = "report_v1"

_COMMON = {"experiment": None, "seed": 0, "output": None}

DEFAULTS = {
    "transform": {
        "geometry": "rotation(0.1)",
        "phantom": {"centers": [[0.0, 0.2, 0.1]], "widths": [[0.4, 0.3, 0.3]], "amplitudes": [1.0]},
        "grids": {"counts": [16, 16], "n_T": 41, "step": 0.01},
        "checks": {"geometries": ["minkowski", "rotation(0.1)", "conformal-minkowski",
                                  "conformal-rotation(0.1)"],
                   "n_rays": 100, "coarse_steps": [0.1, 0.05]},
        "tolerances": {"null_defect": 1e-8, "halving_ratio": 8.0, "reduced_direct": 1e-6,
                       "null_runtime_seconds": 30.0},
    },
    "slice": {
        "geometries": ["minkowski", "rotation(0.1)"],
        "taus": [0.0, 0.5, 1.0, 2.0, 4.0],
        "grids": {"n_rays": 5, "n_T": 401},
        "moment": {"manifolds": ["flat-disc"], "ranks": [1, 2, 3], "js": [1, 2, 3], "n_fields": 20,
                   "n_rays": 5},
        "tolerances": {"fourier_slice": 1e-4, "moment": 1e-6},
    },
    "reconstruct": {
        "geometry": "minkowski",
        "phantom": {"centers": [[0.0, 0.15, -0.1]], "widths": [[0.8, 0.2, 0.2]], "amplitudes": [1.0]},
        "grids": {"counts": [128, 128], "pixels": 64, "step": 0.01, "dT": 0.2, "oversample": 2.0,
                  "n_t": 17},
        "solver": {"lam_factor": 1e-4, "maxiter": 200},
        "tolerances": {"relative_l2": 0.08, "runtime_seconds": 120.0},
    },
    "verify-gauge": {
        "geometries": ["minkowski", "rotation(0.1)"],
        "ranks": [1, 2, 3],
        "grids": {"n_pairs": 50, "n_rays": 200},
        "tolerances": {"gauge": 1e-5, "runtime_seconds": 120.0},
    },
    "conformal-check": {
        "geometries": ["minkowski", "rotation(0.1)", "conformal-rotation(0.1)"],
        "reparam_ranks": [0, 2],
        "lemma_ranks": [1, 2],
        "grids": {"n_rays": 4, "n_points": 64},
        "tolerances": {"reparam": 1e-5, "lemma": 1e-6},
    },
    "decompose": {
        "ranks": [1, 2, 3],
        "tf_ranks": [2, 3],
        "grids": {"sizes": [32, 64, 128]},
        "tolerances": {"residual": 1e-8, "order_ratio": 3.0, "pure_gauge": 1e-2},
    },
    "foliation-check": {
        "rho": "1-r2",
        "eps_pass": 0.05,
        "eps_sweep": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
        "grids": {"n_curves": 200},
        "tolerances": {"margin": 0.0},
    },
    "theorem2-suite": {
        "geometry": "minkowski",
        "ranks": [1, 2],
        "grids": {"n_rays": 100, "N": 128, "n_t": 41},
        "tolerances": {"sinogram": 1e-5, "grid": 0.15, "detect_factor": 10.0},
    },
}

# tolerances that may be zero (strict comparisons against a threshold)
_NONNEGATIVE_TOLERANCES = {"margin"}


@dataclass
class ExperimentConfig:
    subcommand: str
    values: dict
    source: str = "<defaults>"

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    @property
    def seed(self):
        return self.values["seed"]

    @property
    def tolerances(self):
        return self.values["tolerances"]

    def canonical(self):
        return json.dumps(self.values, sort_keys=True, separators=(",", ":"))

    def hash(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def defaults(subcommand):
    if subcommand not in DEFAULTS:
        raise ConfigError("experiment", f"unknown subcommand {subcommand!r}")
    out = copy.deepcopy(_COMMON)
    out.update(copy.deepcopy(DEFAULTS[subcommand]))
    out["experiment"] = subcommand
    return out


def _merge(base, over, prefix):
    for key, val in over.items():
        name = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(name, "unknown key")
        if isinstance(base[key], dict) and key != "phantom":
            if not isinstance(val, dict):
                raise ConfigError(name, "expected an object")
            _merge(base[key], val, name + ".")
        else:
            base[key] = val


def _positive_int(value, name):
    if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
        raise ConfigError(name, f"expected a positive integer, got {value!r}")


def _check_geometry(ident, name):
    try:
        get_geometry(ident)
    except ConfigError as exc:
        raise ConfigError(name, str(exc).split(": ", 1)[-1]) from None
    except Exception as exc:  # malformed ids raise KeyError/ValueError, bad profiles others
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
        raise ConfigError(name, str(msg)) from None


def validate(values):
    sub = values["experiment"]
    seed = values.get("seed")
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        raise ConfigError("seed", f"expected an unsigned 64-bit integer, got {seed!r}")
    if values.get("output") is not None and not isinstance(values["output"], str):
        raise ConfigError("output", "expected a directory path")
    for key, tol in values.get("tolerances", {}).items():
        name = f"tolerances.{key}"
        if isinstance(tol, bool) or not isinstance(tol, (int, float)) or not math.isfinite(tol):
            raise ConfigError(name, f"expected a number, got {tol!r}")
        if tol < 0 or (tol == 0 and key not in _NONNEGATIVE_TOLERANCES):
            raise ConfigError(name, f"tolerance must be positive, got {tol!r}")
    if "geometry" in values:
        _check_geometry(values["geometry"], "geometry")
        geo = get_geometry(values["geometry"])
        if sub == "theorem2-suite" and not geo.static:
            raise ConfigError("geometry", "the tensor suite needs a static geometry (eta = 0)")
        if sub == "reconstruct" and not (geo.trivial and geo.base.boundary_kind == "disc"):
            raise ConfigError("geometry", "reconstruction needs the flat unit disc with kappa constant "
                                          "and eta = 0")
    for key in ("geometries",):
        if key in values:
            if not isinstance(values[key], list) or not values[key]:
                raise ConfigError(key, "expected a non-empty list of geometry ids")
            for k, gid in enumerate(values[key]):
                _check_geometry(gid, f"{key}[{k}]")
    if "checks" in values:
        for k, gid in enumerate(values["checks"]["geometries"]):
            _check_geometry(gid, f"checks.geometries[{k}]")
    for key, val in values.get("grids", {}).items():
        name = f"grids.{key}"
        if key in ("counts", "sizes"):
            if not isinstance(val, list) or not val:
                raise ConfigError(name, "expected a list of positive integers")
            for v in val:
                _positive_int(v, name)
        elif key in ("step", "dT", "oversample"):
            if isinstance(val, bool) or not isinstance(val, (int, float)) or not val > 0:
                raise ConfigError(name, f"expected a positive number, got {val!r}")
        else:
            _positive_int(val, name)
    if "phantom" in values:
        ph = values["phantom"]
        if not isinstance(ph, dict) or not {"centers", "widths", "amplitudes"} <= set(ph):
            raise ConfigError("phantom", "needs centers, widths and amplitudes")
        try:
            from .reconstruction import GaussianPhantom
            GaussianPhantom.from_config(ph)
        except (ValueError, TypeError) as exc:
            raise ConfigError("phantom", str(exc)) from None
    if sub == "foliation-check":
        from .rays import parse_rho
        try:
            parse_rho(values["rho"])
        except ValueError as exc:
            raise ConfigError("rho", str(exc)) from None
    return values


def load_config(path, subcommand, seed=None):
    """Read ``path`` (or only defaults when ``path`` is None) and validate."""
    values = defaults(subcommand)
    source = "<defaults>"
    if path is not None:
        source = str(path)
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
        if not isinstance(data, dict):
            raise ConfigError("config", "top level must be an object")
        exp = data.get("experiment", subcommand)
        if exp != subcommand:
            raise ConfigError("experiment", f"config is for {exp!r}, not {subcommand!r}")
        _merge(values, data, "")
    if seed is not None:
        values["seed"] = seed
    return ExperimentConfig(subcommand, validate(values), source)
