"""Experiment configs: JSON schema, validation with field pointers, and model builders."""
from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .defaults import DEFAULTS, master_cap
from .kernels import RateGenerator
from .models import (ConstantKernel, Intensity, KernelConstants, MeanFieldKernel,
                     ParametrizedKernel, TwoThreeBodyKernel)
from .space import FiniteSpace

EXPERIMENTS = ("solve-mf", "solve-averaged", "master", "simulate", "chaos-experiment",
               "concentration-test", "verify-conditions", "inequality-suite")
STOCHASTIC = ("simulate", "concentration-test", "inequality-suite")

_num = {"type": "number"}
_pos_int = {"type": "integer", "minimum": 1}
# a numeric array of any depth, or a reference to a JSON file holding one
_tensor = {"oneOf": [
    {"type": "array"},
    {"type": "object", "properties": {"file": {"type": "string"}},
     "required": ["file"], "additionalProperties": False},
]}

SCHEMA = {
    "type": "object",
    "required": ["space", "kernel"],
    "additionalProperties": False,
    "properties": {
        "experiment": {"enum": list(EXPERIMENTS)},
        "description": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "space": {
            "type": "object", "required": ["nu"], "additionalProperties": False,
            "properties": {"nu": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                                  "minItems": 1}},
        },
        "generator": {
            "type": "object", "additionalProperties": False,
            "properties": {"rates": _tensor},
        },
        "kernel": {
            "type": "object", "required": ["family"],
            "properties": {
                "family": {"enum": ["constant", "two-three-body", "parametrized"]},
                "lam": _tensor, "gamma1": _tensor, "gamma2": _tensor, "c1": _num,
                "kappa": _tensor, "P": _tensor,
                "intensity": {
                    "type": "object", "required": ["name", "params"], "additionalProperties": False,
                    "properties": {"name": {"enum": ["affine-clamped", "logistic", "exp-neg"]},
                                   "params": {"type": "object"}},
                },
                "constants": {
                    "type": "object", "additionalProperties": False,
                    "properties": {k: {"type": "number", "minimum": 0}
                                   for k in ("M_lambda", "M_lambda_star", "theta", "lipschitz_L1")},
                },
            },
            "additionalProperties": False,
            "allOf": [
                {"if": {"properties": {"family": {"const": "constant"}}},
                 "then": {"required": ["lam"]}},
                {"if": {"properties": {"family": {"const": "two-three-body"}}},
                 "then": {"required": ["gamma1"]}},
                {"if": {"properties": {"family": {"const": "parametrized"}}},
                 "then": {"required": ["kappa", "intensity", "P"]}},
            ],
        },
        "initial": {
            "type": "object", "additionalProperties": False,
            "properties": {"density": _tensor, "masses": _tensor},
        },
        "params": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "t_end": {"type": "number", "minimum": 0},
                "N": {"type": "integer", "minimum": 2},
                "N_list": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 1},
                "samples": _pos_int,
                "replicas": _pos_int,
                "cap_states": _pos_int,
                "variant": {"enum": ["standard", "symmetric", "rigorous"]},
                "source": {"enum": ["verified", "declared"]},
                "s": {"type": "number", "minimum": 0},
                "mode": {"enum": ["exhaustive", "sampled"]},
                "validate": {"type": "boolean"},
                "monte_carlo": {"type": "boolean"},
                "d_max": {"type": "integer", "minimum": 1},
                "etas": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                **{k: {"type": "number", "minimum": 0} for k in DEFAULTS
                   if k not in ("dt", "t_end", "master_cap")},
            },
        },
    },
}


class ConfigError(ValueError):
    """Schema or consistency violation; ``pointer`` names the offending field."""

    def __init__(self, pointer: str, message: str):
        super().__init__(f"{pointer}: {message}")
        self.pointer = pointer
        self.message = message


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path)


def _resolve(obj, base: Path, path=()):
    """Replace ``{"file": ...}`` references with the referenced JSON arrays."""
    if isinstance(obj, dict):
        if set(obj) == {"file"} and isinstance(obj["file"], str):
            f = (base / obj["file"]).resolve()
            if not f.is_file():
                raise ConfigError(_pointer(path), f"referenced file {obj['file']!r} does not exist")
            try:
                return json.loads(f.read_text())
            except json.JSONDecodeError as e:
                raise ConfigError(_pointer(path), f"referenced file is not valid JSON: {e}") from e
        return {k: _resolve(v, base, path + (k,)) for k, v in obj.items()}
    if isinstance(obj, list):
        return obj
    return obj


def _array(value, pointer: str, shape=None, nonneg: bool = False) -> np.ndarray:
    try:
        a = np.array(value, dtype=float)
    except (TypeError, ValueError) as e:
        raise ConfigError(pointer, "expected a rectangular numeric array") from e
    if not np.all(np.isfinite(a)):
        raise ConfigError(pointer, "entries must be finite")
    if shape is not None and a.shape != shape:
        raise ConfigError(pointer, f"expected shape {shape}, got {a.shape}")
    if nonneg and np.any(a < 0):
        raise ConfigError(pointer, "entries must be nonnegative")
    return a


@dataclass
class ExperimentConfig:
    """A validated experiment description with its built model objects."""

    raw: dict
    experiment: str
    space: FiniteSpace
    generator: RateGenerator
    kernel: MeanFieldKernel
    rho0: np.ndarray | None
    params: dict
    seed: int | None

    def param(self, key: str, default=None):
        if key in self.params:
            return self.params[key]
        return DEFAULTS.get(key, default)

    @property
    def cap(self) -> int:
        """CLI/param override, then ``MFLAB_CAP_STATES``, then the default cap."""
        if "cap_states_override" in self.params:
            return int(self.params["cap_states_override"])
        if os.environ.get("MFLAB_CAP_STATES"):
            return master_cap()
        return int(self.params.get("cap_states", master_cap()))

    def digest(self) -> str:
        # the effective state cap changes which parts run, so it is part of the address
        blob = json.dumps({"config": self.raw, "cap": self.cap}, sort_keys=True,
                          separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _build_kernel(kdef: dict, space: FiniteSpace) -> MeanFieldKernel:
    d = space.d
    const = KernelConstants(**kdef.get("constants", {}))
    fam = kdef["family"]
    try:
        if fam == "constant":
            return ConstantKernel(space, _array(kdef["lam"], "/kernel/lam", (d, d), True), const)
        if fam == "two-three-body":
            g1 = _array(kdef["gamma1"], "/kernel/gamma1", (d, d, d), True)
            g2 = (_array(kdef["gamma2"], "/kernel/gamma2", (d, d, d, d), True)
                  if "gamma2" in kdef else None)
            return TwoThreeBodyKernel(space, g1, g2, kdef.get("c1"), const)
        kappa = _array(kdef["kappa"], "/kernel/kappa")
        if kappa.ndim == 2:
            kappa = kappa[:, :, None]
        if kappa.ndim != 3 or kappa.shape[:2] != (d, d):
            raise ConfigError("/kernel/kappa", f"expected shape ({d}, {d}, k)")
        P = _array(kdef["P"], "/kernel/P", (d, d), True)
        iname, ipar = kdef["intensity"]["name"], kdef["intensity"]["params"]
        required = {"affine-clamped": ("a", "b", "lo", "hi"), "logistic": ("scale", "a", "b"),
                    "exp-neg": ("scale", "c")}[iname]
        for key in required:
            if key not in ipar:
                raise ConfigError(f"/kernel/intensity/params/{key}", "required parameter missing")
        return ParametrizedKernel(space, kappa, Intensity(iname, ipar), P, const)
    except ConfigError:
        raise
    except (ValueError, TypeError) as e:
        raise ConfigError("/kernel", str(e)) from e


def build_config(raw: dict, base: Path | str = ".", experiment: str | None = None,
                 overrides: dict | None = None) -> ExperimentConfig:
    """Validate ``raw`` against :data:`SCHEMA`, resolve file references and build models.

    ``overrides`` (from the command line) are merged into ``params``; ``seed`` there
    replaces the config seed.  Raises :class:`ConfigError` on any violation.
    """
    raw = copy.deepcopy(raw)
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        e = jsonschema.exceptions.best_match(errors)
        raise ConfigError(_pointer(e.absolute_path), e.message)
    name = experiment or raw.get("experiment")
    if name is None:
        raise ConfigError("/experiment", "experiment name missing")
    if name not in EXPERIMENTS:
        raise ConfigError("/experiment", f"unknown experiment {name!r}")
    if raw.get("experiment", name) != name:
        raise ConfigError("/experiment", f"config is for {raw['experiment']!r}, not {name!r}")
    raw["experiment"] = name
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    if "seed" in overrides:
        raw["seed"] = overrides.pop("seed")
    raw.setdefault("params", {}).update(overrides)
    resolved = _resolve(raw, Path(base))
    space = FiniteSpace(_array(resolved["space"]["nu"], "/space/nu"))
    d = space.d
    gen = resolved.get("generator", {})
    if "rates" in gen:
        rates = _array(gen["rates"], "/generator/rates", (d, d), True)
        generator = RateGenerator.from_rates(space, rates)
    else:
        generator = RateGenerator.zero(space)
    kernel = _build_kernel(resolved["kernel"], space)
    rho0 = None
    init = resolved.get("initial", {})
    if "density" in init and "masses" in init:
        raise ConfigError("/initial", "give either density or masses, not both")
    if "density" in init:
        rho0 = _array(init["density"], "/initial/density", (d,), True)
    elif "masses" in init:
        m = _array(init["masses"], "/initial/masses", (d,), True)
        if m.sum() <= 0:
            raise ConfigError("/initial/masses", "masses must not all vanish")
        rho0 = m / m.sum() / space.nu
    if rho0 is not None:
        mass = float(rho0 @ space.nu)
        if abs(mass - 1) > 1e-9:
            raise ConfigError("/initial/density", f"density has mass {mass}, expected 1")
        rho0 = rho0 / mass
    needs_rho = name not in ("verify-conditions", "inequality-suite")
    if needs_rho and rho0 is None:
        raise ConfigError("/initial", f"{name} needs an initial density")
    if name in STOCHASTIC and "seed" not in raw:
        raise ConfigError("/seed", f"{name} is stochastic and needs a seed")
    params = resolved.get("params", {})
    if name in ("solve-averaged", "master", "simulate", "concentration-test") and "N" not in params \
            and "N_list" not in params:
        raise ConfigError("/params/N", f"{name} needs N")
    if name == "chaos-experiment" and "N_list" not in params:
        raise ConfigError("/params/N_list", "chaos-experiment needs N_list")
    return ExperimentConfig(resolved, name, space, generator, kernel, rho0, params, raw.get("seed"))


def load_config(path, experiment: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("/", f"config file {str(path)!r} does not exist")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError("/", f"malformed JSON at line {e.lineno} column {e.colno}: {e.msg}") from e
    if not isinstance(raw, dict):
        raise ConfigError("/", "config must be a JSON object")
    return build_config(raw, path.parent, experiment, overrides)


def pinned_config_path(name: str) -> Path:
    """Path of a config shipped with the package, e.g. ``"chaos_two_body.json"``."""
    return Path(__file__).parent / "configs" / name


def load_pinned(name: str, **kw) -> ExperimentConfig:
    return load_config(pinned_config_path(name), **kw)
