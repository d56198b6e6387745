"""Run configuration: JSON schema validation and conversion to library objects."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from .errors import ConfigError
from .mc import PriorSpec
from .model import ARX, CorrelatedGaussian, DataModel, IIDIsotropic

DEFAULTS = {
    "bound": "thm3_exact",
    "delta": 0.05,
    "M": 100_000,
    "seed": 0,
    "sampler": "auto",
    "fixed_posterior": False,
    "sweep": "convergence",
    "lambda_rule": "fixed",
}


def load_schema() -> dict:
    return json.loads(resources.files("pacb").joinpath("config_schema.json").read_text(encoding="utf-8"))


def _num(x) -> float:
    return float(x)


def _vec(x) -> list:
    return [_num(v) for v in x]


def _mat(x) -> list:
    return [_vec(r) for r in x]


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration with numbers normalized to floats/ints."""

    raw: dict
    model: DataModel = field(repr=False)
    prior: PriorSpec | None = field(repr=False)

    def get(self, key, default=None):
        return self.raw.get(key, DEFAULTS.get(key, default))

    @property
    def seed(self) -> int:
        return int(self.get("seed"))

    @property
    def digest(self) -> str:
        """Stable hash of the effective configuration (threads and output paths are not part of it)."""
        return hashlib.sha256(canonical_json(self.raw).encode()).hexdigest()

    def require(self, *keys):
        missing = [k for k in keys if k not in self.raw]
        if missing:
            raise ConfigError(f"missing required config field(s): {', '.join(missing)}")


def _normalize(raw: dict) -> dict:
    out = copy.deepcopy(raw)
    m = out["model"]
    for k in ("w_star", "a", "b"):
        if k in m:
            m[k] = _vec(m[k])
    for k in ("sigma_x", "sigma_eps", "sigma_e", "sigma_u"):
        if k in m:
            m[k] = _num(m[k])
    if "Q_x" in m:
        m["Q_x"] = _mat(m["Q_x"])
    if m.get("joint_cov") is not None:
        m["joint_cov"] = _mat(m["joint_cov"])
    if "prior" in out:
        p = out["prior"]
        if "sigma" in p:
            p["sigma"] = _num(p["sigma"])
        if "mean" in p:
            p["mean"] = _vec(p["mean"])
        if p.get("truncation_radius") not in (None, "default"):
            p["truncation_radius"] = _num(p["truncation_radius"])
    for k in ("lambda", "delta", "c", "loss_bound", "rho_n"):
        if k in out:
            out[k] = _num(out[k])
    for k in ("lambda_grid", "w"):
        if k in out:
            out[k] = _vec(out[k])
    if "seed" in out:
        out["seed"] = int(out["seed"])
        if not 0 <= out["seed"] < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {out['seed']}")
    return out


def build_model(m: dict) -> DataModel:
    kind = m["kind"]
    if kind == "iid":
        return IIDIsotropic(m["w_star"], m["sigma_x"], m["sigma_eps"])
    if kind == "correlated":
        return CorrelatedGaussian(m["w_star"], m["Q_x"], m["sigma_eps"], m.get("joint_cov"))
    arx = ARX(tuple(m["a"]), tuple(m["b"]), m["sigma_e"], m["sigma_u"])
    arx.check_stable()
    return arx


def build_prior(p: dict | None, d: int) -> PriorSpec | None:
    if p is None:
        return None
    sigma = p.get("sigma", 1.0)
    mean = p.get("mean")
    if mean is not None and len(mean) != d:
        raise ConfigError(f"prior mean has length {len(mean)}, model dimension is {d}")
    return PriorSpec.isotropic(d, sigma, p.get("truncation_radius"), mean)


def _check_ranges(cfg: dict):
    if "delta" in cfg and not 0 < cfg["delta"] <= 1:
        raise ConfigError(f"delta must lie in (0, 1], got {cfg['delta']}")
    if "lambda" in cfg and not (math.isfinite(cfg["lambda"]) and cfg["lambda"] > 0):
        raise ConfigError(f"lambda must be positive, got {cfg['lambda']}")
    if "n" in cfg and cfg["n"] < 1:
        raise ConfigError(f"n must be positive, got {cfg['n']}")
    if "trials" in cfg and cfg["trials"] < 100:
        raise ConfigError(f"trials must be at least 100, got {cfg['trials']}")
    if "M" in cfg and cfg["M"] < 1000:
        raise ConfigError(f"M must be at least 1000, got {cfg['M']}")
    if "rho_n" in cfg and cfg["rho_n"] < 0:
        raise ConfigError(f"rho_n must be non-negative, got {cfg['rho_n']}")
    if any(v <= 0 for v in cfg.get("lambda_grid", [])):
        raise ConfigError("lambda_grid entries must be positive")


def parse_config(raw: dict) -> RunConfig:
    """Validate against the schema, then against module preconditions, before any computation."""
    try:
        jsonschema.validate(raw, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from None
    cfg = _normalize(raw)
    _check_ranges(cfg)
    try:
        model = build_model(cfg["model"])
        d = model.d
        prior = build_prior(cfg.get("prior"), d)
        if "w" in cfg and len(cfg["w"]) != d:
            raise ConfigError(f"w has length {len(cfg['w'])}, model dimension is {d}")
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(cfg, model, prior)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return parse_config(raw)


def with_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    raw = copy.deepcopy(cfg.raw)
    for k, v in overrides.items():
        if v is not None:
            raw[k] = v
    return parse_config(raw)
