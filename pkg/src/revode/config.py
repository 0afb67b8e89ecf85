"""Strict JSON run configuration with flag > file > default precedence."""

from __future__ import annotations

import json

from .lab import StudyConfig
from .stepper import SOLVER_KINDS

__all__ = ["ConfigError", "load_config", "build_study_config", "parse_solver_spec"]

ALLOWED_KEYS = {
    "study", "solvers", "schedule", "field", "dim", "roughness", "n_list",
    "nfe_budget", "guidance", "strength", "seeds", "separations",
    "edit_guidance", "jobs", "out",
}

ALLOWED_SOLVER_KEYS = {"kind", "p", "gamma", "zeta", "base", "ees_x",
                       "variable", "n_list"}

DEFAULT_SOLVERS = [
    {"kind": "ddim"},
    {"kind": "edict", "p": 0.93},
    {"kind": "bdia", "gamma": 0.96},
    {"kind": "obelm"},
    {"kind": "reversible-heun"},
    {"kind": "mccallum-foster", "base": "euler", "zeta": 0.999},
    {"kind": "rex", "base": "euler", "zeta": 0.999},
    {"kind": "ees25"},
    {"kind": "ees27"},
]


class ConfigError(ValueError):
    """Unknown keys, malformed values, or unusable combinations."""


def load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(data) - ALLOWED_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for spec in data.get("solvers", []):
        _check_solver(spec)
    return data


def _check_solver(spec):
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(f"solver spec must be an object with 'kind': {spec!r}")
    if spec["kind"] not in SOLVER_KINDS:
        raise ConfigError(f"unknown solver kind {spec['kind']!r}")
    unknown = set(spec) - ALLOWED_SOLVER_KEYS
    if unknown:
        raise ConfigError(f"unknown solver keys for {spec['kind']}: "
                          f"{sorted(unknown)}")
    return spec


def parse_solver_spec(text: str) -> list:
    """Parse 'ddim,edict:p=0.93,mccallum-foster:base=midpoint' or 'all'."""
    if text.strip() == "all":
        return [dict(s) for s in DEFAULT_SOLVERS]
    specs = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(":")
        spec = {"kind": parts[0]}
        for part in parts[1:]:
            if "=" not in part:
                raise ConfigError(f"solver option {part!r} must be key=value")
            key, val = part.split("=", 1)
            if key in ("p", "gamma", "zeta", "ees_x"):
                spec[key] = float(val)
            elif key in ("base", "variable"):
                spec[key] = val
            else:
                raise ConfigError(f"unknown solver option {key!r}")
        specs.append(_check_solver(spec))
    if not specs:
        raise ConfigError("empty solver list")
    return specs


def build_study_config(file_cfg: dict, flags: dict) -> StudyConfig:
    """Merge config-file values and CLI flags (flags win) into a StudyConfig."""

    def pick(key, default):
        if flags.get(key) is not None:
            return flags[key]
        if file_cfg.get(key) is not None:
            return file_cfg[key]
        return default

    solvers = pick("solvers", None) or [dict(s) for s in DEFAULT_SOLVERS]
    if isinstance(solvers, str):
        solvers = parse_solver_spec(solvers)
    for spec in solvers:
        _check_solver(spec)

    field = pick("field", "rough-synthetic")
    alias = {"rough": "rough-synthetic", "smooth": "gaussian"}
    field = alias.get(field, field)

    cfg = StudyConfig(
        solvers=solvers,
        schedule_spec=pick("schedule", {"kind": "linear-beta"}),
        field_kind=field,
        dim=int(pick("dim", 8)),
        roughness=float(pick("roughness", 1.0)),
        n_list=pick("n_list", None),
        nfe_budget=pick("nfe_budget", None),
        guidance=[float(g) for g in pick("guidance", [1.0])],
        strength=float(pick("strength", 1.0)),
        seeds=[int(s) for s in pick("seeds", [0])],
        separations=[float(s) for s in pick("separations",
                                            [0.0, 1.0, 4.0, 16.0])],
        edit_guidance=float(pick("edit_guidance", 3.0)),
        jobs=int(pick("jobs", 1)),
    )
    if cfg.nfe_budget is not None:
        cfg.nfe_budget = int(cfg.nfe_budget)
    if cfg.n_list is not None:
        cfg.n_list = [int(n) for n in cfg.n_list]
    if not 0 < cfg.strength <= 1:
        raise ConfigError("strength must lie in (0, 1]")
    if cfg.jobs < 1:
        raise ConfigError("jobs must be >= 1")
    if cfg.field_kind not in ("gaussian", "gaussian-mixture", "rough-synthetic"):
        raise ConfigError(f"unknown field kind {cfg.field_kind!r}")
    return cfg
