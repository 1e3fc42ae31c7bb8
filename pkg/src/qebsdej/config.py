"""Experiment configuration: JSON schema, parsing, and validation.

Every run is fully determined by its configuration; in particular a seed is
mandatory, so no experiment carries implicit randomness.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .drivers import Driver, StructureParams, make_driver
from .levy import LevyModel, make_model

EXPERIMENTS = ("solve", "scheme", "audit", "risk", "oracle")
TERMINALS = ("linear", "abs_linear", "constant")
DYNAMICS_CHOICES = ("brownian", "brownian_jumps", "jumps_only", "deterministic")


class ConfigError(ValueError):
    """Configuration failed to parse or validate; carries the field path."""

    def __init__(self, fieldpath: str, message: str):
        self.fieldpath = fieldpath
        super().__init__(f"config field '{fieldpath}': {message}")


def _need(section: dict, key: str, path: str):
    if key not in section:
        raise ConfigError(f"{path}.{key}", "missing required field")
    return section[key]


def _as_positive(value, path: str, strict: bool = True) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(path, f"expected a number, got {value!r}") from None
    if strict and v <= 0 or not strict and v < 0:
        raise ConfigError(path, f"must be {'positive' if strict else 'nonnegative'}")
    return v


@dataclass
class ExperimentConfig:
    experiment: str
    raw: dict
    model: dict = field(default_factory=dict)
    driver: dict = field(default_factory=dict)
    structure: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    ensemble: dict = field(default_factory=dict)
    quadrature: dict = field(default_factory=dict)
    terminal: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    schedule: dict = field(default_factory=dict)
    risk: dict = field(default_factory=dict)
    oracle: dict = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return int(self.ensemble["seed"])

    def build_model(self) -> LevyModel:
        params = {k: v for k, v in self.model.items() if k != "name"}
        return make_model(self.model.get("name", "gamma"), **params)

    def build_structure(self) -> StructureParams:
        return StructureParams.from_constants(
            float(self.structure.get("delta", 1.0)),
            float(self.structure.get("l", 0.0)),
            float(self.structure.get("c", 0.0)))

    def build_driver(self, structure: StructureParams,
                     quad_mass_hint: float | None = None) -> Driver:
        params = {k: v for k, v in self.driver.items() if k != "name"}
        return make_driver(self.driver.get("name", "canonical"), structure,
                           quad_mass_hint=quad_mass_hint, **params)

    def terminal_fn(self):
        name = self.terminal.get("name", "linear")
        scale = float(self.terminal.get("scale", 1.0))
        shift = float(self.terminal.get("shift", 0.0))
        if name == "linear":
            return lambda x: scale * np.asarray(x, dtype=float) + shift
        if name == "abs_linear":
            return lambda x: np.abs(scale * np.asarray(x, dtype=float)) + shift
        if name == "constant":
            value = float(self.terminal.get("value", 1.0))
            return lambda x: np.full(np.asarray(x).shape, value)
        raise ConfigError("terminal.name", f"unknown terminal '{name}'")

    def time_grid(self) -> np.ndarray:
        return np.linspace(0.0, float(self.grid["t_end"]),
                           int(self.grid["k_steps"]) + 1)


def validate_config(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "top level must be a JSON object")
    experiment = _need(data, "experiment", "<root>")
    if experiment not in EXPERIMENTS:
        raise ConfigError("experiment",
                          f"unknown experiment '{experiment}'; choose from {EXPERIMENTS}")
    cfg = ExperimentConfig(
        experiment=experiment, raw=data,
        model=data.get("model", {"name": "gamma"}),
        driver=data.get("driver", {"name": "canonical"}),
        structure=data.get("structure", {}),
        grid=data.get("grid", {}),
        ensemble=data.get("ensemble", {}),
        quadrature=data.get("quadrature", {}),
        terminal=data.get("terminal", {}),
        solver=data.get("solver", {}),
        schedule=data.get("schedule", {}),
        risk=data.get("risk", {}),
        oracle=data.get("oracle", {}),
    )
    if experiment == "oracle":
        if "name" not in cfg.oracle:
            raise ConfigError("oracle.name", "missing required field")
        return cfg

    ens = cfg.ensemble
    if "seed" not in ens:
        raise ConfigError("ensemble.seed", "missing required field "
                          "(no implicit randomness)")
    try:
        int(ens["seed"])
    except (TypeError, ValueError):
        raise ConfigError("ensemble.seed", "must be an integer") from None
    n_paths = int(_need(ens, "n_paths", "ensemble"))
    if n_paths < 100:
        raise ConfigError("ensemble.n_paths", "need at least 100 paths")
    dynamics = ens.get("dynamics", "brownian_jumps")
    if dynamics not in DYNAMICS_CHOICES:
        raise ConfigError("ensemble.dynamics",
                          f"unknown dynamics '{dynamics}'")
    _as_positive(_need(cfg.grid, "t_end", "grid"), "grid.t_end")
    k_steps = int(_need(cfg.grid, "k_steps", "grid"))
    if k_steps < 2:
        raise ConfigError("grid.k_steps", "need at least 2 steps")
    if cfg.model.get("name", "gamma") not in ("gamma", "stable", "normal", "null"):
        raise ConfigError("model.name", f"unknown preset '{cfg.model.get('name')}'")
    if cfg.driver.get("name", "canonical") not in ("canonical", "linear",
                                                   "morlais", "zero"):
        raise ConfigError("driver.name", f"unknown preset '{cfg.driver.get('name')}'")
    kappa = _as_positive(cfg.quadrature.get("kappa", 8.0), "quadrature.kappa")
    if kappa < 1.0:
        raise ConfigError("quadrature.kappa", "must be at least 1")
    if experiment == "scheme":
        triples = cfg.schedule.get("triples")
        if not triples:
            raise ConfigError("schedule.triples", "missing required field")
        for i, t in enumerate(triples):
            if len(t) != 3 or min(int(v) for v in t) < 1:
                raise ConfigError(f"schedule.triples[{i}]",
                                  "each triple needs three indices >= 1")
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError("<file>", f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON at line {exc.lineno}, "
                          f"column {exc.colno}: {exc.msg}") from None
    return validate_config(data)
