"""Experiment documents: JSON schema, defaults and validation.

A document names a scenario and overrides any of its defaults. Validation
happens in two passes: the JSON schema (shipped as ``experiment.schema.json``)
rejects unknown keys and out-of-range numbers, then the resolved document is
checked for the cross-field rules the schema cannot express (a seed for every
stochastic run, families that need specific parameters).
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from importlib import resources

import jsonschema

from ..errors import ConfigError

SCENARIOS = (
    "S1_reflecting_smooth",
    "S2_absorbing_smooth",
    "S3_sharp_interface",
    "S4_clt",
    "S5_coefficient_sweep",
    "custom",
)
STOCHASTIC = ("S4_clt", "S5_coefficient_sweep")
SEED_MAX = 2 ** 64 - 1


def load_schema() -> dict:
    text = resources.files(__package__).joinpath("experiment.schema.json").read_text()
    return json.loads(text)


# Scenario defaults. ``walls.width = None`` means ``width_factor`` times the
# kernel width; ``grid.pad = None`` means kernel reach plus twice the wall width.
_COMMON = {
    "grid": {"cells_per_width": 4, "pad": None},
    "output_dir": "out",
}

DEFAULTS = {
    "S1_reflecting_smooth": {
        "kernel": {
            "family": "detailed_balance",
            "base": {"shape": "gaussian", "width": 0.02},
            "modulation": {"form": "sinusoidal", "offset": 1.0, "amplitude": 0.5},
        },
        "walls": {"left": 0.0, "right": 1.0, "width": None, "width_factor": 10.0, "floor": 1e-6},
        "initial": {"form": "perturbed_uniform", "amplitude": 0.5},
        "run": {"tol": 1e-8, "t_max": 2e5, "threshold": 0.05, "refine": False},
    },
    "S2_absorbing_smooth": {
        "kernel": {"family": "gaussian", "sigma": 0.02},
        "rate": {"base": 1.0},
        "walls": {"left": 0.0, "right": 1.0, "width": None, "width_factor": 1.0, "floor": 0.0},
        "run": {"tol": 1e-8, "threshold": 0.05, "refine": False, "t_end": None},
    },
    "S3_sharp_interface": {
        "kernel": {"family": "gaussian", "sigma": 0.02},
        "rate": {"base": 1.0},
        "walls": {"left": 0.0, "right": 1.0, "width": None, "width_factor": 0.1, "floor": 0.0},
        "grid": {"cells_per_width": 16},
        "run": {"tol": 1e-8, "threshold": 0.05, "refine": False},
    },
    "S4_clt": {
        "kernel": {"family": "tophat", "a": 0.1},
        "rate": {"base": 1.0},
        "run": {"walkers": 100000, "steps": [5, 10, 20, 40], "ks_steps": 100,
                "resolution_factor": 2000, "batches": 20},
    },
    "S5_coefficient_sweep": {
        "kernel": {"family": "gaussian", "sigma": 0.05},
        "rate": {"base": 1.0},
        "grid": {"x_min": 0.0, "x_max": 1.0, "n": 256},
        "run": {"sweep": [0.0125, 0.025, 0.05, 0.1], "walkers": 100000, "bins": 16,
                "L_u": 0.25},
    },
    "custom": {
        "kernel": {"family": "gaussian", "sigma": 0.05},
        "rate": {"base": 1.0},
        "grid": {"x_min": 0.0, "x_max": 1.0, "n": 128},
        "initial": {"form": "gaussian_bump", "center": 0.5, "width": 0.05},
        "pde": {"form": "fpe", "drift": "profile",
                "left": {"kind": "neumann_flux", "value": 0.0},
                "right": {"kind": "neumann_flux", "value": 0.0}},
        "run": {"t_end": 1.0, "walkers": 0, "bins": 64, "closure": "conservative",
                "threshold": 0.05},
    },
}

RUN_DEFAULTS = {"dt_safety": 1.0, "workers": 1}


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict) and "family" not in value \
                and "form" not in value:
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _json_path(parts) -> str:
    path = "$"
    for p in parts:
        path += f"[{p}]" if isinstance(p, int) else f".{p}"
    return path


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment document with all defaults filled in."""

    document: dict

    @property
    def scenario(self) -> str:
        return self.document["scenario"]

    @property
    def seed(self):
        return self.document.get("seed")

    @property
    def output_dir(self) -> str:
        return self.document["output_dir"]

    def section(self, name):
        return self.document.get(name)

    @property
    def run(self) -> dict:
        return self.document["run"]

    def with_overrides(self, seed=None, output_dir=None, scenario=None) -> "ExperimentConfig":
        doc = copy.deepcopy(self.document)
        if seed is not None:
            doc["seed"] = seed
        if output_dir is not None:
            doc["output_dir"] = str(output_dir)
        if scenario is not None:
            doc["scenario"] = scenario
        return ExperimentConfig(doc)

    def run_defining(self) -> dict:
        """The document without settings that cannot change results.

        The output location and the thread count are dropped: walker streams
        are keyed per walker, so any ``workers`` value gives the same numbers.
        """
        doc = {k: copy.deepcopy(v) for k, v in self.document.items() if k != "output_dir"}
        doc["run"].pop("workers", None)
        return doc

    def canonical(self) -> str:
        return json.dumps(self.run_defining(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def validate_document(doc) -> None:
    """Schema check; raises :class:`ConfigError` carrying the JSON path."""
    validator = jsonschema.Draft202012Validator(load_schema())
    error = jsonschema.exceptions.best_match(validator.iter_errors(doc))
    if error is not None:
        raise ConfigError(error.message, _json_path(error.absolute_path))


def resolve(doc: dict, seed=None, scenario=None) -> ExperimentConfig:
    """Validate ``doc``, apply overrides and scenario defaults, check cross-field rules."""
    validate_document(doc)
    doc = copy.deepcopy(doc)
    if scenario is not None:
        doc["scenario"] = scenario
    if seed is not None:
        doc["seed"] = seed
    name = doc.get("scenario", "custom")
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}", "$.scenario")
    defaults = _merge(_COMMON, DEFAULTS[name])
    if doc.get("kernel", {}).get("family") == "detailed_balance":
        defaults.pop("rate", None)
    full = _merge(defaults, doc)
    full["scenario"] = name
    full["run"] = {**RUN_DEFAULTS, **full.get("run", {})}
    validate_document(full)
    _check_rules(full)
    return ExperimentConfig(full)


def _check_rules(doc):
    name = doc["scenario"]
    walkers = doc["run"].get("walkers", 0) or 0
    stochastic = name in STOCHASTIC or walkers > 0
    if stochastic and doc.get("seed") is None:
        raise ConfigError(f"scenario {name} is stochastic and needs a seed", "$.seed")
    if "family" not in doc["kernel"]:
        raise ConfigError("kernel needs a family", "$.kernel.family")
    family = doc["kernel"]["family"]
    if family == "detailed_balance" and "rate" in doc:
        raise ConfigError("the rate of a detailed_balance kernel is derived from the kernel", "$.rate")
    if family != "detailed_balance" and "rate" not in doc:
        raise ConfigError(f"family {family!r} needs a rate section", "$.rate")
    if name in ("S4_clt",) and family not in ("gaussian", "tophat", "shifted_gaussian"):
        raise ConfigError("S4 needs a homogeneous closed-form kernel", "$.kernel.family")
    if name in ("S2_absorbing_smooth", "S3_sharp_interface") and family != "gaussian":
        raise ConfigError(f"{name} is defined for the gaussian family", "$.kernel.family")
    grid = doc.get("grid", {})
    explicit = [k for k in ("x_min", "x_max", "n") if k in grid]
    if explicit and len(explicit) != 3:
        raise ConfigError("an explicit grid needs x_min, x_max and n", "$.grid")
    if not explicit and "walls" not in doc and name != "S4_clt":
        raise ConfigError("without walls the grid must be explicit (x_min, x_max, n)", "$.grid")
    if explicit and grid["x_max"] <= grid["x_min"]:
        raise ConfigError("x_max must exceed x_min", "$.grid.x_max")
    walls = doc.get("walls")
    if walls is not None and walls["right"] <= walls["left"]:
        raise ConfigError("right wall must lie beyond the left wall", "$.walls.right")


def parse_config(text: str, seed=None, scenario=None) -> ExperimentConfig:
    """Parse and validate a JSON experiment document.

    ``seed`` and ``scenario`` override the document (command-line flags).
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (line {exc.lineno}, column {exc.colno})") from None
    if not isinstance(doc, dict):
        raise ConfigError("the document must be a JSON object")
    return resolve(doc, seed=seed, scenario=scenario)


def load_config(path, seed=None, scenario=None) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read(), seed=seed, scenario=scenario)


def default_config(scenario: str, seed=None) -> ExperimentConfig:
    return resolve({"scenario": scenario}, seed=seed)
