"""Experiment configuration: YAML files with unit-bearing quantities, validated against a JSON schema."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import yaml

from .units import to_internal

CONFIG_VERSION = 1
METHODS = ("harris-ate", "harris-variational", "kpoint-dos", "band-structure", "scf-copies-ate",
           "scf-copies-pite", "oracle-only")
SCAN_PARAMETERS = ("bond-length", "ionicity", "n-band", "t-final")

_NUM = r"[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?"
QUANTITY_PATTERN = rf"^\s*{_NUM}\s+\S+\s*$"


class ConfigError(ValueError):
    pass


def _quantity():
    return {"type": "string", "pattern": QUANTITY_PATTERN}


SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["version", "method", "system"],
    "properties": {
        "version": {"const": CONFIG_VERSION},
        "method": {"enum": list(METHODS)},
        "system": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["lih", "bcc-li", "custom"]},
                "bond_length": _quantity(),
                "box": _quantity(),
                "lattice_constant": _quantity(),
                "qubits": {"type": "integer", "minimum": 1, "maximum": 7},
                "lengths": {"type": "array", "items": _quantity(), "minItems": 3, "maxItems": 3},
                "atoms": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["species", "position"],
                        "properties": {
                            "species": {"type": "string"},
                            "position": {"type": "array", "items": _quantity(), "minItems": 3, "maxItems": 3},
                        },
                    },
                },
                "atom_box_factor": {"type": "integer", "minimum": 1, "maximum": 4},
            },
        },
        "initial": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "slater_exponent": _quantity(),
                "center_rule": {"enum": ["formula", "hydrogen", "hydrogen-shift"]},
                "n_band": {"type": "integer", "minimum": 1},
                "ionicity": {"type": "number", "minimum": 0, "maximum": 2},
            },
        },
        "schedule": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "t_final": _quantity(),
                "steps": {"type": "integer", "minimum": 1},
                "e0": _quantity(),
                "splitting": {"enum": ["general", "tv"]},
                "dt": _quantity(),
            },
        },
        "readout": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["hadamard", "qpe"]},
                "tau": _quantity(),
                "n_qpe": {"type": "integer", "minimum": 2},
                "dt": _quantity(),
                "sigma": _quantity(),
                "e_shift": {"oneOf": [{"const": "auto"}, _quantity()]},
                "substeps": {"type": "integer", "minimum": 1},
            },
        },
        "kpoints": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mesh": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 3, "maxItems": 3},
                "path": {"type": "array", "items": {"type": "string"}, "minItems": 2},
                "points_per_segment": {"type": "integer", "minimum": 1},
            },
        },
        "nonlinear": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "r_c": _quantity(),
                "xc_degree": {"type": "integer", "minimum": 2, "maximum": 6},
                "xc_tolerance": {"type": "number", "exclusiveMinimum": 0},
                "mode": {"enum": ["channel", "exact"]},
                "ramp": {"type": "boolean"},
                "pite_dt": _quantity(),
                "pite_phase": {"type": "number"},
            },
        },
        "scan": {
            "type": "object",
            "additionalProperties": False,
            "required": ["parameter", "values"],
            "properties": {
                "parameter": {"enum": list(SCAN_PARAMETERS)},
                "values": {"type": "array", "minItems": 1, "items": {"type": ["number", "string", "integer"]}},
            },
        },
        "oracle": {"type": "boolean"},
        "shots": {"type": ["integer", "null"], "minimum": 1},
        "seed": {"type": ["integer", "null"], "minimum": 0},
        "output": {"type": "string"},
    },
}

_KIND_OF = {
    "bond_length": "length", "box": "length", "lattice_constant": "length", "lengths": "length",
    "position": "length", "slater_exponent": "inverse_length", "t_final": "time", "dt": "time", "e0": "energy",
    "tau": "time", "sigma": "energy", "e_shift": "energy", "r_c": "length", "pite_dt": "time",
}


def parse_quantity(text: str, kind: str) -> float:
    """``"1.55 angstrom"`` -> value in atomic units."""
    m = re.fullmatch(rf"\s*({_NUM})\s+(\S+)\s*", str(text))
    if not m:
        raise ConfigError(f"expected '<number> <unit>', got {text!r}")
    try:
        return float(to_internal(float(m.group(1)), m.group(m.lastindex), kind))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _convert(node, key=None):
    if isinstance(node, dict):
        return {k: _convert(v, k) for k, v in node.items()}
    if isinstance(node, list):
        return [_convert(v, key) for v in node]
    if isinstance(node, str) and key in _KIND_OF and node != "auto":
        return parse_quantity(node, _KIND_OF[key])
    return node


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict  # as written (units attached)
    values: dict  # quantities converted to atomic units
    source: str | None = None

    @property
    def method(self) -> str:
        return self.values["method"]

    def section(self, name: str) -> dict:
        return dict(self.values.get(name) or {})

    @property
    def seed(self):
        return self.values.get("seed")

    @property
    def digest(self) -> str:
        return config_hash(self.raw)

    def with_override(self, section: str, key: str, raw_value) -> "ExperimentConfig":
        raw = json.loads(json.dumps(self.raw))
        raw.setdefault(section, {})[key] = raw_value
        return from_dict(raw, self.source)


def config_hash(raw: dict) -> str:
    return hashlib.sha256(json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def validate(raw) -> list:
    """Schema errors as readable strings (empty when valid)."""
    v = jsonschema.Draft202012Validator(SCHEMA)
    errs = []
    for e in sorted(v.iter_errors(raw), key=lambda e: list(e.path)):
        where = "/".join(str(p) for p in e.path) or "<root>"
        errs.append(f"{where}: {e.message}")
    return errs


def from_dict(raw: dict, source: str | None = None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    errs = validate(raw)
    if errs:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errs))
    values = _convert(raw)
    _check_combinations(values)
    return ExperimentConfig(raw, values, source)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path} is not valid YAML: {exc}") from exc
    return from_dict(raw, str(path))


def _check_combinations(v: dict):
    method, kind = v["method"], v["system"]["kind"]
    system = v["system"]
    if kind == "lih" and "bond_length" not in system:
        raise ConfigError("system.bond_length is required for kind 'lih'")
    if kind == "custom" and not ("lengths" in system and "atoms" in system):
        raise ConfigError("custom systems need system.lengths and system.atoms")
    if kind == "custom" and method != "oracle-only":
        raise ConfigError(f"method {method!r} needs a 'lih' or 'bcc-li' system; custom cells support oracle-only")
    lih_methods = ("harris-ate", "harris-variational", "scf-copies-ate", "scf-copies-pite")
    metal_methods = ("kpoint-dos", "band-structure")
    if method in lih_methods and kind != "lih":
        raise ConfigError(f"method {method!r} is implemented for the LiH system")
    if method in metal_methods and kind != "bcc-li":
        raise ConfigError(f"method {method!r} is implemented for the BCC Li system")
    n_band = (v.get("initial") or {}).get("n_band")
    if method.startswith("scf-copies") and n_band not in (None, 1):
        raise ConfigError("scf-copies methods need N_band = N_elec/2 = 1 for LiH; remove initial.n_band or set it to 1")
    scan = v.get("scan")
    if scan:
        allowed = {
            "bond-length": ("harris-ate", "oracle-only"),
            "ionicity": ("harris-ate", "harris-variational"),
            "n-band": ("kpoint-dos",),
            "t-final": ("harris-ate", "scf-copies-ate"),
        }[scan["parameter"]]
        if method not in allowed:
            raise ConfigError(f"scan over {scan['parameter']!r} is supported for methods {allowed}")
    if method == "band-structure" and "path" not in (v.get("kpoints") or {}):
        raise ConfigError("band-structure needs kpoints.path (labels G, X, M, R)")
