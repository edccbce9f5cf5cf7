"""JSON scenario files with units spelled out in the key names.

A key such as ``delta_khz`` is stored as ``delta`` in rad/s; ``pressure_mbar``
becomes ``pressure`` in Pa.  Unknown keys are rejected with the line they
appear on.
"""

from __future__ import annotations

import hashlib
import json
import math
import re

from .errors import ConfigError
from .model import AMU

# longest suffixes first so "_krad_s" wins over "_rad_s" and "_s"
UNIT_SUFFIXES = {
    "_krad_s": 1e3,
    "_rad_s": 1.0,
    "_kg_m3": 1.0,
    "_lambda": 1.0,
    "_mbar": 100.0,
    "_khz": 2 * math.pi * 1e3,
    "_amu": AMU,
    "_deg": math.pi / 180.0,
    "_rad": 1.0,
    "_hz": 2 * math.pi,
    "_pa": 1.0,
    "_nm": 1e-9,
    "_k": 1.0,
    "_s": 1.0,
    "_m": 1.0,
}
_ORDERED = sorted(UNIT_SUFFIXES, key=len, reverse=True)

SYSTEM_KEYS = {
    "pressure",
    "temperature",
    "particle_radius",
    "particle_density",
    "gas_molecule_mass",
    "wavelength",
    "trap_offset",
    "polarisation_theta",
    "omega_x",
    "omega_y",
    "kappa",
    "delta",
    "g_x",
    "g_y",
    "g_xy",
    "gamma",
    "nbar_x",
    "nbar_y",
}
FORCE_KEYS = {"psi", "beta2"}
MISALIGNMENT_KEYS = {"phi", "beta_err_x", "beta_err_y"}
GRID_KEYS = {"lo", "hi", "points"}
SIMULATE_KEYS = {"seeds", "n_samples", "dt", "segment_length"}
TOP_KEYS = {"name", "mode", "model", "classical", "system", "force", "misalignment", "grid", "simulate", "variants"}
DIMENSIONLESS = {"beta2", "nbar_x", "nbar_y", "points", "seeds", "n_samples", "segment_length"}
SECTIONS = {
    "system": SYSTEM_KEYS,
    "force": FORCE_KEYS,
    "misalignment": MISALIGNMENT_KEYS,
    "grid": GRID_KEYS,
    "simulate": SIMULATE_KEYS,
}
#: keys given in wavelengths keep that unit (``trap_offset_lambda`` -> ``trap_offset_lambda``)
_WAVELENGTH_UNIT = "_lambda"


def split_unit(key):
    """Return (base name, factor to SI / rad/s, suffix)."""
    for suffix in _ORDERED:
        if key.endswith(suffix) and len(key) > len(suffix):
            return key[: -len(suffix)], UNIT_SUFFIXES[suffix], suffix
    return key, None, ""


def _line_of(text, key):
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _convert_section(section, raw, text, allowed):
    if not isinstance(raw, dict):
        raise ConfigError(f"section '{section}' must be an object", _line_of(text, section))
    out = {}
    for key, value in raw.items():
        base, factor, suffix = split_unit(key)
        if base not in allowed:
            base, factor, suffix = key, None, ""
        if base not in allowed:
            raise ConfigError(f"unknown key '{key}' in section '{section}'", _line_of(text, key))
        if factor is None and base not in DIMENSIONLESS:
            raise ConfigError(f"'{key}' needs a unit suffix (e.g. {key}_khz)", _line_of(text, key))
        if suffix == _WAVELENGTH_UNIT:
            if not (isinstance(value, (int, float)) or value == "cancellation"):
                raise ConfigError(f"'{key}' must be a number or \"cancellation\"", _line_of(text, key))
            out[base + _WAVELENGTH_UNIT] = value
            continue
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"'{key}' must be a number", _line_of(text, key))
        out[base] = value * factor if factor is not None else value
    return out


def parse_config(text, source="<config>"):
    """Parse scenario text into unit-normalised sections."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: {exc.msg}", exc.lineno) from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be an object", 1)
    return _normalise(raw, text)


def _normalise(raw, text):
    out = {}
    for key, value in raw.items():
        if key not in TOP_KEYS:
            raise ConfigError(f"unknown top-level key '{key}'", _line_of(text, key))
        if key in SECTIONS:
            out[key] = _convert_section(key, value, text, SECTIONS[key])
        elif key == "variants":
            if not isinstance(value, list):
                raise ConfigError("'variants' must be a list", _line_of(text, key))
            out[key] = [_normalise_variant(v, text) for v in value]
        else:
            out[key] = value
    return out


def _normalise_variant(raw, text):
    if not isinstance(raw, dict) or "name" not in raw:
        raise ConfigError("each variant needs a 'name'", _line_of(text, "variants"))
    out = {"name": raw["name"]}
    for key, value in raw.items():
        if key == "name":
            continue
        if key not in SECTIONS:
            raise ConfigError(f"unknown variant key '{key}'", _line_of(text, key))
        out[key] = _convert_section(key, value, text, SECTIONS[key])
    return out


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def config_hash(obj):
    """sha256 hex digest of the canonical JSON form."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
