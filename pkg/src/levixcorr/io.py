"""Spectrum files: CSV columns plus a JSON bundle, both tagged with a config hash.

Floats are written with ``repr`` so a read returns the same bits.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .errors import HashMismatchError, TraceFormatError
from .spectra import RealSpectrum

HASH_PREFIX = "# config_hash="


def write_spectrum_csv(path, spectrum: RealSpectrum, config_hash):
    lines = [HASH_PREFIX + config_hash, "omega_rad_s,value"]
    lines += [f"{w!r},{v!r}" for w, v in zip(spectrum.freq_grid.tolist(), spectrum.values.tolist())]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_spectrum_csv(path):
    """Return (spectrum, config_hash or None)."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    digest = None
    if lines and lines[0].startswith(HASH_PREFIX):
        digest = lines.pop(0)[len(HASH_PREFIX) :]
    if not lines or lines[0].strip() != "omega_rad_s,value":
        raise TraceFormatError(f"{path}: missing 'omega_rad_s,value' header")
    try:
        rows = [tuple(float(v) for v in ln.split(",")) for ln in lines[1:] if ln]
    except ValueError as exc:
        raise TraceFormatError(f"{path}: {exc}") from None
    data = np.array(rows, dtype=float).reshape(-1, 2)
    return RealSpectrum(data[:, 0], data[:, 1]), digest


def _clean(obj):
    # json cannot hold inf/nan or numpy scalars
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_json(path, obj, config_hash=None):
    payload = dict(_clean(obj))
    if config_hash is not None:
        payload["config_hash"] = config_hash
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def spectra_bundle_json(spectra: dict, params_echo: dict):
    """Dict form of several spectra sharing one grid, plus a parameter echo."""
    grid = None
    values = {}
    for name, s in spectra.items():
        if grid is None:
            grid = s.freq_grid
        elif not np.array_equal(grid, s.freq_grid):
            raise ValueError("bundle spectra must share one grid")
        values[name] = s.values.tolist()
    return {"omega_rad_s": [] if grid is None else grid.tolist(), "spectra": values, "params": params_echo}


def bundle_from_json(obj):
    grid = np.asarray(obj["omega_rad_s"], dtype=float)
    return {k: RealSpectrum(grid, np.asarray(v, dtype=float)) for k, v in obj["spectra"].items()}


def normalized_rms(estimate, reference):
    """sqrt(mean((a - b)^2)) / sqrt(mean(b^2))."""
    a = np.asarray(estimate, dtype=float)
    b = np.asarray(reference, dtype=float)
    return float(np.sqrt(np.mean((a - b) ** 2)) / np.sqrt(np.mean(b**2)))


def compare_spectrum_files(path_a, path_b, band=None):
    """Normalized RMS deviation of file a from reference file b.

    Both files must carry the same config hash and grid.
    """
    a, ha = read_spectrum_csv(path_a)
    b, hb = read_spectrum_csv(path_b)
    if ha is None or ha != hb:
        raise HashMismatchError(f"config hash of {path_a} ({ha}) differs from {path_b} ({hb})")
    if not np.array_equal(a.freq_grid, b.freq_grid):
        raise ValueError(f"{path_a} and {path_b} use different grids")
    if band is not None:
        a, b = a.band(*band), b.band(*band)
    return normalized_rms(a.values, b.values)
