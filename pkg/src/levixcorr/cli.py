"""Command line: scenario runs, calibration and parameter sweeps.

    levixcorr run <scenario>
    levixcorr calibrate --traces <dir> | --simulate <scenario>
    levixcorr sweep --param <key> --range a:b:n <scenario>

A scenario is a JSON file (or the name of a bundled one, see
``levixcorr list``).  Exit codes: 0 success, 2 configuration error,
3 runtime error.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import io
from .config import SECTIONS, config_hash, load_config, parse_config, split_unit
from .errors import (
    ConfigError,
    DomainError,
    HashMismatchError,
    NoCancellationError,
)
from .estimate import (
    WelchConfig,
    ensemble_welch,
    fit_misalignment,
    fit_rotation,
    to_model_units,
    welch_spectra,
)
from .model import (
    DEFAULT_DELTA,
    DEFAULT_G,
    DEFAULT_KAPPA,
    DEFAULT_OMEGA_X,
    DEFAULT_OMEGA_Y,
    NO_FORCE,
    DirectedForce,
    Misalignment,
    PhysicalEnv,
    build_system,
)
from .response import cancellation_offset, rotation_angle_phi
from .simulate import read_trace
from .spectra import (
    RealSpectrum,
    compute_bundle,
    cross_cooperativity,
    detector_frame_spectra,
    directed_force_xcorr,
    hybridised_spectra,
    masking_ratio,
    optical_linewidth,
    peak_location,
    peak_ratio,
    resonance_band,
    shot_noise_xcorr,
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
MODES = ("analytic", "simulate", "both")
#: below this mean occupancy the classical simulator is not a faithful oracle
CLASSICAL_NBAR = 100.0
DEFAULT_POINTS = 2001

SPECTRUM_NAMES = ("s_xx", "s_yy", "s_xy_lab", "s_xy_detector", "s_qn", "s_fxfy", "rotation_term")
SIM_NAMES = ("s_xx", "s_yy", "s_xy")


@dataclass(frozen=True)
class Scenario:
    name: str
    system: dict = field(default_factory=dict)
    force: dict = field(default_factory=dict)
    misalignment: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    mode: str = "analytic"
    model: str = "qlt"
    classical: bool = False
    simulate: dict = field(default_factory=dict)
    variants: tuple = ()
    out_dir: str = "out"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.model not in ("qlt", "exact"):
            raise ConfigError(f"model must be 'qlt' or 'exact', got {self.model!r}")

    @classmethod
    def from_config(cls, cfg, out_dir="out"):
        return cls(
            name=str(cfg.get("name", "scenario")),
            system=dict(cfg.get("system", {})),
            force=dict(cfg.get("force", {})),
            misalignment=dict(cfg.get("misalignment", {})),
            grid=dict(cfg.get("grid", {})),
            mode=cfg.get("mode", "analytic"),
            model=cfg.get("model", "qlt"),
            classical=bool(cfg.get("classical", False)),
            simulate=dict(cfg.get("simulate", {})),
            variants=tuple(cfg.get("variants", ())),
            out_dir=str(out_dir),
        )

    def expanded(self):
        """One (variant name, merged sections) pair per variant."""
        base = {k: getattr(self, k) for k in SECTIONS}
        if not self.variants:
            return [("base", base)]
        out = []
        for v in self.variants:
            merged = {k: {**base[k], **v.get(k, {})} for k in SECTIONS}
            out.append((str(v["name"]), merged))
        return out


@dataclass
class Resolved:
    name: str
    params: object
    force: DirectedForce
    mis: Misalignment | None
    grid: np.ndarray
    x0_lambda: float
    cancellation: dict
    sections: dict


_ENV_FIELDS = ("temperature", "particle_radius", "particle_density", "gas_molecule_mass", "polarisation_theta")
_OVERRIDES = ("gamma", "g_xy", "nbar_x", "nbar_y")


def _build(system, x0_lambda):
    wavelength = system.get("wavelength", 1064e-9)
    env = PhysicalEnv(
        pressure=system.get("pressure", 1e-2),
        wavelength=wavelength,
        trap_offset=x0_lambda * wavelength,
        **{k: system[k] for k in _ENV_FIELDS if k in system},
    )
    return build_system(
        env,
        system.get("g_x", DEFAULT_G),
        system.get("g_y", DEFAULT_G),
        omega_x=system.get("omega_x", DEFAULT_OMEGA_X),
        omega_y=system.get("omega_y", DEFAULT_OMEGA_Y),
        kappa=system.get("kappa", DEFAULT_KAPPA),
        delta=system.get("delta", DEFAULT_DELTA),
        overrides={k: system[k] for k in _OVERRIDES if k in system},
    )


def resolve(name, sections, model="qlt"):
    """Turn merged config sections into model objects; raises on bad input."""
    system = sections["system"]
    if "trap_offset" in system and "trap_offset_lambda" in system:
        raise ConfigError("give trap_offset or trap_offset_lambda, not both")
    wavelength = system.get("wavelength", 1064e-9)
    x0 = system.get("trap_offset_lambda", system.get("trap_offset", 0.25 * wavelength) / wavelength)
    template = _build(system, 0.25)
    cancellation = {}
    try:
        c = cancellation_offset(template)
        cancellation = {"x0_lambda": c.x0, "imag_residual_rad_s": c.imag_residual}
    except NoCancellationError as exc:
        if x0 == "cancellation":
            raise
        cancellation = {"error": str(exc)}
    except DomainError as exc:
        if x0 == "cancellation":
            raise
        cancellation = {"error": str(exc)}
    if x0 == "cancellation":
        x0 = cancellation["x0_lambda"]
    params = _build(system, float(x0))

    fcfg = sections["force"]
    force = NO_FORCE
    if fcfg:
        force = DirectedForce.from_gamma(params.gamma, fcfg.get("beta2", 0.0), fcfg.get("psi", 0.0))
    mcfg = sections["misalignment"]
    mis = None
    if mcfg:
        phi = mcfg.get("phi", rotation_angle_phi(params) if model == "qlt" else 0.0)
        mis = Misalignment(phi=phi, beta_err_x=mcfg.get("beta_err_x", 0.0), beta_err_y=mcfg.get("beta_err_y", 0.0))

    gcfg = sections["grid"]
    points = gcfg.get("points", DEFAULT_POINTS)
    if int(points) != points or points < 2:
        raise ConfigError(f"grid needs at least 2 points, got {points!r}")
    if "lo" in gcfg or "hi" in gcfg:
        lo, hi = gcfg.get("lo"), gcfg.get("hi")
        if lo is None or hi is None or not hi > lo:
            raise ConfigError("grid needs lo < hi")
    else:
        lo, hi = resonance_band(params)
    grid = np.linspace(lo, hi, int(points))
    return Resolved(name, params, force, mis, grid, float(x0), cancellation, sections)


def _echo(r: Resolved, scn: Scenario, seed):
    return {
        "scenario": scn.name,
        "variant": r.name,
        "params": r.params.as_dict(),
        "force": r.force.as_dict(),
        "misalignment": r.mis.as_dict() if r.mis else None,
        "grid": [r.grid[0], r.grid[-1], r.grid.size],
        "mode": scn.mode,
        "model": scn.model,
        "classical": scn.classical,
        "simulate": scn.simulate if scn.mode != "analytic" else None,
        "seed": seed if scn.mode != "analytic" else None,
    }


def derived_quantities(r: Resolved, bundle, s_fxfy, rotation):
    p, f = r.params, r.force
    gamma_opt = optical_linewidth(p, "x")
    pr = peak_ratio(p, f)
    masking = {axis: masking_ratio(p, f, axis) for axis in ("x", "y")}
    return {
        "phi_rad": rotation_angle_phi(p),
        "phi_used_rad": bundle.phi_used,
        "c_xy": cross_cooperativity(p) if p.nbar > 0 else None,
        "gamma_opt_rad_s": gamma_opt,
        "gamma_opt_over_split": gamma_opt / abs(p.omega_x - p.omega_y),
        "x0_lambda": r.x0_lambda,
        "cancellation": r.cancellation,
        "peak_ratio": {"estimate": pr.estimate, "measured": pr.measured, "omega_rad_s": pr.omega_star},
        "masking_ratio": masking,
    }


def _analytic(r: Resolved, scn: Scenario):
    bundle = compute_bundle(r.grid, r.params, r.force, r.mis, model=scn.model, classical=scn.classical)
    s_qn = shot_noise_xcorr(r.grid, r.params, scn.classical)
    s_f = directed_force_xcorr(r.grid, r.params, r.force)
    rotation = (bundle.s_yy - bundle.s_xx).scaled(rotation_angle_phi(r.params))
    spectra = dict(
        zip(SPECTRUM_NAMES, (bundle.s_xx, bundle.s_yy, bundle.s_xy_lab, bundle.s_xy_detector, s_qn, s_f, rotation))
    )
    return spectra, derived_quantities(r, bundle, s_f, rotation)


def _simulate(r: Resolved, scn: Scenario, seed):
    sim = scn.simulate
    p = r.params
    gamma_opt = optical_linewidth(p, "x")
    dt = sim.get("dt", 2e-7)
    n = int(sim.get("n_samples", 2**20))
    cfg = WelchConfig(int(sim["segment_length"])) if "segment_length" in sim else WelchConfig.for_linewidth(gamma_opt, dt)
    seeds = range(seed, seed + int(sim.get("seeds", 64)))
    mis = None
    if r.mis is not None:
        mis = Misalignment(beta_err_x=r.mis.beta_err_x, beta_err_y=r.mis.beta_err_y)
    ens = ensemble_welch(p, r.force, seeds, n_samples=n, dt=dt, cfg=cfg, mis=mis, gamma_opt=gamma_opt)
    band = resonance_band(p, gamma_opt)
    sim_spec = {k: s.band(*band) for k, s in zip(SIM_NAMES, (ens.s_xx, ens.s_yy, ens.s_xy))}
    grid = sim_spec["s_xx"].freq_grid
    oracle = hybridised_spectra(grid, p, r.force, classical=True)
    if mis is not None:
        oracle = detector_frame_spectra(*oracle, mis)
    return sim_spec, dict(zip(SIM_NAMES, oracle)), {"n_avg": ens.n_avg, "seeds": [seeds.start, seeds.stop - 1],
                                                      "band_rad_s": list(band), "segment_length": cfg.segment_length}


def _write_spectra(dirpath, prefix, spectra, digest, fmt, echo):
    if fmt == "json":
        io.write_json(dirpath / f"{prefix}spectra.json", io.spectra_bundle_json(spectra, echo), digest)
        return
    for k, s in spectra.items():
        io.write_spectrum_csv(dirpath / f"{prefix}{k}.csv", s, digest)


def run_scenario(scn: Scenario, seed=0, fmt="csv", log=None):
    """Evaluate every variant, then write all files.  Returns written paths."""
    log = log or sys.stderr
    if fmt not in ("csv", "json"):
        raise ConfigError(f"format must be csv or json, got {fmt!r}")
    resolved = [resolve(name, sec, scn.model) for name, sec in scn.expanded()]
    results = []
    for r in resolved:
        echo = _echo(r, scn, seed)
        digest = config_hash(io._clean(echo))
        out = {"echo": echo, "hash": digest, "notices": []}
        analytic, out["derived"] = _analytic(r, scn)
        if scn.mode in ("analytic", "both"):
            out["analytic"] = analytic
        if scn.mode in ("simulate", "both"):
            if r.params.nbar > CLASSICAL_NBAR:
                out["sim"], out["oracle"], out["sim_info"] = _simulate(r, scn, seed)
            else:
                msg = f"{r.name}: mean occupancy {r.params.nbar:.3g} <= {CLASSICAL_NBAR:g}; classical oracle skipped, analytic output only"
                out["notices"].append(msg)
                print("notice: " + msg, file=log)
                out["analytic"] = analytic
        results.append((r, out))

    written = []
    root = Path(scn.out_dir) / scn.name
    for r, out in results:
        d = root / r.name
        d.mkdir(parents=True, exist_ok=True)
        digest = out["hash"]
        if "analytic" in out:
            _write_spectra(d, "", out["analytic"], digest, fmt, out["echo"])
        meta = {**out["echo"], "derived": out["derived"], "notices": out["notices"]}
        if "sim" in out:
            _write_spectra(d, "sim_", out["sim"], digest, fmt, out["echo"])
            _write_spectra(d, "oracle_", out["oracle"], digest, fmt, out["echo"])
            meta["simulation"] = out["sim_info"]
            if fmt == "csv":
                report = {k: io.compare_spectrum_files(d / f"sim_{k}.csv", d / f"oracle_{k}.csv") for k in SIM_NAMES}
            else:
                report = _compare_json(d / "sim_spectra.json", d / "oracle_spectra.json")
            io.write_json(d / "comparison.json", {"normalized_rms": report, **out["sim_info"]}, digest)
        io.write_json(d / "metadata.json", meta, digest)
        written.extend(sorted(d.iterdir()))
    return written


def _compare_json(path_a, path_b):
    a, b = io.read_json(path_a), io.read_json(path_b)
    if a.get("config_hash") is None or a.get("config_hash") != b.get("config_hash"):
        raise HashMismatchError(f"config hash of {path_a} differs from {path_b}")
    sa, sb = io.bundle_from_json(a), io.bundle_from_json(b)
    return {k: io.normalized_rms(sa[k].values, sb[k].values) for k in sb}


def _auto_band(s_xx, s_yy):
    wx = s_xx.freq_grid[np.argmax(s_xx.values[1:]) + 1]
    wy = s_yy.freq_grid[np.argmax(s_yy.values[1:]) + 1]
    split = abs(wx - wy)
    if split == 0:
        raise DomainError("x and y peaks coincide; cannot choose a fit band")
    return min(wx, wy) - 0.5 * split, max(wx, wy) + 0.5 * split


def run_calibration(traces_dir=None, scenario: Scenario | None = None, seed=0, rotation=False,
                    out_dir="out", fmt="csv", segment_length=None):
    """welch_spectra -> fit_misalignment (-> fit_rotation) on traces or a simulated ensemble."""
    if (traces_dir is None) == (scenario is None):
        raise ConfigError("give exactly one of --traces or --simulate")
    if traces_dir is not None:
        paths = sorted(Path(traces_dir).glob("*.lvxt"))
        if not paths:
            raise ConfigError(f"no *.lvxt trace files in {traces_dir}")
        traces = [read_trace(pth) for pth in paths]
        dt = traces[0].dt
        if any(t.dt != dt for t in traces):
            raise ConfigError("traces use different sampling steps")
        cfg = WelchConfig(segment_length or min(2**15, 2 ** int(math.log2(min(len(t) for t in traces)))))
        acc = None
        for t in traces:
            vals = [s.values for s in welch_spectra(t, cfg)]
            acc = vals if acc is None else [a + v for a, v in zip(acc, vals)]
        grid = welch_spectra(traces[0], cfg)[0].freq_grid
        s_xx, s_yy, s_xy = (to_model_units(RealSpectrum(grid, a / len(traces))) for a in acc)
        band = _auto_band(s_xx, s_yy)
        source = {"traces": [str(p) for p in paths]}
        digest = config_hash(source)
        name = Path(traces_dir).name or "traces"
    else:
        (vname, sections), *_ = scenario.expanded()
        r = resolve(vname, sections, "exact")
        sim_scn = replace(scenario, mode="simulate", variants=())
        if segment_length:
            sim_scn = replace(sim_scn, simulate={**sim_scn.simulate, "segment_length": segment_length})
        sim, _, info = _simulate(r, sim_scn, seed)
        s_xx, s_yy, s_xy = sim["s_xx"], sim["s_yy"], sim["s_xy"]
        band = tuple(info["band_rad_s"])
        source = _echo(r, sim_scn, seed)
        digest = config_hash(io._clean(source))
        name = scenario.name
    mis_fit = fit_misalignment(s_xy, s_xx, s_yy, band=band)
    report = {"source": source, "band_rad_s": list(band), "misalignment": mis_fit.to_dict()}
    if rotation:
        report["rotation"] = fit_rotation(s_xy, s_xx, s_yy, band=band).to_dict()
    a_x, a_y = mis_fit.estimates["a_x"], mis_fit.estimates["a_y"]
    corrected = {
        "s_xx": s_xx,
        "s_yy": s_yy,
        "s_xy": s_xy,
        "s_xy_corrected": s_xy - s_yy.scaled(a_x) + s_xx.scaled(a_y),
    }
    d = Path(out_dir) / name / "calibration"
    d.mkdir(parents=True, exist_ok=True)
    _write_spectra(d, "", corrected, digest, fmt, source)
    io.write_json(d / "calibration.json", report, digest)
    return report


def parse_range(text):
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError(f"--range expects a:b:n, got {text!r}")
    try:
        a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise ConfigError(f"--range expects a:b:n, got {text!r}") from None
    if n < 1:
        raise ConfigError("--range needs n >= 1")
    return np.linspace(a, b, n).tolist()


def _with_param(scn: Scenario, key, value):
    base, factor, suffix = split_unit(key)
    for section, allowed in SECTIONS.items():
        if base in allowed:
            if suffix == "_lambda":
                name, v = base + suffix, value
            elif factor is None:
                name, v = key, value
            else:
                name, v = base, value * factor
            sec = {k: x for k, x in getattr(scn, section).items() if k not in (base, base + "_lambda")}
            sec[name] = v
            variants = tuple(
                {**var, section: {k: x for k, x in var.get(section, {}).items() if k not in (base, base + "_lambda")}}
                for var in scn.variants
            )
            return replace(scn, **{section: sec}, variants=variants)
    raise ConfigError(f"unknown sweep parameter {key!r}")


def run_sweep(scn: Scenario, key, values, seed=0, fmt="csv", workers=None):
    """Run one scenario per value concurrently; returns summary rows in input order."""
    jobs = []
    for v in values:
        sub = _with_param(scn, key, v)
        sub = replace(sub, name=f"{key}={v:.10g}", out_dir=str(Path(scn.out_dir) / scn.name / f"sweep_{key}"))
        for name, sec in sub.expanded():
            resolve(name, sec, sub.model)  # validate everything before any file is written
        jobs.append((v, sub))
    with ThreadPoolExecutor(max_workers=workers or os.cpu_count() or 1) as pool:
        futures = [pool.submit(run_scenario, sub, seed, fmt) for _, sub in jobs]
        for f in futures:
            f.result()
    rows = []
    for v, sub in jobs:
        for name, _ in sub.expanded():
            meta = io.read_json(Path(sub.out_dir) / sub.name / name / "metadata.json")
            d = meta["derived"]
            rows.append(
                [v, name, d["phi_rad"], d["c_xy"], d["gamma_opt_rad_s"], d["x0_lambda"],
                 d["peak_ratio"]["estimate"], d["peak_ratio"]["measured"]]
            )
    summary = Path(scn.out_dir) / scn.name / f"sweep_{key}" / "summary.csv"
    with open(summary, "w") as fh:
        fh.write(f"{key},variant,phi_rad,c_xy,gamma_opt_rad_s,x0_lambda,peak_ratio_estimate,peak_ratio_measured\n")
        for row in rows:
            fh.write(",".join("" if x is None else (x if isinstance(x, str) else repr(float(x))) for x in row) + "\n")
    return rows


def bundled_scenarios():
    return sorted(p.name[:-5] for p in resources.files("levixcorr.scenarios").iterdir() if p.name.endswith(".json"))


def load_scenario(ref, out_dir="out"):
    path = Path(ref)
    if not path.exists():
        name = ref[:-5] if ref.endswith(".json") else ref
        res = resources.files("levixcorr.scenarios") / f"{name}.json"
        if not res.is_file():
            raise ConfigError(f"no scenario file {ref!r} and no bundled scenario of that name")
        return Scenario.from_config(parse_config(res.read_text(), f"{name}.json"), out_dir)
    return Scenario.from_config(load_config(path), out_dir)


def build_parser():
    ap = argparse.ArgumentParser(prog="levixcorr", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0, help="first simulation seed")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("run", help="evaluate a scenario")
    p.add_argument("scenario")
    p.add_argument("--mode", choices=MODES, help="override the scenario mode")
    common(p)

    p = sub.add_parser("calibrate", help="fit detector misalignment")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--traces", help="directory of .lvxt trace files")
    g.add_argument("--simulate", help="scenario to simulate")
    p.add_argument("--rotation", action="store_true", help="also fit the mode rotation Phi")
    p.add_argument("--segment", type=int, help="Welch segment length (power of two)")
    common(p)

    p = sub.add_parser("sweep", help="run a scenario over a parameter range")
    p.add_argument("scenario")
    p.add_argument("--param", required=True, help="config key with unit suffix, e.g. psi_deg")
    p.add_argument("--range", required=True, dest="range_", metavar="A:B:N")
    p.add_argument("--workers", type=int)
    common(p)

    sub.add_parser("list", help="list bundled scenarios")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "list":
            print("\n".join(bundled_scenarios()))
        elif args.command == "run":
            scn = load_scenario(args.scenario, args.out)
            if args.mode:
                scn = replace(scn, mode=args.mode)
            for path in run_scenario(scn, args.seed, args.format):
                print(path)
        elif args.command == "calibrate":
            scn = load_scenario(args.simulate, args.out) if args.simulate else None
            report = run_calibration(args.traces, scn, args.seed, args.rotation, args.out, args.format, args.segment)
            fit = report["misalignment"]
            print(
                "a_x = {a_x:.6g} rad, a_y = {a_y:.6g} rad".format(**fit["estimates"]),
                "(+/- {a_x:.2g}, {a_y:.2g})".format(**fit["stderr"]),
            )
        elif args.command == "sweep":
            scn = load_scenario(args.scenario, args.out)
            rows = run_sweep(scn, args.param, parse_range(args.range_), args.seed, args.format, args.workers)
            print(f"{len(rows)} sweep points written under {Path(scn.out_dir) / scn.name}")
    except (ConfigError, DomainError, HashMismatchError) as exc:
        print(f"levixcorr: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RuntimeError, OSError, ValueError) as exc:
        print(f"levixcorr: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
