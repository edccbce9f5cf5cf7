import json
import math

import pytest

from levixcorr import cli, io
from levixcorr.simulate import integrate_trace, write_trace

SMALL_SIM = {"seeds": 4, "n_samples": 524288, "dt_s": 2e-7, "segment_length": 32768}


def scenario_file(tmp_path, **over):
    cfg = {
        "name": "small",
        "mode": "analytic",
        "model": "exact",
        "system": {"pressure_mbar": 1e-4, "trap_offset_lambda": "cancellation"},
        "force": {"psi_deg": 45, "beta2": 0.1},
        "grid": {"points": 201},
    }
    cfg.update(over)
    path = tmp_path / "small.json"
    path.write_text(json.dumps(cfg, indent=1))
    return path


def run(tmp_path, *args):
    return cli.main([*args, "--out", str(tmp_path / "out")])


def test_list(capsys):
    assert cli.main(["list"]) == 0
    assert "fig2_p1e-4" in capsys.readouterr().out.split()


def test_fig3_psi0_equals_shot_noise(tmp_path):
    assert run(tmp_path, "run", "fig3_p5e-7") == 0
    d = tmp_path / "out" / "fig3_p5e-7" / "psi_0"
    lab, _ = io.read_spectrum_csv(d / "s_xy_lab.csv")
    qn, _ = io.read_spectrum_csv(d / "s_qn.csv")
    assert lab.values.tobytes() == qn.values.tobytes()
    tilted, _ = io.read_spectrum_csv(tmp_path / "out" / "fig3_p5e-7" / "psi_45" / "s_xy_lab.csv")
    assert abs(tilted.values - qn.values).max() > 0.1 * abs(qn.values).max()


def test_fig2_node_masked_cancellation_clear(tmp_path):
    assert run(tmp_path, "run", "fig2_p1e-4") == 0
    root = tmp_path / "out" / "fig2_p1e-4"
    node = io.read_json(root / "node" / "metadata.json")["derived"]
    canc = io.read_json(root / "cancellation" / "metadata.json")["derived"]
    assert min(node["masking_ratio"].values()) > 10
    assert max(canc["masking_ratio"].values()) < 0.1
    assert abs(canc["phi_rad"]) < 1e-3 < abs(node["phi_rad"])


def test_rerun_is_byte_identical(tmp_path):
    path = scenario_file(tmp_path)
    assert run(tmp_path, "run", str(path), "--format", "json") == 0
    first = {p.name: p.read_bytes() for p in (tmp_path / "out" / "small" / "base").iterdir()}
    assert run(tmp_path, "run", str(path), "--format", "json") == 0
    second = {p.name: p.read_bytes() for p in (tmp_path / "out" / "small" / "base").iterdir()}
    assert first == second and "spectra.json" in first


def test_metadata_echoes_parameters(tmp_path):
    assert run(tmp_path, "run", str(scenario_file(tmp_path))) == 0
    meta = io.read_json(tmp_path / "out" / "small" / "base" / "metadata.json")
    assert meta["force"]["psi"] == pytest.approx(math.pi / 4)
    assert meta["params"]["omega_x"] == pytest.approx(2 * math.pi * 125e3)
    _, digest = io.read_spectrum_csv(tmp_path / "out" / "small" / "base" / "s_xx.csv")
    assert digest == meta["config_hash"]


@pytest.mark.parametrize(
    "over",
    [
        {"grid": {"lo_krad_s": 900, "hi_krad_s": 800}},
        {"grid": {"points": 1}},
        {"system": {"omega_x": 3}},
        {"mode": "sometimes"},
    ],
)
def test_bad_config_exits_2_without_output(tmp_path, over, capsys):
    assert run(tmp_path, "run", str(scenario_file(tmp_path, **over))) == 2
    assert not (tmp_path / "out").exists()
    assert "configuration error" in capsys.readouterr().err


def test_unknown_scenario_exits_2(tmp_path):
    assert run(tmp_path, "run", "no_such_scenario") == 2


def test_low_occupancy_skips_oracle(tmp_path, capsys):
    path = scenario_file(tmp_path, mode="simulate", system={"nbar_x": 5, "nbar_y": 5, "trap_offset_lambda": 0.2})
    assert run(tmp_path, "run", str(path)) == 0
    assert "classical oracle skipped" in capsys.readouterr().err
    d = tmp_path / "out" / "small" / "base"
    assert (d / "s_xx.csv").exists() and not (d / "comparison.json").exists()


def test_simulate_mode_writes_comparison(tmp_path):
    path = scenario_file(tmp_path, mode="both", simulate=SMALL_SIM)
    assert run(tmp_path, "run", str(path)) == 0
    d = tmp_path / "out" / "small" / "base"
    report = io.read_json(d / "comparison.json")
    assert report["n_avg"] == 4 * 31
    assert report["normalized_rms"]["s_xx"] < 0.2
    assert io.compare_spectrum_files(d / "sim_s_xx.csv", d / "oracle_s_xx.csv") == report["normalized_rms"]["s_xx"]


def test_calibrate_simulated(tmp_path, capsys):
    path = scenario_file(tmp_path, force={}, misalignment={"beta_err_x_deg": 2}, simulate=SMALL_SIM)
    assert run(tmp_path, "calibrate", "--simulate", str(path), "--rotation") == 0
    assert "a_x =" in capsys.readouterr().out
    report = io.read_json(tmp_path / "out" / "small" / "calibration" / "calibration.json")
    est = report["misalignment"]["estimates"]
    assert est["a_x"] == pytest.approx(math.radians(2), abs=math.radians(0.3))
    assert est["a_y"] == pytest.approx(0.0, abs=math.radians(0.3))
    assert "rotation" in report


def test_calibrate_from_trace_files(tmp_path, fig2_node):
    traces = tmp_path / "traces"
    traces.mkdir()
    for seed in range(2):
        write_trace(traces / f"t{seed}.lvxt", integrate_trace(fig2_node, n_samples=2**18, seed=seed))
    assert run(tmp_path, "calibrate", "--traces", str(traces), "--segment", "32768") == 0
    assert (tmp_path / "out" / "traces" / "calibration" / "s_xy_corrected.csv").exists()


def test_bad_trace_exits_3(tmp_path):
    traces = tmp_path / "traces"
    traces.mkdir()
    (traces / "bad.lvxt").write_bytes(b"garbage" * 20)
    assert run(tmp_path, "calibrate", "--traces", str(traces)) == 3


def test_sweep_writes_summary(tmp_path):
    path = scenario_file(tmp_path)
    assert run(tmp_path, "sweep", str(path), "--param", "psi_deg", "--range", "0:90:3", "--workers", "2") == 0
    summary = tmp_path / "out" / "small" / "sweep_psi_deg" / "summary.csv"
    rows = summary.read_text().splitlines()
    assert rows[0].startswith("psi_deg,variant,phi_rad")
    assert [r.split(",")[0] for r in rows[1:]] == ["0.0", "45.0", "90.0"]
    assert (summary.parent / "psi_deg=45" / "base" / "s_xy_lab.csv").exists()


@pytest.mark.parametrize("bad", ["1:2", "a:b:3", "0:1:0"])
def test_sweep_bad_range(tmp_path, bad):
    assert run(tmp_path, "sweep", str(scenario_file(tmp_path)), "--param", "psi_deg", "--range", bad) == 2


def test_sweep_unknown_param(tmp_path):
    assert run(tmp_path, "sweep", str(scenario_file(tmp_path)), "--param", "spin_deg", "--range", "0:1:2") == 2
