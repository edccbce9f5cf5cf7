import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import signal

from levixcorr.errors import ConfigError, IllConditionedError
from levixcorr.estimate import (
    FitResult,
    WelchConfig,
    ensemble_welch,
    fit_misalignment,
    fit_orientation,
    fit_rotation,
    n_segments,
    to_model_units,
    welch_spectra,
)
from levixcorr.model import NO_FORCE, DirectedForce, Misalignment
from levixcorr.simulate import Trace
from levixcorr.spectra import (
    RealSpectrum,
    detector_frame_spectra,
    hybridised_spectra,
    optical_linewidth,
    peak_location,
    resonance_band,
    rotation_angle_phi,
)

DT = 1e-3


def white_trace(n=2**17, seed=0, mix=0.0):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((n, 2))
    w[:, 1] = mix * w[:, 0] + math.sqrt(1 - mix**2) * w[:, 1]
    return Trace(DT, w, seed)


def test_config_validation():
    with pytest.raises(ConfigError):
        WelchConfig(1000)
    with pytest.raises(ConfigError):
        WelchConfig(1024, overlap_fraction=1.0)
    with pytest.raises(ConfigError):
        welch_spectra(white_trace(512), WelchConfig(1024))
    cfg = WelchConfig.for_linewidth(gamma_opt=100.0, dt=1e-4)
    assert 2 * math.pi / (cfg.segment_length * 1e-4) < 100.0 / 5
    assert n_segments(2**17, WelchConfig(2**10)) == 255


def test_matches_scipy_csd():
    tr = white_trace(2**14, mix=0.3)
    cfg = WelchConfig(2**10)
    sxx, syy, sxy = welch_spectra(tr, cfg)
    kw = dict(fs=1 / DT, nperseg=2**10, window="hann", detrend="constant")
    f, pxy = signal.csd(tr.x, tr.y, **kw)
    _, pxx = signal.welch(tr.x, **kw)
    assert np.allclose(sxy.values, pxy.real / (2 * math.pi), rtol=1e-10, atol=1e-18)
    assert np.allclose(sxx.values, pxx / (2 * math.pi), rtol=1e-10)
    assert np.allclose(sxx.freq_grid, 2 * math.pi * f)


def test_independent_white_noise_uncorrelated():
    sxx, syy, sxy = welch_spectra(white_trace(), WelchConfig(2**10))
    level = DT / math.pi  # one-sided, per rad/s, unit variance
    assert np.mean(sxx.values[1:-1]) == pytest.approx(level, rel=0.02)
    assert abs(np.mean(sxy.values[1:-1])) < 0.02 * level


def test_identical_channels():
    tr = white_trace(mix=1.0)
    sxx, _, sxy = welch_spectra(tr, WelchConfig(2**10))
    assert np.allclose(sxy.values, sxx.values, rtol=1e-9)


def test_sinusoid_with_half_period_lag():
    t = np.arange(2**16) * DT
    w0 = 2 * math.pi * 50.0
    rng = np.random.default_rng(1)
    x = np.sin(w0 * t) + 0.01 * rng.standard_normal(t.size)
    y = np.sin(w0 * t + math.pi) + 0.01 * rng.standard_normal(t.size)
    sxx, _, sxy = welch_spectra(Trace(DT, np.column_stack([x, y]), 0), WelchConfig(2**12))
    k = np.argmax(sxx.values)
    assert sxx.freq_grid[k] == pytest.approx(w0, rel=0.01)
    assert sxy.values[k] == pytest.approx(-sxx.values[k], rel=1e-3)


def test_parseval():
    tr = white_trace(mix=0.5)
    sxx, syy, sxy = welch_spectra(tr, WelchConfig(2**10, window="boxcar", detrend=False))
    dw = sxx.freq_grid[1] - sxx.freq_grid[0]
    assert np.sum(sxx.values) * dw == pytest.approx(np.var(tr.x), rel=0.01)
    assert np.sum(sxy.values) * dw == pytest.approx(np.mean(tr.x * tr.y), rel=0.01)


@settings(max_examples=20, deadline=None)
@given(st.floats(-0.99, 0.99), st.integers(0, 2**32 - 1))
def test_cauchy_schwarz(mix, seed):
    sxx, syy, sxy = welch_spectra(white_trace(2**12, seed, mix), WelchConfig(2**8))
    assert np.all(sxy.values**2 <= sxx.values * syy.values * (1 + 1e-12))


def test_model_units_scale():
    s = RealSpectrum(np.array([1.0, 2.0]), np.array([1.0, 2.0]))
    assert np.allclose(to_model_units(s).values, 8 * math.pi * s.values)


def synthetic(a_x, a_y, n=400, seed=0):
    rng = np.random.default_rng(seed)
    grid = np.linspace(1.0, 2.0, n)
    xx = RealSpectrum(grid, 1 + rng.random(n))
    yy = RealSpectrum(grid, 1 + rng.random(n))
    xy = RealSpectrum(grid, a_x * yy.values - a_y * xx.values)
    return xy, xx, yy


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.3, 0.3), st.floats(-0.3, 0.3), st.floats(1e-6, 1e6))
def test_misalignment_fit_exact_and_scale_invariant(a_x, a_y, scale):
    xy, xx, yy = synthetic(a_x, a_y)
    fit = fit_misalignment(xy.scaled(scale), xx.scaled(scale), yy.scaled(scale))
    assert fit.estimates["a_x"] == pytest.approx(a_x, abs=1e-9)
    assert fit.estimates["a_y"] == pytest.approx(a_y, abs=1e-9)


def test_rotation_fit_exact():
    grid = np.linspace(1.0, 2.0, 50)
    xx = RealSpectrum(grid, np.exp(-((grid - 1.3) ** 2) * 50))
    yy = RealSpectrum(grid, np.exp(-((grid - 1.7) ** 2) * 50))
    xy = (yy - xx).scaled(-0.04)
    fit = fit_rotation(xy, xx, yy)
    assert fit.estimates["phi"] == pytest.approx(-0.04, rel=1e-12)
    assert fit.residual_rms < 1e-15


def test_ill_conditioned_regressions():
    grid = np.linspace(1.0, 2.0, 50)
    s = RealSpectrum(grid, 1 + grid)
    with pytest.raises(IllConditionedError):
        fit_misalignment(s.scaled(0.1), s, s)
    with pytest.raises(IllConditionedError):
        fit_rotation(s.scaled(0.1), s, s)
    zero = RealSpectrum(grid, np.zeros(50))
    with pytest.raises(IllConditionedError):
        fit_misalignment(s, zero, s)
    with pytest.raises(ValueError):
        fit_rotation(s, s, s, band=(5.0, 6.0))
    with pytest.raises(ValueError):
        FitResult({}, -1.0, 0)


def test_misalignment_from_detector_frame(fig2_cancel):
    grid = np.linspace(*resonance_band(fig2_cancel), 800)
    lab = hybridised_spectra(grid, fig2_cancel)
    mis = Misalignment(beta_err_x=math.radians(2.0), beta_err_y=math.radians(-1.0))
    det = detector_frame_spectra(*lab, mis)
    fit = fit_misalignment(det[2], det[0], det[1])
    phi = rotation_angle_phi(fig2_cancel)
    # exact map is linear in a_j up to an a_x a_y cross term
    assert fit.estimates["a_x"] == pytest.approx(phi + mis.beta_err_x, abs=2e-3)
    assert fit.estimates["a_y"] == pytest.approx(phi + mis.beta_err_y, abs=2e-3)


@pytest.mark.parametrize("psi_deg", [10.0, 30.0, 60.0, 135.0])
def test_orientation_inverse_crime(fig3_cancel, psi_deg):
    p = fig3_cancel
    grid = np.linspace(*resonance_band(p), 600)
    f = DirectedForce(psi=math.radians(psi_deg), beta2=0.25)
    xx, yy, xy = hybridised_spectra(grid, p, f, classical=True)
    fit = fit_orientation(xy, xx, yy, p)
    assert math.degrees(fit.estimates["psi"]) == pytest.approx(psi_deg, abs=0.5)
    assert fit.estimates["beta2"] == pytest.approx(0.25, abs=1e-3)
    assert fit.flags == []


def test_orientation_reported_modulo_pi(fig3_cancel):
    p = fig3_cancel
    grid = np.linspace(*resonance_band(p), 400)
    a = hybridised_spectra(grid, p, DirectedForce(psi=-math.pi / 6, beta2=0.25), classical=True)
    fit = fit_orientation(a[2], a[0], a[1], p)
    assert math.degrees(fit.estimates["psi"]) == pytest.approx(150.0, abs=0.5)


def test_orientation_unresolved_without_force(fig3_cancel):
    p = fig3_cancel
    grid = np.linspace(*resonance_band(p), 400)
    xx, yy, xy = hybridised_spectra(grid, p, NO_FORCE, classical=True)
    fit = fit_orientation(xy, xx, yy, p, n_avg=4)
    assert "orientation_unresolved" in fit.flags


def test_rotation_fit_on_node_simulation(fig2_node):
    p = fig2_node
    g_opt = optical_linewidth(p)
    ens = ensemble_welch(p, seeds=range(8), n_samples=2**19, cfg=WelchConfig(2**15))
    bands = [(peak_location(p, ax) - 3 * g_opt, peak_location(p, ax) + 3 * g_opt) for ax in "xy"]
    mask = np.zeros(ens.s_xx.freq_grid.size, bool)
    for lo, hi in bands:
        mask |= (ens.s_xx.freq_grid >= lo) & (ens.s_xx.freq_grid <= hi)
    pick = lambda s: RealSpectrum(s.freq_grid[mask], s.values[mask])
    fit = fit_rotation(pick(ens.s_xy), pick(ens.s_xx), pick(ens.s_yy))
    assert fit.estimates["phi"] == pytest.approx(rotation_angle_phi(p), rel=0.25)
    assert ens.n_avg == 8 * n_segments(2**19, WelchConfig(2**15))


def test_ensemble_is_reproducible(fig2_cancel):
    a = ensemble_welch(fig2_cancel, seeds=[3, 4], n_samples=2**15, cfg=WelchConfig(2**12))
    b = ensemble_welch(fig2_cancel, seeds=[3, 4], n_samples=2**15, cfg=WelchConfig(2**12))
    assert a.s_xy.values.tobytes() == b.s_xy.values.tobytes()
    with pytest.raises(ConfigError):
        ensemble_welch(fig2_cancel, seeds=[0], n_samples=100)
