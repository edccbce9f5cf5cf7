"""Analytic displacement spectra in the quantum-Langevin (QLT) picture.

Normalisation
-------------
Every spectrum here uses the scale of the closed-form cross-correlation
formulas, S_QN = kappa g_x g_y |chi_c|^2 M_xy and the directed-force term.
In that scale a white force of two-sided intensity D acting on mode j gives
S_jj = 2 |mu_j/M_j|^2 D, and

    S_model(omega) = SPECTRAL_SCALE * S_q(omega)

where S_q is the two-sided symmetrised spectrum of the unit-commutator
quadrature (int S_q d omega / 2 pi = <x^2>).  Use :func:`to_quadrature_units`
before comparing with a variance.

Auto PSD
--------
Thermal and directed baths are white forces on the momenta:

    S_jj = 2 |mu_j / M_j|^2 [Gamma (2 nbar_j + 1) + Gamma_j,corr (2 nbar_j + 1)
                             + kappa g_j^2 w(omega)]

with Gamma_x,corr = Gamma beta^2 cos^2 Psi, Gamma_y,corr = Gamma beta^2 sin^2 Psi
and w = |chi_c(omega)|^2 (vacuum shot noise) or |chi_c(omega)|^2 + |chi_c(-omega)|^2
in the classical, frequency-symmetrised limit.  Setting x = y in the shot-noise
and directed cross terms reproduces the same prefactors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .model import NO_FORCE, DirectedForce, Misalignment, SystemParams, directed_rates
from .response import (
    cavity_susceptibility,
    hybridisation_functions,
    mode_responses,
    rotation_angle_phi,
)

SPECTRAL_SCALE = 8.0
#: Flat heterodyne imprecision floor (shot-noise limited, normalised units).
DEFAULT_S_IMP = 0.5


@dataclass(frozen=True)
class RealSpectrum:
    freq_grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.freq_grid, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if grid.ndim != 1 or grid.shape != vals.shape:
            raise ValueError("grid and values must be 1-D arrays of equal length")
        if grid.size > 1 and not np.all(np.diff(grid) > 0):
            raise ValueError("frequency grid must be strictly increasing")
        object.__setattr__(self, "freq_grid", grid)
        object.__setattr__(self, "values", vals)

    def __add__(self, other):
        _check_grid(self, other)
        return RealSpectrum(self.freq_grid, self.values + other.values)

    def __sub__(self, other):
        _check_grid(self, other)
        return RealSpectrum(self.freq_grid, self.values - other.values)

    def scaled(self, factor):
        return RealSpectrum(self.freq_grid, factor * self.values)

    def at(self, omega):
        """Linear interpolation of the values at ``omega``."""
        return np.interp(omega, self.freq_grid, self.values)

    def band(self, lo, hi):
        mask = (self.freq_grid >= lo) & (self.freq_grid <= hi)
        return RealSpectrum(self.freq_grid[mask], self.values[mask])


def _check_grid(a, b):
    if a.freq_grid.shape != b.freq_grid.shape or not np.array_equal(a.freq_grid, b.freq_grid):
        raise ValueError("spectra live on different frequency grids")


def to_quadrature_units(spectrum: RealSpectrum):
    """Divide out SPECTRAL_SCALE so the spectrum integrates to <x^2>."""
    return spectrum.scaled(1.0 / SPECTRAL_SCALE)


def frequency_grid(lo, hi, points):
    if points < 2:
        raise ValueError("a frequency grid needs at least two points")
    return np.linspace(lo, hi, int(points))


def _sin_cos(psi):
    # 0.5 sin(2 psi) keeps S(psi)/sin(2 psi) constant to rounding
    return 0.5 * math.sin(2.0 * psi)


def envelope_Mxy(omega, params: SystemParams):
    """M_xy = mu_x mu_y* / (M_x M_y*) + c.c.  (real by construction)."""
    mu_x, mu_y, _, m_x, m_y = mode_responses(omega, params)
    z = mu_x * np.conj(mu_y) / (m_x * np.conj(m_y))
    return (z + np.conj(z)).real


def _optical_weight(omega, params, classical):
    w = np.abs(cavity_susceptibility(omega, params)) ** 2
    if classical:
        w = w + np.abs(cavity_susceptibility(-np.asarray(omega), params)) ** 2
    return w


def shot_noise_xcorr(grid, params: SystemParams, classical=False):
    """x-y correlations imprinted by the cavity shot noise."""
    omega = np.asarray(grid, dtype=float)
    vals = (
        params.kappa
        * params.g_x
        * params.g_y
        * _optical_weight(omega, params, classical)
        * envelope_Mxy(omega, params)
    )
    return RealSpectrum(omega, vals)


def directed_force_xcorr(grid, params: SystemParams, force: DirectedForce):
    """x-y correlations driven by the directed bath."""
    omega = np.asarray(grid, dtype=float)
    n_sum = params.nbar_x + params.nbar_y
    bracket = (n_sum + 2.0) * envelope_Mxy(omega, params) + n_sum * envelope_Mxy(-omega, params)
    vals = params.gamma * 0.5 * force.beta2 * _sin_cos(force.psi) * bracket
    return RealSpectrum(omega, vals)


def lab_frame_xcorr(grid, params: SystemParams, force: DirectedForce, classical=False):
    return shot_noise_xcorr(grid, params, classical) + directed_force_xcorr(grid, params, force)


def auto_psd(grid, params: SystemParams, force: DirectedForce, axis, classical=False):
    """Auto PSD of the lab-frame displacement along ``axis`` ('x' or 'y')."""
    omega = np.asarray(grid, dtype=float)
    mu_x, mu_y, _, m_x, m_y = mode_responses(omega, params)
    gx_corr, gy_corr = directed_rates(params.gamma, force.beta2, force.psi)
    if axis == "x":
        env, nbar, g, g_corr = np.abs(mu_x / m_x) ** 2, params.nbar_x, params.g_x, gx_corr
    elif axis == "y":
        env, nbar, g, g_corr = np.abs(mu_y / m_y) ** 2, params.nbar_y, params.g_y, gy_corr
    else:
        raise ValueError(f"axis must be 'x' or 'y', got {axis!r}")
    drive = (params.gamma + g_corr) * (2.0 * nbar + 1.0)
    drive = drive + params.kappa * g**2 * _optical_weight(omega, params, classical)
    return RealSpectrum(omega, 2.0 * env * drive)


def detector_frame_xcorr(s_lab, s_xx, s_yy, mis: Misalignment, quadratic=False):
    """Cross spectrum seen by detectors rotated by (Phi + beta_x, Phi + beta_y).

    x_det = X + a_x Y and y_det = Y - a_y X; the quadratic option keeps the
    -a_x a_y S_lab term of the same linear map.
    """
    _check_grid(s_lab, s_xx)
    _check_grid(s_lab, s_yy)
    vals = s_lab.values + mis.a_x * s_yy.values - mis.a_y * s_xx.values
    if quadratic:
        vals = vals - mis.a_x * mis.a_y * s_lab.values
    return RealSpectrum(s_lab.freq_grid, vals)


def detector_frame_spectra(s_xx, s_yy, s_xy, mis: Misalignment):
    """All three spectra after the linear map x_det = X + a_x Y, y_det = Y - a_y X.

    Exact for the map (no truncation in the angles); use it for the
    time-domain comparison where the detector projection is applied literally.
    """
    _check_grid(s_xx, s_yy)
    _check_grid(s_xx, s_xy)
    ax, ay = mis.a_x, mis.a_y
    xx, yy, xy = s_xx.values, s_yy.values, s_xy.values
    d_xx = xx + 2 * ax * xy + ax * ax * yy
    d_yy = yy - 2 * ay * xy + ay * ay * xx
    d_xy = xy + ax * yy - ay * xx - ax * ay * xy
    grid = s_xx.freq_grid
    return RealSpectrum(grid, d_xx), RealSpectrum(grid, d_yy), RealSpectrum(grid, d_xy)


def psd_contamination(s_yy: RealSpectrum, mis: Misalignment):
    """Artifact (Phi + beta_x)^2 S_yy leaking into the measured S_xx."""
    return s_yy.scaled(mis.a_x**2)


def heterodyne_spectrum(
    grid, params: SystemParams, force: DirectedForce, mis: Misalignment, s_imp=DEFAULT_S_IMP
):
    """Cavity-output heterodyne spectrum to linear order in Phi."""
    omega = np.asarray(grid, dtype=float)
    s_xx = auto_psd(omega, params, force, "x").values
    s_yy = auto_psd(omega, params, force, "y").values
    s_lab = lab_frame_xcorr(omega, params, force).values
    gxgy = params.g_x * params.g_y
    chi_c2 = np.abs(cavity_susceptibility(omega, params)) ** 2
    mech = (
        (params.g_y**2 + gxgy * mis.phi) * s_yy
        + (params.g_x**2 - gxgy * mis.phi) * s_xx
        + gxgy * s_lab
    )
    return RealSpectrum(omega, chi_c2 * mech + s_imp)


def cross_cooperativity(params: SystemParams):
    """C_xy = 4 g_x g_y / (kappa Gamma nbar), nbar the mean occupancy."""
    return 4.0 * params.g_x * params.g_y / (params.kappa * params.gamma * params.nbar)


def hybridised_spectra(grid, params: SystemParams, force: DirectedForce = NO_FORCE, classical=True):
    """Spectra of the fully coupled x-y motion (exact linear response).

    x = [x1 + R_xy y1] / N and y = [y1 + R_yx x1] / N, N = 1 - R_xy R_yx, with
    x1, y1 the back-action dressed single-mode responses to the momentum
    forces.  The directed bath drives both axes through one shared noise with
    per-axis amplitudes sqrt(Gamma beta^2 (2 nbar_j + 1)) (cos Psi, sin Psi).
    Returns (S_xx, S_yy, S_xy).
    """
    omega = np.asarray(grid, dtype=float)
    mu_x, mu_y, _, m_x, m_y = mode_responses(omega, params)
    r_xy, r_yx = hybridisation_functions(omega, params)
    a_x = 0.5j * mu_x / m_x
    a_y = 0.5j * mu_y / m_y
    inv_n = 1.0 / (1.0 - r_xy * r_yx)
    # transfer from momentum forces (f_x, f_y) to (x, y)
    t = np.empty((omega.size, 2, 2), dtype=complex)
    t[:, 0, 0] = inv_n * a_x
    t[:, 0, 1] = inv_n * r_xy * a_y
    t[:, 1, 0] = inv_n * r_yx * a_x
    t[:, 1, 1] = inv_n * a_y

    amp_x = math.sqrt(2.0 * params.nbar_x + 1.0)
    amp_y = math.sqrt(2.0 * params.nbar_y + 1.0)
    therm = np.diag([params.gamma * amp_x**2, params.gamma * amp_y**2])
    v = math.sqrt(params.gamma * force.beta2) * np.array(
        [math.cos(force.psi) * amp_x, math.sin(force.psi) * amp_y]
    )
    c = math.sqrt(params.kappa) * np.array([params.g_x, params.g_y])
    w = _optical_weight(omega, params, classical)
    f = (therm + np.outer(v, v))[None, :, :] + w[:, None, None] * np.outer(c, c)[None, :, :]
    s = np.einsum("wja,wab,wkb->wjk", np.conj(t), f, t)
    s = SPECTRAL_SCALE * s.real
    return (
        RealSpectrum(omega, s[:, 0, 0]),
        RealSpectrum(omega, s[:, 1, 1]),
        RealSpectrum(omega, s[:, 0, 1]),
    )


def hybridisation_xcorr(grid, params: SystemParams, s_xx, s_yy, s_lab=None):
    """Cross spectrum from the hybridisation functions to quadratic order.

    S_xy = S_L + Re(R_yx) S_xx + Re(R_xy) S_yy + 2 Re(R_xy R_yx*) S_L, with
    S_xx, S_yy the lab-frame (single-mode) spectra.
    """
    omega = np.asarray(grid, dtype=float)
    r_xy, r_yx = hybridisation_functions(omega, params)
    lab = np.zeros_like(omega) if s_lab is None else s_lab.values
    vals = lab + r_yx.real * s_xx.values + r_xy.real * s_yy.values
    vals = vals + 2.0 * (r_xy * np.conj(r_yx)).real * lab
    return RealSpectrum(omega, vals)


def _psd_function(params, force, axis, classical=False):
    def f(w):
        return auto_psd(np.atleast_1d(w), params, force, axis, classical).values[0]

    return f


def peak_location(params: SystemParams, axis="x", force: DirectedForce = NO_FORCE):
    """Frequency of the maximum of the analytic auto PSD near omega_axis."""
    w0 = params.omega_x if axis == "x" else params.omega_y
    half_split = 0.5 * abs(params.omega_x - params.omega_y)
    grid = np.linspace(w0 - half_split, w0 + half_split, 4001)
    vals = auto_psd(grid, params, force, axis).values
    k = int(np.argmax(vals))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    f = _psd_function(params, force, axis)
    res = optimize.minimize_scalar(lambda w: -f(w), bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-6 * w0})
    return float(res.x)


def optical_linewidth(params: SystemParams, axis="x", force: DirectedForce = NO_FORCE):
    """Gamma_opt: full width at half maximum of the analytic S_jj peak."""
    f = _psd_function(params, force, axis)
    w_peak = peak_location(params, axis, force)
    half = 0.5 * f(w_peak)
    reach = 0.5 * abs(params.omega_x - params.omega_y)

    def edge(sign):
        step = 1e-3 * reach
        w = w_peak
        while f(w + sign * step) > half:
            w += sign * step
            step *= 1.5
            if abs(w - w_peak) > reach:
                raise RuntimeError("peak half maximum not reached before the neighbouring mode")
        return optimize.brentq(lambda u: f(u) - half, *sorted((w, w + sign * step)), xtol=1e-9 * w_peak)

    return edge(+1) - edge(-1)


@dataclass(frozen=True)
class PeakRatio:
    estimate: float
    measured: float
    gamma_opt: float
    omega_star: float


def peak_ratio(params: SystemParams, force: DirectedForce):
    """Cross-correlation signal relative to the PSD at the x peak.

    ``estimate`` is beta^2 sinPsi cosPsi Gamma_opt / (omega_x - omega_y).
    ``measured`` is S_L,xy / S_xx at the frequency of largest |S_L,xy|
    within two linewidths of the x peak (S_L,xy is dispersive and crosses
    zero near omega_x itself).
    """
    gamma_opt = optical_linewidth(params, "x")
    estimate = force.beta2 * _sin_cos(force.psi) * gamma_opt / (params.omega_x - params.omega_y)
    w_peak = peak_location(params, "x", force)
    grid = np.linspace(w_peak - 2 * gamma_opt, w_peak + 2 * gamma_opt, 2001)
    s_lab = lab_frame_xcorr(grid, params, force).values
    s_xx = auto_psd(grid, params, force, "x").values
    if force.beta2 == 0:
        return PeakRatio(estimate, 0.0, gamma_opt, w_peak)
    k = int(np.argmax(np.abs(s_lab)))
    return PeakRatio(estimate, float(s_lab[k] / s_xx[k]), gamma_opt, float(grid[k]))


def masking_ratio(params: SystemParams, force: DirectedForce, axis="x", widths=2.0, points=2001):
    """Height of the rotation term |Phi (S_yy - S_xx)| over the height of |S_fxfy|.

    Both heights are maxima within +-widths * Gamma_opt of the ``axis`` peak:
    the directed-force term is dispersive and vanishes near the peak itself.
    """
    gamma_opt = optical_linewidth(params, axis)
    w_peak = peak_location(params, axis, force)
    grid = np.linspace(w_peak - widths * gamma_opt, w_peak + widths * gamma_opt, points)
    phi = rotation_angle_phi(params)
    rot = np.abs(phi * (auto_psd(grid, params, force, "y").values - auto_psd(grid, params, force, "x").values))
    sig = np.abs(directed_force_xcorr(grid, params, force).values)
    top = sig.max()
    return float(rot.max() / top) if top > 0 else math.inf


def resonance_band(params: SystemParams, gamma_opt=None, widths=5.0):
    """[min(w) - 5 Gamma_opt, max(w) + 5 Gamma_opt]."""
    if gamma_opt is None:
        gamma_opt = optical_linewidth(params, "x")
    lo = min(params.omega_x, params.omega_y) - widths * gamma_opt
    hi = max(params.omega_x, params.omega_y) + widths * gamma_opt
    return lo, hi


@dataclass(frozen=True)
class SpectraBundle:
    s_xx: RealSpectrum
    s_yy: RealSpectrum
    s_xy_lab: RealSpectrum
    s_xy_detector: RealSpectrum
    phi_used: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for s in (self.s_yy, self.s_xy_lab, self.s_xy_detector):
            _check_grid(self.s_xx, s)


def compute_bundle(grid, params: SystemParams, force=NO_FORCE, mis=None, model="qlt", classical=False):
    """All spectra of one configuration on a shared grid.

    ``model="qlt"`` combines the single-mode PSDs, the lab-frame cross
    spectrum and the rotation model with Phi from :func:`rotation_angle_phi`.
    ``model="exact"`` uses :func:`hybridised_spectra`; there the rotation is
    already part of the motion and only detector errors are applied on top.
    """
    omega = np.asarray(grid, dtype=float)
    phi = rotation_angle_phi(params)
    beta_x = mis.beta_err_x if mis else 0.0
    beta_y = mis.beta_err_y if mis else 0.0
    if model == "qlt":
        s_xx = auto_psd(omega, params, force, "x", classical)
        s_yy = auto_psd(omega, params, force, "y", classical)
        s_lab = lab_frame_xcorr(omega, params, force, classical)
        used = Misalignment(phi=phi if mis is None else mis.phi, beta_err_x=beta_x, beta_err_y=beta_y)
        s_det = detector_frame_xcorr(s_lab, s_xx, s_yy, used)
        phi_used = used.phi
    elif model == "exact":
        s_xx, s_yy, s_lab = hybridised_spectra(omega, params, force, classical=classical)
        det = Misalignment(beta_err_x=beta_x, beta_err_y=beta_y)
        s_det = detector_frame_xcorr(s_lab, s_xx, s_yy, det, quadratic=True)
        phi_used = phi
    else:
        raise ValueError(f"unknown model {model!r}")
    meta = {
        "model": model,
        "classical": classical,
        "params": params.as_dict(),
        "force": force.as_dict(),
        "misalignment": (mis.as_dict() if mis else None),
    }
    return SpectraBundle(s_xx, s_yy, s_lab, s_det, phi_used, meta)
