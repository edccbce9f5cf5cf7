"""Susceptibilities, back-action factors and x-y hybridisation.

Fourier convention f(t) = int f(omega) exp(-i omega t) d omega / 2 pi, so a
mode at frequency w0 responds through chi(omega, w0) = 1/(-i(omega - w0) + width/2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NoCancellationError
from .model import SystemParams, direct_coupling_gxy


@dataclass(frozen=True)
class ComplexResponse:
    freq_grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.freq_grid, dtype=float)
        vals = np.asarray(self.values, dtype=complex)
        if grid.ndim != 1 or grid.shape != vals.shape:
            raise ValueError("grid and values must be 1-D arrays of equal length")
        if grid.size > 1 and not np.all(np.diff(grid) > 0):
            raise ValueError("frequency grid must be strictly increasing")
        object.__setattr__(self, "freq_grid", grid)
        object.__setattr__(self, "values", vals)


def chi(omega, omega0, width):
    """Lorentzian response 1/(-i(omega - omega0) + width/2)."""
    if not width > 0:
        raise DomainError("width must be positive")
    return 1.0 / (-1j * (np.asarray(omega) - omega0) + 0.5 * width)


def _two_sided(omega, omega0, width):
    omega = np.asarray(omega, dtype=float)
    return chi(omega, omega0, width) - np.conj(chi(-omega, omega0, width))


def mech_susceptibility(omega, omega_j, gamma):
    """mu_j = chi(omega, omega_j) - chi*(-omega, omega_j)."""
    return _two_sided(omega, omega_j, gamma)


def optical_susceptibility(omega, delta, kappa):
    """eta_c = chi(omega, -Delta) - chi*(-omega, -Delta), widths kappa."""
    return _two_sided(omega, -delta, kappa)


def optical_susceptibility_limit(delta, kappa):
    """Low-frequency value of i*eta_c: -2 Delta / ((kappa/2)^2 + Delta^2)."""
    return -2.0 * delta / (0.25 * kappa**2 + delta**2)


def cavity_susceptibility(omega, params: SystemParams):
    """chi_c(omega) = chi(omega, -Delta, kappa)."""
    return chi(omega, -params.delta, params.kappa)


def backaction_factor(omega, g_j, mu_j, eta_c):
    """M_j = 1 + g_j^2 mu_j eta_c."""
    return 1.0 + g_j**2 * np.asarray(mu_j) * np.asarray(eta_c)


def mode_responses(omega, params: SystemParams):
    """Return (mu_x, mu_y, eta_c, M_x, M_y) on ``omega``."""
    mu_x = mech_susceptibility(omega, params.omega_x, params.gamma)
    mu_y = mech_susceptibility(omega, params.omega_y, params.gamma)
    eta = optical_susceptibility(omega, params.delta, params.kappa)
    return (
        mu_x,
        mu_y,
        eta,
        backaction_factor(omega, params.g_x, mu_x, eta),
        backaction_factor(omega, params.g_y, mu_y, eta),
    )


def coupling_interference_G(omega, params: SystemParams):
    """G = i eta_c g_x g_y + g_xy: cavity-mediated plus direct coupling."""
    eta = optical_susceptibility(omega, params.delta, params.kappa)
    return 1j * eta * params.g_x * params.g_y + params.g_xy


def mean_coupling(params: SystemParams):
    """G evaluated midway between the two mechanical frequencies."""
    return complex(coupling_interference_G(params.omega_mean, params))


def hybridisation_functions(omega, params: SystemParams):
    """R_xy = i mu_x G / M_x and R_yx = i mu_y G / M_y."""
    mu_x, mu_y, _, m_x, m_y = mode_responses(omega, params)
    G = coupling_interference_G(omega, params)
    return 1j * mu_x * G / m_x, 1j * mu_y * G / m_y


def rotation_angle_phi(params: SystemParams):
    """Effective mode rotation Phi = Re G(omega_mean) / (omega_x - omega_y)."""
    split = params.omega_x - params.omega_y
    if split == 0:
        raise DomainError("degenerate mechanical frequencies")
    return mean_coupling(params).real / split


@dataclass(frozen=True)
class CancellationResult:
    x0: float  # trap offset from the antinode, in wavelengths
    imag_residual: float  # Im G at the root, rad/s
    iterations: int


def _real_G_at_offset(params, x0):
    g_xy = direct_coupling_gxy(params.g_x, params.g_y, params.delta, params.kappa, 2 * math.pi * x0)
    return mean_coupling(params.replace(g_xy=g_xy))


def cancellation_offset(params: SystemParams, lo=0.01, hi=0.24, tol=1e-4):
    """Trap offset (in wavelengths) where Re G(omega_mean) vanishes.

    g_xy is recomputed for every candidate offset from the trap phase
    2 pi x0 / lambda; the supplied ``params.g_xy`` is ignored.
    """
    if params.delta == 0:
        raise DomainError("cancellation requires a detuned cavity")
    f_lo = _real_G_at_offset(params, lo).real
    f_hi = _real_G_at_offset(params, hi).real
    if f_lo == 0:
        return CancellationResult(lo, _real_G_at_offset(params, lo).imag, 0)
    if np.sign(f_lo) == np.sign(f_hi):
        raise NoCancellationError(f"Re G has no sign change on [{lo}, {hi}] wavelengths")
    it = 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        f_mid = _real_G_at_offset(params, mid).real
        if np.sign(f_mid) == np.sign(f_lo):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
        it += 1
    x0 = 0.5 * (lo + hi)
    return CancellationResult(x0, _real_G_at_offset(params, x0).imag, it)


def at_offset(params: SystemParams, x0):
    """Copy of ``params`` with g_xy for a trap offset of ``x0`` wavelengths."""
    g_xy = direct_coupling_gxy(params.g_x, params.g_y, params.delta, params.kappa, 2 * math.pi * x0)
    return params.replace(g_xy=g_xy)
