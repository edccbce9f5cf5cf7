"""Spectral estimation from traces and the inverse problems.

Welch spectra are one-sided densities per rad/s; :func:`to_model_units`
maps them onto the scale of :mod:`levixcorr.spectra`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import fft, signal

from .errors import ConfigError, IllConditionedError
from .model import NO_FORCE, DirectedForce, Misalignment, SystemParams
from .simulate import MIN_SPECTRAL_LENGTH, Trace, detector_projection, integrate_trace
from .spectra import SPECTRAL_SCALE, RealSpectrum, hybridised_spectra, auto_psd, lab_frame_xcorr


@dataclass(frozen=True)
class WelchConfig:
    segment_length: int = 2**16
    overlap_fraction: float = 0.5
    window: str = "hann"
    detrend: bool = True

    def __post_init__(self):
        n = self.segment_length
        if n < 2 or n & (n - 1):
            raise ConfigError(f"segment_length must be a power of two, got {n}")
        if not 0.0 <= self.overlap_fraction < 1.0:
            raise ConfigError("overlap_fraction must lie in [0, 1)")

    @classmethod
    def for_linewidth(cls, gamma_opt, dt, **kw):
        """Shortest power-of-two segment with bin width below gamma_opt / 5."""
        need = 5.0 * 2 * math.pi / (gamma_opt * dt)
        return cls(segment_length=int(2 ** math.ceil(math.log2(need))), **kw)


@dataclass
class FitResult:
    estimates: dict
    residual_rms: float
    n_points: int
    stderr: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    def __post_init__(self):
        if not self.residual_rms >= 0:
            raise ValueError("residual_rms must be non-negative")

    def to_dict(self):
        return {
            "estimates": dict(self.estimates),
            "stderr": dict(self.stderr),
            "residual_rms": self.residual_rms,
            "n_points": self.n_points,
            "flags": list(self.flags),
        }


def welch_spectra(trace: Trace, cfg: WelchConfig = WelchConfig()):
    """One-sided (S_xx, S_yy, S_xy) per rad/s; S_xy = Re of the cross periodogram.

    Same estimate as ``scipy.signal.csd`` with density scaling, but both
    channels share one pass of segment FFTs.
    """
    n = len(trace)
    L = cfg.segment_length
    if L > n:
        raise ConfigError(f"segment of {L} samples longer than trace ({n})")
    step = L - int(cfg.overlap_fraction * L)
    win = signal.get_window(cfg.window, L)
    segs = sliding_window_view(trace.samples, L, axis=0)[::step]  # (k, 2, L)
    if cfg.detrend:
        segs = segs - segs.mean(axis=-1, keepdims=True)
    spec = fft.rfft(segs * win, axis=-1)
    fx, fy = spec[:, 0], spec[:, 1]
    scale = 2.0 * trace.dt / (win @ win)
    pxx = np.mean(np.abs(fx) ** 2, axis=0) * scale
    pyy = np.mean(np.abs(fy) ** 2, axis=0) * scale
    pxy = np.mean((np.conj(fx) * fy).real, axis=0) * scale
    for p in (pxx, pyy, pxy):
        p[0] *= 0.5
        if L % 2 == 0:
            p[-1] *= 0.5
    omega = 2 * math.pi * fft.rfftfreq(L, trace.dt)
    to_rad = 1.0 / (2 * math.pi)
    return (
        RealSpectrum(omega, pxx * to_rad),
        RealSpectrum(omega, pyy * to_rad),
        RealSpectrum(omega, pxy * to_rad),
    )


def n_segments(n_samples, cfg: WelchConfig):
    step = cfg.segment_length - int(cfg.overlap_fraction * cfg.segment_length)
    return 1 + (n_samples - cfg.segment_length) // step


def to_model_units(spectrum: RealSpectrum):
    """One-sided per-rad/s estimate -> two-sided model-scale spectrum."""
    return spectrum.scaled(SPECTRAL_SCALE * math.pi)


@dataclass
class EnsembleSpectra:
    s_xx: RealSpectrum
    s_yy: RealSpectrum
    s_xy: RealSpectrum
    n_avg: int  # total number of averaged segments
    seeds: list


def ensemble_welch(
    params: SystemParams,
    force: DirectedForce = NO_FORCE,
    seeds=range(64),
    n_samples=2**20,
    dt=2e-7,
    cfg: WelchConfig = WelchConfig(),
    mis: Misalignment | None = None,
    gamma_opt=None,
):
    """Seed-averaged Welch spectra of simulated traces, in model units.

    Seeds are processed in order and summed in that order, so the result is
    reproducible bit for bit.
    """
    if n_samples < MIN_SPECTRAL_LENGTH:
        raise ConfigError(f"traces need at least {MIN_SPECTRAL_LENGTH} samples")
    seeds = list(seeds)
    acc = None
    for seed in seeds:
        tr = integrate_trace(params, force, n_samples=n_samples, dt=dt, seed=seed, gamma_opt=gamma_opt)
        if mis is not None:
            tr = detector_projection(tr, mis)
        spec = welch_spectra(tr, cfg)
        vals = [s.values for s in spec]
        acc = vals if acc is None else [a + v for a, v in zip(acc, vals)]
    grid = spec[0].freq_grid
    out = [to_model_units(RealSpectrum(grid, a / len(seeds))) for a in acc]
    return EnsembleSpectra(*out, n_avg=len(seeds) * n_segments(n_samples, cfg), seeds=seeds)


def _band(spectra, band):
    grid = spectra[0].freq_grid
    for s in spectra[1:]:
        if s.freq_grid.shape != grid.shape or not np.array_equal(s.freq_grid, grid):
            raise ValueError("spectra must share one frequency grid")
    if band is None:
        mask = np.ones(grid.size, dtype=bool)
    else:
        mask = (grid >= band[0]) & (grid <= band[1])
    if mask.sum() < 3:
        raise ValueError("fit band holds fewer than three frequency bins")
    return mask, [s.values[mask] for s in spectra]


def fit_rotation(s_xy, s_xx, s_yy, band=None):
    """Least-squares Phi in S_xy = Phi (S_yy - S_xx)."""
    mask, (xy, xx, yy) = _band((s_xy, s_xx, s_yy), band)
    d = yy - xx
    scale = np.linalg.norm(xx) + np.linalg.norm(yy)
    if np.linalg.norm(d) <= 1e-9 * scale:
        raise IllConditionedError("S_yy - S_xx vanishes on the fit band")
    dd = d @ d
    phi = (d @ xy) / dd
    resid = xy - phi * d
    rms = float(np.sqrt(np.mean(resid**2)))
    dof = max(d.size - 1, 1)
    err = math.sqrt(resid @ resid / dof / dd)
    return FitResult({"phi": float(phi)}, rms, int(d.size), {"phi": err})


def fit_misalignment(s_xy, s_xx, s_yy, band=None, max_condition=1e6):
    """Least squares S_xy = a_x S_yy - a_y S_xx with a_j = Phi + beta_j."""
    mask, (xy, xx, yy) = _band((s_xy, s_xx, s_yy), band)
    design = np.column_stack([yy, -xx])
    norms = np.linalg.norm(design, axis=0)
    if np.any(norms == 0):
        raise IllConditionedError("a regressor vanishes on the fit band")
    cond = np.linalg.cond(design / norms)
    if cond > max_condition:
        raise IllConditionedError(f"S_xx and S_yy not resolved (condition number {cond:.3g})")
    coef, *_ = np.linalg.lstsq(design, xy, rcond=None)
    resid = xy - design @ coef
    dof = max(xy.size - 2, 1)
    cov = np.linalg.inv(design.T @ design) * (resid @ resid / dof)
    return FitResult(
        {"a_x": float(coef[0]), "a_y": float(coef[1])},
        float(np.sqrt(np.mean(resid**2))),
        int(xy.size),
        {"a_x": float(math.sqrt(cov[0, 0])), "a_y": float(math.sqrt(cov[1, 1]))},
    )


def orientation_basis(grid, params: SystemParams, model="exact", classical=True):
    """Spectra split as S = S0 + beta^2 (c^2 B_c + s^2 B_s + c s B_x).

    Returns arrays of shape (3 spectra, 4 terms, n) ordered (xx, yy, xy) and
    (S0, B_c, B_s, B_x).
    """

    def spectra(force):
        if model == "exact":
            return [s.values for s in hybridised_spectra(grid, params, force, classical=classical)]
        if model == "qlt":
            return [
                auto_psd(grid, params, force, "x", classical).values,
                auto_psd(grid, params, force, "y", classical).values,
                lab_frame_xcorr(grid, params, force, classical).values,
            ]
        raise ValueError(f"unknown model {model!r}")

    s0 = np.array(spectra(NO_FORCE))
    sc = np.array(spectra(DirectedForce(psi=0.0, beta2=1.0))) - s0
    ss = np.array(spectra(DirectedForce(psi=0.5 * math.pi, beta2=1.0))) - s0
    s45 = np.array(spectra(DirectedForce(psi=0.25 * math.pi, beta2=1.0))) - s0
    sx = 2.0 * s45 - sc - ss
    return np.stack([s0, sc, ss, sx], axis=1)


def _coeffs(psi, beta2):
    c, s = np.cos(psi), np.sin(psi)
    return np.stack([np.ones_like(psi * beta2), beta2 * c * c, beta2 * s * s, beta2 * c * s], axis=-1)


def fit_orientation(
    s_xy,
    s_xx,
    s_yy,
    params: SystemParams,
    band=None,
    model="exact",
    classical=True,
    n_psi=180,
    n_beta=100,
    n_avg=None,
):
    """Grid search for (Psi, beta^2), then a quadratic refinement.

    The residual weights each bin by the inverse variance of a Welch
    estimate under the force-free model: S_jj^2 for the auto spectra and
    (S_xx S_yy + S_xy^2)/2 for the cross spectrum.  With ``n_avg`` (number of
    averaged segments) the residual is a chi-square and the flags
    'orientation_unresolved' / 'psi_mirror_degenerate' use a 2 sigma cut.
    Psi is reported modulo pi.
    """
    mask, (xy, xx, yy) = _band((s_xy, s_xx, s_yy), band)
    grid = s_xx.freq_grid[mask]
    basis = orientation_basis(grid, params, model, classical)  # (3, 4, n)
    s0 = basis[:, 0, :]
    var = np.stack([s0[0] ** 2, s0[1] ** 2, 0.5 * (s0[0] * s0[1] + s0[2] ** 2)])
    w = 1.0 / var
    data = np.stack([xx, yy, xy])
    # residual(p) = sum w (data - B p)^2 as a quadratic form in the four coefficients
    gram = np.einsum("sn,san,sbn->ab", w, basis, basis)
    lin = np.einsum("sn,san,sn->a", w, basis, data)
    const = float(np.einsum("sn,sn->", w, data**2))
    scale = 1.0 if n_avg is None else float(n_avg)

    def residual(psi, beta2):
        p = _coeffs(np.asarray(psi, float), np.asarray(beta2, float))
        return scale * (const - 2 * p @ lin + np.einsum("...a,ab,...b->...", p, gram, p))

    psis = np.arange(n_psi) * (math.pi / n_psi)
    betas = np.linspace(1.0 / n_beta, 1.0, n_beta)
    P, B = np.meshgrid(psis, betas, indexing="ij")
    r = residual(P, B)
    i, j = np.unravel_index(np.argmin(r), r.shape)
    dpsi, dbeta = psis[1] - psis[0], betas[1] - betas[0]
    psi_hat, beta_hat = psis[i], betas[j]
    # zoom twice, then fit a quadratic surface to the 3x3 neighbourhood
    for _ in range(2):
        fp = psi_hat + np.linspace(-2, 2, 41) * dpsi
        fb = np.clip(beta_hat + np.linspace(-2, 2, 41) * dbeta, 1e-6, 1.0)
        FP, FB = np.meshgrid(fp, fb, indexing="ij")
        rr = residual(FP, FB)
        a, b = np.unravel_index(np.argmin(rr), rr.shape)
        psi_hat, beta_hat = fp[a], fb[b]
        dpsi, dbeta = fp[1] - fp[0], max(fb[1] - fb[0], 1e-9)
    psi_hat, beta_hat = _quadratic_refine(residual, psi_hat, beta_hat, dpsi, dbeta)
    psi_hat = psi_hat % math.pi

    best = float(residual(psi_hat, beta_hat))
    flags = []
    profile = residual(psis, np.full_like(psis, beta_hat))
    mirror = float(residual((0.5 * math.pi - psi_hat) % math.pi, beta_hat))
    threshold = 4.0 if n_avg is not None else 1e-9 * max(const, 1e-300)
    if profile.max() - best < threshold:
        flags.append("orientation_unresolved")
    mirror_gap = abs((psi_hat - (0.5 * math.pi - psi_hat) + 0.5 * math.pi) % math.pi - 0.5 * math.pi)
    if mirror_gap > 2 * (math.pi / n_psi) and mirror - best < threshold:
        flags.append("psi_mirror_degenerate")
    n = int(grid.size)
    rms = math.sqrt(max(best / scale, 0.0) / (3 * n))
    return FitResult({"psi": float(psi_hat), "beta2": float(beta_hat)}, rms, n, flags=flags)


def _quadratic_refine(fun, x0, y0, dx, dy):
    xs = x0 + np.array([-1.0, 0.0, 1.0]) * dx
    ys = y0 + np.array([-1.0, 0.0, 1.0]) * dy
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    z = fun(X, Y).ravel()
    u = ((X - x0) / dx).ravel()
    v = ((Y - y0) / dy).ravel()
    design = np.column_stack([np.ones_like(u), u, v, u * u, u * v, v * v])
    c, *_ = np.linalg.lstsq(design, z, rcond=None)
    hess = np.array([[2 * c[3], c[4]], [c[4], 2 * c[5]]])
    if np.linalg.det(hess) <= 0 or hess[0, 0] <= 0:
        return x0, y0
    du, dv = np.linalg.solve(hess, -c[1:3])
    if abs(du) > 1 or abs(dv) > 1:
        return x0, y0
    return x0 + du * dx, min(max(y0 + dv * dy, 1e-9), 1.0)
