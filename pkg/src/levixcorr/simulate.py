"""Time-domain linear Langevin simulator (classical limit).

State s = (x, p_x, y, p_y, u, v): unit-commutator quadratures of the two
mechanical modes and of the cavity field in the frame of the drive.

    dx   = (w_x p_x - G/2 x) dt
    dp_x = (-w_x x - G/2 p_x - 2 g_x u + 2 g_xy y) dt + dF_x
    du   = (-D v - k/2 u) dt + sqrt(k/2) dW_u
    dv   = ( D u - k/2 v - 2 g_x x - 2 g_y y) dt + sqrt(k/2) dW_v

(same for y), with G the gas damping, k the cavity linewidth and D the
detuning.  The momentum forces carry the thermal bath, Gamma (2 nbar_j + 1),
plus the directed bath shared between the axes.  Each step propagates the
drift exactly (matrix exponential) and adds a Gaussian increment with the
exact one-step covariance, so the only limit on dt is spectral resolution.

Random numbers come from numpy's PCG64 seeded with the 64-bit trace seed.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import linalg

from .errors import DomainError, InstabilityError, TraceFormatError
from .model import NO_FORCE, DirectedForce, Misalignment, SystemParams
from .spectra import SPECTRAL_SCALE, RealSpectrum

STATE_DIM = 6
#: dt * max(rate) / 2 pi must stay below this for spectral use.
RESOLUTION_GUARD = 0.1
MIN_SPECTRAL_LENGTH = 2**14

TRACE_MAGIC = b"LVXT"
TRACE_VERSION = 1
_HEADER = struct.Struct("<4sHdQQ32s")


def drift_matrix(params: SystemParams):
    wx, wy, h = params.omega_x, params.omega_y, 0.5 * params.gamma
    k2, d = 0.5 * params.kappa, params.delta
    gx, gy, gxy = params.g_x, params.g_y, params.g_xy
    return np.array(
        [
            [-h, wx, 0.0, 0.0, 0.0, 0.0],
            [-wx, -h, 2 * gxy, 0.0, -2 * gx, 0.0],
            [0.0, 0.0, -h, wy, 0.0, 0.0],
            [2 * gxy, 0.0, -wy, -h, -2 * gy, 0.0],
            [0.0, 0.0, 0.0, 0.0, -k2, -d],
            [-2 * gx, 0.0, -2 * gy, 0.0, d, -k2],
        ]
    )


def force_covariance(params: SystemParams, force: DirectedForce = NO_FORCE):
    """2x2 intensity matrix of the momentum forces (thermal + directed)."""
    amp = np.sqrt([2 * params.nbar_x + 1, 2 * params.nbar_y + 1])
    therm = params.gamma * np.diag(amp**2)
    v = math.sqrt(params.gamma * force.beta2) * amp * np.array([math.cos(force.psi), math.sin(force.psi)])
    return therm + np.outer(v, v)


def diffusion_matrix(params: SystemParams, force: DirectedForce = NO_FORCE):
    q = np.zeros((STATE_DIM, STATE_DIM))
    f = force_covariance(params, force)
    idx = [1, 3]
    q[np.ix_(idx, idx)] = f
    q[4, 4] = q[5, 5] = 0.5 * params.kappa
    return q


def correlated_noise_step(rng, dt, params: SystemParams, force: DirectedForce, size=None, thermal=True):
    """Momentum-force increments (xi_x, xi_y) over one step of length dt.

    xi_j = sqrt(Gamma (2 nbar_j + 1) dt) w_j
           + sqrt(Gamma beta^2 (2 nbar_j + 1) dt) (cos Psi, sin Psi)_j w_c
    with w_x, w_y, w_c independent standard normals.  ``thermal=False`` keeps
    only the shared directed term.
    """
    shape = () if size is None else (size,)
    w = rng.standard_normal(shape + (3,))
    amp_x = math.sqrt(2 * params.nbar_x + 1)
    amp_y = math.sqrt(2 * params.nbar_y + 1)
    base = math.sqrt(params.gamma * dt) if thermal else 0.0
    corr = math.sqrt(params.gamma * force.beta2 * dt)
    xi_x = base * amp_x * w[..., 0] + corr * amp_x * math.cos(force.psi) * w[..., 2]
    xi_y = base * amp_y * w[..., 1] + corr * amp_y * math.sin(force.psi) * w[..., 2]
    return xi_x, xi_y


def discretise(a, q, dt):
    """Exact one-step propagator and noise covariance (Van Loan)."""
    n = a.shape[0]
    block = np.zeros((2 * n, 2 * n))
    block[:n, :n] = -a
    block[:n, n:] = q
    block[n:, n:] = a.T
    e = linalg.expm(block * dt)
    ad = e[n:, n:].T
    qd = ad @ e[:n, n:]
    return ad, 0.5 * (qd + qd.T)


def _noise_factor(cov):
    try:
        return linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError:
        w, v = linalg.eigh(cov)
        return v * np.sqrt(np.clip(w, 0.0, None))


def stationary_covariance(params: SystemParams, force: DirectedForce = NO_FORCE):
    a = drift_matrix(params)
    if np.max(linalg.eigvals(a).real) >= 0:
        raise InstabilityError(0)
    return linalg.solve_continuous_lyapunov(a, -diffusion_matrix(params, force))


def transfer_spectra(grid, params: SystemParams, force: DirectedForce = NO_FORCE):
    """Exact spectra of the simulated linear system, S = H Q H^dagger.

    H(omega) = (-i omega - A)^-1.  Returned on the model scale of
    :mod:`levixcorr.spectra` as (S_xx, S_yy, S_xy).
    """
    omega = np.asarray(grid, dtype=float)
    a = drift_matrix(params)
    q = diffusion_matrix(params, force)
    eye = np.eye(STATE_DIM)
    h = np.linalg.inv(-1j * omega[:, None, None] * eye[None] - a[None])
    s = np.einsum("wia,ab,wjb->wij", h, q, np.conj(h))
    s = SPECTRAL_SCALE * s.real
    return (
        RealSpectrum(omega, s[:, 0, 0]),
        RealSpectrum(omega, s[:, 2, 2]),
        RealSpectrum(omega, s[:, 0, 2]),
    )


def sampled_spectra(grid, params: SystemParams, force: DirectedForce = NO_FORCE, dt=2e-7):
    """Spectra of the sampled sequence the integrator produces at step dt.

    The recursion s_k+1 = A_d s_k + e_k has S(omega) = dt H Q_d H^dagger with
    H = (1 - A_d exp(i omega dt))^-1, the limit an infinite Welch average
    converges to (up to windowing).  Same scale as :func:`transfer_spectra`.
    """
    omega = np.asarray(grid, dtype=float)
    ad, qd = discretise(drift_matrix(params), diffusion_matrix(params, force), dt)
    eye = np.eye(STATE_DIM)
    h = np.linalg.inv(eye[None] - ad[None] * np.exp(1j * omega * dt)[:, None, None])
    s = np.einsum("wia,ab,wjb->wij", h, qd, np.conj(h))
    s = SPECTRAL_SCALE * dt * s.real
    return (
        RealSpectrum(omega, s[:, 0, 0]),
        RealSpectrum(omega, s[:, 2, 2]),
        RealSpectrum(omega, s[:, 0, 2]),
    )


@numba.njit(cache=True)
def _propagate(ad, state, kicks, out, cavity, record_cavity):
    n = kicks.shape[0]
    tmp = np.empty(6)
    for k in range(n):
        for i in range(6):
            acc = kicks[k, i]
            for j in range(6):
                acc += ad[i, j] * state[j]
            tmp[i] = acc
        for i in range(6):
            state[i] = tmp[i]
        out[k, 0] = state[0]
        out[k, 1] = state[2]
        if record_cavity:
            cavity[k, 0] = state[4]
            cavity[k, 1] = state[5]
        if not (np.isfinite(state[0]) and np.isfinite(state[2]) and np.isfinite(state[4])):
            return k
    return -1


def params_hash(params: SystemParams, force: DirectedForce = NO_FORCE):
    blob = json.dumps({"params": params.as_dict(), "force": force.as_dict()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).digest()


@dataclass
class Trace:
    """Uniformly sampled (x, y) record; ``frame`` is 'lab' or 'detector'."""

    dt: float
    samples: np.ndarray
    seed: int
    params: dict = field(default_factory=dict)
    frame: str = "lab"
    cavity: np.ndarray | None = None
    digest: bytes = b"\0" * 32

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 2 or self.samples.shape[1] != 2:
            raise ValueError("samples must have shape (n, 2)")

    @property
    def x(self):
        return self.samples[:, 0]

    @property
    def y(self):
        return self.samples[:, 1]

    def __len__(self):
        return self.samples.shape[0]


def resolution_ratio(params: SystemParams, dt):
    rate = max(params.omega_x, params.omega_y, params.kappa, abs(params.delta))
    return dt * rate / (2 * math.pi)


def min_duration(params: SystemParams, gamma_opt):
    """Shortest run that resolves the hybridised line shapes."""
    return 100 * 2 * math.pi / min(gamma_opt, abs(params.omega_x - params.omega_y))


def integrate_trace(
    params: SystemParams,
    force: DirectedForce = NO_FORCE,
    duration=None,
    dt=2e-7,
    seed=0,
    *,
    n_samples=None,
    noise=True,
    initial="stationary",
    record_cavity=False,
    gamma_opt=None,
    chunk=2**16,
):
    """Integrate the coupled motion and return the lab-frame (x, y) trace.

    ``initial`` is 'stationary' (draw from the exact steady-state
    covariance), 'zero', or an explicit length-6 state.  When ``gamma_opt``
    is given the run must last at least :func:`min_duration`.
    """
    if resolution_ratio(params, dt) >= RESOLUTION_GUARD:
        raise DomainError(
            f"dt={dt!r} too coarse: dt*max_rate/2pi = {resolution_ratio(params, dt):.3f}"
        )
    if n_samples is None:
        if duration is None:
            raise ValueError("give either duration or n_samples")
        n_samples = int(round(duration / dt))
    if gamma_opt is not None and n_samples * dt < min_duration(params, gamma_opt) * (1 - 1e-9):
        raise DomainError(
            f"run of {n_samples * dt:.3g} s shorter than {min_duration(params, gamma_opt):.3g} s"
        )
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    rng = np.random.Generator(np.random.PCG64(seed))
    a = drift_matrix(params)
    q = diffusion_matrix(params, force) if noise else np.zeros_like(a)
    ad, qd = discretise(a, q, dt)
    chol = _noise_factor(qd)

    if isinstance(initial, str):
        if initial == "stationary" and noise:
            state = _noise_factor(stationary_covariance(params, force)) @ rng.standard_normal(STATE_DIM)
        elif initial in ("zero", "stationary"):
            state = np.zeros(STATE_DIM)
        else:
            raise ValueError(f"unknown initial condition {initial!r}")
    else:
        state = np.array(initial, dtype=float)

    out = np.empty((n_samples, 2))
    cav = np.empty((n_samples, 2)) if record_cavity else np.empty((1, 2))
    for start in range(0, n_samples, chunk):
        m = min(chunk, n_samples - start)
        if noise:
            kicks = rng.standard_normal((m, STATE_DIM)) @ chol.T
        else:
            kicks = np.zeros((m, STATE_DIM))
        bad = _propagate(
            ad,
            state,
            kicks,
            out[start : start + m],
            cav[start : start + m] if record_cavity else cav,
            record_cavity,
        )
        if bad >= 0:
            raise InstabilityError(start + bad)
    return Trace(
        dt=dt,
        samples=out,
        seed=seed,
        params={"params": params.as_dict(), "force": force.as_dict()},
        cavity=cav if record_cavity else None,
        digest=params_hash(params, force),
    )


def detector_projection(trace: Trace, mis: Misalignment, imprecision=0.0, seed=None):
    """Project lab-frame motion onto misaligned detectors.

    x_det = X + (Phi + beta_x) Y and y_det = Y - (Phi + beta_y) X, plus white
    imprecision noise of standard deviation ``imprecision`` per channel.
    For simulated traces pass phi=0: the mode rotation is already dynamical.
    """
    x, y = trace.x, trace.y
    x_det = x + mis.a_x * y
    y_det = y - mis.a_y * x
    if imprecision > 0:
        rng = np.random.Generator(np.random.PCG64(trace.seed if seed is None else seed))
        x_det = x_det + imprecision * rng.standard_normal(x.size)
        y_det = y_det + imprecision * rng.standard_normal(y.size)
    return Trace(
        dt=trace.dt,
        samples=np.column_stack([x_det, y_det]),
        seed=trace.seed,
        params={**trace.params, "misalignment": mis.as_dict(), "imprecision": imprecision},
        frame="detector",
        digest=trace.digest,
    )


def write_trace(path, trace: Trace):
    """Little-endian header followed by interleaved float64 (x, y) pairs."""
    header = _HEADER.pack(TRACE_MAGIC, TRACE_VERSION, trace.dt, len(trace), trace.seed, trace.digest)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(trace.samples, dtype="<f8").tobytes())


def read_trace(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise TraceFormatError(f"{path}: file shorter than trace header")
    magic, version, dt, n, seed, digest = _HEADER.unpack_from(raw)
    if magic != TRACE_MAGIC:
        raise TraceFormatError(f"{path}: bad magic {magic!r}")
    if version != TRACE_VERSION:
        raise TraceFormatError(f"{path}: unsupported trace version {version}")
    body = raw[_HEADER.size :]
    if len(body) != 16 * n:
        raise TraceFormatError(f"{path}: expected {n} samples, found {len(body) // 16}")
    samples = np.frombuffer(body, dtype="<f8").reshape(n, 2).astype(float)
    return Trace(dt=dt, samples=samples, seed=seed, frame="detector", digest=digest)


def export_trace_csv(path, trace: Trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_s", "x", "y"])
        for k, (xv, yv) in enumerate(trace.samples):
            w.writerow([repr(k * trace.dt), repr(float(xv)), repr(float(yv))])
