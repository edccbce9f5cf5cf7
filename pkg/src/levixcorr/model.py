"""Physical parameters, unit conventions and derived rates.

All rates are angular (rad/s).  Displacements are dimensionless quadratures
x = (b + b^dagger)/sqrt(2) of each mechanical mode, so a thermal state has
<x^2> = nbar + 1/2.  Multiply by ``sqrt(2) * x_zpf`` to get metres.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

from scipy import constants

from .errors import ConfigError, DomainError, SingularityError

TWO_PI = 2.0 * math.pi

HBAR = constants.hbar
K_B = constants.k
AMU = constants.atomic_mass

#: Default mechanical frequencies; any pair with |wx - wy| >> Gamma is valid.
DEFAULT_OMEGA_X = TWO_PI * 125e3
DEFAULT_OMEGA_Y = TWO_PI * 140e3
#: Cavity parameters of the coherent-scattering experiment (kappa is the full linewidth).
DEFAULT_KAPPA = TWO_PI * 400e3
DEFAULT_DELTA = -TWO_PI * 176e3
DEFAULT_G = TWO_PI * 14e3

SILICA_DENSITY = 2200.0
N2_MASS = 28.0134 * AMU

#: Small-angle model is only trusted to quadratic order below this bound.
MAX_SMALL_ANGLE = 0.3


@dataclass(frozen=True)
class SystemParams:
    omega_x: float
    omega_y: float
    gamma: float
    kappa: float
    delta: float
    g_x: float
    g_y: float
    g_xy: float = 0.0
    nbar_x: float = 0.0
    nbar_y: float = 0.0

    def __post_init__(self):
        for name in ("omega_x", "omega_y", "gamma", "kappa"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.omega_x == self.omega_y:
            raise DomainError("degenerate mechanical frequencies (omega_x == omega_y)")
        if self.nbar_x < 0 or self.nbar_y < 0:
            raise DomainError("thermal occupancies must be non-negative")
        for f in fields(self):
            if not math.isfinite(getattr(self, f.name)):
                raise DomainError(f"{f.name} is not finite")

    @property
    def nbar(self):
        """Mean bath occupancy (nbar_x + nbar_y)/2."""
        return 0.5 * (self.nbar_x + self.nbar_y)

    @property
    def omega_mean(self):
        return 0.5 * (self.omega_x + self.omega_y)

    def replace(self, **changes):
        return replace(self, **changes)

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class DirectedForce:
    """Directed white-noise force at angle ``psi`` from the lab X axis.

    ``gamma_x_corr`` and ``gamma_y_corr`` are filled from the base damping
    via :func:`directed_rates` when built with :meth:`from_gamma`.
    """

    psi: float = 0.0
    beta2: float = 0.0
    gamma_x_corr: float = 0.0
    gamma_y_corr: float = 0.0

    def __post_init__(self):
        if self.beta2 < 0:
            raise DomainError("beta2 must be non-negative")

    @classmethod
    def from_gamma(cls, gamma, beta2, psi):
        gx, gy = directed_rates(gamma, beta2, psi)
        return cls(psi=psi, beta2=beta2, gamma_x_corr=gx, gamma_y_corr=gy)

    @property
    def sin_cos(self):
        return math.sin(self.psi) * math.cos(self.psi)

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


NO_FORCE = DirectedForce()


@dataclass(frozen=True)
class Misalignment:
    """Mode rotation ``phi`` plus detector alignment errors (all radians)."""

    phi: float = 0.0
    beta_err_x: float = 0.0
    beta_err_y: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            if abs(getattr(self, f.name)) >= MAX_SMALL_ANGLE:
                raise DomainError(
                    f"{f.name}={getattr(self, f.name)!r} rad outside small-angle range"
                )

    @property
    def a_x(self):
        return self.phi + self.beta_err_x

    @property
    def a_y(self):
        return self.phi + self.beta_err_y

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class PhysicalEnv:
    pressure: float  # Pa
    temperature: float = 300.0  # K
    particle_radius: float = 60.1e-9  # m
    particle_density: float = SILICA_DENSITY  # kg/m^3
    gas_molecule_mass: float = N2_MASS  # kg
    wavelength: float = 1064e-9  # m
    trap_offset: float = 0.25 * 1064e-9  # m, measured from the antinode
    polarisation_theta: float = math.radians(49.0)  # rad, echoed only

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (v > 0 and math.isfinite(v)):
                raise DomainError(f"{f.name} must be strictly positive, got {v!r}")

    @property
    def particle_mass(self):
        return 4.0 / 3.0 * math.pi * self.particle_radius**3 * self.particle_density

    @property
    def trap_phase(self):
        """phi = k x0 with the offset folded into one half wavelength."""
        x0 = math.fmod(self.trap_offset, 0.5 * self.wavelength)
        return TWO_PI * x0 / self.wavelength

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def thermal_occupancy(temperature, omega):
    """High-temperature phonon occupancy kT/(hbar omega)."""
    if not (temperature > 0 and omega > 0):
        raise DomainError("temperature and omega must be positive")
    return K_B * temperature / (HBAR * omega)


def gas_damping_rate(env: PhysicalEnv):
    """Free-molecular (Epstein) momentum damping rate with diffuse reflection.

    Gamma = (1 + pi/8) * 8 P / (pi rho R vbar), vbar the mean molecular speed.
    """
    vbar = math.sqrt(8.0 * K_B * env.temperature / (math.pi * env.gas_molecule_mass))
    return (
        (1.0 + math.pi / 8.0)
        * 8.0
        * env.pressure
        / (math.pi * env.particle_density * env.particle_radius * vbar)
    )


def x_zpf(mass, omega):
    """Zero-point amplitude sqrt(hbar / 2 m omega) in metres."""
    return math.sqrt(HBAR / (2.0 * mass * omega))


def direct_coupling_gxy(g_x, g_y, delta, kappa, phi_trap):
    """Static x-y coupling from co-trapping in the cavity standing wave.

    g_xy = g_x g_y * 2 Delta cot^2(phi) / (Delta^2 + kappa^2/4).  Vanishes at
    the node (phi = pi/2) and diverges at the antinode.
    """
    if not kappa > 0:
        raise DomainError("kappa must be positive")
    s = math.sin(phi_trap)
    if abs(s) < 1e-12:
        raise SingularityError(f"trap phase {phi_trap!r} sits on an antinode (cot diverges)")
    cot2 = (math.cos(phi_trap) / s) ** 2
    return g_x * g_y * 2.0 * delta * cot2 / (delta**2 + 0.25 * kappa**2)


def directed_rates(gamma, beta2, psi):
    """Split the directed flux gamma*beta2 into its x and y projections."""
    if beta2 < 0:
        raise DomainError("beta2 must be non-negative")
    if not gamma > 0:
        raise DomainError("gamma must be positive")
    c, s = math.cos(psi), math.sin(psi)
    return gamma * beta2 * c * c, gamma * beta2 * s * s


_SYSTEM_FIELDS = {f.name for f in fields(SystemParams)}


def build_system(
    env: PhysicalEnv,
    g_x=None,
    g_y=None,
    *,
    omega_x=DEFAULT_OMEGA_X,
    omega_y=DEFAULT_OMEGA_Y,
    kappa=DEFAULT_KAPPA,
    delta=DEFAULT_DELTA,
    overrides=None,
):
    """Assemble a :class:`SystemParams` from the environment and couplings.

    Damping comes from :func:`gas_damping_rate`, occupancies from
    :func:`thermal_occupancy` and g_xy from :func:`direct_coupling_gxy` at the
    trap phase of ``env``.  Any field present in ``overrides`` wins.
    """
    overrides = dict(overrides or {})
    unknown = set(overrides) - _SYSTEM_FIELDS
    if unknown:
        raise ConfigError(f"unknown SystemParams fields: {sorted(unknown)}")
    g_x = overrides.get("g_x", g_x)
    g_y = overrides.get("g_y", g_y)
    if g_x is None or g_y is None:
        raise ConfigError("optomechanical couplings g_x and g_y are required")
    omega_x = overrides.get("omega_x", omega_x)
    omega_y = overrides.get("omega_y", omega_y)
    kappa = overrides.get("kappa", kappa)
    delta = overrides.get("delta", delta)
    values = dict(
        omega_x=omega_x,
        omega_y=omega_y,
        gamma=overrides.get("gamma") or gas_damping_rate(env),
        kappa=kappa,
        delta=delta,
        g_x=g_x,
        g_y=g_y,
        nbar_x=thermal_occupancy(env.temperature, omega_x),
        nbar_y=thermal_occupancy(env.temperature, omega_y),
    )
    if "g_xy" not in overrides:
        values["g_xy"] = direct_coupling_gxy(g_x, g_y, delta, kappa, env.trap_phase)
    values.update(overrides)
    return SystemParams(**values)


def default_env(pressure_mbar=1e-4, trap_offset_lambda=0.25, **kw):
    """Experimental environment of the coherent-scattering set-up."""
    wavelength = kw.pop("wavelength", 1064e-9)
    return PhysicalEnv(
        pressure=pressure_mbar * 100.0,
        wavelength=wavelength,
        trap_offset=trap_offset_lambda * wavelength,
        **kw,
    )
