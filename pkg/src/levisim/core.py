"""Physical configuration of the levitated particle and the forces acting on it.

All quantities are SI. Vectors are ordered along the trap axes (x, y, z);
z is the optical axis. Electrode-space vectors are ordered (x', y', z').
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import constants as sc

HBAR = sc.hbar
KB = sc.k
E_CHARGE = sc.e
G_ACCEL = sc.g
N2_MASS = 28.0134 * sc.atomic_mass

DEFAULT_DENSITY = 2000.0
DEFAULT_DIAMETER = 156e-9
DEFAULT_TRAP_DEPTH = 1e-19


class DomainError(ValueError):
    """Raised when a physical input lies outside its domain."""


def _vec3(v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.shape != (3,):
        raise DomainError(f"{name} must have three components, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite")
    arr.setflags(write=False)
    return arr


def _mat3(m, name: str) -> np.ndarray:
    arr = np.array(m, dtype=float)
    if arr.shape != (3, 3):
        raise DomainError(f"{name} must be 3x3, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite")
    arr.setflags(write=False)
    return arr


def derive_mass(diameter: float, density: float) -> float:
    """Mass of a homogeneous sphere."""
    if not diameter > 0 or not density > 0:
        raise DomainError(f"diameter and density must be positive (got {diameter}, {density})")
    return density * np.pi * diameter**3 / 6.0


def zero_point_motion(mass: float, omega) -> np.ndarray | float:
    """Ground-state position spread sqrt(hbar / (2 m omega))."""
    om = np.asarray(omega, dtype=float)
    if not mass > 0 or np.any(om <= 0):
        raise DomainError("mass and omega must be positive")
    out = np.sqrt(HBAR / (2.0 * mass * om))
    return float(out) if out.ndim == 0 else out


def epstein_damping(pressure_mbar: float, diameter: float, mass: float,
                    temperature: float = 300.0, gas_mass: float = N2_MASS) -> float:
    """Free-molecular (Epstein) momentum damping rate in 1/s.

    Uses the diffuse-reflection drag coefficient 1 + pi/8.
    """
    if pressure_mbar < 0:
        raise DomainError("pressure must be non-negative")
    p_pa = pressure_mbar * 100.0
    r = diameter / 2.0
    return ((1.0 + np.pi / 8.0) * (4.0 * np.pi / 3.0) * r**2 * p_pa
            * np.sqrt(8.0 * gas_mass / (np.pi * KB * temperature)) / mass)


@dataclass(frozen=True)
class Particle:
    diameter: float = DEFAULT_DIAMETER
    density: float = DEFAULT_DENSITY
    charge_q: int = 45
    mass: float | None = None

    def __post_init__(self):
        if not self.diameter > 0 or not self.density > 0:
            raise DomainError("particle.diameter and particle.density must be positive")
        if int(self.charge_q) != self.charge_q:
            raise DomainError("particle.charge_q must be an integer")
        object.__setattr__(self, "charge_q", int(self.charge_q))
        if self.mass is None:
            object.__setattr__(self, "mass", derive_mass(self.diameter, self.density))
        elif not self.mass > 0:
            raise DomainError("particle.mass must be positive")

    @property
    def charge(self) -> float:
        return self.charge_q * E_CHARGE


class TrapShape(str, enum.Enum):
    HARMONIC = "HARMONIC"
    # paraxial focus: Gaussian radial profile, Lorentzian axial profile
    GAUSSIAN_BEAM = "GAUSSIAN_BEAM"
    # Gaussian profile along all three axes with an axial waist
    GAUSSIAN_WAIST = "GAUSSIAN_WAIST"


@dataclass(frozen=True)
class TrapField:
    """Optical trap. Beam geometry is derived from the frequencies and depth.

    For GAUSSIAN_BEAM ``lengths`` holds (w_x, w_y, z_R); for GAUSSIAN_WAIST
    (w_x, w_y, w_z). Use :meth:`from_frequencies` to construct.
    """
    omega: np.ndarray
    mass: float
    depth_U0: float = DEFAULT_TRAP_DEPTH
    shape: TrapShape = TrapShape.HARMONIC
    lengths: np.ndarray = field(default=None)

    def __post_init__(self):
        om = _vec3(self.omega, "trap.omega")
        if np.any(om <= 0):
            raise DomainError("trap.omega must be positive on every axis")
        object.__setattr__(self, "omega", om)
        object.__setattr__(self, "shape", TrapShape(self.shape))
        if not self.depth_U0 > 0:
            raise DomainError("trap.depth_U0 must be positive")
        if self.lengths is None:
            object.__setattr__(self, "lengths", beam_lengths(om, self.mass, self.depth_U0, self.shape))
        else:
            object.__setattr__(self, "lengths", _vec3(self.lengths, "trap.lengths"))

    @classmethod
    def from_frequencies(cls, freqs_hz, mass: float, depth_U0: float = DEFAULT_TRAP_DEPTH,
                         shape: TrapShape | str = TrapShape.HARMONIC) -> "TrapField":
        return cls(omega=2 * np.pi * np.asarray(freqs_hz, dtype=float), mass=mass,
                   depth_U0=depth_U0, shape=TrapShape(shape))

    @property
    def waist_x(self) -> float:
        return float(self.lengths[0])

    @property
    def waist_y(self) -> float:
        return float(self.lengths[1])

    @property
    def rayleigh_zR(self) -> float:
        return float(self.lengths[2])

    def with_shape(self, shape) -> "TrapField":
        shape = TrapShape(shape)
        return replace(self, shape=shape, lengths=beam_lengths(self.omega, self.mass, self.depth_U0, shape))


def beam_lengths(omega, mass: float, depth_U0: float, shape=TrapShape.GAUSSIAN_BEAM) -> np.ndarray:
    """Radial waists and axial length scale reproducing the given frequencies.

    Radial axes satisfy Omega^2 = 4 U0 / (m w^2). The axial scale is z_R with
    Omega_z^2 = 2 U0 / (m z_R^2) for the Lorentzian axial profile, or an axial
    waist with the radial relation otherwise.
    """
    om = np.asarray(omega, dtype=float)
    w = np.sqrt(4.0 * depth_U0 / (mass * om**2))
    if TrapShape(shape) is TrapShape.GAUSSIAN_WAIST:
        return w
    w[2] = np.sqrt(2.0 * depth_U0 / (mass * om[2] ** 2))
    return w


def trap_potential(r, trap: TrapField, envelope: float = 1.0) -> np.ndarray | float:
    """Trap potential energy relative to the bottom of the well. ``r`` is (..., 3)."""
    r = np.asarray(r, dtype=float)
    x, y, z = r[..., 0], r[..., 1], r[..., 2]
    lx, ly, lz = trap.lengths
    if trap.shape is TrapShape.HARMONIC:
        u = 0.5 * trap.mass * (trap.omega**2 * r**2).sum(axis=-1)
    elif trap.shape is TrapShape.GAUSSIAN_BEAM:
        s = 1.0 / (1.0 + (z / lz) ** 2)
        u = trap.depth_U0 * (1.0 - s * np.exp(-2.0 * ((x / lx) ** 2 + (y / ly) ** 2) * s))
    else:
        u = trap.depth_U0 * (1.0 - np.exp(-2.0 * ((x / lx) ** 2 + (y / ly) ** 2 + (z / lz) ** 2)))
    return envelope * u


def trap_force(r, trap: TrapField, envelope: float = 1.0) -> np.ndarray:
    """Optical force -grad U scaled by the trap envelope. ``r`` is (..., 3)."""
    if not 0.0 <= envelope <= 1.0:
        raise DomainError("envelope must lie in [0, 1]")
    r = np.asarray(r, dtype=float)
    if trap.shape is TrapShape.HARMONIC:
        return -envelope * trap.mass * trap.omega**2 * r
    x, y, z = r[..., 0], r[..., 1], r[..., 2]
    lx, ly, lz = trap.lengths
    U0 = trap.depth_U0
    if trap.shape is TrapShape.GAUSSIAN_BEAM:
        s = 1.0 / (1.0 + (z / lz) ** 2)
        rho = (x / lx) ** 2 + (y / ly) ** 2
        g = np.exp(-2.0 * rho * s)
        fx = -U0 * s * g * 4.0 * x * s / lx**2
        fy = -U0 * s * g * 4.0 * y * s / ly**2
        # d/dz of -U0 s g with ds/dz = -2 z s^2 / zR^2
        ds = -2.0 * z * s**2 / lz**2
        fz = U0 * g * ds * (1.0 - 2.0 * rho * s)
    else:
        g = np.exp(-2.0 * ((x / lx) ** 2 + (y / ly) ** 2 + (z / lz) ** 2))
        fx = -U0 * g * 4.0 * x / lx**2
        fy = -U0 * g * 4.0 * y / ly**2
        fz = -U0 * g * 4.0 * z / lz**2
    return envelope * np.stack([fx, fy, fz], axis=-1)


def equivalent_nonlinearity_displacement(trap: TrapField, axis: int, d_axial: float) -> float:
    """Displacement along ``axis`` whose quartic-to-quadratic potential ratio
    equals that of an axial displacement ``d_axial``.

    The Taylor coefficients are extracted numerically from the potential
    along each axis, so this holds for any trap shape.
    """
    def ratio_coeff(ax):
        scale = trap.lengths[ax]
        s = np.linspace(-0.05, 0.05, 41)
        pts = np.zeros((s.size, 3))
        pts[:, ax] = s * scale
        # U - U(0) = c2 s^2 + c4 s^4 + c6 s^6 in the scaled coordinate s = u / scale
        vals = trap_potential(pts, trap) / trap.depth_U0
        A = np.stack([s**2, s**4, s**6], axis=1)
        c = np.linalg.lstsq(A, vals, rcond=None)[0]
        return abs(c[1] / c[0]) / scale**2

    if trap.shape is TrapShape.HARMONIC:
        raise DomainError("a harmonic trap has no nonlinearity")
    kz = ratio_coeff(2)
    ki = ratio_coeff(axis)
    # ratio(d) = k d^2 ; equal ratios -> d_i = d_z sqrt(kz / ki)
    return d_axial * np.sqrt(kz / ki)


@dataclass(frozen=True)
class ElectrodeSystem:
    """Electrode geometry G: field at the trap centre per applied volt.

    Rows are trap axes, columns electrodes, so the force is C @ V with
    C = q e G.
    """
    geometry_G: np.ndarray
    charge_q: int

    def __post_init__(self):
        G = _mat3(self.geometry_G, "electrodes.geometry_G")
        cond = np.linalg.cond(G)
        if not np.isfinite(cond) or cond > 1e12:
            raise DomainError(f"electrode geometry is singular (condition number {cond:.3g})")
        object.__setattr__(self, "geometry_G", G)

    @property
    def transduction_C(self) -> np.ndarray:
        return self.charge_q * E_CHARGE * self.geometry_G

    @property
    def cnv_diag(self) -> np.ndarray:
        return np.abs(np.diag(self.transduction_C))

    @classmethod
    def from_force_matrix(cls, C, charge_q: int) -> "ElectrodeSystem":
        if charge_q == 0:
            raise DomainError("a force matrix cannot be given for an uncharged particle")
        return cls(np.asarray(C, dtype=float) / (charge_q * E_CHARGE), charge_q)

    @classmethod
    def from_normalized_inverse(cls, ninv, diag_force_per_volt, charge_q: int) -> "ElectrodeSystem":
        return cls.from_force_matrix(denormalize_inverse(ninv, diag_force_per_volt), charge_q)

    def with_charge(self, charge_q: int) -> "ElectrodeSystem":
        return ElectrodeSystem(self.geometry_G, int(charge_q))


def normalized_inverse(C) -> np.ndarray:
    """C^-1 with each column divided by its diagonal element."""
    C = np.asarray(C, dtype=float)
    try:
        inv = np.linalg.inv(C)
    except np.linalg.LinAlgError as exc:
        raise DomainError("matrix is singular") from exc
    if not np.all(np.isfinite(inv)) or np.linalg.cond(C) > 1e14:
        raise DomainError("matrix is singular")
    d = np.diag(inv)
    if np.any(d == 0):
        raise DomainError("inverse has a zero diagonal element; cannot normalize")
    out = inv / d[None, :]
    np.fill_diagonal(out, 1.0)
    return out


def denormalize_inverse(ninv, diag_force_per_volt) -> np.ndarray:
    """Force matrix C whose normalized inverse is ``ninv`` and whose diagonal
    equals ``diag_force_per_volt``.
    """
    ninv = np.asarray(ninv, dtype=float)
    d = np.asarray(diag_force_per_volt, dtype=float)
    base = np.linalg.inv(ninv)
    # C = diag(1/lambda) @ inv(ninv); choose lambda so that C_ii = d_i
    return base * (d / np.diag(base))[:, None]


@dataclass(frozen=True)
class Drift:
    """Exponential relaxation of the axial stray force, in volt equivalents."""
    V_f: float = 0.3
    V_0: float = 1.0
    RC: float = 300 * 60.0

    def value(self, t: float) -> float:
        return self.V_f + self.V_0 * np.exp(-t / self.RC)


@dataclass(frozen=True)
class Environment:
    pressure: float = 1e-7
    gas_temperature: float = 300.0
    gamma: float = 0.0
    recoil_Dp: np.ndarray = field(default_factory=lambda: np.zeros(3))
    stray_field_E: np.ndarray = field(default_factory=lambda: np.zeros(3))
    nonelectrostatic_force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gravity: np.ndarray = field(default_factory=lambda: np.array([-G_ACCEL, 0.0, 0.0]))
    drift: Drift | None = None

    def __post_init__(self):
        if self.gamma < 0:
            raise DomainError("environment.gamma must be non-negative")
        for name in ("recoil_Dp", "stray_field_E", "nonelectrostatic_force", "gravity"):
            object.__setattr__(self, name, _vec3(getattr(self, name), f"environment.{name}"))
        if np.any(self.recoil_Dp < 0):
            raise DomainError("environment.recoil_Dp must be non-negative")

    def gas_diffusion(self, mass: float) -> float:
        """Momentum diffusion 2 m gamma k_B T from the gas (N^2 s)."""
        return 2.0 * mass * self.gamma * KB * self.gas_temperature

    def constant_force(self, particle: Particle) -> np.ndarray:
        return (particle.charge * self.stray_field_E + self.nonelectrostatic_force
                + particle.mass * self.gravity)


@dataclass(frozen=True)
class StateVector:
    position: np.ndarray
    momentum: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", _vec3(self.position, "position"))
        object.__setattr__(self, "momentum", _vec3(self.momentum, "momentum"))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.position, self.momentum])


@dataclass(frozen=True)
class CovarianceState:
    """Second moments over (x, y, z, p_x, p_y, p_z)."""
    sigma: np.ndarray

    def __post_init__(self):
        s = np.array(self.sigma, dtype=float)
        if s.shape != (6, 6):
            raise DomainError("covariance must be 6x6")
        scale = np.max(np.abs(s)) or 1.0
        if np.max(np.abs(s - s.T)) > 1e-12 * scale:
            raise DomainError("covariance must be symmetric")
        s = 0.5 * (s + s.T)
        check_psd(s)
        s.setflags(write=False)
        object.__setattr__(self, "sigma", s)

    def position_variance(self, axis: int = 2) -> float:
        return float(self.sigma[axis, axis])

    def momentum_variance(self, axis: int = 2) -> float:
        return float(self.sigma[3 + axis, 3 + axis])


def check_psd(s: np.ndarray, rel_tol: float = 1e-12) -> None:
    """Check positive semi-definiteness per axis block, in natural units.

    Position and momentum entries differ by ~30 orders of magnitude, so the
    matrix is rescaled to unit diagonal before taking eigenvalues.
    """
    d = np.sqrt(np.clip(np.diag(s), 0, None))
    d[d == 0] = 1.0
    scaled = s / np.outer(d, d)
    lam = np.linalg.eigvalsh(scaled)
    if lam[0] < -rel_tol * max(np.trace(scaled), 1.0):
        raise DomainError(f"covariance is not positive semi-definite (min scaled eigenvalue {lam[0]:.3g})")


def thermal_covariance(nbar, trap: TrapField) -> CovarianceState:
    """Covariance of an uncorrelated thermal state with occupations ``nbar``."""
    nbar = np.broadcast_to(np.asarray(nbar, dtype=float), (3,))
    if np.any(nbar < 0):
        raise DomainError("occupation must be non-negative")
    zzp = zero_point_motion(trap.mass, trap.omega)
    var_r = zzp**2 * (2 * nbar + 1)
    var_p = (trap.mass * trap.omega * zzp) ** 2 * (2 * nbar + 1)
    return CovarianceState(np.diag(np.concatenate([var_r, var_p])))


def total_force(r, particle: Particle, trap: TrapField, electrodes: ElectrodeSystem,
                environment: Environment, voltages=(0.0, 0.0, 0.0), envelope: float = 1.0,
                feedback_force=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Deterministic force on the particle. Stochastic forces are excluded."""
    V = np.asarray(voltages, dtype=float)
    if not np.all(np.isfinite(V)):
        raise DomainError("voltages must be finite")
    return (trap_force(r, trap, envelope) + electrodes.transduction_C @ V
            + environment.constant_force(particle) + np.asarray(feedback_force, dtype=float))


def nulling_voltages(particle: Particle, electrodes: ElectrodeSystem,
                     environment: Environment) -> np.ndarray:
    """Electrode voltages that cancel the constant external force exactly."""
    return -np.linalg.solve(electrodes.transduction_C, environment.constant_force(particle))


def static_equilibrium(particle: Particle, trap: TrapField, electrodes: ElectrodeSystem,
                       environment: Environment, voltages=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Trapped equilibrium position under the constant forces and DC voltages."""
    F = environment.constant_force(particle) + electrodes.transduction_C @ np.asarray(voltages, float)
    r = F / (trap.mass * trap.omega**2)
    if trap.shape is TrapShape.HARMONIC:
        return r
    for _ in range(50):
        res = trap_force(r, trap) + F
        h = 1e-6 * trap.lengths
        J = np.empty((3, 3))
        for k in range(3):
            dr = np.zeros(3)
            dr[k] = h[k]
            J[:, k] = (trap_force(r + dr, trap) - trap_force(r - dr, trap)) / (2 * h[k])
        step = np.linalg.solve(J, -res)
        r = r + step
        if np.all(np.abs(step) < 1e-15 * trap.lengths):
            break
    return r
