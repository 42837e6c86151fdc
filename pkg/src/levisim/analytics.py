"""Closed-form and ODE-based predictions for Gaussian states."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm
from scipy.optimize import minimize_scalar

from .core import CovarianceState, DomainError, zero_point_motion


class NumericalError(RuntimeError):
    pass


def free_expansion_variance(nbar, omega, mass, tau):
    """Position variance of a thermal state after free flight for ``tau``."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise DomainError("tau must be non-negative")
    zzp = zero_point_motion(mass, omega)
    return zzp**2 * (2 * np.asarray(nbar, dtype=float) + 1) * (1 + (omega * tau) ** 2)


def mean_energy_after_release(E0, F, tau, omega, mass):
    """Mean oscillation energy after release for ``tau`` under constant force ``F``."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise DomainError("tau must be non-negative")
    wt2 = (omega * tau) ** 2
    return E0 * (1 + wt2 / 2) + np.asarray(F, float) ** 2 * tau**2 / (2 * mass) * (1 + wt2 / 4)


def recapture_variance(sigma_z0sq, sigma_p0sq, tau, t, omega, mass):
    """Position variance at time ``t`` after recapture following free flight ``tau``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("t must be non-negative")
    return (sigma_z0sq * (1 + omega * tau * np.sin(2 * omega * t))
            + sigma_p0sq * tau**2 / mass**2 * np.cos(omega * t) ** 2)


def recapture_variance_max(sigma_z0sq, sigma_p0sq, tau, omega, mass) -> float:
    """Maximum over one trap period of :func:`recapture_variance`."""
    period = np.pi / omega
    grid = np.linspace(0, period, 721)
    vals = recapture_variance(sigma_z0sq, sigma_p0sq, tau, grid, omega, mass)
    k = int(np.argmax(vals))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    res = minimize_scalar(lambda t: -recapture_variance(sigma_z0sq, sigma_p0sq, tau, t, omega, mass),
                          bounds=(lo, hi), method="bounded", options={"xatol": 1e-12 * period})
    return float(max(-res.fun, vals[k]))


def thermal_moments(nbar, omega, mass) -> tuple[float, float]:
    """(sigma_z^2, sigma_p^2) of a thermal state."""
    var = zero_point_motion(mass, omega) ** 2 * (2 * nbar + 1)
    return var, var * (mass * omega) ** 2


class SegmentKind(str, enum.Enum):
    FREE = "FREE"
    TRAPPED = "TRAPPED"


@dataclass(frozen=True)
class SegmentModel:
    A: np.ndarray
    D: np.ndarray
    duration: float
    label: SegmentKind

    def __post_init__(self):
        if self.duration < 0:
            raise DomainError("segment duration must be non-negative")
        D = np.asarray(self.D, dtype=float)
        if np.max(np.abs(D - D.T)) > 1e-12 * (np.max(np.abs(D)) or 1.0):
            raise DomainError("diffusion matrix must be symmetric")
        if np.linalg.eigvalsh(D)[0] < -1e-12 * (np.trace(D) or 1.0):
            raise DomainError("diffusion matrix must be positive semi-definite")


def segment(label, duration: float, mass: float, omega=(0.0, 0.0, 0.0), gamma: float = 0.0,
            diffusion=(0.0, 0.0, 0.0)) -> SegmentModel:
    """Drift and diffusion matrices for a free or trapped interval.

    ``diffusion`` is the momentum diffusion per axis (N^2 s); pass gas plus
    recoil for trapped segments and gas only for free ones.
    """
    label = SegmentKind(label)
    om = np.asarray(omega, dtype=float) * np.ones(3)
    A = np.zeros((6, 6))
    A[:3, 3:] = np.eye(3) / mass
    if label is SegmentKind.TRAPPED:
        A[3:, :3] = -mass * np.diag(om**2)
    A[3:, 3:] = -gamma * np.eye(3)
    D = np.zeros((6, 6))
    D[3:, 3:] = np.diag(np.asarray(diffusion, dtype=float) * np.ones(3))
    return SegmentModel(A, D, float(duration), label)


def _lyap_rhs(A, D, S):
    return A @ S + S @ A.T + D


def lyapunov_propagate(sigma0: CovarianceState, segments, steps_per_period: int = 50) -> CovarianceState:
    """Integrate dS/dt = A S + S A^T + D through consecutive segments.

    Noise-free segments use the exact linear flow; otherwise classical RK4
    with a step no longer than 1/(steps_per_period * Omega_max).
    """
    S = np.array(sigma0.sigma if isinstance(sigma0, CovarianceState) else sigma0, dtype=float)
    for seg in segments:
        A, D, T = np.asarray(seg.A, float), np.asarray(seg.D, float), seg.duration
        if T == 0:
            continue
        if not np.any(D):
            Phi = expm(A * T)
            S = Phi @ S @ Phi.T
        else:
            rate = float(np.max(np.abs(np.linalg.eigvals(A))))
            # scale-free rate for free segments: use the shear rate in natural units
            rate = max(rate, 1.0 / T)
            n = int(np.ceil(T * rate * steps_per_period))
            h = T / n
            for _ in range(n):
                k1 = _lyap_rhs(A, D, S)
                k2 = _lyap_rhs(A, D, S + 0.5 * h * k1)
                k3 = _lyap_rhs(A, D, S + 0.5 * h * k2)
                k4 = _lyap_rhs(A, D, S + h * k3)
                S = S + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        S = 0.5 * (S + S.T)
        try:
            CovarianceState(S)
        except DomainError as exc:
            raise NumericalError(f"covariance lost positivity in {seg.label.value} segment: {exc}") from exc
    return CovarianceState(S)


def ellipse_angle(omega: float, tau: float) -> tuple[float, bool]:
    """Tilt of the sheared phase-space ellipse after free flight ``tau``.

    Returns (theta, degenerate). At tau = 0 the state is isotropic in scaled
    units and has no preferred axis; theta = 0 is reported with the flag set.
    """
    if tau < 0:
        raise DomainError("tau must be non-negative")
    s = omega * tau
    if s == 0:
        return 0.0, True
    return 0.5 * float(np.arctan2(2 * s, s * s)), False


def recompression_time(tau: float, omega: float, n: int = 1) -> float:
    """Trap pulse that mirrors the sheared ellipse so a second flight undoes it."""
    if n < 0 or int(n) != n:
        raise DomainError("n must be a non-negative integer")
    theta, _ = ellipse_angle(omega, tau)
    return 2 * theta / omega + n * np.pi / omega


def displacement_from_voltage(cnv: float, dV, tau: float, mass: float):
    """Free-flight displacement produced by a voltage error ``dV``."""
    if tau < 0:
        raise DomainError("tau must be non-negative")
    return cnv * np.asarray(dV, dtype=float) * tau**2 / (2 * mass)


@dataclass(frozen=True)
class ScanPrediction:
    a: float
    v_opt: float
    b: float

    def __post_init__(self):
        if not self.a > 0:
            raise DomainError("parabola scale must be positive")

    def __call__(self, V):
        return self.a * (np.asarray(V, float) - self.v_opt) ** 2 + self.b


def expected_scan_parabola(cnv: float, tau: float, omega: float, mass: float, force: float = 0.0,
                           E0: float = 0.0) -> ScanPrediction:
    """Post-recapture mean energy versus compensation voltage."""
    if not tau > 0:
        raise DomainError("tau must be positive")
    a = cnv**2 * tau**2 / (2 * mass) * (1 + (omega * tau) ** 2 / 4)
    return ScanPrediction(a=a, v_opt=-force / cnv, b=E0 * (1 + (omega * tau) ** 2 / 2))


def tau_scaling_coefficients(cnv: float, omega: float, mass: float) -> tuple[float, float]:
    """(c2, c4) with a(tau) = c2 tau^2 + c4 tau^4."""
    c2 = cnv**2 / (2 * mass)
    return c2, c2 * omega**2 / 4
