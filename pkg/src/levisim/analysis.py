"""Time-series statistics and curve fits used by the measurement protocols."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal, stats
from scipy.integrate import trapezoid
from scipy.optimize import OptimizeWarning, curve_fit, least_squares, minimize_scalar

from .core import KB


class AnalysisError(ValueError):
    pass


def _n_window(window: float, sample_rate: float) -> int:
    n = int(round(window * sample_rate))
    if n < 1:
        raise AnalysisError("window contains no samples")
    return n


def windowed_variance(trace, window: float, sample_rate: float, start: float = 0.0) -> float:
    """Sample variance of ``trace`` over ``window`` seconds beginning at ``start``."""
    x = np.asarray(trace, dtype=float)
    i0 = int(round(start * sample_rate))
    n = _n_window(window, sample_rate)
    if i0 < 0 or i0 + n > x.size:
        raise AnalysisError(f"window of {n} samples at {i0} exceeds trace length {x.size}")
    return float(np.var(x[i0:i0 + n]))


def moving_variance(trace, window: float, sample_rate: float) -> np.ndarray:
    """Centred sliding variance; the window is truncated at the edges."""
    x = np.asarray(trace, dtype=float)
    n = _n_window(window, sample_rate)
    if n > x.size:
        raise AnalysisError("window longer than trace")
    x = x - x.mean()
    c1 = np.concatenate([[0.0], np.cumsum(x)])
    c2 = np.concatenate([[0.0], np.cumsum(x * x)])
    idx = np.arange(x.size)
    lo = np.clip(idx - n // 2, 0, x.size)
    hi = np.clip(idx - n // 2 + n, 0, x.size)
    cnt = hi - lo
    mean = (c1[hi] - c1[lo]) / cnt
    return np.maximum((c2[hi] - c2[lo]) / cnt - mean**2, 0.0)


@dataclass(frozen=True)
class SineFit:
    amplitude: float
    phase: float
    slope: float
    offset: float
    omega: float
    residual_rms: float
    converged: bool = True
    extra_amplitudes: tuple = ()

    def oscillation(self, t) -> np.ndarray:
        return self.amplitude * np.sin(self.omega * np.asarray(t, float) + self.phase)

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, float)
        return self.oscillation(t) + self.slope * t + self.offset


def _sine_design(t, omega, extra):
    cols = [np.sin(omega * t), np.cos(omega * t), t, np.ones_like(t)]
    for w in extra:
        cols += [np.sin(w * t), np.cos(w * t)]
    return np.stack(cols, axis=1)


def _linear_sine(t, y, omega, extra):
    A = _sine_design(t, omega, extra)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ coef
    return coef, float(res @ res)


def fit_sine(t, y, omega_guess: float, tolerance: float = 0.02, extra_omegas=()) -> SineFit:
    """Fit a sin(W t + phi) + b t + c, refining W within +-``tolerance``.

    For fixed W the model is linear, so W is found by a bounded 1D search
    followed by a joint least-squares polish. ``extra_omegas`` adds further
    fixed-frequency tones (e.g. the other trap modes) to the linear basis.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.size < 8 or (t[-1] - t[0]) * omega_guess < 4 * np.pi:
        raise AnalysisError("segment must span at least two periods")
    extra = tuple(extra_omegas)
    t0 = t[0]
    tt = t - t0
    lo, hi = omega_guess * (1 - tolerance), omega_guess * (1 + tolerance)
    res = minimize_scalar(lambda w: _linear_sine(tt, y, w, extra)[1], bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-10 * omega_guess})
    w = float(res.x)
    coef, _ = _linear_sine(tt, y, w, extra)
    # joint polish in scaled units; linear parameters come from the projection
    T = tt[-1] or 1.0
    ys = np.std(y) or 1.0

    def resid(pv):
        c, _ = _linear_sine(tt, y, pv[0] / T, extra)
        return (y - _sine_design(tt, pv[0] / T, extra) @ c) / ys

    try:
        pol = least_squares(resid, [w * T], method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
        if lo <= pol.x[0] / T <= hi and np.sum(pol.fun**2) <= np.sum(resid([w * T]) ** 2):
            w = float(pol.x[0] / T)
            coef, _ = _linear_sine(tt, y, w, extra)
    except (ValueError, np.linalg.LinAlgError):
        pass
    A_, B_, b, c = coef[:4]
    amp = float(np.hypot(A_, B_))
    phase = float(np.arctan2(B_, A_))
    # move the time origin back to t = 0 of the caller's axis
    phase = float(np.angle(np.exp(1j * (phase - w * t0))))
    if phase == -np.pi:
        phase = np.pi
    c0 = c - b * t0
    extras = tuple(float(np.hypot(coef[4 + 2 * k], coef[5 + 2 * k])) for k in range(len(extra)))
    resid_rms = float(np.sqrt(np.mean((y - _sine_design(tt, w, extra) @ coef) ** 2)))
    converged = bool(lo * (1 + 1e-6) < w < hi * (1 - 1e-6) and np.isfinite(amp))
    return SineFit(amp, phase, float(b), float(c0), w, resid_rms, converged, extras)


@dataclass(frozen=True)
class ParabolaFit:
    a: float
    v_opt: float
    b: float
    a_ci: float
    v_opt_ci: float
    b_ci: float
    valid: bool = True
    message: str = ""

    def __call__(self, V):
        return self.a * (np.asarray(V, float) - self.v_opt) ** 2 + self.b


def fit_parabola(voltages, energies, confidence: float = 0.95) -> ParabolaFit:
    """Least-squares parabola a (V - V_opt)^2 + b with two-sided confidence half-widths."""
    V = np.asarray(voltages, dtype=float)
    E = np.asarray(energies, dtype=float)
    if np.unique(V).size < 4:
        raise AnalysisError("at least four distinct voltages are required")
    vc = V.mean()
    X = np.stack([np.ones_like(V), V - vc, (V - vc) ** 2], axis=1)
    coef, *_ = np.linalg.lstsq(X, E, rcond=None)
    res = E - X @ coef
    dof = V.size - 3
    s2 = float(res @ res) / dof if dof > 0 else 0.0
    cov = s2 * np.linalg.inv(X.T @ X)
    c0, c1, c2 = coef
    q = stats.t.ppf(0.5 + confidence / 2, max(dof, 1))
    valid, msg = True, ""
    if c2 <= 0:
        return ParabolaFit(float(c2), float("nan"), float(c0), float("nan"), float("nan"), float("nan"),
                           False, "no minimum: fitted curvature is not positive")
    x0 = -c1 / (2 * c2)
    # gradients for the delta method
    g_v = np.array([0.0, -1 / (2 * c2), c1 / (2 * c2**2)])
    g_b = np.array([1.0, -c1 / (2 * c2), c1**2 / (4 * c2**2)])
    v_opt = vc + x0
    if not V.min() <= v_opt <= V.max():
        valid, msg = False, "minimum lies outside the scanned range"
    return ParabolaFit(float(c2), float(v_opt), float(c0 - c1**2 / (4 * c2)),
                       float(q * np.sqrt(cov[2, 2])), float(q * np.sqrt(g_v @ cov @ g_v)),
                       float(q * np.sqrt(max(g_b @ cov @ g_b, 0.0))), valid, msg)


@dataclass(frozen=True)
class GaussianFit:
    amplitude: float
    center: float
    width: float
    offset: float
    converged: bool = True

    def __call__(self, V):
        V = np.asarray(V, float)
        return self.offset + self.amplitude * np.exp(-((V - self.center) ** 2) / (2 * self.width**2))


def _gauss(V, amp, c, w, off):
    return off + amp * np.exp(-((V - c) ** 2) / (2 * w**2))


def fit_gaussian(voltages, energies) -> GaussianFit:
    """offset + amplitude exp(-(V - center)^2 / 2 width^2), seeded from a parabola.

    A compensation scan is a bowl, so the amplitude usually comes out negative.
    """
    V = np.asarray(voltages, dtype=float)
    E = np.asarray(energies, dtype=float)
    if V.size < 5:
        raise AnalysisError("at least five points are required")
    span = np.ptp(V) or 1.0
    escale = np.ptp(E) or 1.0
    p0_list = []
    try:
        par = fit_parabola(V, E)
        if par.a > 0 and np.isfinite(par.v_opt):
            for w in (0.5 * span, span, 0.25 * span):
                amp = -2 * par.a * w**2
                p0_list.append([amp, par.v_opt, w, par.b - amp])
    except AnalysisError:
        pass
    k = int(np.argmin(E))
    p0_list.append([E.min() - E.max(), V[k], 0.3 * span, E.max()])
    k = int(np.argmax(E))
    p0_list.append([E.max() - E.min(), V[k], 0.3 * span, E.min()])
    best, best_ss = None, np.inf
    import warnings

    for p0 in p0_list:
        scale = np.array([escale, span, span, escale])
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", OptimizeWarning)
                popt, _ = curve_fit(lambda v, a, c, w, o: _gauss(v, a * scale[0], c * scale[1], w * scale[2],
                                                                  o * scale[3]) / escale,
                                    V, E / escale, p0=np.asarray(p0) / scale, maxfev=20000)
        except (RuntimeError, ValueError):
            continue
        popt = popt * scale
        ss = float(np.sum((_gauss(V, *popt) - E) ** 2))
        if ss < best_ss:
            best, best_ss = popt, ss
    if best is None:
        return GaussianFit(float("nan"), float("nan"), float("nan"), float("nan"), False)
    amp, c, w, off = best
    return GaussianFit(float(amp), float(c), float(abs(w)), float(off), bool(np.all(np.isfinite(best))))


@dataclass(frozen=True)
class DriftFit:
    V_f: float
    V_0: float
    RC: float
    converged: bool = True

    def __call__(self, t):
        return self.V_f + self.V_0 * np.exp(-np.asarray(t, float) / self.RC)


def fit_exponential_drift(times, values) -> DriftFit:
    """V_f + V_0 exp(-t / RC) by nonlinear least squares from a log-spaced RC grid."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if t.size < 4:
        raise AnalysisError("at least four points are required")
    span = np.ptp(t) or 1.0
    ys = np.std(y)
    if ys == 0 or ys < 1e-12 * (np.abs(y).max() or 1.0):
        return DriftFit(float(y.mean()), 0.0, float("inf"), True)

    def lin(rc):
        A = np.stack([np.ones_like(t), np.exp(-(t - t[0]) / rc)], axis=1)
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        r = y - A @ coef
        return coef, float(r @ r)

    grid = span * np.logspace(-2, 2, 81)
    ss = [lin(rc)[1] for rc in grid]
    rc0 = grid[int(np.argmin(ss))]
    (vf, v0), _ = lin(rc0)

    def resid(p):
        return (p[0] + p[1] * np.exp(-(t - t[0]) / (p[2] * span)) - y) / ys

    sol = least_squares(resid, [vf, v0, rc0 / span], method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
    vf, v0, rc = sol.x[0], sol.x[1], sol.x[2] * span
    ok = bool(sol.success and rc > 0)
    if not ok:
        (vf, v0), _ = lin(rc0)
        rc = rc0
    # express the amplitude at t = 0 of the caller's axis
    v0 = v0 * np.exp(t[0] / rc)
    return DriftFit(float(vf), float(v0), float(rc), ok)


def fit_tau_scaling(taus, scales, errors=None) -> tuple[float, float]:
    """Least squares of scales = c2 tau^2 + c4 tau^4 (optionally weighted)."""
    tau = np.asarray(taus, dtype=float)
    a = np.asarray(scales, dtype=float)
    if np.unique(tau).size < 3:
        raise AnalysisError("at least three distinct tau values are required")
    ts = tau.max()
    X = np.stack([(tau / ts) ** 2, (tau / ts) ** 4], axis=1)
    w = np.ones_like(a) if errors is None else 1.0 / np.asarray(errors, dtype=float)
    coef, *_ = np.linalg.lstsq(X * w[:, None], a * w, rcond=None)
    return float(coef[0] / ts**2), float(coef[1] / ts**4)


def psd_welch(trace, sample_rate: float, segment_length: int = 2**14, overlap: float = 0.5):
    """One-sided Hann-window Welch PSD; its integral equals the trace variance."""
    x = np.asarray(trace, dtype=float)
    if segment_length > x.size:
        raise AnalysisError("segment_length exceeds trace length")
    f, p = signal.welch(x, fs=sample_rate, window="hann", nperseg=segment_length,
                        noverlap=int(segment_length * overlap), detrend="constant",
                        scaling="density", return_onesided=True)
    return f, p


def integrate_peak(freqs, psd, band, floor: float | None = None) -> float:
    """Area of the PSD within ``band`` (Hz) above the noise floor.

    The floor defaults to the median of the PSD outside the band.
    """
    f = np.asarray(freqs, dtype=float)
    p = np.asarray(psd, dtype=float)
    lo, hi = band
    if hi > f[-1] * (1 + 1e-12) or lo < 0 or hi <= lo:
        raise AnalysisError("band must lie within [0, Nyquist]")
    inside = (f >= lo) & (f <= hi)
    if floor is None:
        outside = p[~inside]
        floor = float(np.median(outside)) if outside.size else 0.0
    return float(trapezoid(p[inside] - floor, f[inside]))


def equipartition_calibrate(trace, omega: float, mass: float, temperature: float = 300.0) -> float:
    """Detector gain (V/m) from a thermalised trace at known temperature."""
    var = float(np.var(np.asarray(trace, dtype=float)))
    return float(np.sqrt(var / (KB * temperature / (mass * omega**2))))


@dataclass
class EnsembleStats:
    mean_energy: float
    mean_energy_error: float
    times: np.ndarray
    variance_trace: np.ndarray
    max_std: float
    max_std_error: float
    bin_max_std: np.ndarray = field(default=None)


def reconstruct(fits, t) -> np.ndarray:
    """Oscillating part of each fitted trajectory on the grid ``t``."""
    return np.stack([f.oscillation(t) for f in fits])


def ensemble_stats(fits, omega: float, mass: float, n_bins: int = 10, n_grid: int = 720) -> EnsembleStats:
    """Mean energy and ensemble position variance from per-trajectory sine fits.

    The variance is evaluated over one oscillation period of the reconstructed
    trajectories; its maximum is the major axis of the phase-space ellipse.
    Errors on the maximum come from splitting the repetitions into bins,
    with fewer bins when there are less than two trajectories per bin.
    """
    fits = list(fits)
    if len(fits) < n_bins:
        raise AnalysisError(f"need at least {n_bins} trajectories")
    t = np.linspace(0.0, 2 * np.pi / omega, n_grid, endpoint=False)
    traj = reconstruct(fits, t)
    var = traj.var(axis=0, ddof=1)
    a2 = np.array([f.amplitude**2 for f in fits])
    E = 0.5 * mass * omega**2 * a2
    # every bin needs two members for its own variance
    n_bins = min(n_bins, len(fits) // 2)
    bins = np.array_split(np.arange(len(fits)), n_bins)
    bin_max = np.array([np.sqrt(traj[b].var(axis=0, ddof=1).max()) for b in bins])
    return EnsembleStats(
        mean_energy=float(E.mean()),
        mean_energy_error=float(E.std(ddof=1) / np.sqrt(E.size)),
        times=t,
        variance_trace=var,
        max_std=float(np.sqrt(var.max())),
        max_std_error=float(bin_max.std(ddof=1) / np.sqrt(n_bins)),
        bin_max_std=bin_max,
    )
