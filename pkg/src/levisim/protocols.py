"""Simulated versions of the measurement and calibration procedures.

Every protocol is a pure function of (config, seed). Noise is drawn from
substreams keyed by the protocol name, the point index and the repetition,
so rerunning with the same inputs reproduces results bit for bit.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import analysis, analytics
from .core import E_CHARGE, DomainError, TrapShape, normalized_inverse
from .dynamics import (
    IDEAL_SWITCHING,
    Action,
    Event,
    FeedbackAxis,
    FeedbackConfig,
    PulseSchedule,
    SimConfig,
    Trajectory,
    recompression_schedule,
    release_recapture,
    run_ensemble,
    simulate,
)

log = logging.getLogger(__name__)

SCAN_ORDER = (2, 0, 1)


class CalibrationError(RuntimeError):
    pass


def channel(traj: Trajectory, config: SimConfig, axis: int) -> np.ndarray:
    """Detector channel ``axis`` converted to metres."""
    return traj.detector[:, axis] / config.detector.gain[axis]


def settle_time(schedule: PulseSchedule, margin: float = 0.5e-6) -> float:
    """Time after a TRAP_ON event until the envelope is fully on, plus ``margin``."""
    return schedule.trap_trigger_delay + schedule.trap_rise_fall + margin


def integer_periods(window: float, omega: float) -> float:
    """``window`` rounded to a whole number of oscillation periods."""
    period = 2 * np.pi / omega
    return max(1, int(round(window / period))) * period


def effective_transduction(config: SimConfig, axis: int, correction=None) -> float:
    """Force per volt along ``axis`` for a scan along a normalized-inverse column.

    Applying V = v * N[:, axis] with N the normalized inverse of the true C
    gives a pure force v / (C^-1)_aa along the axis.
    """
    C = config.electrodes.transduction_C
    direction = normalized_inverse(C)[:, axis] if correction is None else np.asarray(correction)[:, axis]
    return float((C @ direction)[axis])


def post_recapture_energy(traj: Trajectory, schedule: PulseSchedule, config: SimConfig, axis: int,
                          window: float = 40e-6) -> float:
    """m W^2 times the windowed variance of the channel after recapture (NaN if lost)."""
    if traj.lost:
        return float("nan")
    omega = config.trap.omega[axis]
    fs = config.detector.sample_rate
    t0 = schedule.recapture_time() + settle_time(schedule)
    w = integer_periods(window, omega)
    i0 = int(np.searchsorted(traj.times, t0))
    var = analysis.windowed_variance(channel(traj, config, axis)[i0:], w, fs)
    return config.mass * omega**2 * var


def pre_release_energy(traj: Trajectory, schedule: PulseSchedule, config: SimConfig, axis: int,
                       window: float = 30e-6) -> float:
    omega = config.trap.omega[axis]
    fs = config.detector.sample_rate
    t1 = schedule.release_time()
    w = integer_periods(window, omega)
    if w > t1:
        w = integer_periods(t1 - 2 * np.pi / omega, omega)
    i1 = int(np.searchsorted(traj.times, t1))
    n = int(round(w * fs))
    var = analysis.windowed_variance(channel(traj, config, axis)[i1 - n:i1], w, fs)
    return config.mass * omega**2 * var


def post_recapture_fit(traj: Trajectory, schedule: PulseSchedule, config: SimConfig, axis: int = 2,
                       duration: float = 25e-6) -> analysis.SineFit | None:
    """Sine fit to ``duration`` of the channel after recapture, time origin at recapture."""
    if traj.lost:
        return None
    t_rec = schedule.recapture_time()
    t0 = t_rec + settle_time(schedule)
    sl = traj.window(t0, t0 + duration)
    others = tuple(config.trap.omega[k] for k in range(3) if k != axis)
    return analysis.fit_sine(traj.times[sl] - t_rec, channel(traj, config, axis)[sl], config.trap.omega[axis],
                             extra_omegas=others)


# --------------------------------------------------------------------------- scans


@dataclass
class ScanResult:
    axis: int
    voltages: np.ndarray
    energies: np.ndarray
    mean_energies: np.ndarray
    fit: analysis.ParabolaFit | None
    v_opt: float
    tau: float
    repetitions: int
    direction: np.ndarray
    base_voltages: np.ndarray
    lost: np.ndarray
    excluded: np.ndarray = field(default=None)

    @property
    def applied_voltages(self) -> np.ndarray:
        """Voltage triple on the electrodes at the fitted optimum."""
        v = 0.0 if not np.isfinite(self.v_opt) else self.v_opt
        return self.base_voltages + v * self.direction


def compensation_scan(axis: int, v_range, n_points: int, tau: float, repetitions: int = 5,
                      config: SimConfig | None = None, seed: int = 0, *, base_voltages=(0.0, 0.0, 0.0),
                      correction=None, raw: bool = False, keys=(), window: float = 40e-6,
                      pre: float = 20e-6, timing: dict | None = None) -> ScanResult:
    """Release-recapture energy versus DC voltage along one axis, fitted by a parabola.

    The scan coordinate v applies ``base_voltages + v * direction``, where the
    direction is the ``axis`` column of the normalized inverse (``correction``,
    defaulting to the true one) or the bare electrode when ``raw`` is set.
    Points with a lost particle in any repetition are excluded from the fit.
    """
    if config is None:
        from .dynamics import default_config

        config = default_config()
    if not 0 <= axis <= 2:
        raise DomainError("axis must be 0, 1 or 2")
    if np.ndim(v_range) == 0 or len(v_range) == 2 and n_points is not None:
        lo, hi = float(v_range[0]), float(v_range[1])
        volts = np.linspace(lo, hi, int(n_points))
    else:
        volts = np.asarray(v_range, dtype=float)
    base = np.asarray(base_voltages, dtype=float)
    if raw:
        direction = np.eye(3)[axis]
    else:
        ninv = normalized_inverse(config.electrodes.transduction_C) if correction is None else np.asarray(correction)
        direction = np.asarray(ninv, dtype=float)[:, axis]
    post = settle_time(release_recapture(tau, **(timing or {}))) + integer_periods(window, config.trap.omega[axis]) + 1e-6
    energies = np.full((volts.size, repetitions), np.nan)
    for k, v in enumerate(volts):
        sched = release_recapture(tau, pre=pre, post=post, voltages=base + v * direction, **(timing or {}))
        vals = run_ensemble(sched, config, seed, repetitions, keys=("scan", *keys, axis, k),
                            reducer=lambda tr, s=sched: post_recapture_energy(tr, s, config, axis, window))
        energies[k] = vals
    lost = ~np.isfinite(energies)
    bad = lost.any(axis=1)
    mean_e = np.where(bad, np.nan, np.nanmean(np.where(lost, 0.0, energies), axis=1))
    fit = None
    v_opt = float("nan")
    if np.count_nonzero(~bad) >= 4:
        vv = np.repeat(volts[~bad], repetitions)
        ee = energies[~bad].ravel()
        fit = analysis.fit_parabola(vv, ee)
        if fit.a > 0:
            v_opt = fit.v_opt
    else:
        log.warning("scan on axis %d has fewer than four valid points", axis)
    return ScanResult(axis, volts, energies, mean_e, fit, v_opt, tau, repetitions, direction, base, lost, bad)


@dataclass
class Compensation3D:
    voltages: np.ndarray
    history: list
    scans: list


def compensate_3d(config: SimConfig, tau_schedule=(10e-6, 20e-6, 50e-6, 100e-6), seed: int = 0, *,
                  initial_span=(60.0, 60.0, 2.0), n_points: int = 11, repetitions: int = 5, correction=None,
                  raw: bool = False, min_span_fraction: float = 0.05, timing: dict | None = None,
                  start=(0.0, 0.0, 0.0), max_repeats: int = 3) -> Compensation3D:
    """Iterative single-axis scans (z, x, y) with growing release time.

    Each scan is centred on the current estimate; its half-width starts at
    ``initial_span`` and afterwards is five times the previous confidence
    half-width scaled to the new release time, never below
    ``min_span_fraction`` of the initial span. A scan whose curvature is not
    significant leaves the estimate unchanged (short release times resolve
    little along the stiff radial axes). A significant parabola with its
    minimum outside the range moves the estimate to the edge; the last
    release time is then repeated, at most ``max_repeats`` times.
    """
    taus = list(tau_schedule)
    if any(b <= a for a, b in zip(taus, taus[1:])):
        raise DomainError("tau_schedule must be increasing")
    V = np.asarray(start, dtype=float).copy()
    span = np.asarray(initial_span, dtype=float).copy()
    history, scans = [V.copy()], []
    stages = [(it, tau) for it, tau in enumerate(taus)]
    repeats = 0
    k = 0
    while k < len(stages):
        it, tau = stages[k]
        at_edge = False
        for axis in SCAN_ORDER:
            s = span[axis]
            res = compensation_scan(axis, (-s, s), n_points, tau, repetitions, config, seed, base_voltages=V,
                                    correction=correction, raw=raw, keys=("c3d", k), timing=timing)
            scans.append(res)
            fit = res.fit
            if fit is not None and np.isfinite(res.v_opt) and fit.valid:
                V = res.applied_voltages
                if it + 1 < len(taus):
                    grow = (tau / taus[it + 1]) ** 2
                    span[axis] = float(np.clip(5 * fit.v_opt_ci * grow, min_span_fraction * initial_span[axis], s))
            elif fit is not None and fit.a - fit.a_ci > 0 and np.isfinite(fit.v_opt):
                step = float(np.clip(fit.v_opt, -s, s))
                V = V + step * res.direction
                at_edge = True
                log.warning("axis %d scan at tau=%.3g s has its minimum outside the range; moved by %.3g V",
                            axis, tau, step)
            else:
                log.info("axis %d scan at tau=%.3g s resolved no curvature; estimate kept", axis, tau)
            history.append(V.copy())
        k += 1
        if k == len(stages) and at_edge and repeats < max_repeats:
            stages.append((it, tau))
            repeats += 1
    return Compensation3D(V, history, scans)


@dataclass
class TauScanResult:
    scans: list
    taus: np.ndarray
    scales: np.ndarray
    scale_errors: np.ndarray
    v_opts: np.ndarray
    v_opt_errors: np.ndarray
    c2: float
    c4: float
    slope: float
    slope_ci: float

    @property
    def flat(self) -> bool:
        return abs(self.slope) <= self.slope_ci


def tau_scan(taus, v_range, config: SimConfig, seed: int = 0, *, axis: int = 2, n_points: int = 11,
             repetitions: int = 5, **scan_kw) -> TauScanResult:
    """Compensation scans at several release times; a(tau) is fitted by c2 tau^2 + c4 tau^4."""
    taus = np.asarray(taus, dtype=float)
    scans = [compensation_scan(axis, v_range, n_points, t, repetitions, config, seed, keys=("tau", i), **scan_kw)
             for i, t in enumerate(taus)]
    ok = np.array([s.fit is not None and s.fit.a > 0 for s in scans])
    a = np.array([s.fit.a if s.fit is not None else np.nan for s in scans])
    a_err = np.array([s.fit.a_ci / 1.96 if s.fit is not None else np.nan for s in scans])
    v = np.array([s.v_opt for s in scans])
    v_err = np.array([s.fit.v_opt_ci / 1.96 if s.fit is not None else np.nan for s in scans])
    if np.count_nonzero(ok) < 3:
        raise CalibrationError("fewer than three usable scans")
    err = np.where(a_err[ok] > 0, a_err[ok], a[ok] * 1e-3)
    c2, c4 = analysis.fit_tau_scaling(taus[ok], a[ok], err)
    # weighted straight line through v_opt(tau)
    w = 1.0 / np.maximum(v_err[ok], 1e-12) ** 2
    X = np.stack([np.ones(np.count_nonzero(ok)), taus[ok]], axis=1)
    cov = np.linalg.inv(X.T @ (X * w[:, None]))
    beta = cov @ X.T @ (w * v[ok])
    resid = v[ok] - X @ beta
    dof = max(np.count_nonzero(ok) - 2, 1)
    chi2 = float(np.sum(w * resid**2)) / dof
    from scipy import stats

    slope_ci = float(stats.t.ppf(0.975, dof) * np.sqrt(cov[1, 1] * max(chi2, 1.0)))
    return TauScanResult(scans, taus, a, a_err, v, v_err, c2, c4, float(beta[1]), slope_ci)


# ----------------------------------------------------------------- release series


@dataclass
class ReleaseSeries:
    taus: np.ndarray
    relative_energy: np.ndarray
    relative_energy_error: np.ndarray
    mean_energy: np.ndarray
    initial_energy: np.ndarray
    max_std: np.ndarray
    max_std_error: np.ndarray
    mean_displacement: np.ndarray
    displacement_error: np.ndarray
    lost_fraction: np.ndarray


def _paired_ratio(num, den):
    """Ratio of means with a delta-method standard error for paired samples."""
    n = num.size
    mn, md = num.mean(), den.mean()
    r = mn / md
    cov = np.cov(num, den, ddof=1)
    var = (cov[0, 0] - 2 * r * cov[0, 1] + r**2 * cov[1, 1]) / (n * md**2)
    return r, float(np.sqrt(max(var, 0.0)))


def release_series(taus, config: SimConfig, seed: int = 0, repetitions: int = 150, *, axis: int = 2,
                   pre: float = 40e-6, fit_duration: float = 25e-6, timing: dict | None = None,
                   control: SimConfig | None = None) -> ReleaseSeries:
    """Release-recapture at each tau: mean energy growth, ensemble width, mean displacement.

    The mean energy after recapture comes from squared sine-fit amplitudes and
    is normalised by the windowed-variance energy before release of the same
    repetitions. When ``control`` is given, the same repetitions are rerun with
    that configuration and the mean displacement is reported relative to it;
    this isolates the effect of a small force from thermal scatter.
    """
    taus = np.asarray(taus, dtype=float)
    omega = config.trap.omega[axis]
    m = config.mass
    n = taus.size
    out = {k: np.full(n, np.nan) for k in ("rel", "rel_e", "E", "E0", "s", "s_e", "d", "d_e", "lost")}
    for i, tau in enumerate(taus):
        sched = release_recapture(tau, pre=pre, post=settle_time(release_recapture(tau, **(timing or {})))
                                  + fit_duration + 1e-6, **(timing or {}))
        t_rel = sched.release_time() + sched.trap_trigger_delay + 0.5 * sched.trap_rise_fall
        t_rec = sched.recapture_time() + sched.trap_trigger_delay + 0.5 * sched.trap_rise_fall

        def reduce(tr, s=sched, a=t_rel, b=t_rec):
            if tr.lost:
                return None
            z = channel(tr, config, axis)
            ia, ib = np.searchsorted(tr.times, [a, b])
            return (post_recapture_fit(tr, s, config, axis, fit_duration), pre_release_energy(tr, s, config, axis),
                    z[ib] - z[ia])

        res = run_ensemble(sched, config, seed, repetitions, keys=("release", i), reducer=reduce)
        good = [r for r in res if r is not None]
        out["lost"][i] = 1 - len(good) / repetitions
        if len(good) < 10:
            continue
        fits = [g[0] for g in good]
        E0 = np.array([g[1] for g in good])
        disp = np.array([g[2] for g in good])
        st = analysis.ensemble_stats(fits, omega, m)
        E = 0.5 * m * omega**2 * np.array([f.amplitude**2 for f in fits])
        out["rel"][i], out["rel_e"][i] = _paired_ratio(E, E0)
        out["E"][i], out["E0"][i] = E.mean(), E0.mean()
        out["s"][i], out["s_e"][i] = st.max_std, st.max_std_error
        if control is not None:
            ctrl = run_ensemble(sched, control, seed, repetitions, keys=("release", i), reducer=reduce)
            pairs = [(a[2], b[2]) for a, b in zip(res, ctrl) if a is not None and b is not None]
            diff = np.array([a - b for a, b in pairs])
        else:
            diff = disp
        out["d"][i] = diff.mean()
        out["d_e"][i] = diff.std(ddof=1) / np.sqrt(diff.size)
    return ReleaseSeries(taus, out["rel"], out["rel_e"], out["E"], out["E0"], out["s"], out["s_e"], out["d"],
                         out["d_e"], out["lost"])


# ------------------------------------------------------------------- cross-cooling


@dataclass
class CrossTalkEstimate:
    normalized_inverse_hat: np.ndarray
    uncertainty: np.ndarray
    ratio_matrix: np.ndarray
    gain_ratios: np.ndarray
    flipped: np.ndarray
    evaluations: int


def _peak_variance(trace, fs, omega, halfwidth_hz, segment):
    f, p = analysis.psd_welch(trace, fs, segment_length=segment)
    f0 = omega / (2 * np.pi)
    return analysis.integrate_peak(f, p, (f0 - halfwidth_hz, f0 + halfwidth_hz))


def cross_cool_calibrate(config: SimConfig, target_axes=(0, 1, 2), seed: int = 0, *,
                         reference_gain: float = 2 * np.pi * 5e3, burn_in: float = 10.0,
                         measure: float = 2e-3, tol: float = 0.005, max_iter: int = 30,
                         segment: int = 2**13, start_fraction: float = 1e-3,
                         top_fraction: float = 1e3) -> CrossTalkEstimate:
    """Estimate the normalized inverse of C by matching cooling through foreign electrodes.

    For mode i the feedback first runs through electrode i with voltage gain
    k_ii (damping ``reference_gain`` for the nominal diagonal transduction).
    Routed through electrode j, the gain k_ij giving the same steady-state
    peak variance satisfies C_ij k_ij = C_ii k_ii, hence C_ij / C_ii = k_ii / k_ij.
    All gain evaluations for one mode share their noise realisation, which
    makes the variance a smooth function of gain. The search starts from a
    weak loop (``start_fraction`` of k_ii) and raises the gain by decades
    until the variance drops below the reference; a secant on log gain with
    bisection fallback then refines the match. If more gain heats the mode
    instead, the feedback sign is inverted. Starting weak avoids driving
    other modes unstable through detector cross-sensitivity. When neither
    sign matches and a loop that pushes axis j ``top_fraction`` times harder
    than the reference still cools less, the ratio is set to zero and its
    uncertainty to the resulting bound.

    ``burn_in`` is in damping times of the reference loop; ``measure`` is the
    averaging time in seconds.
    """
    m = config.mass
    fs = config.detector.sample_rate
    cnv = config.electrodes.cnv_diag
    k_ref = m * reference_gain / cnv
    duration = burn_in / reference_gain + measure
    n_burn = int(round(burn_in / reference_gain * fs))
    sched = PulseSchedule(total_duration=duration)
    R = np.eye(3)
    gains = np.full((3, 3), np.nan)
    flipped = np.zeros((3, 3), dtype=bool)
    sigma_rel = np.zeros((3, 3))
    bound = np.zeros((3, 3))
    evals = 0
    seg = segment

    def variance(i, j, k):
        nonlocal evals, seg
        axes = [FeedbackAxis(enabled=True, voltage_gain=float(k_ref[a]), routing_electrode=a) for a in range(3)]
        axes[i] = FeedbackAxis(enabled=True, voltage_gain=float(k), routing_electrode=j)
        cfg = replace(config, feedback=FeedbackConfig(tuple(axes)))
        tr = simulate(sched, cfg, seed, 0, keys=("crosscool", i))
        evals += 1
        if tr.lost:
            return np.inf
        x = channel(tr, cfg, i)[n_burn:]
        if not np.all(np.isfinite(x)):
            return np.inf
        seg = min(segment, x.size)
        half = max(10 * reference_gain / (2 * np.pi), 8 * fs / seg)
        return max(_peak_variance(x, fs, config.trap.omega[i], half, seg), 1e-300)

    for i in target_axes:
        v_ref = variance(i, i, k_ref[i])
        if not np.isfinite(v_ref):
            raise CalibrationError(f"reference cooling of axis {i} lost the particle")
        gains[i, i] = k_ref[i]
        for j in range(3):
            if j == i:
                continue

            def f(x, s):
                v = variance(i, j, s * np.exp(x))
                return np.log(v / v_ref) if np.isfinite(v) else np.inf

            root = None
            for sign in (1.0, -1.0):
                root = _bracket_and_solve(lambda x: f(x, sign), np.log(k_ref[i] * start_fraction), tol, max_iter)
                if root is not None:
                    break
            if root is None:
                # no gain of either sign matches: check that even a very strong
                # loop cannot reach the reference, which bounds |C_ij / C_ii|
                # (scaled by the diagonal transductions so that the loop does not
                # squash its own error signal through detector cross-sensitivity)
                x_top = np.log(k_ref[i] * top_fraction * cnv[i] / cnv[j])
                if min(f(x_top, 1.0), f(x_top, -1.0)) <= 0:
                    raise CalibrationError(f"no matching gain for mode {i} via electrode {j}")
                lim = cnv[j] / (cnv[i] * top_fraction)
                log.info("electrode %d does not cool mode %d; |C_ij/C_ii| < %.1e", j, i, lim)
                R[i, j] = 0.0
                sigma_rel[i, j] = 0.0
                bound[i, j] = lim
                continue
            x, fx, slope = root
            gains[i, j] = sign * np.exp(x)
            flipped[i, j] = sign < 0
            R[i, j] = k_ref[i] / gains[i, j]
            sigma_rel[i, j] = abs(fx / slope) if slope else tol
    ninv = normalized_inverse(R)
    # first-order propagation of the per-ratio uncertainty
    unc = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            if i == j or sigma_rel[i, j] == 0:
                continue
            dR = np.zeros((3, 3))
            h = 1e-6 * abs(R[i, j])
            dR[i, j] = h
            J = (normalized_inverse(R + dR) - normalized_inverse(R - dR)) / (2 * h)
            unc += (J * sigma_rel[i, j] * abs(R[i, j])) ** 2
    for i, j in zip(*np.nonzero(bound)):
        dR = np.zeros((3, 3))
        dR[i, j] = bound[i, j]
        unc += (normalized_inverse(R + dR) - ninv) ** 2
    ratios = np.where(np.isfinite(gains), k_ref[:, None] / np.where(np.isfinite(gains), gains, 1.0), np.nan)
    return CrossTalkEstimate(ninv, np.sqrt(unc), R, ratios, flipped, evals)


def _bracket_and_solve(f, x0, tol, max_iter, factor=np.log(10.0), max_expand=10):
    """Root of a decreasing function f(log gain); None if it cannot be bracketed.

    Returns (x, f(x), local slope).
    """
    f0 = f(x0)
    pts = [(x0, f0)]
    if abs(f0) < np.log1p(tol):
        return x0, f0, -1.0
    if f0 > 0:
        lo, flo = x0, f0
        hi = None
        x, fx = x0, f0
        for _ in range(max_expand):
            xn = x + factor
            fn = f(xn)
            pts.append((xn, fn))
            if not fn < fx:
                # more gain did not help: wrong sign
                return None
            if fn <= 0:
                hi, fhi = xn, fn
                break
            lo, flo, x, fx = xn, fn, xn, fn
        if hi is None:
            return None
    else:
        hi, fhi = x0, f0
        lo = None
        x, fx = x0, f0
        for _ in range(max_expand):
            xn = x - factor
            fn = f(xn)
            pts.append((xn, fn))
            if fn >= 0:
                lo, flo = xn, fn
                break
            if not fn > fx:
                return None
            hi, fhi, x, fx = xn, fn, xn, fn
        if lo is None:
            return None
    a, fa, b, fb = lo, flo, hi, fhi
    x1, f1 = (a, fa) if abs(fa) < abs(fb) else (b, fb)
    x2, f2 = (b, fb) if x1 == a else (a, fa)
    for _ in range(max_iter):
        if np.isfinite(f1) and np.isfinite(f2) and f1 != f2:
            xn = x1 - f1 * (x1 - x2) / (f1 - f2)
        else:
            xn = 0.5 * (a + b)
        if not (min(a, b) < xn < max(a, b)):
            xn = 0.5 * (a + b)
        fn = f(xn)
        if fn > 0:
            a, fa = xn, fn
        else:
            b, fb = xn, fn
        x2, f2, x1, f1 = x1, f1, xn, fn
        if abs(fn) < np.log1p(tol):
            slope = (f1 - f2) / (x1 - x2) if np.isfinite(f2) and x1 != x2 else -1.0
            return xn, fn, slope
    return None


# ------------------------------------------------------------------ recompression


@dataclass
class RecompressionResult:
    tp_nominal: np.ndarray
    tp_applied: np.ndarray
    max_std: np.ndarray
    max_std_error: np.ndarray
    tp_min_nominal: float
    tp_min_corrected: float
    predicted: float
    offset: float


def recompression_experiment(tau: float, tp_values, config: SimConfig, seed: int = 0, *, repetitions: int = 150,
                             offset: float = 0.0, axis: int = 2, timing: dict | None = None,
                             antithetic: bool = True, fit_duration: float = 25e-6) -> RecompressionResult:
    """Ensemble width after free(tau) - trap(t_p) - free(tau) as a function of t_p.

    ``offset`` models an instrument delay: the pulse physically lasts
    t_p - offset, so the minimum appears ``offset`` later on the nominal axis
    and the corrected axis subtracts it again. All t_p points reuse the same
    repetitions (initial states and noise), and by default odd repetitions
    start from the quarter-turned state of their even partner, which removes
    sampling anisotropy of the initial ensemble.
    """
    tps = np.asarray(tp_values, dtype=float)
    timing = IDEAL_SWITCHING if timing is None else timing
    omega = config.trap.omega[axis]
    smax = np.full(tps.size, np.nan)
    serr = np.full(tps.size, np.nan)
    post = settle_time(PulseSchedule(**timing)) + fit_duration + 1e-6
    for k, tp in enumerate(tps):
        sched = recompression_schedule(tau, tp - offset, post=post, **timing)
        fits = run_ensemble(sched, config, seed, repetitions, keys=("recompress",),
                            reducer=lambda tr, s=sched: post_recapture_fit(tr, s, config, axis, fit_duration),
                            antithetic=antithetic)
        fits = [f for f in fits if f is not None]
        if len(fits) < 10:
            continue
        st = analysis.ensemble_stats(fits, omega, config.mass)
        smax[k], serr[k] = st.max_std, st.max_std_error
    k = int(np.nanargmin(smax))
    t_min = float(tps[k])
    return RecompressionResult(tps, tps - offset, smax, serr, t_min, t_min - offset,
                               analytics.recompression_time(tau, omega, 1), offset)


# ----------------------------------------------------------------------- reheating


@dataclass
class ReheatingResult:
    biases: np.ndarray
    times: np.ndarray
    mean_energy: np.ndarray
    rates: np.ndarray
    rate_errors: np.ndarray


def reheating_experiment(bias_voltages, duration: float, config: SimConfig, seed: int = 0, *,
                         repetitions: int = 500, axis: int = 2, window: float = 40e-6) -> ReheatingResult:
    """Energy growth with the feedback on ``axis`` disabled, for each DC bias triple.

    Energy is m W^2 times the 40 us moving variance of the channel; the rate
    is a straight-line fit over the interior of the record, averaged over
    repetitions. Every bias uses the same repetitions, so differences
    between biases are not masked by independent thermal scatter.
    """
    biases = np.atleast_2d(np.asarray(bias_voltages, dtype=float))
    omega = config.trap.omega[axis]
    fs = config.detector.sample_rate
    m = config.mass
    nwin = int(round(window * fs))
    rates, errs, curves = [], [], []
    times = None
    for b in biases:
        sched = PulseSchedule(events=(Event(0.0, Action.FEEDBACK_OFF, (axis,)),), total_duration=duration,
                              initial_voltages=tuple(b))

        def reduce(tr):
            if tr.lost:
                return None
            E = m * omega**2 * analysis.moving_variance(channel(tr, config, axis), window, fs)
            sl = slice(nwin, E.size - nwin)
            slope = np.polyfit(tr.times[sl], E[sl], 1)[0]
            return tr.times, E, slope

        res = [r for r in run_ensemble(sched, config, seed, repetitions, keys=("reheat",), reducer=reduce)
               if r is not None]
        if not res:
            raise CalibrationError("particle lost in every repetition")
        times = res[0][0]
        curves.append(np.mean([r[1] for r in res], axis=0))
        s = np.array([r[2] for r in res])
        rates.append(s.mean())
        errs.append(s.std(ddof=1) / np.sqrt(s.size) if s.size > 1 else np.nan)
    return ReheatingResult(biases, times, np.array(curves), np.array(rates), np.array(errs))


# -------------------------------------------------------------------- nonlinearity


@dataclass
class NonlinearityResult:
    scan: ScanResult
    parabola: analysis.ParabolaFit
    gaussian: analysis.GaussianFit
    deviation_sigma: np.ndarray
    onset_voltage: float
    onset_displacement: float
    transduction: float


def nonlinearity_scan(v_range_wide, tau: float, config: SimConfig, seed: int = 0, *, axis: int = 2,
                      n_points: int = 41, repetitions: int = 5, inner_fraction: float = 0.25,
                      shape=TrapShape.GAUSSIAN_BEAM, threshold: float = 3.0, **scan_kw) -> NonlinearityResult:
    """Wide compensation scan in an anharmonic trap and the displacement where it leaves the parabola.

    A parabola is fitted to the central ``inner_fraction`` of the range and a
    Gaussian to all points. The onset is the smallest |V - V_opt| beyond which
    the mean energy stays more than ``threshold`` standard errors away from
    the extrapolated parabola, counting both the scatter of each point and
    the uncertainty of the extrapolation. It is converted to a displacement
    with the free-flight relation.
    """
    cfg = config if shape is None else replace(config, trap=config.trap.with_shape(shape))
    scan = compensation_scan(axis, v_range_wide, n_points, tau, repetitions, cfg, seed, keys=("nonlin",), **scan_kw)
    V = scan.voltages
    lo, hi = V.min(), V.max()
    centre = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo) * inner_fraction
    valid = ~scan.excluded
    inner = valid & (np.abs(V - centre) <= half)
    if np.count_nonzero(inner) < 4:
        raise CalibrationError("fewer than four valid points in the inner range")
    Vi = np.repeat(V[inner], repetitions)
    Ei = scan.energies[inner].ravel()
    ok = np.isfinite(Ei)
    par = analysis.fit_parabola(Vi[ok], Ei[ok])
    gau = analysis.fit_gaussian(V[valid], scan.mean_energies[valid])
    sem = np.nanstd(scan.energies, axis=1, ddof=1) / np.sqrt(repetitions)
    # extrapolating the inner parabola carries its own uncertainty, which
    # dominates far out where the per-point scatter is small
    u = (V - centre) / half
    coef, cov = np.polyfit((Vi[ok] - centre) / half, Ei[ok], 2, cov=True)
    J = np.stack([u**2, u, np.ones_like(u)], axis=1)
    pred_var = np.einsum("ij,jk,ik->i", J, cov, J)
    sigma = np.sqrt(sem**2 + pred_var)
    dev = (np.polyval(coef, u) - scan.mean_energies) / np.where(sigma > 0, sigma, np.inf)
    cnv = abs(effective_transduction(cfg, axis, scan_kw.get("correction")))
    order = np.argsort(np.abs(V - par.v_opt))
    onset_v = float("nan")
    flagged = valid & (np.abs(dev) > threshold)
    # smallest distance from which every farther point on that side deviates
    for k in order:
        if not flagged[k]:
            continue
        side = np.sign(V[k] - par.v_opt)
        farther = valid & (np.sign(V - par.v_opt) == side) & (np.abs(V - par.v_opt) >= abs(V[k] - par.v_opt))
        if np.all(flagged[farther]):
            onset_v = float(abs(V[k] - par.v_opt))
            break
    onset_d = float(analytics.displacement_from_voltage(cnv, onset_v, tau, cfg.mass)) if np.isfinite(onset_v) \
        else float("nan")
    return NonlinearityResult(scan, par, gau, dev, onset_v, onset_d, cnv)


# -------------------------------------------------------------------------- charge


@dataclass
class ChargeMeasurement:
    amplitude: float
    phase: float
    inferred_charge: float
    unit_response: float
    susceptibility: complex


def susceptibility(omega_drive: float, omega0: float, mass: float, damping: float) -> complex:
    """Displacement per force of a damped oscillator, x = chi F."""
    return 1.0 / (mass * (omega0**2 - omega_drive**2 - 1j * damping * omega_drive))


def charge_measure(drive_amplitude: float, drive_frequency: float, duration: float, config: SimConfig,
                   seed: int = 0, *, axis: int = 2, rep: int = 0, settle: float = 100e-6) -> ChargeMeasurement:
    """Lock-in response of the ``axis`` channel to a sinusoidal drive on the matching electrode.

    The in-phase component relative to the expected response is signed, so
    charge steps of either sign can be histogrammed. |q| is inferred from the
    calibrated per-charge field G_aa and the feedback-damped susceptibility.
    """
    f_modes = config.trap.omega / (2 * np.pi)
    if np.any(np.abs(f_modes - drive_frequency) < 5 / duration):
        raise DomainError("drive frequency must be detuned from all trap modes")
    amp = np.zeros(3)
    amp[axis] = drive_amplitude
    sched = PulseSchedule(total_duration=settle + duration, drive_amplitude=tuple(amp),
                          drive_frequency=drive_frequency)
    tr = simulate(sched, config, seed, rep, keys=("charge",))
    if tr.lost:
        raise CalibrationError("particle lost during the charge measurement")
    sl = tr.window(settle, settle + duration)
    t = tr.times[sl]
    x = channel(tr, config, axis)[sl]
    w = np.hanning(t.size)
    z = 2 * np.sum(w * x * np.exp(-1j * 2 * np.pi * drive_frequency * t)) / np.sum(w)
    # x = A sin(wt + phi) demodulates to A exp(i(phi - pi/2))
    response = 1j * z
    ax = config.feedback.axes[axis]
    gam = config.environment.gamma
    if ax.enabled and ax.routing_electrode == axis and config.particle.charge_q != 0:
        gam += ax.gain
    chi = susceptibility(2 * np.pi * drive_frequency, config.trap.omega[axis], config.mass, gam)
    G = config.electrodes.geometry_G[axis, axis]
    unit = E_CHARGE * G * drive_amplitude * chi
    signed = float(np.real(response * np.conj(unit) / abs(unit)))
    return ChargeMeasurement(signed, float(np.angle(response)), float(abs(response) / abs(unit)),
                             float(abs(unit)), chi)


@dataclass
class ChargeSteps:
    charges: np.ndarray
    amplitudes: np.ndarray
    steps: np.ndarray
    unit_response: float
    histogram: np.ndarray
    bin_edges: np.ndarray
    spacing: float


def charge_steps(charge_sequence, drive_amplitude: float, drive_frequency: float, duration: float,
                 config: SimConfig, seed: int = 0, **kw) -> ChargeSteps:
    """Lock-in amplitude across a sequence of charge states and the histogram of its jumps.

    The spacing is the median non-zero jump divided by its nearest integer
    number of charges, i.e. the single-charge response.
    """
    qs = np.asarray(charge_sequence, dtype=int)
    amps = []
    unit = None
    for k, q in enumerate(qs):
        cfg = config.with_charge(int(q))
        if q == 0:
            # a neutral particle cannot be cooled electrically
            cfg = replace(cfg, feedback=FeedbackConfig(tuple(replace(a, enabled=False) for a in cfg.feedback.axes)))
        meas = charge_measure(drive_amplitude, drive_frequency, duration, cfg, seed, rep=k, **kw)
        amps.append(meas.amplitude)
        unit = meas.unit_response
    amps = np.asarray(amps)
    steps = np.diff(amps)
    big = steps[np.abs(steps) > 0.5 * unit]
    n = np.maximum(np.round(np.abs(big) / unit), 1)
    spacing = float(np.median(np.abs(big) / n)) if big.size else float("nan")
    hist, edges = np.histogram(steps, bins=(np.arange(-10, 11) + 0.5) * unit)
    return ChargeSteps(qs, amps, steps, unit, hist, edges, spacing)


# --------------------------------------------------------------------------- drift


def apply_environment_drift(config: SimConfig, session_time: float) -> SimConfig:
    """Configuration with the axial stray field set by the drift model at ``session_time``.

    The drift is specified in volt equivalents of the cross-talk-corrected
    axial scan, whose transduction is 1 / (C^-1)_zz; the optimum of that scan
    then follows V_f + V_0 exp(-t / RC) (plus any other constant forces).
    """
    env = config.environment
    if env.drift is None:
        return config
    v = env.drift.value(session_time)
    cz = effective_transduction(config, 2)
    E = np.array(env.stray_field_E, dtype=float)
    E[2] = -v * cz / config.particle.charge
    return replace(config, environment=replace(env, stray_field_E=E))
