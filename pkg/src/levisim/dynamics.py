"""Stochastic time-domain simulation through trap/feedback/voltage schedules."""
from __future__ import annotations

import enum
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import _kernel
from .core import (
    KB,
    DomainError,
    ElectrodeSystem,
    Environment,
    Particle,
    StateVector,
    TrapField,
    TrapShape,
    epstein_damping,
    static_equilibrium,
    total_force,
    zero_point_motion,
)
from .rng import rep_streams, substream

CHUNK = 1 << 15
_SHAPE_CODE = {
    TrapShape.HARMONIC: _kernel.SHAPE_HARMONIC,
    TrapShape.GAUSSIAN_BEAM: _kernel.SHAPE_GAUSSIAN_BEAM,
    TrapShape.GAUSSIAN_WAIST: _kernel.SHAPE_GAUSSIAN_WAIST,
}


class IntegratorError(RuntimeError):
    pass


class Action(str, enum.Enum):
    TRAP_OFF = "TRAP_OFF"
    TRAP_ON = "TRAP_ON"
    FEEDBACK_OFF = "FEEDBACK_OFF"
    FEEDBACK_ON = "FEEDBACK_ON"
    SET_DC_VOLTAGES = "SET_DC_VOLTAGES"


@dataclass(frozen=True)
class Event:
    time: float
    action: Action
    # voltages for SET_DC_VOLTAGES, axis tuple for feedback toggles
    payload: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "action", Action(self.action))
        object.__setattr__(self, "payload", tuple(self.payload))


@dataclass(frozen=True)
class PulseSchedule:
    events: tuple = ()
    total_duration: float = 0.0
    trap_rise_fall: float = 170e-9
    trap_trigger_delay: float = 380e-9
    feedback_switch_delay: float = 50e-9
    initial_voltages: tuple = (0.0, 0.0, 0.0)
    trap_initially_on: bool = True
    feedback_initially_on: bool = True
    # optional sinusoidal drive added to the DC voltages: amplitude per electrode (V)
    drive_amplitude: tuple = (0.0, 0.0, 0.0)
    drive_frequency: float = 0.0

    def __post_init__(self):
        evs = tuple(e if isinstance(e, Event) else Event(*e) for e in self.events)
        object.__setattr__(self, "events", evs)
        times = [e.time for e in evs]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise DomainError("schedule event times must be strictly increasing")
        if evs and self.total_duration < times[-1]:
            raise DomainError("total_duration precedes the last event")
        if self.trap_rise_fall < 0 or self.trap_trigger_delay < 0 or self.feedback_switch_delay < 0:
            raise DomainError("switching times must be non-negative")

    def envelope(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        level = np.full(t.shape, 1.0 if self.trap_initially_on else 0.0)
        for ev in self.events:
            if ev.action not in (Action.TRAP_OFF, Action.TRAP_ON):
                continue
            start = ev.time + self.trap_trigger_delay
            if self.trap_rise_fall > 0:
                ramp = np.clip((t - start) / self.trap_rise_fall, 0.0, 1.0)
            else:
                ramp = (t >= start).astype(float)
            level = level + (ramp if ev.action is Action.TRAP_ON else -ramp)
        return np.clip(level, 0.0, 1.0)

    def feedback_mask(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        mask = np.full(t.shape + (3,), self.feedback_initially_on)
        for ev in self.events:
            if ev.action not in (Action.FEEDBACK_OFF, Action.FEEDBACK_ON):
                continue
            axes = list(ev.payload) if ev.payload else [0, 1, 2]
            after = t >= ev.time + self.feedback_switch_delay
            for a in axes:
                mask[after, a] = ev.action is Action.FEEDBACK_ON
        return mask

    def voltages(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.broadcast_to(np.asarray(self.initial_voltages, float), t.shape + (3,)).copy()
        for ev in self.events:
            if ev.action is Action.SET_DC_VOLTAGES:
                out[t >= ev.time] = np.asarray(ev.payload, dtype=float)
        if self.drive_frequency > 0 and any(self.drive_amplitude):
            out += np.sin(2 * np.pi * self.drive_frequency * t)[..., None] * np.asarray(self.drive_amplitude, float)
        return out

    def release_time(self) -> float | None:
        for ev in self.events:
            if ev.action is Action.TRAP_OFF:
                return ev.time
        return None

    def recapture_time(self) -> float | None:
        """Time of the last TRAP_ON event (the final recapture)."""
        for ev in reversed(self.events):
            if ev.action is Action.TRAP_ON:
                return ev.time
        return None


def release_recapture(tau: float, pre: float = 40e-6, post: float = 40e-6, voltages=(0.0, 0.0, 0.0),
                      **timing) -> PulseSchedule:
    """cool -> release for ``tau`` -> recapture, feedback stays off after release."""
    events = [Event(pre, Action.FEEDBACK_OFF), Event(pre + 1e-12, Action.TRAP_OFF)]
    events.append(Event(pre + 1e-12 + tau, Action.TRAP_ON))
    return PulseSchedule(events=tuple(events), total_duration=pre + tau + post,
                         initial_voltages=tuple(voltages), **timing)


def recompression_schedule(tau: float, tp: float, pre: float = 10e-6, post: float = 25e-6,
                           voltages=(0.0, 0.0, 0.0), **timing) -> PulseSchedule:
    """free(tau) -> trapped(tp) -> free(tau) -> recapture."""
    t0 = pre + 1e-12
    events = (Event(pre, Action.FEEDBACK_OFF), Event(t0, Action.TRAP_OFF),
              Event(t0 + tau, Action.TRAP_ON), Event(t0 + tau + tp, Action.TRAP_OFF),
              Event(t0 + 2 * tau + tp, Action.TRAP_ON))
    return PulseSchedule(events=events, total_duration=t0 + 2 * tau + tp + post,
                         initial_voltages=tuple(voltages), **timing)


IDEAL_SWITCHING = dict(trap_rise_fall=0.0, trap_trigger_delay=0.0, feedback_switch_delay=0.0)


@dataclass(frozen=True)
class FeedbackAxis:
    enabled: bool = True
    gain: float = 0.0
    routing_electrode: int = 0
    bandwidth: float = 2e6
    extra_delay: float = 0.0
    # explicit volts per (m/s); overrides ``gain`` when set
    voltage_gain: float | None = None

    def __post_init__(self):
        if self.gain < 0:
            raise DomainError("feedback gain must be non-negative")
        if self.routing_electrode not in (0, 1, 2):
            raise DomainError("routing_electrode must be 0, 1 or 2")
        if self.extra_delay < 0 or self.bandwidth <= 0:
            raise DomainError("feedback bandwidth must be positive and delay non-negative")


@dataclass(frozen=True)
class FeedbackConfig:
    axes: tuple = (FeedbackAxis(routing_electrode=0), FeedbackAxis(routing_electrode=1),
                   FeedbackAxis(routing_electrode=2))

    def with_axis(self, i: int, **changes) -> "FeedbackConfig":
        axes = list(self.axes)
        axes[i] = replace(axes[i], **changes)
        return FeedbackConfig(tuple(axes))


@dataclass(frozen=True)
class DetectorModel:
    gain: tuple = (1e6, 1e6, 1e6)
    # one row per channel: forward-x, forward-y, homodyne-z
    weights: tuple = ((1.0, 0.05, 0.05), (0.05, 1.0, 0.05), (0.01, 0.01, 1.0))
    noise_psd: tuple = ((1e6 * 1e-14) ** 2, (1e6 * 1e-14) ** 2, (1e6 * 2e-15) ** 2)
    sample_rate: float = 10e6

    def __post_init__(self):
        if np.any(np.asarray(self.gain) == 0):
            raise DomainError("detector gains must be non-zero")
        if np.asarray(self.weights).shape != (3, 3):
            raise DomainError("detector weights must be 3x3")
        if np.any(np.asarray(self.noise_psd) < 0):
            raise DomainError("detector noise_psd must be non-negative")


@dataclass(frozen=True)
class SupplyNoise:
    """DC supply noise: range-dependent white noise plus relative fluctuations."""
    enabled: bool = False
    ranges: tuple = (1.0, 10.0, 100.0)
    # white amplitude spectral density (V/sqrt(Hz)) of each output range
    absolute_asd: tuple = (1e-8, 1e-7, 1e-6)
    fractional: float = 1e-6
    fractional_bandwidth: float = 1e6

    def absolute_std(self, v: np.ndarray, dt: float) -> np.ndarray:
        ranges = np.asarray(self.ranges)
        asd = np.asarray(self.absolute_asd)
        idx = np.searchsorted(ranges, np.abs(v) - 1e-12, side="left")
        idx = np.clip(idx, 0, len(ranges) - 1)
        return asd[idx] * np.sqrt(0.5 / dt)


@dataclass(frozen=True)
class SimConfig:
    particle: Particle
    trap: TrapField
    electrodes: ElectrodeSystem
    environment: Environment
    detector: DetectorModel = DetectorModel()
    feedback: FeedbackConfig = FeedbackConfig()
    supply: SupplyNoise = SupplyNoise()
    dt: float = 5e-9
    initial_nbar: tuple = (1000.0, 1000.0, 117.0)
    loss_factor: float = 5.0
    # integrator time step must satisfy dt * Omega_max <= max_phase_step
    max_phase_step: float = 0.1

    def __post_init__(self):
        if abs(self.trap.mass - self.particle.mass) > 1e-12 * self.particle.mass:
            raise DomainError("trap and particle masses differ")
        if self.electrodes.charge_q != self.particle.charge_q:
            raise DomainError("electrode charge does not match particle charge")
        if self.dt <= 0:
            raise DomainError("dt must be positive")
        if self.dt * np.max(self.trap.omega) > self.max_phase_step + 1e-12:
            raise DomainError("dt * Omega_max exceeds 0.1")
        fs = self.detector.sample_rate
        if fs < 10 * np.max(self.trap.omega) / (2 * np.pi):
            raise DomainError("detector sample_rate must be at least 10x the highest mechanical frequency")
        K = 1.0 / (fs * self.dt)
        if abs(K - round(K)) > 1e-6 or round(K) < 1:
            raise DomainError("the sample period must be an integer number of time steps")
        for i, ax in enumerate(self.feedback.axes):
            if ax.enabled and ax.bandwidth <= self.trap.omega[i] / (2 * np.pi):
                raise DomainError(f"feedback bandwidth on axis {i} must exceed its mechanical frequency")

    @property
    def mass(self) -> float:
        return self.particle.mass

    @property
    def steps_per_sample(self) -> int:
        return int(round(1.0 / (self.detector.sample_rate * self.dt)))

    @property
    def loss_radius(self) -> float:
        return self.loss_factor * self.trap.rayleigh_zR

    def voltage_gains(self) -> np.ndarray:
        """Volts per (m/s) commanded on each axis' routing electrode."""
        C = self.electrodes.transduction_C
        k = np.zeros(3)
        for i, ax in enumerate(self.feedback.axes):
            if not ax.enabled:
                continue
            if ax.voltage_gain is not None:
                k[i] = ax.voltage_gain
            elif ax.gain > 0:
                cij = C[i, ax.routing_electrode]
                if cij == 0:
                    raise DomainError(f"electrode {ax.routing_electrode} exerts no force on axis {i}")
                k[i] = self.mass * ax.gain / cij
        return k

    def replace(self, **changes) -> "SimConfig":
        return replace(self, **changes)

    def with_charge(self, q: int) -> "SimConfig":
        return replace(self, particle=replace(self.particle, charge_q=int(q)),
                       electrodes=self.electrodes.with_charge(int(q)))


def default_config(**overrides) -> SimConfig:
    """Setup with the experiment's nominal parameters (see README for sources)."""
    from .core import denormalize_inverse

    particle = Particle()
    trap = TrapField.from_frequencies([302e3, 268e3, 92e3], particle.mass)
    ninv = np.array([[1.0, 0.32, -37.0], [0.36, 1.0, 4.4], [0.0011, -0.0012, 1.0]])
    C = denormalize_inverse(ninv, [1e-18, 1e-18, 1e-16])
    electrodes = ElectrodeSystem.from_force_matrix(C, particle.charge_q)
    gamma = epstein_damping(1e-7, particle.diameter, particle.mass)
    recoil = 2 * particle.mass * gamma * KB * 300.0
    env = Environment(pressure=1e-7, gamma=gamma, recoil_Dp=np.full(3, recoil))
    cfg = SimConfig(particle=particle, trap=trap, electrodes=electrodes, environment=env)
    gains = stationary_feedback_gains(cfg)
    fb = FeedbackConfig(tuple(FeedbackAxis(gain=float(g), routing_electrode=i) for i, g in enumerate(gains)))
    cfg = replace(cfg, feedback=fb)
    return replace(cfg, **overrides) if overrides else cfg


def stationary_feedback_gains(config: SimConfig, nbar=None) -> np.ndarray:
    """Cold-damping rates that hold each mode at occupation ``nbar`` against gas and recoil heating.

    Balances dE/dt = D / 2m - (gamma + gamma_fb) E at E = hbar W (nbar + 1/2).
    Detector-noise heating is ignored; it is negligible at the default imprecision.
    """
    from .core import HBAR

    nbar = np.asarray(config.initial_nbar if nbar is None else nbar, dtype=float)
    env = config.environment
    m = config.mass
    D = env.gas_diffusion(m) + np.asarray(env.recoil_Dp, dtype=float)
    E = HBAR * config.trap.omega * (nbar + 0.5)
    return np.maximum(D / (2 * m * E) - env.gamma, 0.0)


@dataclass
class Trajectory:
    times: np.ndarray
    positions: np.ndarray
    momenta: np.ndarray
    detector: np.ndarray
    envelope: np.ndarray
    feedback_voltage: np.ndarray
    lost: bool = False
    lost_time: float | None = None
    initial_state: np.ndarray = field(default=None)

    @property
    def states(self) -> list[StateVector]:
        return [StateVector(r, p) for r, p in zip(self.positions, self.momenta)]

    def window(self, t0: float, t1: float) -> slice:
        i0 = int(np.searchsorted(self.times, t0, side="left"))
        i1 = int(np.searchsorted(self.times, t1, side="left"))
        return slice(i0, i1)


def sample_thermal_state(nbar, trap: TrapField, particle: Particle | None = None,
                         rng_seed: int | np.random.Generator = 0) -> StateVector:
    """Gaussian draw from an uncorrelated thermal state about the origin."""
    nbar = np.broadcast_to(np.asarray(nbar, dtype=float), (3,))
    if np.any(nbar < 0):
        raise DomainError("occupation must be non-negative")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else substream(rng_seed, "thermal")
    m = trap.mass if particle is None else particle.mass
    zzp = zero_point_motion(m, trap.omega)
    sr = zzp * np.sqrt(2 * nbar + 1)
    sp = m * trap.omega * sr
    xi = rng.standard_normal(6)
    return StateVector(sr * xi[:3], sp * xi[3:])


def _rotate_quarter(state: np.ndarray, trap: TrapField) -> np.ndarray:
    """Quarter turn in each axis' scaled phase plane: (r, p) -> (-p/(m W), m W r)."""
    mw = trap.mass * trap.omega
    r, p = state[:3], state[3:]
    return np.concatenate([-p / mw, mw * r])


def step(state: StateVector, t: float, dt: float, config: SimConfig, rng: np.random.Generator,
         voltages=(0.0, 0.0, 0.0), envelope: float = 1.0, feedback_force=(0.0, 0.0, 0.0)) -> StateVector:
    """One BAOAB step of m r'' = F - gamma p + xi.

    Plain-numpy reference for the compiled loop used by :func:`simulate`.
    """
    trap = config.trap
    if dt * np.max(trap.omega) > config.max_phase_step + 1e-12:
        raise DomainError("dt * Omega_max exceeds 0.1")
    m = config.mass
    env = config.environment

    def force(r):
        return total_force(r, config.particle, trap, config.electrodes, env, voltages, envelope,
                           feedback_force)

    r = state.position.copy()
    p = state.momentum.copy()
    p = p + 0.5 * dt * force(r)
    r = r + 0.5 * dt * p / m
    D = env.gas_diffusion(m) + env.recoil_Dp * envelope
    if env.gamma > 0:
        c = np.exp(-env.gamma * dt)
        s2 = -np.expm1(-2 * env.gamma * dt) / (2 * env.gamma)
    else:
        c, s2 = 1.0, dt
    p = c * p + np.sqrt(D * s2) * rng.standard_normal(3)
    r = r + 0.5 * dt * p / m
    p = p + 0.5 * dt * force(r)
    if not (np.all(np.isfinite(r)) and np.all(np.isfinite(p))):
        raise IntegratorError(f"non-finite state after step at t={t:.6g} s: r={r}, p={p}")
    return StateVector(r, p)


def estimate_velocity(history, dt: float, bandwidth: float, detector_gain: float = 1.0) -> np.ndarray:
    """Band-limited derivative of a detector trace, H(s) = s wc / (s + wc)."""
    y = np.asarray(history, dtype=float) / detector_gain
    wc = 2 * np.pi * bandwidth
    a = -np.expm1(-wc * dt)
    s = y[0]
    out = np.empty_like(y)
    for n, yn in enumerate(y):
        out[n] = wc * (yn - s)
        s += a * (yn - s)
    return out


def cold_damping_force(velocity_estimate, config: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    """Electrode voltages commanded by velocity feedback and the force they exert.

    ``velocity_estimate`` holds one estimate per trap axis; disabled axes
    command nothing. Every cross-talk term of C acts on the result.
    """
    v = np.asarray(velocity_estimate, dtype=float)
    k = config.voltage_gains()
    V = np.zeros(3)
    for i, ax in enumerate(config.feedback.axes):
        if ax.enabled:
            V[ax.routing_electrode] += -k[i] * v[i]
    return V, config.electrodes.transduction_C @ V


def _initial_state(config: SimConfig, schedule: PulseSchedule, streams, initial_state, antithetic_of):
    r_eq = static_equilibrium(config.particle, config.trap, config.electrodes, config.environment,
                              schedule.initial_voltages) if schedule.trap_initially_on else np.zeros(3)
    if initial_state is not None:
        x0 = np.asarray(initial_state.as_array() if isinstance(initial_state, StateVector) else initial_state,
                        dtype=float)
        return x0
    if antithetic_of is not None:
        base = sample_thermal_state(config.initial_nbar, config.trap, config.particle, antithetic_of).as_array()
        x = _rotate_quarter(base, config.trap)
    else:
        x = sample_thermal_state(config.initial_nbar, config.trap, config.particle, streams["init"]).as_array()
    x[:3] += r_eq
    return x


def simulate(schedule: PulseSchedule, config: SimConfig, seed: int = 0, rep: int = 0, keys: Sequence = (),
             initial_state=None, antithetic: bool = False) -> Trajectory:
    """Integrate one trajectory through ``schedule``.

    Bit-reproducible for fixed (seed, keys, rep). With ``antithetic`` an odd
    repetition starts from the quarter-turned initial state of its even
    partner; the noise streams remain its own.
    """
    dt = config.dt
    K = config.steps_per_sample
    n_samples = int(np.floor(schedule.total_duration / (K * dt) + 1e-9))
    n_steps = n_samples * K
    streams = rep_streams(seed, *keys, rep)
    partner = None
    if antithetic and rep % 2 == 1 and initial_state is None:
        partner = rep_streams(seed, *keys, rep - 1)["init"]
    x0 = _initial_state(config, schedule, streams, initial_state, partner)

    trap = config.trap
    env = config.environment
    m = config.mass
    C = np.ascontiguousarray(config.electrodes.transduction_C)
    Fconst = env.constant_force(config.particle).astype(float)
    Dgas = env.gas_diffusion(m)
    recoil = np.asarray(env.recoil_Dp, dtype=float)
    fb_axes = config.feedback.axes
    fb_k = config.voltage_gains()
    fb_route = np.array([a.routing_electrode for a in fb_axes], dtype=np.int64)
    fb_wc = np.array([2 * np.pi * a.bandwidth for a in fb_axes])
    fb_delay = np.array([int(round(a.extra_delay / dt)) for a in fb_axes], dtype=np.int64)
    fb_enabled = np.array([a.enabled for a in fb_axes])
    det = config.detector
    det_gain = np.asarray(det.gain, dtype=float)
    det_w = np.ascontiguousarray(np.asarray(det.weights, dtype=float))
    det_std = np.sqrt(np.asarray(det.noise_psd, dtype=float) * 0.5 / dt)
    use_det_noise = bool(np.any(det_std > 0))
    supply = config.supply
    use_supply = bool(supply.enabled)
    ou_decay = float(np.exp(-2 * np.pi * supply.fractional_bandwidth * dt))
    use_force_noise = Dgas > 0 or np.any(recoil > 0)

    r = x0[:3].copy()
    p = x0[3:].copy()
    # start the velocity filter settled on the initial detector reading
    filt = (det_w @ r) * 1.0
    ou = np.zeros(3)
    if use_supply:
        ou = streams["supply"].standard_normal(3)
    vbuf = np.zeros((3, int(fb_delay.max()) + 1))
    bufpos = np.zeros(1, dtype=np.int64)
    det_acc = np.zeros(3)

    out_pos = np.full((n_samples, 3), np.nan)
    out_mom = np.full((n_samples, 3), np.nan)
    out_det = np.full((n_samples, 3), np.nan)
    out_env = np.full(n_samples, np.nan)
    out_vfb = np.full((n_samples, 3), np.nan)

    empty = np.zeros((0, 3))
    status = _kernel.STATUS_OK
    lost_time = None
    done = 0
    while done < n_steps:
        n = min(CHUNK, n_steps - done)
        t_start = dt * (done + np.arange(n))
        env_mid = schedule.envelope(t_start + 0.5 * dt)
        mask = (schedule.feedback_mask(t_start) & fb_enabled[None, :]).astype(np.uint8)
        vdc = schedule.voltages(t_start)
        xi_force = streams["force"].standard_normal((n, 3)) if use_force_noise else np.zeros((n, 3))
        xi_det = streams["detector"].standard_normal((n, 3)) if use_det_noise else empty
        if use_supply:
            abs_std = supply.absolute_std(vdc, dt)
            xi = streams["supply"].standard_normal((n, 6))
            xi_abs, xi_frac = np.ascontiguousarray(xi[:, :3]), np.ascontiguousarray(xi[:, 3:])
        else:
            abs_std, xi_abs, xi_frac = empty, empty, empty
        status, k = _kernel.run_chunk(
            n, dt, K, m, trap.omega, _SHAPE_CODE[trap.shape], trap.depth_U0, trap.lengths, C, Fconst,
            env.gamma, Dgas, recoil, env_mid, mask, vdc, abs_std,
            fb_k, fb_route, fb_wc, fb_delay, det_gain, det_w, det_std,
            supply.fractional, ou_decay, xi_force, xi_det, xi_abs, xi_frac, use_det_noise, use_supply,
            r, p, filt, ou, vbuf, bufpos, det_acc, config.loss_radius, done,
            out_pos, out_mom, out_det, out_env, out_vfb)
        done += k
        if status == _kernel.STATUS_NAN:
            raise IntegratorError(
                f"non-finite state at t={done * dt:.6g} s (rep {rep}); r={r}, p={p}. "
                "Check dt and the applied forces.")
        if status == _kernel.STATUS_LOST:
            lost_time = done * dt
            break
    times = K * dt * np.arange(1, n_samples + 1)
    return Trajectory(times=times, positions=out_pos, momenta=out_mom, detector=out_det, envelope=out_env,
                      feedback_voltage=out_vfb, lost=lost_time is not None, lost_time=lost_time,
                      initial_state=x0)


def thread_count() -> int:
    env = os.environ.get("LEVISIM_THREADS")
    if env:
        return max(1, int(env))
    return max(1, min(8, os.cpu_count() or 1))


def run_ensemble(schedule: PulseSchedule, config: SimConfig, seed: int, repetitions: int, keys: Sequence = (),
                 reducer: Callable[[Trajectory], object] | None = None, antithetic: bool = False,
                 threads: int | None = None, rep_offset: int = 0) -> list:
    """Simulate repetitions ``rep_offset .. rep_offset + repetitions - 1``.

    Each repetition draws from its own substream, so the result for a given
    repetition index never depends on how many others are run.
    """
    def one(rep):
        traj = simulate(schedule, config, seed, rep, keys, antithetic=antithetic)
        return reducer(traj) if reducer is not None else traj

    reps = range(rep_offset, rep_offset + repetitions)
    n = threads or thread_count()
    if n == 1 or repetitions == 1:
        return [one(k) for k in reps]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(one, reps))
