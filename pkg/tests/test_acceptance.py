"""Acceptance checks; each prints one PASS/FAIL line (run with ``pytest -s`` to see them)."""
import json
import time
from dataclasses import replace

import numpy as np
import pytest

from levisim import analytics as A, cli, protocols as P
from levisim.core import (KB, CovarianceState, TrapShape, equivalent_nonlinearity_displacement,
                          normalized_inverse)
from levisim.dynamics import (IDEAL_SWITCHING, Action, Event, FeedbackConfig, PulseSchedule, SupplyNoise,
                              default_config, run_ensemble, sample_thermal_state)
from levisim.rng import substream

M = 3.98e-18
WZ = 2 * np.pi * 92e3
NBAR = 117


def report(n, ok, detail):
    print(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def cfg():
    return default_config()


@pytest.fixture(scope="module")
def release(cfg):
    taus = np.arange(1, 11) * 10e-6
    t0 = time.perf_counter()
    s = P.release_series(taus, cfg, seed=0, repetitions=150)
    return s, time.perf_counter() - t0


def test_1_free_expansion():
    sz0 = np.sqrt(A.free_expansion_variance(NBAR, WZ, M, 0.0))
    ratio = np.sqrt(A.free_expansion_variance(NBAR, WZ, M, 100e-6)) / sz0
    t0 = time.perf_counter()
    rng = substream(0, "acceptance-1")
    n = 10_000
    trap = default_config().trap
    x = np.array([sample_thermal_state((0, 0, NBAR), trap, None, rng).as_array() for _ in range(n)])
    z = x[:, 2] + x[:, 5] / trap.mass * 100e-6
    mc = z.std(ddof=1) / x[:, 2].std(ddof=1)
    elapsed = time.perf_counter() - t0
    se = ratio / np.sqrt(2 * n)
    ok = (abs(sz0 / 74e-12 - 1) <= 0.05 and 54 <= ratio <= 60 and abs(mc - ratio) <= 3 * se and elapsed < 10)
    report(1, ok, f"sigma_z(0)={sz0 * 1e12:.1f} pm, expansion {ratio:.1f}x, MC {mc:.1f}x +- {se:.1f}, "
                  f"MC time {elapsed:.1f} s")


def test_2_energy_curve(release, cfg):
    s, elapsed = release
    W = cfg.trap.omega[2]
    expected = 1 + (W * s.taus) ** 2 / 2
    z = (s.relative_energy - expected) / s.relative_energy_error
    ok = bool(np.all(np.abs(z) <= 3) and elapsed < 300)
    report(2, ok, f"max |z| = {np.abs(z).max():.2f} over {s.taus.size} taus, "
                  f"E(100us)/E0 = {s.relative_energy[-1]:.0f} (expect {expected[-1]:.0f}), {elapsed:.0f} s")


def test_3_force_sensitivity(cfg):
    env = replace(cfg.environment, nonelectrostatic_force=cfg.environment.nonelectrostatic_force + [0, 0, 2e-18])
    s = P.release_series([100e-6], replace(cfg, environment=env), seed=0, repetitions=150, control=cfg)
    d = s.mean_displacement[0]
    ok = abs(d / 2.5e-9 - 1) <= 0.15
    report(3, ok, f"mean displacement {d * 1e9:.3f} nm +- {s.displacement_error[0] * 1e9:.3f} nm (2.5 nm +-15%)")


def test_4_max_width(cfg):
    # 150 repetitions leave ~6% scatter on the width, too coarse for a 10% band
    s = P.release_series(np.arange(1, 11) * 10e-6, cfg, seed=0, repetitions=600)
    W, m = cfg.trap.omega[2], cfg.mass
    sz, sp = A.thermal_moments(cfg.initial_nbar[2], W, m)
    pred = np.sqrt([A.recapture_variance_max(sz, sp, t, W, m) for t in s.taus])
    z = (s.max_std - pred) / s.max_std_error
    last = s.max_std[-1]
    ok = bool(np.all(np.abs(z) <= 3) and abs(last / 4.3e-9 - 1) <= 0.10)
    report(4, ok, f"max |z| = {np.abs(z).max():.2f}, max sigma at 100 us = {last * 1e9:.2f} nm (4.3 nm +-10%)")


def test_5_crosstalk(cfg):
    true = normalized_inverse(cfg.electrodes.transduction_C)
    off = ~np.eye(3, dtype=bool)
    worst, t0 = 0.0, time.perf_counter()
    for seed in range(5):
        est = P.cross_cool_calibrate(cfg, seed=seed)
        err = np.abs(est.normalized_inverse_hat[off] / true[off] - 1)
        worst = max(worst, float(err.max()))
    elapsed = time.perf_counter() - t0
    ok = worst <= 0.10 and elapsed < 600
    report(5, ok, f"worst off-diagonal relative error {worst:.3f} over 5 seeds (<= 0.10), {elapsed:.0f} s")


def test_6_tau_scaling(cfg):
    taus = np.array([5, 10, 20, 30, 40, 50]) * 1e-6
    r = P.tau_scan(taus, (-20.0, 20.0), cfg, seed=0)
    W = cfg.trap.omega[2]
    rel = r.c4 / r.c2 / (W**2 / 4)
    ok = abs(rel - 1) <= 0.10 and bool(r.flat)
    report(6, ok, f"c4/c2 = {rel:.3f} x Omega^2/4, v_opt slope {r.slope:.3g} +- {r.slope_ci:.3g} V/s")


def test_7_recompression(cfg):
    W, m, tau, dt = cfg.trap.omega[2], cfg.mass, 5e-6, cfg.dt
    tp = A.recompression_time(tau, W, 1)
    sz, sp = A.thermal_moments(NBAR, W, m)
    S0 = CovarianceState(np.diag([sz, sz, sz, sp, sp, sp]))
    om = (0.0, 0.0, W)
    segs = [A.segment("FREE", tau, m, om), A.segment("TRAPPED", tp, m, om), A.segment("FREE", tau, m, om)]
    cov_err = abs(A.lyapunov_propagate(S0, segs).position_variance(2) / sz - 1)
    grid = round(tp / dt) * dt + dt * np.arange(-8, 9)
    r = P.recompression_experiment(tau, grid, cfg, seed=0, repetitions=150)
    ok = cov_err <= 1e-6 and abs(r.tp_min_nominal - tp) <= dt
    report(7, ok, f"covariance error {cov_err:.1e}, MC minimum {r.tp_min_nominal * 1e6:.3f} us "
                  f"vs {tp * 1e6:.3f} us (+- {dt * 1e9:.0f} ns)")


def test_8_nonlinearity_geometry(cfg):
    trap = cfg.trap.with_shape(TrapShape.GAUSSIAN_WAIST)
    ratios = [170e-9 / equivalent_nonlinearity_displacement(trap, ax, 170e-9) for ax in (0, 1)]
    target = trap.omega[:2] / trap.omega[2]
    cnv = cfg.electrodes.cnv_diag
    dz = A.displacement_from_voltage(cnv[2], 1.0, 100e-6, cfg.mass)
    dr = A.displacement_from_voltage(cnv[1], 20.0, 100e-6, cfg.mass)
    onset_r = 170e-9 / ratios[1]
    ok = bool(np.all(np.abs(np.array(ratios) / target - 1) <= 0.05) and dz < 170e-9 and dr < onset_r)
    report(8, ok, f"ratios {ratios[0]:.3f}, {ratios[1]:.3f} vs {target[0]:.3f}, {target[1]:.3f}; "
                  f"1 V axial {dz * 1e9:.0f} nm < 170 nm; 20 V radial {dr * 1e9:.0f} nm < {onset_r * 1e9:.0f} nm")


def _oracle_config(cfg):
    # a cold gas bath stands in for velocity damping; it is exactly linear
    env = replace(cfg.environment, gravity=np.zeros(3), stray_field_E=np.zeros(3),
                  nonelectrostatic_force=np.zeros(3), gamma=2e4, gas_temperature=1e-3)
    fb = FeedbackConfig(tuple(replace(a, enabled=False) for a in cfg.feedback.axes))
    return replace(cfg, trap=cfg.trap.with_shape(TrapShape.HARMONIC), feedback=fb, environment=env)


def _build(c, segs):
    m, W, env = c.mass, c.trap.omega, c.environment
    gas, rec = env.gas_diffusion(m), np.asarray(env.recoil_Dp)
    events, models, t, on = [], [], 0.0, True
    for kind, T in segs:
        trapped = kind == "TRAPPED"
        if trapped != on:
            events.append(Event(t, Action.TRAP_ON if trapped else Action.TRAP_OFF))
            on = trapped
        models.append(A.segment(kind, T, m, W, env.gamma, gas + (rec if trapped else 0.0)))
        t = round(t + T, 12)
    return PulseSchedule(events=tuple(events), total_duration=t, **IDEAL_SWITCHING), models


def test_9_oracle_equivalence(cfg):
    c = _oracle_config(cfg)
    vz, vp = A.thermal_moments(np.asarray(c.initial_nbar), c.trap.omega, c.mass)
    S0 = CovarianceState(np.diag(np.r_[vz, vp]))
    schedules = ([("TRAPPED", 3e-6), ("FREE", 20e-6), ("TRAPPED", 4e-6)],
                 [("FREE", 5e-6), ("TRAPPED", 6.5e-6), ("FREE", 5e-6)],
                 [("TRAPPED", 100e-6), ("FREE", 20e-6), ("TRAPPED", 1e-6), ("FREE", 2e-6)])
    iu = np.triu_indices(6)
    worst, n = 0.0, 500
    for k, segs in enumerate(schedules):
        sched, models = _build(c, segs)
        X = np.array(run_ensemble(sched, c, 0, n, keys=("oracle", k),
                                  reducer=lambda tr: np.r_[tr.positions[-1], tr.momenta[-1]]))
        S = A.lyapunov_propagate(S0, models).sigma
        se = np.sqrt((S**2 + np.outer(np.diag(S), np.diag(S))) / (n - 1))
        z = (np.cov(X.T) - S) / se
        worst = max(worst, float(np.abs(z[iu]).max()))
    ok = worst <= 5
    report(9, ok, f"max |z| = {worst:.2f} over 3 schedules x 21 entries (<= 5)")


def test_10_reheating(cfg):
    env = replace(cfg.environment, gamma=1.0, recoil_Dp=np.zeros(3))
    c = replace(cfg, environment=env, dt=20e-9, supply=SupplyNoise(enabled=True, fractional=0.05))
    biases = [(0, 0, 0), (0, 0, 10), (0, 0, 75), (0, 0, 100)]
    r = P.reheating_experiment(biases, 2e-3, c, seed=0, repetitions=500)
    gas = env.gamma * KB * env.gas_temperature
    base_err = abs(r.rates[0] / gas - 1)
    se = np.sqrt(r.rate_errors**2 + r.rate_errors[0] ** 2)
    z = (r.rates - r.rates[0]) / np.where(se > 0, se, np.inf)
    ok = base_err <= 0.15 and abs(z[1]) <= 3 and z[2] > 3 and z[3] > 3
    report(10, ok, f"gas-only rate {r.rates[0] / gas:.3f} x gamma kT; excess in SE at 10/75/100 V: "
                   f"{z[1]:.1f}/{z[2]:.1f}/{z[3]:.1f}")


SMALL = {"protocol": {
    "simulate": {"kind": "release_recapture", "tau": 20e-6},
    "scan": {"v_range": [-0.5, 0.5], "n_points": 5, "tau": 20e-6, "repetitions": 2},
    "tau_scan": {"taus": [5e-6, 10e-6, 20e-6], "n_points": 5, "repetitions": 2},
    "recompress": {"tau": 5e-6, "repetitions": 10, "tp_start": 6.45e-6, "tp_stop": 6.5e-6, "tp_step": 1e-8},
    "reheat": {"biases": [[0, 0, 0], [0, 0, 50]], "duration": 2e-4, "repetitions": 3},
    "charge": {"duration": 2e-4},
}}


def test_11_determinism(tmp_path):
    cfgfile = tmp_path / "small.json"
    cfgfile.write_text(json.dumps(SMALL))
    compared, same = 0, True
    for cmd in ("simulate", "scan", "tau-scan", "recompress", "reheat", "charge", "predict"):
        outs = []
        for k in range(2):
            out = tmp_path / f"{cmd}-{k}"
            code = cli.main([cmd, "--config", str(cfgfile), "--seed", "3", "--out", str(out), "--no-plots"])
            assert code == 0, cmd
            outs.append(out)
        for f in sorted(outs[0].glob("*.csv")):
            compared += 1
            same &= f.read_bytes() == (outs[1] / f.name).read_bytes()
    report(11, same and compared >= 7, f"{compared} CSV files byte-identical across re-runs: {same}")
