import numpy as np
import pytest
from dataclasses import replace

from levisim import analysis, analytics, protocols as P
from levisim.core import Drift, ElectrodeSystem, KB, TrapShape, equivalent_nonlinearity_displacement
from levisim.dynamics import FeedbackAxis, FeedbackConfig, default_config


def no_gravity(cfg, **env):
    return replace(cfg, environment=replace(cfg.environment, gravity=np.zeros(3), **env))


def with_null(cfg, V_null):
    """Config whose constant force is cancelled exactly by electrode voltages ``V_null``."""
    cfg = no_gravity(cfg)
    F = -cfg.electrodes.transduction_C @ np.asarray(V_null, float)
    return no_gravity(cfg, stray_field_E=F / cfg.particle.charge)


@pytest.fixture(scope="module")
def cfg():
    return default_config()


def test_scan_recovers_axial_null(cfg):
    c = with_null(cfg, [0.0, 0.0, 0.04])
    r = P.compensation_scan(2, (-0.5, 0.5), 11, 50e-6, 5, c, seed=1)
    assert r.fit.valid
    assert abs(r.v_opt - 0.04) <= max(r.fit.v_opt_ci, 0.02)
    assert np.allclose(r.applied_voltages, r.base_voltages + r.v_opt * r.direction)


def test_scan_equivariance_under_stray_shift(cfg):
    from levisim.core import normalized_inverse

    shift = 0.3 * normalized_inverse(cfg.electrodes.transduction_C)[:, 2]
    c0 = with_null(cfg, [0.0, 0.0, 0.0])
    c1 = with_null(cfg, shift)
    r0 = P.compensation_scan(2, (-0.5, 0.5), 11, 50e-6, 5, c0, seed=2)
    r1 = P.compensation_scan(2, (-0.2, 0.8), 11, 50e-6, 5, c1, seed=2)
    # identical noise and a shifted grid: the optimum moves by exactly the shift
    assert r1.v_opt - r0.v_opt == pytest.approx(0.3, abs=1e-6)


def test_scan_excludes_lost_points(cfg):
    c = no_gravity(cfg)
    r = P.compensation_scan(2, (-4000.0, 4000.0), 9, 100e-6, 2, c, seed=0, raw=True)
    assert r.excluded.any() and not r.excluded.all()
    assert np.all(np.isnan(r.mean_energies[r.excluded]))


def test_crosstalk_correction_ablation(cfg):
    # a purely axial stray force, compensated with and without the correction
    Fz = np.array([0.0, 0.0, -1e-16])
    c = no_gravity(cfg, stray_field_E=Fz / cfg.particle.charge)
    C = c.electrodes.transduction_C
    R = C / np.diag(C)[:, None]
    corr = P.compensation_scan(2, (-2.0, 2.0), 11, 50e-6, 5, c, seed=3)
    raw = P.compensation_scan(2, (-2.0, 2.0), 11, 50e-6, 5, c, seed=3, raw=True)
    resid = {k: (C @ r.applied_voltages + Fz) / np.diag(C) for k, r in (("corr", corr), ("raw", raw))}
    # volts-equivalent residual: the bare z electrode leaves R_xz * V_z on x
    assert abs(resid["raw"][2]) < 0.1 and abs(resid["corr"][2]) < 0.1
    assert abs(resid["raw"][0]) >= 0.8 * abs(R[0, 2] * raw.v_opt)
    assert abs(resid["corr"][0]) < 0.05 * abs(resid["raw"][0])


def test_compensate_3d_axial_residual(cfg):
    rng = np.random.default_rng(11)
    V_null = np.array([rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(-1, 1)])
    c = with_null(cfg, V_null)
    r = P.compensate_3d(c, seed=4)
    C = c.electrodes.transduction_C
    F0 = c.environment.constant_force(c.particle)
    axial = [abs((C @ h + F0)[2]) for h in r.history]
    assert axial[-1] < 2e-18
    # axial residual after each z scan shrinks with the release time, within noise
    after_z = axial[1::3]
    assert after_z[-1] <= after_z[0]


def test_compensate_3d_no_forces(cfg):
    c = with_null(cfg, [0.0, 0.0, 0.0])
    r = P.compensate_3d(c, tau_schedule=(20e-6, 50e-6, 100e-6), seed=5, initial_span=(20.0, 20.0, 2.0))
    last_z = [s for s in r.scans if s.axis == 2][-1]
    assert abs(r.voltages[2]) <= max(3 * last_z.fit.v_opt_ci, 0.02)
    assert np.all(np.abs(r.voltages[:2]) < 20.0)


def test_compensate_3d_rejects_unsorted_schedule(cfg):
    with pytest.raises(P.DomainError):
        P.compensate_3d(cfg, tau_schedule=(50e-6, 20e-6))


def test_tau_scan_monotone_scale(cfg):
    c = with_null(cfg, [0.0, 0.0, 0.1])
    r = P.tau_scan([10e-6, 20e-6, 40e-6], (-5.0, 5.0), c, seed=6, n_points=7, repetitions=4)
    assert np.all(np.diff(r.scales) > 0)
    assert np.allclose(r.v_opts, 0.1, atol=0.1)


def test_release_series_paired_ratio(cfg):
    s = P.release_series([20e-6], cfg, seed=8, repetitions=150)
    W = cfg.trap.omega[2]
    expected = 1 + (W * 20e-6) ** 2 / 2
    assert s.relative_energy[0] == pytest.approx(expected, abs=3 * s.relative_energy_error[0])
    assert s.lost_fraction[0] == 0


def test_recompression_offset_shifts_minimum(cfg):
    tau, dt = 5e-6, cfg.dt
    pred = analytics.recompression_time(tau, cfg.trap.omega[2], 1)
    centre = round((pred + 80e-9) / dt) * dt
    tps = centre + dt * np.arange(-6, 7)
    r = P.recompression_experiment(tau, tps, cfg, seed=8, repetitions=60, offset=80e-9)
    assert r.tp_min_nominal == pytest.approx(pred + 80e-9, abs=1.5 * dt)
    assert r.tp_min_corrected == pytest.approx(pred, abs=1.5 * dt)


def test_reheating_without_noise_is_flat(cfg):
    env = replace(cfg.environment, gamma=0.0, recoil_Dp=np.zeros(3))
    det = replace(cfg.detector, noise_psd=(0.0, 0.0, 0.0))
    c = replace(cfg, environment=env, detector=det)
    r = P.reheating_experiment([(0, 0, 0)], 300e-6, c, seed=9, repetitions=8)
    E0 = KB * 300 * 0  # no bath: the rate must vanish against the energy scale
    scale = np.mean(r.mean_energy) / 300e-6
    assert abs(r.rates[0]) < 0.02 * scale + E0


def test_nonlinearity_onset_beam_and_harmonic(cfg):
    beam = P.nonlinearity_scan((-150.0, 150.0), 15e-6, cfg, seed=0, shape=TrapShape.GAUSSIAN_BEAM)
    assert beam.onset_displacement == pytest.approx(170e-9, rel=0.3)
    harm = P.nonlinearity_scan((-150.0, 150.0), 15e-6, cfg, seed=0, shape=TrapShape.HARMONIC)
    assert np.isnan(harm.onset_displacement)


def test_radial_equivalent_displacement_ratio(cfg):
    trap = cfg.trap.with_shape(TrapShape.GAUSSIAN_WAIST)
    for ax in (0, 1):
        d = equivalent_nonlinearity_displacement(trap, ax, 170e-9)
        assert 170e-9 / d == pytest.approx(trap.omega[ax] / trap.omega[2], rel=0.05)


def test_charge_linearity_and_steps(cfg):
    a1 = P.charge_measure(1.0, 120e3, 2e-3, cfg, seed=0)
    a2 = P.charge_measure(1.0, 120e3, 2e-3, cfg.with_charge(90), seed=0)
    assert a2.amplitude / a1.amplitude == pytest.approx(2.0, rel=0.02)
    assert a1.inferred_charge == pytest.approx(45, rel=0.05)
    steps = P.charge_steps([45, 44, 46, 46, 43, 44, 41, 42, 45, 47, 46], 1.0, 120e3, 2e-3, cfg, seed=0)
    assert steps.spacing == pytest.approx(steps.unit_response, rel=0.05)
    assert steps.histogram.sum() == np.count_nonzero(np.abs(steps.steps) < 9.5 * steps.unit_response)


def test_charge_zero_at_noise_floor(cfg):
    c0 = cfg.with_charge(0)
    c0 = replace(c0, feedback=FeedbackConfig(tuple(replace(a, enabled=False) for a in c0.feedback.axes)))
    m = P.charge_measure(1.0, 120e3, 2e-3, c0, seed=0)
    assert m.inferred_charge < 0.5


def test_charge_drive_must_be_detuned(cfg):
    with pytest.raises(P.DomainError):
        P.charge_measure(1.0, 92e3, 1e-3, cfg)


def test_drift_model(cfg):
    assert P.apply_environment_drift(cfg, 100.0) is cfg
    c = no_gravity(cfg, drift=Drift())
    late = P.apply_environment_drift(c, 1e9)
    cz = P.effective_transduction(c, 2)
    Fz = late.environment.constant_force(late.particle)[2]
    assert -Fz / cz == pytest.approx(0.3, rel=1e-9)


def test_drift_round_trip(cfg):
    c = no_gravity(cfg, drift=Drift())
    ts = np.linspace(0, 1200 * 60, 9)
    v = [P.compensation_scan(2, (-2, 2), 9, 50e-6, 5, P.apply_environment_drift(c, t), seed=k,
                             keys=("drift",)).v_opt for k, t in enumerate(ts)]
    fit = analysis.fit_exponential_drift(ts, v)
    assert fit.V_f == pytest.approx(0.3, rel=0.1)
    assert fit.RC == pytest.approx(300 * 60, rel=0.1)


def test_crosscool_diagonal_identity(cfg):
    C = np.diag([1e-18, 1e-18, 1e-16])
    el = ElectrodeSystem.from_force_matrix(C, cfg.particle.charge_q)
    c = replace(cfg, electrodes=el)
    est = P.cross_cool_calibrate(c, seed=0)
    assert np.allclose(est.normalized_inverse_hat, np.eye(3), atol=0.05)


def test_crosscool_charge_invariant(cfg):
    a = P.cross_cool_calibrate(cfg, target_axes=(2,), seed=3)
    b = P.cross_cool_calibrate(cfg.with_charge(3 * cfg.particle.charge_q), target_axes=(2,), seed=3)
    np.testing.assert_allclose(a.ratio_matrix[2], b.ratio_matrix[2], rtol=1e-6)
