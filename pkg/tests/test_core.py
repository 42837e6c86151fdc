import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from levisim.core import (
    E_CHARGE, HBAR, KB, CovarianceState, DomainError, ElectrodeSystem, Environment, Particle, TrapField,
    TrapShape, denormalize_inverse, derive_mass, epstein_damping, equivalent_nonlinearity_displacement,
    normalized_inverse, nulling_voltages, static_equilibrium, thermal_covariance, total_force, trap_force,
    trap_potential, zero_point_motion,
)

NINV = np.array([[1.0, 0.32, -37.0], [0.36, 1.0, 4.4], [0.0011, -0.0012, 1.0]])


def test_mass_and_zero_point():
    p = Particle()
    assert p.mass == pytest.approx(3.9756e-18, rel=1e-3)
    zzp = zero_point_motion(p.mass, 2 * np.pi * 92e3)
    assert zzp == pytest.approx(4.79e-12, rel=5e-3)
    assert zzp == pytest.approx(np.sqrt(HBAR / (2 * p.mass * 2 * np.pi * 92e3)))


def test_particle_domain():
    with pytest.raises(DomainError):
        Particle(diameter=-1.0)
    with pytest.raises(DomainError):
        Particle(mass=0.0)
    with pytest.raises(DomainError):
        derive_mass(1e-7, 0.0)


def test_epstein_scales_linearly_with_pressure():
    m = Particle().mass
    g1 = epstein_damping(1e-7, 156e-9, m)
    assert epstein_damping(2e-7, 156e-9, m) == pytest.approx(2 * g1)
    assert 1e-4 < g1 < 1e-2
    with pytest.raises(DomainError):
        epstein_damping(-1.0, 156e-9, m)


@given(st.lists(st.floats(-50, 50).filter(lambda v: abs(v) > 1e-3), min_size=6, max_size=6))
@settings(max_examples=50, deadline=None)
def test_normalized_inverse_round_trip(offdiag):
    N = np.eye(3)
    N[np.where(~np.eye(3, dtype=bool))] = offdiag
    if np.linalg.cond(N) > 1e8:
        return
    d = np.array([1e-18, 2e-18, 1e-16])
    C = denormalize_inverse(N, d)
    assert np.allclose(np.diag(C), d, rtol=1e-10)
    assert np.allclose(normalized_inverse(C), N, rtol=1e-6, atol=1e-9 * np.max(np.abs(N)))


def test_normalized_inverse_singular():
    with pytest.raises(DomainError):
        normalized_inverse(np.ones((3, 3)))


def test_electrode_charge_scaling():
    C = denormalize_inverse(NINV, [1e-18, 1e-18, 1e-16])
    el = ElectrodeSystem.from_force_matrix(C, 45)
    assert np.allclose(el.transduction_C, C)
    assert np.allclose(el.with_charge(90).transduction_C, 2 * C)
    assert np.allclose(el.geometry_G * 45 * E_CHARGE, C)
    with pytest.raises(DomainError):
        ElectrodeSystem.from_force_matrix(C, 0)
    with pytest.raises(DomainError):
        ElectrodeSystem(np.zeros((3, 3)), 1)


def test_nulling_voltages_cancel_force():
    p = Particle()
    el = ElectrodeSystem.from_normalized_inverse(NINV, [1e-18, 1e-18, 1e-16], p.charge_q)
    env = Environment(stray_field_E=np.array([3.0, -2.0, 1.0]), nonelectrostatic_force=np.array([0, 0, 1e-17]))
    trap = TrapField.from_frequencies([302e3, 268e3, 92e3], p.mass)
    V = nulling_voltages(p, el, env)
    F = total_force(np.zeros(3), p, trap, el, env, V)
    assert np.max(np.abs(F)) < 1e-12 * np.max(np.abs(env.constant_force(p)))


@pytest.mark.parametrize("shape", list(TrapShape))
def test_trap_curvature_matches_frequencies(shape):
    m = Particle().mass
    trap = TrapField.from_frequencies([302e3, 268e3, 92e3], m, shape=shape)
    for ax in range(3):
        h = 1e-4 * trap.lengths[ax]
        r = np.zeros(3)
        r[ax] = h
        k = -trap_force(r, trap)[ax] / h
        assert k == pytest.approx(m * trap.omega[ax] ** 2, rel=1e-6)


def test_potential_is_minus_gradient_of_force():
    m = Particle().mass
    trap = TrapField.from_frequencies([302e3, 268e3, 92e3], m, shape=TrapShape.GAUSSIAN_BEAM)
    r = np.array([0.2, -0.1, 0.3]) * trap.lengths
    h = 1e-6 * trap.lengths
    grad = np.array([(trap_potential(r + h[k] * np.eye(3)[k], trap) - trap_potential(r - h[k] * np.eye(3)[k], trap))
                     / (2 * h[k]) for k in range(3)])
    assert np.allclose(-grad, trap_force(r, trap), rtol=1e-5)


def test_harmonic_trap_has_no_nonlinearity():
    trap = TrapField.from_frequencies([302e3, 268e3, 92e3], Particle().mass)
    with pytest.raises(DomainError):
        equivalent_nonlinearity_displacement(trap, 0, 170e-9)


def test_thermal_covariance_psd_and_values():
    trap = TrapField.from_frequencies([302e3, 268e3, 92e3], Particle().mass)
    cov = thermal_covariance((1000, 1000, 117), trap)
    assert np.sqrt(cov.position_variance(2)) == pytest.approx(73.4e-12, rel=2e-3)
    with pytest.raises(DomainError):
        thermal_covariance(-1, trap)
    bad = np.diag([1, 1, 1, 1, 1, -1.0])
    with pytest.raises(DomainError):
        CovarianceState(bad)


def test_static_equilibrium_balances_force():
    p = Particle()
    el = ElectrodeSystem.from_normalized_inverse(NINV, [1e-18, 1e-18, 1e-16], p.charge_q)
    env = Environment()
    for shape in (TrapShape.HARMONIC, TrapShape.GAUSSIAN_WAIST):
        trap = TrapField.from_frequencies([302e3, 268e3, 92e3], p.mass, shape=shape)
        r = static_equilibrium(p, trap, el, env, (0, 0, 0.5))
        F = total_force(r, p, trap, el, env, (0, 0, 0.5))
        assert np.max(np.abs(F)) < 1e-9 * p.mass * 9.81


def test_gas_diffusion_fdt():
    env = Environment(gamma=2.0, gas_temperature=300.0)
    assert env.gas_diffusion(1e-18) == pytest.approx(2 * 1e-18 * 2.0 * KB * 300.0)
