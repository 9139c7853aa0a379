import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from blipsum import BathSpec, DriveProtocol, SystemSpec, correlator_r, correlator_s
from blipsum.errors import ConvergenceError, DomainError
from blipsum.oracles import (
    FewModeBath,
    adaptive_gauss_kronrod,
    few_mode_exact_probability,
    quadrature_correlators,
    reconstruct_work_distribution,
    tls_ode_probability,
    tls_propagator,
    tpm_characteristic_function,
    tpm_mean_work,
    tpm_work_distribution,
)

GRID = np.linspace(0.0, 3.0, 13)


# -- two-level ODE -----------------------------------------------------------------


def test_ode_free_tunneling():
    p = tls_ode_probability(SystemSpec(1.0), DriveProtocol.none(), GRID)
    assert np.max(np.abs(p - np.sin(0.5 * GRID) ** 2)) <= 1e-10


def test_ode_no_tunneling():
    p = tls_ode_probability(SystemSpec(0.0, 0.5), DriveProtocol.sinusoidal(1, 1), GRID)
    assert np.max(np.abs(p)) <= 1e-14


@pytest.mark.parametrize("delta, eps0", [(1.0, 1.0), (1.0, -0.4), (2.0, 0.7)])
def test_ode_rabi(delta, eps0):
    p = tls_ode_probability(SystemSpec(delta, eps0), DriveProtocol.none(), GRID)
    omega = math.hypot(delta, eps0)
    rabi = delta**2 / omega**2 * np.sin(0.5 * omega * GRID) ** 2
    assert np.max(np.abs(p - rabi)) <= 1e-10


def test_ode_tolerance_convergence():
    drive = DriveProtocol.pulse(0.7, 0.6, 1.9)
    a = tls_ode_probability(SystemSpec(1, 0.3), drive, GRID, rtol=1e-11, atol=1e-13)
    b = tls_ode_probability(SystemSpec(1, 0.3), drive, GRID, rtol=5e-12, atol=5e-14)
    assert np.max(np.abs(a - b)) <= 1e-10


def test_propagator_is_unitary():
    u = tls_propagator(SystemSpec(1, 0.3), DriveProtocol.sinusoidal(0.8, 1.7), 2.3)
    assert np.allclose(u.conj().T @ u, np.eye(2), atol=1e-11)


# -- few-mode bath -------------------------------------------------------------------


def test_few_mode_decoupled_matches_ode():
    bath = FewModeBath((1.5, 3.0), (0.0, 0.0), fock_cutoff=4)
    drive = DriveProtocol.sinusoidal(0.5, 1.0)
    p = few_mode_exact_probability(SystemSpec(1, 1), bath, drive, GRID[:7])
    ode = tls_ode_probability(SystemSpec(1, 1), drive, GRID[:7])
    assert np.max(np.abs(p - ode)) <= 1e-8


def test_few_mode_no_tunneling():
    bath = FewModeBath((2.0,), (0.8,), fock_cutoff=6, temperature=0.5)
    p = few_mode_exact_probability(SystemSpec(0.0, 0.3), bath, DriveProtocol.none(), GRID[:5])
    assert np.max(np.abs(p)) <= 1e-12


def test_few_mode_truncation_check():
    strong = FewModeBath((0.5,), (3.0,), fock_cutoff=4)
    with pytest.raises(ConvergenceError):
        few_mode_exact_probability(SystemSpec(1.0), strong, DriveProtocol.none(), [0.0, 2.0], tolerance=1e-8)


def test_few_mode_thermal_sampling_is_seeded():
    bath = FewModeBath((1.0, 2.0, 3.0), (0.3, 0.3, 0.3), fock_cutoff=4, temperature=1.0)
    args = (SystemSpec(1.0), bath, DriveProtocol.none(), [0.5, 1.0])
    a = few_mode_exact_probability(*args, thermal_samples=8, seed=3, tolerance=1e-2)
    b = few_mode_exact_probability(*args, thermal_samples=8, seed=3, tolerance=1e-2)
    assert np.array_equal(a, b)


def test_few_mode_correlators():
    bath = FewModeBath((2.0,), (1.0,), temperature=0.0)
    s, r = bath.correlators(np.array([0.0, 0.7]))
    assert s[0] == 0.0 and r[0] == 0.0
    assert s[1] == pytest.approx(0.25 * (1 - math.cos(1.4)), rel=1e-14)
    assert r[1] == pytest.approx(0.25 * math.sin(1.4), rel=1e-14)


def test_few_mode_discretization():
    spec = BathSpec(0.2, 1.0, 2.0)
    bath = FewModeBath.discretize(spec, 4, 5)
    assert bath.mode_count == 4 and bath.fock_cutoff == 5
    assert np.allclose(bath.frequencies, [1.0, 3.0, 5.0, 7.0])
    # total reorganization weight: sum c^2 = (1/pi) int_0^{4 wc} J
    from scipy import integrate

    ref, _ = integrate.quad(lambda w: 2 * math.pi * 0.2 * w * math.exp(-w / 2.0), 0, 8.0)
    assert sum(c * c for c in bath.couplings) == pytest.approx(ref / math.pi, rel=1e-10)


@pytest.mark.parametrize("kwargs", [dict(frequencies=(), couplings=()), dict(frequencies=(1, 2, 3, 4, 5), couplings=(1,) * 5),
                                    dict(frequencies=(1.0,), couplings=(1.0,), fock_cutoff=9),
                                    dict(frequencies=(-1.0,), couplings=(1.0,))])
def test_few_mode_invariants(kwargs):
    with pytest.raises(DomainError):
        FewModeBath(**kwargs)


# -- two-point measurement ------------------------------------------------------------

DRIVES = [DriveProtocol.sinusoidal(0.5, 1.0), DriveProtocol.pulse(0.8, 0.3, 3.0),
          DriveProtocol.table([0, 1, 2.5], [0, 1.2, -0.6])]


@pytest.mark.parametrize("drive", DRIVES, ids=lambda d: d.kind)
def test_tpm_normalization_and_bound(drive):
    system = SystemSpec(1.0, 0.4)
    assert tpm_characteristic_function(system, drive, 0.0, 2.0) == pytest.approx(1.0, abs=1e-14)
    chi = tpm_characteristic_function(system, drive, np.linspace(-8, 8, 33), 2.0)
    assert np.all(np.abs(chi) <= 1.0 + 1e-12)


@pytest.mark.parametrize("drive", DRIVES, ids=lambda d: d.kind)
def test_tpm_first_moment(drive):
    system = SystemSpec(1.0, 0.4)
    h = 1e-4
    chi = tpm_characteristic_function(system, drive, np.array([-2 * h, -h, h, 2 * h]), 2.0)
    # fourth-order central difference of -i d chi / d nu at 0
    deriv = (-chi[3] + 8 * chi[2] - 8 * chi[1] + chi[0]) / (12 * h)
    assert (-1j * deriv).real == pytest.approx(tpm_mean_work(system, drive, 2.0), abs=1e-8)


@pytest.mark.parametrize("drive", DRIVES, ids=lambda d: d.kind)
def test_tpm_distribution(drive):
    system = SystemSpec(1.0, 0.4)
    support, probs = tpm_work_distribution(system, drive, 2.0)
    assert math.fsum(probs) == pytest.approx(1.0, abs=1e-13)
    assert np.all(probs >= -1e-14)
    nus = np.linspace(-6, 6, 41)
    chi = tpm_characteristic_function(system, drive, nus, 2.0)
    recon = reconstruct_work_distribution(chi, nus, support)
    assert np.all(recon >= -1e-10)
    assert np.allclose(recon, probs, atol=1e-10)
    assert math.fsum(support * probs) == pytest.approx(tpm_mean_work(system, drive, 2.0), abs=1e-12)


def test_tpm_constant_hamiltonian():
    system = SystemSpec(1.0, 0.6)
    nus = np.linspace(-5, 5, 21)
    chi = tpm_characteristic_function(system, DriveProtocol.none(), nus, 2.0)
    assert np.allclose(chi, 1.0, atol=1e-12)
    support, probs = tpm_work_distribution(system, DriveProtocol.none(), 2.0)
    assert probs[support == 0.0].sum() == pytest.approx(1.0, abs=1e-12)
    assert tpm_mean_work(system, DriveProtocol.none(), 2.0) == pytest.approx(0.0, abs=1e-12)


# -- correlator quadrature -----------------------------------------------------------


def test_gauss_kronrod_known_integrals():
    val, err = adaptive_gauss_kronrod(np.sin, 0.0, math.pi, rel_tol=1e-13)
    assert val == pytest.approx(2.0, rel=1e-13) and err < 1e-10
    val, _ = adaptive_gauss_kronrod(lambda x: np.exp(-x) * np.cos(40 * x), 0.0, 20.0, rel_tol=1e-12)
    assert val == pytest.approx(1 / 1601 * (1 - math.exp(-20) * (math.cos(800) - 40 * math.sin(800))), rel=1e-10)


def test_gauss_kronrod_budget():
    with pytest.raises(ConvergenceError):
        adaptive_gauss_kronrod(lambda x: np.sign(x - 0.3), 0.0, 1.0, rel_tol=1e-15, max_intervals=50)


def test_quadrature_trivial():
    assert quadrature_correlators(BathSpec(0.25), 0.0) == (0.0, 0.0)
    assert quadrature_correlators(BathSpec(0.0), 1.0) == (0.0, 0.0)


@given(st.floats(-2.0, 2.0).filter(lambda v: abs(v) > 1e-3))
def test_quadrature_parity(tau):
    spec = BathSpec(0.2, 1.0, 5.0, 0.5)
    s_pos, r_pos = quadrature_correlators(spec, abs(tau))
    s_val, r_val = quadrature_correlators(spec, tau)
    assert s_val == s_pos and r_val == math.copysign(r_pos, tau)


def test_quadrature_against_closed_forms():
    for temp in (0.0, 1.0):
        spec = BathSpec(0.25, 1.0, 10.0, temp)
        for tau in (0.001, 0.1, 1.0, 10.0):
            s_val, r_val = quadrature_correlators(spec, tau)
            assert s_val == pytest.approx(correlator_s(spec, tau), rel=1e-8)
            assert r_val == pytest.approx(correlator_r(spec, tau), rel=1e-8)
