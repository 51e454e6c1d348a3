import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import free_spec, localized_spec, specs
from oracles import abel_moment_quadrature, free_abel_moment, free_correlator
from qdbounds import dynamics as dy
from qdbounds.lattice import HoppingKernel, OperatorSpec, PotentialLaw, Window, assemble

# Abel moments of delta_0 under free hopping on the whole line, from the
# closed-form energy integral in tests/oracles.py
FREE_ABS_MOMENT_T100 = 63.65705572
# exponents of those exact moments over T = geomspace(100, 1000, 9)
FREE_EXACT_BETA = {1: 1.000028577667305, 2: 1.0000000000000626, 4: 0.9999988056969359}


def diag_spec():
    return OperatorSpec(HoppingKernel.zero(), PotentialLaw.quasiperiodic((0.0, 2.0)), 0.0)


# ----------------------------------------------------------------- evolve


def test_diagonal_evolution_is_a_phase():
    psi = dy.evolve(diag_spec(), dy.StateVector.delta(0), 3.7)
    assert abs(psi[0]) == pytest.approx(1.0, abs=1e-14)
    assert np.count_nonzero(np.abs(psi.amps) > 1e-15) == 1


def test_two_site_rotation():
    spec = free_spec()
    psi = dy.evolve(spec, dy.StateVector.delta(0), math.pi / 2, window=Window(0, 1), guard=0)
    np.testing.assert_allclose(psi.amps, [0.0, -1j], atol=1e-14)


@given(specs(), st.integers(-3, 3))
def test_time_zero_is_identity(spec, n):
    phi = dy.StateVector.delta(n)
    psi = dy.evolve(spec, phi, 0.0)
    assert psi[n] == pytest.approx(1.0, abs=1e-12)
    assert np.abs(psi.amps).sum() == pytest.approx(1.0, abs=1e-10)


@given(specs(), st.floats(0.0, 30.0), st.integers(0, 2**32 - 1))
def test_unitarity(spec, t, seed):
    r = np.random.default_rng(seed)
    phi = dy.StateVector(Window(-3, 3), r.normal(size=7) + 1j * r.normal(size=7))
    psi = dy.evolve(spec, phi, t)
    assert np.linalg.norm(psi.amps) == pytest.approx(phi.norm, rel=1e-10)


@given(specs(max_radius=4), st.floats(1.0, 40.0))
def test_light_cone(spec, t):
    phi = dy.StateVector.delta(0)
    r = dy.light_cone_radius(spec, phi.K1, t)
    big = Window.centered(int(3 * r) + 50)
    psi = dy.evolve(spec, phi, t, window=big, guard=0)
    outside = np.abs(big.sites) > r
    assert np.sum(np.abs(psi.amps[outside]) ** 2) <= dy.LEAK_TOL


def test_window_too_small_is_reported():
    with pytest.raises(dy.WindowTooSmallError):
        dy.evolve(free_spec(), dy.StateVector.delta(0), 200.0, window=Window.centered(30), guard=8)


def test_guard_zone_enlarges_once():
    psi = dy.evolve(free_spec(), dy.StateVector.delta(0), 20.0, window=Window.centered(50), guard=8)
    assert psi.window.size > 101


# ----------------------------------------------------------------- moments


def test_diagonal_moments():
    spec = diag_spec()
    T = [10.0, 100.0, 1000.0]
    for p in (1, 2, 4):
        assert np.all(dy.moment_series(spec, dy.StateVector.delta(0), p, T).values == 0.0)
        np.testing.assert_allclose(dy.moment_series(spec, dy.StateVector.delta(1), p, T).values, 1.0, rtol=1e-12)


def test_free_second_moment_growth():
    s = dy.moment_series(free_spec(), dy.StateVector.delta(0), 2, [10.0, 20.0, 40.0], window=Window.centered(1024))
    r = s.values[1:] / s.values[:-1]
    np.testing.assert_allclose(r, 4.0, rtol=0.1)


@pytest.mark.parametrize("T", [10.0, 40.0])
def test_free_moments_closed_form(T):
    phi = dy.StateVector.delta(0)
    w = Window.centered(1024)
    m2 = dy.moment_series(free_spec(), phi, 2, [T], w)
    m4 = dy.moment_series(free_spec(), phi, 4, [T], w)
    # <X^2>(t) = 2 t^2 and <X^4>(t) = 6 t^4 + 2 t^2 on the free line
    assert abs(m2.values[0] - T**2) <= m2.error_bars[0] + 1e-9 * T**2
    assert abs(m4.values[0] - (9 * T**4 + T**2)) <= m4.error_bars[0] + 1e-9 * T**4
    if T == 10.0:
        assert m4.values[0] == pytest.approx(9 * T**4 + T**2, rel=1e-10)
    for p in (1, 2, 4):
        s = dy.moment_series(free_spec(), phi, p, [T], w)
        assert abs(s.values[0] - free_abel_moment(p, T)) <= s.error_bars[0] + 1e-9 * s.values[0]


def test_free_first_moment_frozen():
    assert free_abel_moment(1, 100.0) == pytest.approx(FREE_ABS_MOMENT_T100, rel=1e-9)
    s = dy.moment_series(free_spec(), dy.StateVector.delta(0), 1, [100.0], Window.centered(4096))
    assert s.values[0] == pytest.approx(FREE_ABS_MOMENT_T100, rel=1e-8)


def test_exact_free_exponents_frozen():
    T = np.geomspace(100, 1000, 9)
    for p, beta in FREE_EXACT_BETA.items():
        v = np.array([free_abel_moment(p, t) for t in T])
        est = dy.exponent_from_series(dy.MomentSeries(float(p), T, v, np.zeros_like(v)))
        assert est.beta_hat == pytest.approx(beta, abs=1e-9)


@pytest.mark.parametrize("p", [0, 1, 2, 3])
def test_spectral_matches_time_quadrature_oracle(p):
    spec = localized_spec()
    w = Window.centered(40)
    r = np.random.default_rng(5)
    amps = r.normal(size=5) + 1j * r.normal(size=5)
    phi = dy.StateVector(Window(-2, 2), amps)
    ref = abel_moment_quadrature(assemble(spec, w), w.sites, phi.on(w), p, 25.0)
    got = dy.moment_series(spec, phi, p, [25.0], w)
    assert got.values[0] == pytest.approx(ref, rel=1e-8)


def test_quadrature_method_agrees():
    spec = localized_spec()
    w = Window.centered(60)
    phi = dy.StateVector.delta(0)
    a = dy.moment_series(spec, phi, 2, [5.0, 20.0], w, method="spectral")
    b = dy.moment_series(spec, phi, 2, [5.0, 20.0], w, method="quadrature")
    np.testing.assert_allclose(a.values, b.values, rtol=1e-5)


@given(specs(max_radius=3), st.floats(1.0, 50.0))
def test_abel_normalisation(spec, T):
    r = np.random.default_rng(1)
    phi = dy.StateVector(Window(-1, 1), r.normal(size=3) + 1j)
    s = dy.moment_series(spec, phi, 0, [T], Window.centered(120))
    assert s.values[0] == pytest.approx(phi.norm**2, rel=dy.QUADRATURE_TOL)


@given(specs(max_radius=3), st.floats(1.0, 30.0))
def test_scaling_covariance(spec, T):
    phi = dy.StateVector(Window(-1, 2), np.array([0.3, 1.0, -0.5j, 0.2]))
    w = Window.centered(100)
    a = dy.moment_series(spec, phi, 2, [T], w).values[0]
    b = dy.moment_series(spec, phi.scaled(2.0), 2, [T], w).values[0]
    assert b == pytest.approx(4 * a, rel=1e-10)


def test_scaling_leaves_exponent_unchanged():
    spec = localized_spec()
    phi = dy.StateVector.delta(0)
    T = np.geomspace(10, 100, 6)
    w = Window.centered(200)
    a = dy.transport_exponent(spec, phi, 2, T, w)
    b = dy.transport_exponent(spec, phi.scaled(2.0), 2, T, w)
    assert b.beta_hat == pytest.approx(a.beta_hat, abs=1e-10)


@given(specs(real=True, max_radius=3), st.floats(1.0, 30.0), st.floats(0.0, 1.0, exclude_max=True))
def test_reflection_covariance(spec, T, theta):
    spec = OperatorSpec(spec.kernel, PotentialLaw.quasiperiodic((0.0, 1.5), (), theta), spec.coupling)
    phi = dy.StateVector(Window(0, 2), np.array([1.0, 0.5j, -0.25]))
    w = Window.centered(100)
    a = dy.moment_series(spec, phi, 2, [T], w).values[0]
    b = dy.moment_series(spec.reflected(), phi.reflected(), 2, [T], w).values[0]
    assert b == pytest.approx(a, rel=1e-9)


def test_truncation_error_bar_has_leak_term():
    spec = free_spec()
    R = 1024
    bar = dy.truncation_error_bar(spec, 0, 2, 10.0, R)
    assert bar >= dy.LEAK_TOL * R**2


# ----------------------------------------------------------------- exponents


def test_diagonal_exponent_exact_zero():
    est = dy.transport_exponent(diag_spec(), dy.StateVector.delta(0), 2, np.geomspace(10, 1000, 7))
    assert est.beta_hat == 0.0 and est.exact


def test_exponent_of_power_law():
    T = np.geomspace(10, 1000, 9)
    est = dy.exponent_from_series(dy.MomentSeries(2.0, T, 3.0 * T**1.4, np.zeros(9)))
    assert est.beta_hat == pytest.approx(0.7, abs=1e-12)
    assert est.uncertainty < 1e-12


def test_exponent_uses_upper_hull():
    T = np.geomspace(10, 100, 9)
    v = T**2 * (1 + 0.3 * (np.arange(9) % 2))
    est = dy.exponent_from_series(dy.MomentSeries(2.0, T, v, np.zeros(9)))
    assert est.beta_hat >= est.beta_plain - 1e-12
    assert est.uncertainty > 0


def test_exponent_needs_five_points():
    with pytest.raises(ValueError, match="at least 5"):
        dy.exponent_from_series(dy.MomentSeries(2.0, np.arange(1.0, 5.0), np.ones(4), np.zeros(4)))


def test_free_exponent_near_one():
    est = dy.transport_exponent(free_spec(), dy.StateVector.delta(0), 2, np.geomspace(10, 100, 7),
                                Window.centered(1024))
    assert 0.9 <= est.beta_hat <= 1.05


def test_ballistic_check_diagonal():
    rep = dy.ballistic_check(diag_spec(), dy.StateVector.delta(0), [2, 4], np.geomspace(10, 1000, 7))
    assert rep.passed and all(e.beta_hat == 0.0 for e in rep.estimates)


def test_monotonicity_diagonal():
    rep = dy.beta_monotonicity_check(diag_spec(), dy.StateVector.delta(0), [1, 2, 4], np.geomspace(10, 1000, 7))
    assert rep.passed


def test_monotonicity_uses_fit_slack_only():
    T = np.geomspace(10, 100, 7)

    def est(p, beta, bar):
        v = T ** (p * beta)
        return dy.exponent_from_series(dy.MomentSeries(float(p), T, v, bar * v))

    ests = [est(1, 1.01, 0.0), est(2, 1.0, 0.5), est(4, 1.0, 0.5)]
    rep = dy.beta_monotonicity_check(None, None, [1, 2, 4], T, estimates=ests)
    assert not rep.passed
    assert rep.passed_with_error_bars
    assert rep.worst_drop == pytest.approx(0.01, abs=1e-9)


# ----------------------------------------------------------------- correlators and Parseval


def test_single_site_correlator():
    spec = OperatorSpec(HoppingKernel.zero(), PotentialLaw.constant(0.0), 0.0)
    c = dy.correlator(spec, 0, 0, 30.0, Window(0, 0))
    assert c.a_time == pytest.approx(1.0, rel=1e-14)
    # the quadrature on [-K, K] misses the tails, bounded by tail_bound
    assert abs(c.a_energy - 1.0) <= c.tail_bound


def test_correlator_outside_window_is_zero():
    c = dy.correlator(diag_spec(), 0, 10**6, 30.0)
    assert c.a_time == 0.0 and c.a_energy == 0.0


def test_free_correlator_both_sides():
    c = dy.correlator(free_spec(), 0, 5, 50.0, Window.centered(1024))
    assert c.rel_residual <= 1e-4
    assert c.a_time == pytest.approx(free_correlator(5, 50.0), rel=1e-6)


def test_energy_quadrature_covers_band():
    E, W, n_in = dy.energy_quadrature(3.0, 0.01)
    assert np.all(np.abs(E[:n_in]) <= 3.0) and np.all(np.abs(E[n_in:]) >= 3.0)
    assert W[:n_in].sum() == pytest.approx(6.0, rel=1e-12)
    # the tails integrate a Lorentzian of width 1/T to its closed form
    eta = 0.5
    lor = eta / ((E[n_in:] - 0.0) ** 2 + eta**2)
    assert np.dot(W[n_in:], lor) == pytest.approx(2 * (math.pi / 2 - math.atan(3.0 / eta)), rel=1e-8)


def test_parseval_audit_localized():
    audit = dy.parseval_audit(localized_spec(), trials=10, K1=2, n_max=30, seed=3, window=Window.centered(256))
    assert audit.passed and audit.max_rel_residual <= 1e-4


def test_decay_check_diagonal_degenerate():
    rep = dy.correlator_decay_check(diag_spec(), 0, 100.0, range(50, 100))
    assert rep.passed and rep.degenerate


def test_decay_check_free_fails_inside_front():
    # well inside the ballistic front |n| < 2T the free correlator is flat
    rep = dy.correlator_decay_check(free_spec(), 0, 1000.0, range(20, 201, 10))
    assert not rep.passed


def test_log_correlators_match_direct():
    spec = localized_spec()
    # the eigenvector route loses relative accuracy below about 1e-25
    ns = np.array([5, 10, 15, 20])
    la = dy.log_correlators(spec, 0, 50.0, ns)
    for n, v in zip(ns, la):
        c = dy.correlator(spec, 0, int(n), 50.0, Window.centered(300))
        assert v == pytest.approx(math.log(c.a_energy), abs=1e-9)
        assert v == pytest.approx(math.log(c.a_time), abs=1e-9)
