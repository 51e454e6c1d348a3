import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import free_spec, localized_spec
from oracles import exact_commutator_coefficients
from qdbounds import commutator as cm
from qdbounds.dynamics import StateVector, weighted_norm_sq
from qdbounds.experiments import random_trial
from qdbounds.lattice import HoppingKernel, Window

NN = {1: 1.0, -1: 1.0}


def seq_dict(seq, tol=0.0):
    return {int(d): complex(v) for d, v in zip(seq.offsets, seq.array) if abs(v) > tol}


# ----------------------------------------------------------------- momentum operators


def test_delta_weight_order_zero_is_identity():
    w = Window(-3, 3)
    np.testing.assert_array_equal(cm.momentum_matrix(cm.MomentumOperator(0, cm.WeightSequence.delta()), w),
                                  np.eye(7))


def test_delta_weight_order_one_is_position():
    w = Window(-3, 3)
    np.testing.assert_array_equal(cm.momentum_matrix(cm.MomentumOperator(1, cm.WeightSequence.delta()), w),
                                  np.diag(np.arange(-3, 4)))


def test_momentum_matrix_elementwise():
    gamma = cm.WeightSequence.from_dict({1: 2.0, -1: 3.0})
    M = cm.momentum_matrix(cm.MomentumOperator(2, gamma), Window(0, 3))
    # M[n, m] = n^2 gamma_{n-m}
    assert M[2, 1] == 4 * 2.0
    assert M[2, 3] == 4 * 3.0
    assert M[3, 2] == 9 * 2.0
    assert M[0, 1] == 0.0


@given(st.integers(0, 3), st.integers(0, 10**6))
def test_apply_matches_matrix(p, seed):
    r = np.random.default_rng(seed)
    gamma = cm.WeightSequence.from_array(r.normal(size=5) + 1j * r.normal(size=5))
    w = Window(-10, 10)
    u = r.normal(size=w.size) + 1j * r.normal(size=w.size)
    op = cm.MomentumOperator(p, gamma)
    np.testing.assert_allclose(op.apply(w.sites, u), cm.momentum_matrix(op, w) @ u, atol=1e-10)


@given(st.integers(0, 3), st.integers(0, 10**6))
def test_norm_sq_bit_identical_to_weighted_norm(p, seed):
    r = np.random.default_rng(seed)
    gamma = cm.WeightSequence.from_array(r.normal(size=3) + 0j)
    sites = np.arange(-20, 21)
    u = r.normal(size=41) + 1j * r.normal(size=41)
    op = cm.MomentumOperator(p, gamma)
    assert op.norm_sq(sites, u) == weighted_norm_sq(sites, gamma.convolve(u), 2 * p)


def test_weights_must_respect_envelope():
    with pytest.raises(ValueError):
        cm.WeightSequence.from_array([0.0, 1.0, 5.0], decay_amp=1.0, decay_rate=1.0)


# ----------------------------------------------------------------- decomposition


def test_nearest_neighbour_order_one():
    (g0,) = cm.commutator_decompose(NN, cm.WeightSequence.delta(), 1)
    d = seq_dict(g0)
    assert d == {-1: 1j, 1: -1j}


def test_nearest_neighbour_order_two():
    g0, g1 = cm.commutator_decompose(NN, cm.WeightSequence.delta(), 2)
    assert seq_dict(g0) == {-1: 1j, 1: 1j}
    assert seq_dict(g1) == {-1: 2j, 1: -2j}


def test_zero_kernel_gives_zero():
    out = cm.commutator_decompose({0: 0.0}, cm.WeightSequence.delta(), 3)
    assert all(g.is_zero() for g in out)


def test_order_zero_rejected():
    with pytest.raises(ValueError):
        cm.commutator_decompose(NN, cm.WeightSequence.delta(), 0)


int_tables = st.dictionaries(st.integers(-3, 3), st.integers(-4, 4), min_size=1, max_size=5)


@given(int_tables, int_tables, st.integers(1, 4))
def test_decomposition_matches_exact_oracle(a_half, g_table, p):
    a_table = {}
    for k, v in a_half.items():
        a_table[k] = v
        a_table[-k] = v
    gamma = cm.WeightSequence.from_dict(g_table)
    exact = exact_commutator_coefficients(a_table, g_table, p)
    got = cm.commutator_decompose(a_table, gamma, p)
    for j in range(p):
        for d, v in zip(got[j].offsets, got[j].array):
            ref = -1j * float(exact[j].get(int(d), 0))
            assert v == ref, (j, d, v, ref)


def test_bracket_convention():
    B1 = np.array([[0, 1], [0, 0]])
    B2 = np.array([[0, 0], [1, 0]])
    assert cm.COMMUTATOR_CONVENTION == "B2B1-B1B2"
    np.testing.assert_array_equal(cm.bracket(B1, B2), B2 @ B1 - B1 @ B2)
    np.testing.assert_array_equal(cm.bracket(B1, B2), [[-1, 0], [0, 1]])


@pytest.mark.parametrize("p", [1, 2, 3])
def test_residual_exponential_kernel(p):
    kernel = HoppingKernel.exponential(1.0, 1.0)
    gamma = cm.WeightSequence.exponential(1.0, 1.0, 10)
    res = cm.commutator_residual(kernel, gamma, p, Window(0, 255))
    assert res.passed and res.relative <= 1e-12
    assert res.collar == kernel.radius + 10


def test_residual_nearest_neighbour_is_exact():
    res = cm.commutator_residual(NN, cm.WeightSequence.delta(), 3, Window(-40, 40))
    assert res.absolute == 0.0


def test_residual_window_too_small():
    with pytest.raises(cm.WindowTooSmallError):
        cm.commutator_residual(HoppingKernel.exponential(1.0, 1.0), cm.WeightSequence.exponential(1, 1, 20), 2,
                               Window(0, 60))


@given(st.integers(0, 2**32 - 1))
def test_random_trials_close_with_positive_envelope(seed):
    kernel, gamma, p, a, c = random_trial(np.random.default_rng(seed))
    collar = kernel.radius + gamma.radius
    res = cm.commutator_residual(kernel, gamma, p, Window(0, 2 * collar + 63))
    assert res.passed
    for g in cm.commutator_decompose(kernel, gamma, p):
        fit = cm.envelope_fit(g)
        assert fit.rate >= min(a, c) - cm.ENVELOPE_SLACK
        assert np.all(np.abs(g.array) <= fit.C * np.exp(-fit.rate * np.abs(g.offsets)) * (1 + 1e-12))


def test_envelope_of_pure_exponential():
    fit = cm.envelope_fit(cm.WeightSequence.exponential(2.0, 0.7, 30))
    assert fit.rate == pytest.approx(0.7, rel=1e-10)
    assert fit.C == pytest.approx(2.0, rel=1e-10)


# ----------------------------------------------------------------- Heisenberg growth


def test_free_position_growth_is_linear():
    # ||X exp(-itH) delta_0||^2 = 2 t^2 on the free line
    t = np.array([2.0, 4.0, 8.0, 16.0])
    rep = cm.heisenberg_moment_growth(free_spec(), cm.WeightSequence.delta(), 1, StateVector.delta(0), t)
    np.testing.assert_allclose(rep.norms, math.sqrt(2) * t, rtol=1e-9)
    assert rep.slope == pytest.approx(1.0, abs=1e-9)
    assert rep.passed and rep.triangle_ok


def test_free_growth_order_two():
    t = np.geomspace(4, 32, 5)
    rep = cm.heisenberg_moment_growth(free_spec(), cm.WeightSequence.delta(), 2, StateVector.delta(0), t)
    # ||X^2 psi_t||^2 = <X^4>(t) = 6 t^4 + 2 t^2
    np.testing.assert_allclose(rep.norms, np.sqrt(6 * t**4 + 2 * t**2), rtol=1e-9)
    assert rep.passed and rep.triangle_ok


def test_growth_with_potential_respects_triangle_bound():
    rep = cm.heisenberg_moment_growth(localized_spec(), cm.WeightSequence.exponential(1.0, 1.0, 8), 2,
                                      StateVector.delta(0), [1.0, 2.0, 5.0, 10.0])
    assert rep.triangle_ok
    assert rep.passed


def test_diagonal_growth_is_exact():
    from qdbounds.lattice import OperatorSpec, PotentialLaw
    spec = OperatorSpec(HoppingKernel.zero(), PotentialLaw.constant(1.0), 0.0)
    rep = cm.heisenberg_moment_growth(spec, cm.WeightSequence.delta(), 1, StateVector.delta(0), [1.0, 10.0])
    assert rep.exact and rep.slope == 0.0 and np.all(rep.norms == 0.0)


def test_growth_needs_positive_order():
    with pytest.raises(ValueError):
        cm.heisenberg_moment_growth(free_spec(), cm.WeightSequence.delta(), 0, StateVector.delta(0), [1.0, 2.0])
