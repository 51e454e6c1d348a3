import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import solve_banded

from conftest import exp_kernels, specs
from oracles import dense_hamiltonian, exp_table, golden_cos_potential
from qdbounds.lattice import (GOLDEN_MEAN, DegenerateFitError, DiophantineParams, EmptyWindowError, HoppingKernel,
                              KernelError, OperatorSpec, PotentialLaw, Window, assemble, assemble_banded,
                              diophantine_check, kernel_decay_fit, operator_from_config, spectrum_bound,
                              truncation_radius)


# ----------------------------------------------------------------- assemble


def test_diagonal_explicit_potential():
    spec = OperatorSpec(HoppingKernel.zero(), PotentialLaw.explicit([2.0, -1.0]), 0.0)
    np.testing.assert_array_equal(assemble(spec, Window(0, 1)), np.diag([2.0, -1.0]))


def test_nearest_neighbour_pair():
    spec = OperatorSpec(HoppingKernel.nearest_neighbor(), PotentialLaw.constant(0.0), 1.0)
    np.testing.assert_array_equal(assemble(spec, Window(0, 1)), [[0.0, 1.0], [1.0, 0.0]])


def test_long_range_matches_elementwise_oracle():
    spec = OperatorSpec(HoppingKernel.exponential(1.0, 1.0), PotentialLaw.quasiperiodic((0.0, 2.0)), 1.0)
    M = assemble(spec, Window(0, 2))
    assert M[0, 2] == pytest.approx(math.exp(-2.0), rel=1e-15)
    ref = dense_hamiltonian(exp_table(1.0, 1.0, 40), golden_cos_potential(), 1.0, 0, 2)
    np.testing.assert_allclose(M, ref, rtol=1e-14, atol=1e-15)


@given(specs(), st.integers(-50, 50), st.integers(1, 40))
def test_matches_oracle_on_random_specs(spec, lo, size):
    w = Window(lo, lo + size - 1)
    table = {int(k): v for k, v in zip(spec.kernel.offsets, spec.kernel.array)}
    ref = dense_hamiltonian(table, lambda n: float(spec.potential.evaluate([n])[0]), spec.coupling, w.lo, w.hi)
    np.testing.assert_allclose(assemble(spec, w), ref, rtol=1e-13, atol=1e-14)


@given(specs(), st.integers(-100, 100), st.integers(1, 60))
def test_assembled_matrix_is_exactly_hermitian(spec, lo, size):
    M = assemble(spec, Window(lo, lo + size - 1))
    assert np.array_equal(M, M.conj().T)


@given(exp_kernels(), st.floats(-3, 3), st.integers(-200, 200), st.integers(1, 40))
def test_translation_consistency_for_constant_potential(kernel, c, shift, size):
    spec = OperatorSpec(kernel, PotentialLaw.constant(c), 0.7)
    w = Window(0, size - 1)
    assert np.array_equal(assemble(spec, w), assemble(spec, w.shifted(shift)))


@given(st.floats(0.0, 1.0, exclude_max=True), st.integers(-1000, 1000), st.integers(1, 50))
def test_quasiperiodic_phase_covariance(theta, lo, size):
    p1 = PotentialLaw.quasiperiodic((0.3, 2.0), (0.5,), theta)
    p2 = PotentialLaw.quasiperiodic((0.3, 2.0), (0.5,), (theta + GOLDEN_MEAN) % 1.0)
    sites = np.arange(lo, lo + size)
    np.testing.assert_allclose(p1.evaluate(sites + 1), p2.evaluate(sites), atol=1e-9)


def test_banded_storage_matches_dense():
    spec = OperatorSpec(HoppingKernel.exponential(1.0, 1.0), PotentialLaw.quasiperiodic((0.0, 2.0)), 0.3)
    w = Window(-20, 20)
    z = 0.4 + 0.05j
    ab, lu = assemble_banded(spec, w, z)
    b = np.arange(w.size, dtype=complex)
    x = solve_banded(lu, ab, b)
    np.testing.assert_allclose((assemble(spec, w) - z * np.eye(w.size)) @ x, b, atol=1e-10)


def test_empty_window_rejected():
    with pytest.raises(EmptyWindowError):
        Window(3, 2)


def test_non_hermitian_kernel_rejected():
    with pytest.raises(KernelError):
        HoppingKernel((0.5, 0.0, 0.1), 1.0, 1.0)


def test_kernel_above_envelope_rejected():
    with pytest.raises(KernelError):
        HoppingKernel.from_table({1: 2.0}, 1.0, 1.0)


def test_truncation_radius_formula():
    R = truncation_radius(1.0, 1.0, 1e-14)
    assert R == math.ceil(math.log(1e14))
    assert math.exp(-R) < 1e-14 <= math.exp(-(R - 1))


# ----------------------------------------------------------------- spectrum bound


def test_spectrum_bound_diagonal():
    spec = OperatorSpec(HoppingKernel.zero(), PotentialLaw.quasiperiodic((0.0, 2.0)), 0.0)
    assert spectrum_bound(spec) == pytest.approx(3.0)


def test_spectrum_bound_laplacian():
    spec = OperatorSpec(HoppingKernel.nearest_neighbor(), PotentialLaw.constant(0.0), 1.0)
    K = spectrum_bound(spec)
    assert K == 3.0
    lam = np.linalg.eigvalsh(assemble(spec, Window(0, 200)))
    assert np.all(np.abs(lam) <= K - 1)


def test_spectrum_bound_long_range():
    spec = OperatorSpec(HoppingKernel.exponential(1.0, 1.0), PotentialLaw.quasiperiodic((0.0, 2.0)), 1.0)
    K = spectrum_bound(spec)
    assert K == pytest.approx(2.0 / (math.e - 1.0) + 3.0, rel=1e-12)
    lam = np.linalg.eigvalsh(assemble(spec, Window(0, 511)))
    assert np.abs(lam).max() + 1.0 <= K


@given(specs(), st.integers(1, 120))
def test_spectrum_bound_dominates(spec, size):
    lam = np.linalg.eigvalsh(assemble(spec, Window(0, size - 1)))
    assert np.abs(lam).max() <= spectrum_bound(spec) - 1.0 + 1e-12


# ----------------------------------------------------------------- Diophantine check


def test_rational_frequency_fails():
    rep = diophantine_check(0.5, DiophantineParams(kappa=1.0, tau=0.1, k_max=10))
    assert (rep.passed, rep.worst_k, rep.worst_value) == (False, 2, 0.0)


def test_golden_mean_passes_moderate_tau():
    assert diophantine_check(GOLDEN_MEAN, DiophantineParams(1.0, 0.3, 10**4)).passed


def test_golden_mean_fails_demanding_tau():
    rep = diophantine_check(GOLDEN_MEAN, DiophantineParams(1.0, 0.5, 10**4))
    assert not rep.passed
    # the worst denominator of the golden mean is a Fibonacci number
    fib = [1, 2]
    while fib[-1] < 10**4:
        fib.append(fib[-1] + fib[-2])
    assert rep.worst_k in fib


def test_golden_constant_from_continued_fraction():
    # ||q alpha|| q -> 1/sqrt(5) along Fibonacci denominators
    rep = diophantine_check(GOLDEN_MEAN, DiophantineParams(1.0, 0.3, 10**4))
    assert rep.worst_value == pytest.approx(1.0 / (GOLDEN_MEAN + 2.0), abs=0.1)


# ----------------------------------------------------------------- kernel fit


def test_fit_recovers_unit_exponential():
    fit = kernel_decay_fit(HoppingKernel.exponential(1.0, 1.0))
    assert fit.a_fit == pytest.approx(1.0, abs=0.01)
    assert fit.A1_fit == pytest.approx(1.0, abs=0.05)
    assert fit.envelope_ok


def test_fit_recovers_scaled_exponential():
    fit = kernel_decay_fit(HoppingKernel.exponential(3.0, 2.0))
    assert fit.a_fit == pytest.approx(2.0, rel=1e-6)
    assert fit.A1_fit == pytest.approx(3.0, rel=1e-6)


def test_fit_single_distance_is_degenerate_but_envelope_holds():
    kernel = HoppingKernel.from_table({1: 1.0}, math.e, 1.0)
    fit = kernel_decay_fit(kernel)
    assert fit.degenerate and fit.envelope_ok
    assert np.all(np.abs(kernel.array) <= math.e * np.exp(-np.abs(kernel.offsets)) + 1e-15)


def test_fit_zero_kernel_raises():
    with pytest.raises(DegenerateFitError):
        kernel_decay_fit(HoppingKernel.zero())


# ----------------------------------------------------------------- config


def test_operator_from_config():
    spec = operator_from_config({"coupling": 0.1, "kernel": {"type": "exp", "A1": 1.0, "a": 1.0},
                                 "potential": {"type": "quasiperiodic", "fourier_coeffs": {"cos": [0.0, 2.0]}}})
    assert spec.coupling == 0.1
    assert spec.kernel.radius == truncation_radius(1.0, 1.0)
    assert spec.potential.evaluate([0])[0] == pytest.approx(2.0)


def test_table_kernel_from_config_fills_conjugate():
    spec = operator_from_config({"kernel": {"type": "table", "A1": 1.0, "a": 0.5, "table": {1: [0.0, 0.5]}}})
    assert spec.kernel[-1] == pytest.approx(-0.5j)
