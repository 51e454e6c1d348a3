import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm

from conftest import localized_spec, specs
from qdbounds import _backend
from qdbounds.lattice import Window, assemble
from qdbounds.spectral import Eigensystem, eigensystem

IMPLS = _backend.implementations()


def _random_pair(seed, n, complex_B):
    r = np.random.default_rng(seed)
    lam = np.sort(r.normal(size=n) * 2)
    Z = r.normal(size=(n, 3)) + (1j * r.normal(size=(n, 3)) if complex_B else 0)
    B = Z.conj() @ Z.T if complex_B else Z @ Z.T
    T = np.geomspace(1, 1e3, 5)
    return lam, B, T


def _direct_pair_sum(lam, B, T):
    d = lam[:, None] - lam[None, :]
    return np.array([np.sum(B / (1 - 1j * d * t / 2)).real for t in T])


@pytest.mark.parametrize("complex_B", [False, True])
@pytest.mark.parametrize("name", sorted(IMPLS))
def test_pair_sum_matches_direct_formula(name, complex_B):
    lam, B, T = _random_pair(1, 300, complex_B)
    got = _backend.abel_pair_sum(lam, B, T, impl=IMPLS[name])
    np.testing.assert_allclose(got, _direct_pair_sum(lam, B, T), rtol=1e-11)


@given(st.integers(0, 10**6), st.integers(1, 80), st.booleans())
def test_backends_agree(seed, n, complex_B):
    lam, B, T = _random_pair(seed, n, complex_B)
    u = np.random.default_rng(seed + 1).normal(size=n) + 0.5j
    outs = {k: (_backend.abel_pair_sum(lam, B, T, impl=m), _backend.abel_rank1(lam, u, T, impl=m),
                _backend.resolvent_sq(lam, u, np.linspace(-3, 3, 7), 0.1, impl=m)) for k, m in IMPLS.items()}
    ref = outs["python"]
    for k, vals in outs.items():
        for a, b in zip(vals, ref):
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14 * max(1.0, np.abs(b).max()))


def test_rank1_is_pair_sum_of_outer_product():
    r = np.random.default_rng(4)
    lam = r.normal(size=50)
    u = r.normal(size=50) + 1j * r.normal(size=50)
    T = [3.0, 30.0]
    np.testing.assert_allclose(_backend.abel_rank1(lam, u, T), _backend.abel_pair_sum(lam, np.outer(u.conj(), u), T),
                               rtol=1e-12)


def test_resolvent_sq_formula():
    lam = np.array([-1.0, 0.5])
    u = np.array([1.0, 2.0j])
    E, eta = 0.2, 0.3
    ref = abs(1.0 / (-1.0 - E - 1j * eta) + 2.0j / (0.5 - E - 1j * eta)) ** 2
    assert _backend.resolvent_sq(lam, u, [E], eta)[0] == pytest.approx(ref, rel=1e-14)


def test_pure_python_switch():
    env = dict(os.environ, QDBOUNDS_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import qdbounds; print(qdbounds.BACKEND)"],
                         capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == "python"


def test_compiled_backend_is_built():
    assert "compiled" in IMPLS, "the Cython extension is not importable; run the editable install"


# ----------------------------------------------------------------- eigensystem


def test_parity_sectors_reproduce_full_propagation():
    spec = localized_spec()
    w = Window.centered(60)
    es_par = Eigensystem(spec, w, use_parity=True)
    es_full = Eigensystem(spec, w, use_parity=False)
    assert es_par.parity and not es_full.parity
    np.testing.assert_allclose(es_par.eigenvalues, es_full.eigenvalues, atol=1e-12)
    r = np.random.default_rng(2)
    phi = r.normal(size=w.size) + 1j * r.normal(size=w.size)
    ref = expm(-1j * 7.5 * assemble(spec, w)) @ phi
    for es in (es_par, es_full):
        np.testing.assert_allclose(es.propagate(phi, 7.5), ref, atol=1e-10)


@given(specs(), st.integers(1, 30), st.floats(0.0, 20.0))
def test_propagation_matches_expm(spec, R, t):
    w = Window.centered(R)
    phi = np.zeros(w.size, dtype=complex)
    phi[R] = 1.0
    np.testing.assert_allclose(Eigensystem(spec, w).propagate(phi, t), expm(-1j * t * assemble(spec, w)) @ phi,
                               atol=1e-9)


def test_parity_refused_for_asymmetric_potential():
    from qdbounds.lattice import PotentialLaw, HoppingKernel, OperatorSpec
    spec = OperatorSpec(HoppingKernel.nearest_neighbor(), PotentialLaw.quasiperiodic((0.0, 2.0), (), 0.1), 1.0)
    assert not Eigensystem(spec, Window.centered(10)).parity
    with pytest.raises(ValueError):
        Eigensystem(spec, Window.centered(10), use_parity=True)


def test_cache_returns_same_object():
    spec = localized_spec()
    w = Window.centered(20)
    assert eigensystem(spec, w) is eigensystem(spec, w)
