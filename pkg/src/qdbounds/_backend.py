"""Select the compiled kernels or the numpy fallback at import time.

Set ``QDBOUNDS_PURE_PYTHON=1`` to force the fallback even when the
extension is built.
"""
import os

import numpy as np

from . import _kernels_py

_FORCE_PY = os.environ.get("QDBOUNDS_PURE_PYTHON", "").strip().lower() in ("1", "true", "yes")

_compiled = None
if not _FORCE_PY:
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _kernels_py


def _vec(x, dtype):
    return np.ascontiguousarray(x, dtype=dtype)


def abel_pair_sum(lam, B, T, impl=None):
    """Abel-averaged expectation ``sum_kl B_kl / (1 - i (lam_k - lam_l) T/2)``.

    ``B`` must be real symmetric or complex Hermitian; only the upper
    triangle is read by the compiled kernel.  Returns one value per entry
    of ``T``.
    """
    impl = impl or _impl
    lam = _vec(lam, np.float64)
    T = _vec(np.atleast_1d(T), np.float64)
    if np.iscomplexobj(B):
        return impl.abel_pair_sum_complex(lam, _vec(B, np.complex128), T)
    return impl.abel_pair_sum_real(lam, _vec(B, np.float64), T)


def abel_rank1(lam, u, T, impl=None):
    """:func:`abel_pair_sum` for ``B = conj(u) u^T``."""
    impl = impl or _impl
    return impl.abel_rank1(_vec(lam, np.float64), _vec(u, np.complex128),
                           _vec(np.atleast_1d(T), np.float64))


def resolvent_sq(lam, u, E, eta, impl=None):
    """``|sum_k u_k / (lam_k - E - i eta)|^2`` on an energy grid."""
    impl = impl or _impl
    return impl.resolvent_sq(_vec(lam, np.float64), _vec(u, np.complex128),
                             _vec(np.atleast_1d(E), np.float64), float(eta))


def implementations():
    """Available kernel modules keyed by name (for benchmarks and tests)."""
    out = {"python": _kernels_py}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out
