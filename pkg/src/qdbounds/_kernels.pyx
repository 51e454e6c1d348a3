# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops.

Every function here has a numpy twin with the same signature in
``_kernels_py``; ``_backend`` picks one at import time.

All Abel sums use the closed form of the exponential time average

    (2/T) * int_0^inf exp(-2t/T) exp(i w t) dt = 1 / (1 - i w T / 2)

applied to every pair of eigenvalues (k, l) with w = lam_k - lam_l.
"""
import numpy as np


def abel_pair_sum_real(const double[::1] lam, const double[:, ::1] B, const double[::1] T):
    """Sum_kl B_kl / (1 + x_kl^2), x_kl = (lam_k - lam_l) T / 2, for real symmetric B."""
    cdef Py_ssize_t n = lam.shape[0], nt = T.shape[0], k, l, m
    cdef double d, b, x
    out = np.zeros(nt)
    half_arr = 0.5 * np.asarray(T, dtype=np.float64)
    cdef double[::1] acc = out
    cdef double[::1] half = half_arr
    with nogil:
        for k in range(n):
            for m in range(nt):
                acc[m] += B[k, k]
            for l in range(k + 1, n):
                d = lam[k] - lam[l]
                b = 2.0 * B[k, l]
                for m in range(nt):
                    x = d * half[m]
                    acc[m] += b / (1.0 + x * x)
    return out


def abel_pair_sum_complex(const double[::1] lam, const double complex[:, ::1] B, const double[::1] T):
    """Hermitian-B version of :func:`abel_pair_sum_real`."""
    cdef Py_ssize_t n = lam.shape[0], nt = T.shape[0], k, l, m
    cdef double d, br, bi, x
    cdef double complex b
    out = np.zeros(nt)
    half_arr = 0.5 * np.asarray(T, dtype=np.float64)
    cdef double[::1] acc = out
    cdef double[::1] half = half_arr
    with nogil:
        for k in range(n):
            for m in range(nt):
                acc[m] += B[k, k].real
            for l in range(k + 1, n):
                d = lam[k] - lam[l]
                b = B[k, l]
                br = 2.0 * b.real
                bi = 2.0 * b.imag
                for m in range(nt):
                    x = d * half[m]
                    acc[m] += (br - bi * x) / (1.0 + x * x)
    return out


def abel_rank1(const double[::1] lam, const double complex[::1] u, const double[::1] T):
    """Pair sum with B_kl = conj(u_k) u_l, never forming B."""
    cdef Py_ssize_t n = lam.shape[0], nt = T.shape[0], k, l, m
    cdef double d, br, bi, x
    cdef double complex b, uk
    out = np.zeros(nt)
    half_arr = 0.5 * np.asarray(T, dtype=np.float64)
    cdef double[::1] acc = out
    cdef double[::1] half = half_arr
    with nogil:
        for k in range(n):
            uk = u[k]
            for m in range(nt):
                acc[m] += uk.real * uk.real + uk.imag * uk.imag
            for l in range(k + 1, n):
                d = lam[k] - lam[l]
                b = uk.conjugate() * u[l]
                br = 2.0 * b.real
                bi = 2.0 * b.imag
                for m in range(nt):
                    x = d * half[m]
                    acc[m] += (br - bi * x) / (1.0 + x * x)
    return out


def resolvent_sq(const double[::1] lam, const double complex[::1] u, const double[::1] E, double eta):
    """|sum_k u_k / (lam_k - E - i eta)|^2 for every E."""
    cdef Py_ssize_t n = lam.shape[0], ne = E.shape[0], k, m
    cdef double d, den, sr, si, ur, ui, eta2 = eta * eta
    out = np.empty(ne)
    cdef double[::1] res = out
    with nogil:
        for m in range(ne):
            sr = 0.0
            si = 0.0
            for k in range(n):
                d = lam[k] - E[m]
                den = d * d + eta2
                ur = u[k].real
                ui = u[k].imag
                # u (d + i eta) / den
                sr += (ur * d - ui * eta) / den
                si += (ui * d + ur * eta) / den
            res[m] = sr * sr + si * si
    return out
