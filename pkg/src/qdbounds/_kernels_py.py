"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

Rows are processed in blocks so that the temporaries stay a few tens of
megabytes even for 8k x 8k pair sums.
"""
import numpy as np

_BLOCK = 256


def _pair_sum(lam, B, T, hermitian_complex):
    lam = np.asarray(lam, dtype=np.float64)
    half = 0.5 * np.asarray(T, dtype=np.float64)
    out = np.zeros(half.shape[0])
    n = lam.shape[0]
    for start in range(0, n, _BLOCK):
        stop = min(start + _BLOCK, n)
        d = lam[start:stop, None] - lam[None, :]
        blk = B[start:stop]
        if hermitian_complex:
            br, bi = blk.real, blk.imag
        for m, h in enumerate(half):
            x = d * h
            if hermitian_complex:
                out[m] += np.sum((br - bi * x) / (1.0 + x * x))
            else:
                out[m] += np.sum(blk / (1.0 + x * x))
    return out


def abel_pair_sum_real(lam, B, T):
    return _pair_sum(lam, np.asarray(B, dtype=np.float64), T, False)


def abel_pair_sum_complex(lam, B, T):
    return _pair_sum(lam, np.asarray(B, dtype=np.complex128), T, True)


def abel_rank1(lam, u, T):
    lam = np.asarray(lam, dtype=np.float64)
    u = np.asarray(u, dtype=np.complex128)
    half = 0.5 * np.asarray(T, dtype=np.float64)
    out = np.zeros(half.shape[0])
    n = lam.shape[0]
    for start in range(0, n, _BLOCK):
        stop = min(start + _BLOCK, n)
        d = lam[start:stop, None] - lam[None, :]
        b = np.conj(u[start:stop, None]) * u[None, :]
        br, bi = b.real, b.imag
        for m, h in enumerate(half):
            x = d * h
            out[m] += np.sum((br - bi * x) / (1.0 + x * x))
    return out


def resolvent_sq(lam, u, E, eta):
    lam = np.asarray(lam, dtype=np.float64)
    u = np.asarray(u, dtype=np.complex128)
    E = np.asarray(E, dtype=np.float64)
    out = np.empty(E.shape[0])
    for start in range(0, E.shape[0], _BLOCK):
        stop = min(start + _BLOCK, E.shape[0])
        z = E[start:stop, None] + 1j * eta
        s = (u[None, :] / (lam[None, :] - z)).sum(axis=1)
        out[start:stop] = s.real**2 + s.imag**2
    return out
