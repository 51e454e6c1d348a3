"""Weighted momentum operators and their commutators with long-range hopping.

``X^gamma_{2p}`` acts as ``(X u)_n = n^p sum_k gamma_k u_{n-k}``.  Its
commutator with the free operator ``(H0 u)_n = sum_k a_{n-k} u_k`` splits
into lower-order momenta::

    -i [H0, X^gamma_{2p}] = sum_{j<p} X^{gamma^j}_{2j},
    gamma^j_m = i binom(p, j) sum_k (-k)^(p-j) a_k gamma_{m-k},

from the binomial expansion of ``n^p - (n-k)^p``.  Commutators follow
:data:`COMMUTATOR_CONVENTION`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import comb

from .dynamics import StateVector, evolve, light_cone_radius, weighted_norm_sq
from .lattice import HoppingKernel, OperatorSpec, Window
from .spectral import eigensystem

# [B1, B2] = B2 B1 - B1 B2
COMMUTATOR_CONVENTION = "B2B1-B1B2"
ENVELOPE_SLACK = 0.1
RESIDUAL_TOL = 1e-12


def bracket(B1: np.ndarray, B2: np.ndarray) -> np.ndarray:
    """``[B1, B2]`` in the convention of :data:`COMMUTATOR_CONVENTION`."""
    return B2 @ B1 - B1 @ B2


class WindowTooSmallError(ValueError):
    pass


@dataclass(frozen=True)
class WeightSequence:
    """Complex weights ``gamma_k`` on offsets ``-R..R``."""

    values: tuple
    decay_amp: float | None = None
    decay_rate: float | None = None

    def __post_init__(self):
        if len(self.values) % 2 != 1:
            raise ValueError("weights must cover a symmetric offset range")
        if self.decay_amp is not None and self.decay_rate is not None:
            env = self.decay_amp * np.exp(-self.decay_rate * np.abs(self.offsets))
            if np.any(np.abs(self.array) > env * (1 + 1e-12)):
                raise ValueError("weights exceed their decay envelope")

    @classmethod
    def from_array(cls, arr, decay_amp=None, decay_rate=None) -> "WeightSequence":
        arr = np.asarray(arr, dtype=np.complex128)
        return cls(tuple(complex(x) for x in arr), decay_amp, decay_rate)

    @classmethod
    def delta(cls) -> "WeightSequence":
        return cls((1.0 + 0j,), 1.0, 1.0)

    @classmethod
    def from_dict(cls, d: dict, decay_amp=None, decay_rate=None) -> "WeightSequence":
        R = max((abs(int(k)) for k in d), default=0)
        arr = np.zeros(2 * R + 1, dtype=np.complex128)
        for k, v in d.items():
            arr[int(k) + R] = complex(v)
        return cls.from_array(arr, decay_amp, decay_rate)

    @classmethod
    def exponential(cls, C: float, c: float, radius: int, phases=None) -> "WeightSequence":
        k = np.arange(-radius, radius + 1)
        arr = C * np.exp(-c * np.abs(k)).astype(np.complex128)
        if phases is not None:
            arr = arr * np.exp(1j * np.asarray(phases))
        return cls.from_array(arr, C, c)

    @classmethod
    def from_kernel(cls, kernel: HoppingKernel, scale: float = 1.0) -> "WeightSequence":
        return cls.from_array(scale * kernel.array, abs(scale) * kernel.decay_amp, kernel.decay_rate)

    @property
    def radius(self) -> int:
        return (len(self.values) - 1) // 2

    @property
    def offsets(self) -> np.ndarray:
        return np.arange(-self.radius, self.radius + 1)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.complex128)

    def lookup(self, d) -> np.ndarray:
        d = np.asarray(d)
        out = np.zeros(d.shape, dtype=np.complex128)
        m = np.abs(d) <= self.radius
        out[m] = self.array[d[m] + self.radius]
        return out

    def is_zero(self) -> bool:
        return not np.any(self.array)

    def convolve(self, u: np.ndarray) -> np.ndarray:
        """``(gamma * u)_n`` on the same index range as ``u`` (zero outside)."""
        R = self.radius
        full = np.convolve(np.asarray(u, dtype=np.complex128), self.array)
        return full[R:R + len(u)]


def _as_weights(kernel, coupling: float = 1.0) -> WeightSequence:
    if isinstance(kernel, WeightSequence):
        return kernel if coupling == 1.0 else WeightSequence.from_array(coupling * kernel.array)
    if isinstance(kernel, HoppingKernel):
        return WeightSequence.from_kernel(kernel, coupling)
    return WeightSequence.from_dict(kernel)


@dataclass(frozen=True)
class MomentumOperator:
    order: int
    weights: WeightSequence

    def apply(self, sites: np.ndarray, u: np.ndarray) -> np.ndarray:
        """``X u`` for ``u`` given on consecutive ``sites`` (zero outside)."""
        return np.asarray(sites, float) ** self.order * self.weights.convolve(u)

    def norm_sq(self, sites: np.ndarray, u: np.ndarray) -> float:
        """``||X u||^2`` evaluated as ``sum |n|^(2p) |(gamma * u)_n|^2``."""
        return weighted_norm_sq(sites, self.weights.convolve(u), 2 * self.order)


def momentum_matrix(op: MomentumOperator, window: Window) -> np.ndarray:
    """``M[i, j] = (lo+i)^p gamma_{(lo+i)-(lo+j)}``."""
    n = window.sites
    return (n.astype(float) ** op.order)[:, None] * op.weights.lookup(n[:, None] - n[None, :])


def commutator_decompose(kernel, gamma: WeightSequence, p: int, coupling: float = 1.0) -> list:
    """Sequences ``gamma^0 .. gamma^{p-1}`` with ``-i[H0, X^gamma_{2p}] = sum_j X^{gamma^j}_{2j}``.

    ``kernel`` may be a :class:`~qdbounds.lattice.HoppingKernel` (scaled by
    ``coupling``), a :class:`WeightSequence` or an offset map.  Each result
    has radius ``R_a + R_gamma``.
    """
    if p < 1:
        raise ValueError("commutator decomposition needs p >= 1")
    a = _as_weights(kernel, coupling)
    k = a.offsets.astype(float)
    out = []
    for j in range(p):
        w = (-k) ** (p - j) * a.array
        seq = 1j * comb(p, j, exact=True) * np.convolve(w, gamma.array)
        out.append(WeightSequence.from_array(seq))
    return out


@dataclass
class CommutatorResidual:
    absolute: float
    relative: float
    collar: int
    interior: tuple
    passed: bool
    tol: float = RESIDUAL_TOL


def commutator_residual(kernel, gamma: WeightSequence, p: int, window: Window, coupling: float = 1.0,
                        tol: float = RESIDUAL_TOL) -> CommutatorResidual:
    """Interior residual of the decomposition identity on ``window``.

    Rows within ``collar = R_a + R_gamma`` of either edge are excluded.
    ``relative`` divides each row by ``max(1, |n|)^p``, the size of the
    momentum weight there; the pass flag uses it because the absolute
    error of ``n^p - (n-k)^p`` grows like ``n^p`` times machine epsilon.
    """
    a = _as_weights(kernel, coupling)
    collar = a.radius + gamma.radius
    if 2 * collar >= window.size:
        raise WindowTooSmallError(f"collar {collar} leaves no interior in a window of {window.size} sites")
    n = window.sites
    H0 = a.lookup(n[:, None] - n[None, :])
    X = momentum_matrix(MomentumOperator(p, gamma), window)
    lhs = -1j * bracket(H0, X)
    rhs = np.zeros_like(lhs)
    for j, g in enumerate(commutator_decompose(a, gamma, p)):
        rhs += momentum_matrix(MomentumOperator(j, g), window)
    diff = np.abs(lhs - rhs)[collar:window.size - collar]
    rows = n[collar:window.size - collar]
    absolute = float(diff.max())
    scale = np.maximum(1.0, np.abs(rows).astype(float)) ** p
    relative = float((diff / scale[:, None]).max())
    return CommutatorResidual(absolute, relative, collar, (int(rows[0]), int(rows[-1])), relative <= tol, tol)


@dataclass
class EnvelopeFit:
    C: float
    rate: float
    points: int


def envelope_fit(seq: WeightSequence) -> EnvelopeFit:
    """Fit ``ln|gamma_m|`` against ``|m|`` over the outer half of the support.

    ``C`` is raised so that ``C exp(-rate |m|)`` dominates every entry.
    """
    m = seq.offsets
    v = np.abs(seq.array)
    sel = (np.abs(m) >= seq.radius / 2) & (v > 0)
    if sel.sum() < 2 or np.unique(np.abs(m[sel])).size < 2:
        return EnvelopeFit(float(v.max()) if v.size else 0.0, math.inf, int(sel.sum()))
    slope, _ = np.polyfit(np.abs(m[sel]), np.log(v[sel]), 1)
    rate = float(-slope)
    nz = v > 0
    C = float(np.max(v[nz] * np.exp(rate * np.abs(m[nz]))))
    return EnvelopeFit(C, rate, int(sel.sum()))


# --------------------------------------------------------------------------- Heisenberg growth


@dataclass
class GrowthReport:
    N: int
    t_grid: np.ndarray
    norms: np.ndarray
    hatX_H0: np.ndarray
    hatX_H: np.ndarray
    slope: float
    tol: float
    passed: bool
    triangle_margin_H: float
    triangle_margin_H0: float
    triangle_ok: bool
    exact: bool = False
    window: tuple = (0, 0)
    meta: dict = field(default_factory=dict)

    def rows(self):
        for t, nx, h0, h in zip(self.t_grid, self.norms, self.hatX_H0, self.hatX_H):
            yield {"N": self.N, "t": float(t), "norm": float(nx), "hatX_H0": float(h0), "hatX_H": float(h),
                   "slope": self.slope}


def _hatX_norms(spec, X, decomp, sites, psi):
    Xpsi = X.apply(sites, psi)
    h0 = np.zeros_like(psi)
    for j, g in enumerate(decomp):
        h0 += MomentumOperator(j, g).apply(sites, psi)
    # the potential adds -i (X V - V X)
    V = spec.potential.evaluate(sites)
    hv = -1j * (X.apply(sites, V * psi) - V * Xpsi)
    return float(np.linalg.norm(h0)), float(np.linalg.norm(h0 + hv))


def heisenberg_moment_growth(spec: OperatorSpec, gamma: WeightSequence, N: int, phi: StateVector, t_grid,
                             window: Window | None = None, growth_tol: float | None = None,
                             audit_nodes: int = 8) -> GrowthReport:
    """Growth of ``||X^gamma_{2N} exp(-itH) phi||`` with a triangle-inequality audit.

    The log-log slope over ``t_grid`` must not exceed ``N + growth_tol``
    (default ``0.05 N``).  The audit checks
    ``||X phi_t|| <= ||X phi|| + int_0^t ||hatX phi_s|| ds`` with ``hatX``
    the commutator with the full ``H``; the same bound with the
    free-operator commutator is reported alongside.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    t_grid = np.asarray(sorted(t_grid), dtype=float)
    if np.any(t_grid <= 0) or t_grid.size < 2:
        raise ValueError("t_grid needs at least two positive times")
    tol = 0.05 * N if growth_tol is None else growth_tol
    if window is None:
        R = math.ceil(light_cone_radius(spec, phi.K1, t_grid[-1])) + gamma.radius + max(8, spec.kernel.radius)
        window = Window.centered(R)
    # leak check at the latest time; evolve may hand back a larger window
    window = evolve(spec, phi, t_grid[-1], window).window
    es = eigensystem(spec, window)
    sites = window.sites
    phi_vec = phi.on(window)
    X = MomentumOperator(N, gamma)
    decomp = commutator_decompose(spec.kernel, gamma, N, spec.coupling)

    def state(t):
        return es.propagate(phi_vec, t)

    norms = np.array([math.sqrt(X.norm_sq(sites, state(t))) for t in t_grid])
    hat = np.array([_hatX_norms(spec, X, decomp, sites, state(t)) for t in t_grid])

    # triangle audit on Gauss-Legendre panels between consecutive times
    x, w = np.polynomial.legendre.leggauss(audit_nodes)
    edges = np.concatenate([[0.0], t_grid])
    int_H0 = int_H = 0.0
    X0 = math.sqrt(X.norm_sq(sites, phi_vec))
    margin_H = margin_H0 = math.inf
    for i in range(t_grid.size):
        a_, b_ = edges[i], edges[i + 1]
        ts = 0.5 * (b_ - a_) * x + 0.5 * (a_ + b_)
        vals = np.array([_hatX_norms(spec, X, decomp, sites, es.propagate(phi_vec, s)) for s in ts])
        int_H0 += 0.5 * (b_ - a_) * float(w @ vals[:, 0])
        int_H += 0.5 * (b_ - a_) * float(w @ vals[:, 1])
        margin_H = min(margin_H, X0 + int_H - norms[i])
        margin_H0 = min(margin_H0, X0 + int_H0 - norms[i])

    pos = norms > 0
    if pos.sum() < 2:
        slope, exact = 0.0, True
    else:
        slope = float(np.polyfit(np.log(t_grid[pos]), np.log(norms[pos]), 1)[0])
        exact = False
    scale = max(1.0, float(norms.max()))
    return GrowthReport(N, t_grid, norms, hat[:, 0], hat[:, 1], slope, tol, bool(slope <= N + tol),
                        float(margin_H), float(margin_H0), bool(margin_H >= -1e-8 * scale), exact,
                        (window.lo, window.hi))
