"""Restricted Green's functions and the single-barrier machinery.

``G_L(z) = (R_L (H - z) R_L)^{-1}`` on a window ``L``.  Built on top of it:

* :func:`good_box` / :func:`scan_good_boxes` / :func:`bad_box_count` --
  off-diagonal decay inside candidate boxes,
* :func:`resolvent_identity_residual` -- the two-block resolvent identity,
* :func:`barrier_chain` -- propagation of one good box's decay to the
  full-line Green's function between the initial support and a far site,
* :func:`combes_thomas_check` -- exponential decay away from the spectrum.
"""
from __future__ import annotations

import math
import threading
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .lattice import OperatorSpec, Window, assemble, assemble_banded, spectrum_bound

SOLVE_TOL = 1e-10
IDENTITY_TOL = 1e-8
TRUNC_TOL = 1e-12
# round-off slack for |G_mn| <= 1/eta
_BOUND_RTOL = 1e-8


class NumericalError(RuntimeError):
    pass


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class Energy:
    """Spectral parameter ``z = E + i eta`` with ``eta > 0``."""

    E: float
    eta: float

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")

    @classmethod
    def from_T(cls, E: float, T: float) -> "Energy":
        return cls(float(E), 1.0 / float(T))

    @property
    def z(self) -> complex:
        return complex(self.E, self.eta)

    @property
    def T(self) -> float:
        return 1.0 / self.eta


def as_energy(z) -> Energy:
    if isinstance(z, Energy):
        return z
    z = complex(z)
    return Energy(z.real, z.imag)


class ResolventAudit:
    """Running record of ``max|G| * eta`` over every Green's function computed."""

    def __init__(self):
        self._lock = threading.Lock()
        self.reset()

    def reset(self):
        with getattr(self, "_lock", threading.Lock()):
            self.checked = 0
            self.violations = 0
            self.worst_ratio = 0.0

    def record(self, max_abs: float, eta: float) -> bool:
        ratio = max_abs * eta
        ok = ratio <= 1.0 + _BOUND_RTOL
        with self._lock:
            self.checked += 1
            self.worst_ratio = max(self.worst_ratio, ratio)
            if not ok:
                self.violations += 1
        return ok


RESOLVENT_AUDIT = ResolventAudit()


@dataclass
class GreensMatrix:
    """Entries ``G_L(z)(m, n)`` for all ``m`` in the window and ``n`` in ``col_sites``."""

    window: Window
    z: Energy
    entries: np.ndarray
    col_sites: np.ndarray | None = None
    residual: float = 0.0

    def __post_init__(self):
        self.max_abs = float(np.max(np.abs(self.entries))) if self.entries.size else 0.0
        self.bound_ok = RESOLVENT_AUDIT.record(self.max_abs, self.z.eta)

    @property
    def cols(self) -> np.ndarray:
        return self.window.sites if self.col_sites is None else self.col_sites

    def _col(self, n):
        if self.col_sites is None:
            return self.window.index(n)
        n = np.asarray(n)
        pos = np.searchsorted(self.col_sites, n)
        if np.any(pos >= len(self.col_sites)) or np.any(self.col_sites[np.minimum(pos, len(self.col_sites) - 1)] != n):
            raise IndexError(f"column(s) {n} not computed")
        return pos

    def __call__(self, m, n):
        return self.entries[self.window.index(m), self._col(n)]

    def block(self, rows, cols) -> np.ndarray:
        return self.entries[np.ix_(self.window.index(np.asarray(rows)), np.atleast_1d(self._col(np.asarray(cols))))]


def greens(spec: OperatorSpec, window: Window, z, solve_tol: float = SOLVE_TOL) -> GreensMatrix:
    """Dense ``G_L(z)`` by LU with one step of iterative refinement.

    Raises :class:`NumericalError` (with a 1-norm condition estimate) when
    the residual ``max|(H_L - z) G - I|`` exceeds ``solve_tol``.
    """
    z = as_energy(z)
    M = assemble(spec, window).astype(np.complex128)
    M[np.diag_indices_from(M)] -= z.z
    eye = np.eye(window.size, dtype=np.complex128)
    if not np.any(M - np.diag(np.diag(M))):
        # no hopping inside the window: the inverse is exact entrywise
        G = np.diag(1.0 / np.diag(M))
        res = float(np.max(np.abs(M @ G - eye)))
        return GreensMatrix(window, z, G, None, res)
    lu = sla.lu_factor(M, check_finite=False)
    G = sla.lu_solve(lu, eye, check_finite=False)
    G += sla.lu_solve(lu, eye - M @ G, check_finite=False)
    res = float(np.max(np.abs(M @ G - eye)))
    if not res <= solve_tol:
        cond = float(np.linalg.cond(M, 1))
        raise NumericalError(f"Green's function residual {res:.2e} > {solve_tol:.0e} (cond_1 ~ {cond:.2e})")
    return GreensMatrix(window, z, G, None, res)


def _banded_matvec(ab, lu, x):
    l, u = lu
    n = ab.shape[1]
    diags = []
    offsets = []
    for k in range(-l, u + 1):
        # ab[u + i - j, j] holds M[i, j]; M[i, i + k] lives in row u - k
        row = ab[u - k]
        if k >= 0:
            diags.append(row[k:])
        else:
            diags.append(row[: n + k])
        offsets.append(k)
    M = sp.diags(diags, offsets, shape=(n, n), format="csr")
    return M @ x


def _solve_columns(spec: OperatorSpec, window: Window, zc: complex, cols, solve_tol: float):
    """``(H_L - zc)^{-1}`` applied to the unit vectors at ``cols``: banded LU plus one refinement step."""
    ab, lu = assemble_banded(spec, window, zc)
    rhs = np.zeros((window.size, cols.size), dtype=np.complex128)
    rhs[window.index(cols), np.arange(cols.size)] = 1.0
    X = sla.solve_banded(lu, ab, rhs, check_finite=False)
    R = rhs - _banded_matvec(ab, lu, X)
    X += sla.solve_banded(lu, ab, R, check_finite=False)
    res = float(np.max(np.abs(rhs - _banded_matvec(ab, lu, X))))
    if not res <= solve_tol:
        raise NumericalError(f"banded solve residual {res:.2e} > {solve_tol:.0e}")
    return X, res


def greens_columns(spec: OperatorSpec, window: Window, z, cols, solve_tol: float = SOLVE_TOL) -> GreensMatrix:
    """Selected columns of ``G_L(z)`` by banded LU with one refinement step.

    Cost is linear in the window size, so long truncated half-lines are cheap.
    """
    z = as_energy(z)
    cols = np.unique(np.atleast_1d(np.asarray(cols, dtype=np.int64)))
    X, res = _solve_columns(spec, window, z.z, cols, solve_tol)
    return GreensMatrix(window, z, X, cols, res)


def greens_row(spec: OperatorSpec, window: Window, z, j: int, solve_tol: float = SOLVE_TOL) -> np.ndarray:
    """``G_L(z)(j, n)`` for every ``n`` in the window.

    Uses ``G(j, n; z) = conj(G(n, j; conj z))`` for Hermitian ``H``.
    """
    z = as_energy(z)
    if spec.is_real:
        # complex-symmetric case: row equals column
        return greens_columns(spec, window, z, [j], solve_tol).entries[:, 0]
    X, res = _solve_columns(spec, window, np.conj(z.z), np.array([j], dtype=np.int64), solve_tol)
    row = np.conj(X[:, 0])
    RESOLVENT_AUDIT.record(float(np.abs(row).max()), z.eta)
    return row


# --------------------------------------------------------------------------- good boxes


@dataclass
class GoodBoxReport:
    interval: tuple
    delta: float
    threshold: float
    separation: int
    max_offdiag: float
    passed: bool
    witness_pair: tuple | None
    E: float
    eta: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d


def good_box(spec: OperatorSpec, I: Window, z, delta: float) -> GoodBoxReport:
    """Check ``|G_I(z)(n, n')| <= exp(-|I|^delta)`` for all ``|n - n'| >= |I|/20``.

    ``|I|`` is the site count; the separation is rounded up and pairs at
    exactly the cut are tested.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must satisfy 0 < delta < 1, got {delta}")
    if I.size < 2:
        raise ValueError("box must contain at least 2 sites")
    z = as_energy(z)
    G = greens(spec, I, z).entries
    size = I.size
    sep = math.ceil(size / 20)
    thr = math.exp(-(size**delta))
    i, j = np.indices(G.shape)
    A = np.where(np.abs(i - j) >= sep, np.abs(G), -1.0)
    k = int(np.argmax(A))
    mx = float(A.flat[k])
    wi, wj = divmod(k, size)
    witness = (int(I.lo + wi), int(I.lo + wj))
    return GoodBoxReport((I.lo, I.hi), delta, thr, sep, mx, bool(mx <= thr), witness, z.E, z.eta)


@dataclass
class BoxScan:
    N: int
    ell: int
    reports: list
    left_pass: bool
    right_pass: bool

    @property
    def any_pass(self) -> bool:
        return self.left_pass or self.right_pass

    @property
    def passing(self) -> list:
        return [r for r in self.reports if r.passed]


def min_admissible_ell(N: int, delta: float) -> int:
    """Smallest half-width with ``2 ell + 1 >= N^delta``."""
    return max(1, math.ceil((N**delta - 1.0) / 2.0 - 1e-12))


def _check_scan_args(N: int, delta: float, ell: int):
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must satisfy 0 < delta < 1, got {delta}")
    if ell < 1 or N < 8 * ell:
        raise ValueError(f"need N >= 8*ell (N={N}, ell={ell})")
    if 2 * ell + 1 < N**delta:
        raise ValueError(f"box size {2 * ell + 1} < N^delta = {N**delta:.3f}")


def candidate_centers(N: int, ell: int):
    """Centres of stride-``ell`` boxes inside ``[-N/2, -N/4]`` and ``[N/4, N/2]``."""
    lo, hi = math.ceil(N / 4), N // 2
    right = list(range(lo + ell, hi - ell + 1, ell))
    left = [-b for b in right]
    return sorted(left), right


def scan_good_boxes(spec: OperatorSpec, N: int, z, delta: float, ell: int | None = None) -> BoxScan:
    """Slide boxes ``[b - ell, b + ell]`` across both quarter-ranges of ``[-N/2, N/2]``.

    ``ell=None`` picks the smallest admissible half-width
    (:func:`min_admissible_ell`).
    """
    if ell is None:
        ell = min_admissible_ell(N, delta)
    _check_scan_args(N, delta, ell)
    left, right = candidate_centers(N, ell)
    if not right:
        raise ValueError(f"no box of half-width {ell} fits in [N/4, N/2] for N={N}")
    reps_l = [good_box(spec, Window(b - ell, b + ell), z, delta) for b in left]
    reps_r = [good_box(spec, Window(b - ell, b + ell), z, delta) for b in right]
    return BoxScan(N, ell, reps_l + reps_r, any(r.passed for r in reps_l), any(r.passed for r in reps_r))


@dataclass
class BadBoxCount:
    count: int
    candidates: int
    N: int
    sublinear_pass: bool
    delta0: float
    delta0_fit: float | None

    @property
    def fraction(self) -> float:
        return self.count / self.N


def bad_box_count(spec: OperatorSpec, N: int, z, ell: int | None, delta: float, delta0: float = 0.1) -> BadBoxCount:
    """Count centres ``|b| <= N`` whose box ``[b - ell, b + ell]`` is not good."""
    if ell is None:
        ell = min_admissible_ell(N, delta)
    _check_scan_args(N, delta, ell)
    bad = 0
    centers = range(-N, N + 1)
    for b in centers:
        if not good_box(spec, Window(b - ell, b + ell), z, delta).passed:
            bad += 1
    fit = 1.0 - math.log(bad) / math.log(N) if bad >= 1 else None
    return BadBoxCount(bad, len(centers), N, bad <= N ** (1.0 - delta0), delta0, fit)


# --------------------------------------------------------------------------- resolvent identity


def resolvent_identity_residual(spec: OperatorSpec, window: Window, split: int, z, first: str = "left") -> float:
    """Max residual of the two-block resolvent identity.

    With ``L = L1 u L2`` split after site ``split`` and ``m`` in ``L1``::

        G_L(m, n) = G_L1(m, n) chi_L1(n) - sum_{n1 in L1, n2 in L2} G_L1(m, n1) H(n1, n2) G_L(n2, n)

    ``first`` selects which side of the split plays ``L1``.
    """
    if not window.lo <= split < window.hi:
        raise ValueError("split must leave both blocks non-empty")
    left = Window(window.lo, split)
    right = Window(split + 1, window.hi)
    L1, L2 = (left, right) if first == "left" else (right, left)
    H = assemble(spec, window)
    G = greens(spec, window, z).entries
    G1 = greens(spec, L1, z).entries
    i1 = L1.sites - window.lo
    i2 = L2.sites - window.lo
    lhs = G[i1, :]
    chi = np.zeros_like(lhs)
    chi[:, i1] = G1
    coupling = H[np.ix_(i1, i2)]
    return float(np.max(np.abs(lhs - chi + G1 @ coupling @ G[i2, :])))


# --------------------------------------------------------------------------- barrier chain


@dataclass(frozen=True)
class BarrierConstants:
    """Constants of the bound ``C T^k exp(-c_rate * ell^c_pow)``."""

    C: float = 1.0
    c_rate: float = 1.0
    c_pow: float = 1.0

    def bound(self, T: float, k: int, ell: float) -> float:
        return self.C * T**k * math.exp(-self.c_rate * ell**self.c_pow)


@dataclass
class BarrierStage:
    name: str
    T_power: int
    measured_max: float
    log_measured: float
    witness: tuple | None
    bound: float
    passed: bool
    budget: float
    change_on_doubling: float | None = None


@dataclass
class BarrierCertificate:
    interval: tuple
    E: float
    eta: float
    K1: int
    N_target: int
    L: int
    constants: BarrierConstants
    stages: list
    truncation_ok: bool
    status: str
    good_box: GoodBoxReport | None = None
    fitted: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.good_box is not None:
            d["good_box"] = self.good_box.to_dict()
        return d


def _stage_max(block: np.ndarray, mask: np.ndarray, rows, cols):
    A = np.where(mask, np.abs(block), -1.0)
    if not mask.any():
        return 0.0, None
    k = int(np.argmax(A))
    r, c = divmod(k, A.shape[1])
    return float(A.flat[k]), (int(rows[r]), int(cols[c]))


def _measure_stages(spec, b, ell, z, K1, N_target, L, pad):
    """Stage maxima for the half-line cut at ``b + ell - L``."""
    edge = b + ell
    half = Window(edge - L, edge, intent="left_halfline_truncated")
    I = np.arange(b - ell, b + ell + 1)
    near_edge = np.arange(b + ell, b - ell - 1, -1)
    near_edge = near_edge[near_edge >= b + ell - ell / 10]
    js = np.arange(-K1, K1 + 1)
    Gh = greens_columns(spec, half, z, np.concatenate([I, near_edge]))
    # stage 1: n in I, m in [b - ell + ell/10, b + ell], |m - n| >= ell/10
    ms = half.sites[half.sites >= b - ell + ell / 10]
    blk1 = Gh.block(ms, I)
    mask1 = np.abs(ms[:, None] - I[None, :]) >= ell / 10
    s1 = _stage_max(blk1, mask1, ms, I)
    # stage 2: |j| <= K1, n in [b + ell - ell/10, b + ell]
    nn = np.sort(near_edge)
    blk2 = Gh.block(js, nn)
    s2 = _stage_max(blk2, np.ones(blk2.shape, bool), js, nn)
    # stage 3: truncated full line, G(j, N_target)
    full = Window(edge - L, N_target + pad, intent="full_line_truncated")
    Gf = greens_columns(spec, full, z, [N_target])
    blk3 = Gf.block(js, [N_target])
    s3 = _stage_max(blk3, np.ones(blk3.shape, bool), js, [N_target])
    dist_half = -K1 - (edge - L)
    return (s1, s2, s3), (min(L - 2 * ell, dist_half), dist_half, min(dist_half, pad))


def barrier_chain(spec: OperatorSpec, I: Window, z, K1: int, N_target: int,
                  constants: BarrierConstants = BarrierConstants(), delta: float | None = None,
                  L: int | None = None, trunc_tol: float = TRUNC_TOL,
                  check_truncation: bool = True) -> BarrierCertificate:
    """Measure the three resolvent-identity stages behind one barrier box ``I = [b - ell, b + ell]``.

    Stage 1: ``max |G_L(m, n)|`` on the half-line ``L = (-inf, b + ell]`` for
    ``n`` in ``I``, ``m >= b - ell + ell/10`` and ``|m - n| >= ell/10``.
    Stage 2: ``max |G_L(j, n)|`` for ``|j| <= K1`` and ``n >= b + ell - ell/10``.
    Stage 3: ``max |G(j, N_target)|`` on the full line.

    Stage ``k`` is compared with ``C T^(2k) exp(-c_rate ell^c_pow)``,
    ``T = 1/eta``.  Half-lines are cut at distance ``L`` and the cut is
    audited by recomputing at ``2L``; if any stage moves by more than its
    budget the certificate is ``"inconclusive"`` unless some stage fails by
    more than the observed change.
    """
    z = as_energy(z)
    ell = (I.size - 1) // 2
    b = I.lo + ell
    if I.size != 2 * ell + 1:
        raise ValueError("barrier box must have odd size 2*ell + 1")
    if b < 0:
        refl = barrier_chain(spec.reflected(), Window(-I.hi, -I.lo), z, K1, -N_target, constants,
                             delta, L, trunc_tol, check_truncation)
        refl.interval = (I.lo, I.hi)
        refl.N_target = N_target
        return refl
    if not (N_target / 4 <= I.lo and I.hi <= N_target / 2):
        raise PreconditionError(f"I = [{I.lo}, {I.hi}] is not inside [N/4, N/2] for N = {N_target}")
    if b - ell <= K1:
        raise PreconditionError("barrier box must lie beyond the initial support")
    T = z.T
    gb = good_box(spec, I, z, delta) if delta is not None else None
    pad = math.ceil(math.log(T / trunc_tol) / spec.kernel.decay_rate)
    if L is None:
        L = max(4 * (abs(b) + ell), abs(N_target) + pad)
    maxima, dists = _measure_stages(spec, b, ell, z, K1, N_target, L, pad)
    eps = abs(spec.coupling)
    floor = 2.0 * T * SOLVE_TOL
    stages = []
    for k, ((mx, wit), d) in enumerate(zip(maxima, dists), start=1):
        budget = T**2 * eps * spec.kernel.tail_envelope(d) + floor
        bound = constants.bound(T, 2 * k, ell)
        stages.append(BarrierStage(f"stage{k}", 2 * k, mx, math.log(mx) if mx > 0 else -math.inf,
                                   wit, bound, bool(mx <= bound), budget))
    truncation_ok = True
    if check_truncation:
        maxima2, _ = _measure_stages(spec, b, ell, z, K1, N_target, 2 * L, pad)
        for st, (mx2, _w) in zip(stages, maxima2):
            st.change_on_doubling = abs(st.measured_max - mx2)
            if st.change_on_doubling > st.budget:
                truncation_ok = False
    if truncation_ok:
        status = "pass" if all(s.passed for s in stages) else "fail"
    else:
        decisive = any(s.measured_max - s.change_on_doubling > s.bound for s in stages)
        status = "fail" if decisive else "inconclusive"
    return BarrierCertificate((I.lo, I.hi), z.E, z.eta, K1, N_target, L, constants, stages,
                              truncation_ok, status, gb)


def fit_barrier_constants(certs, stage: int, c_pow_grid=None) -> tuple[BarrierConstants, float]:
    """Fit ``C, c_rate, c_pow`` of stage ``stage`` (1-3) across certificates with different ``ell``.

    For each trial power a least-squares line of ``log(max / T^(2k))``
    against ``ell^c_pow`` is fitted; the best residual with a positive rate
    wins and ``C`` is then raised so the bound dominates every point.
    Returns ``(constants, rms_residual)``.
    """
    if c_pow_grid is None:
        c_pow_grid = np.linspace(0.1, 1.0, 19)
    pts = []
    for cert in certs:
        st = cert.stages[stage - 1]
        if st.measured_max > 0:
            ell = (cert.interval[1] - cert.interval[0]) // 2
            pts.append((ell, st.log_measured - st.T_power * math.log(1.0 / cert.eta)))
    if len(pts) < 2:
        raise ValueError("need at least two certificates with non-zero maxima")
    ells = np.array([p[0] for p in pts], dtype=float)
    ys = np.array([p[1] for p in pts])
    best = None
    for cp in c_pow_grid:
        x = ells**cp
        slope, icpt = np.polyfit(x, ys, 1)
        if slope >= 0:
            continue
        res = float(np.sqrt(np.mean((ys - (slope * x + icpt)) ** 2)))
        if best is None or res < best[0]:
            best = (res, -slope, cp)
    if best is None:
        raise ValueError("no decaying fit: stage maxima do not decrease with ell")
    res, rate, cp = best
    logC = float(np.max(ys + rate * ells**cp))
    return BarrierConstants(math.exp(logC), float(rate), float(cp)), res


# --------------------------------------------------------------------------- Combes-Thomas


@dataclass
class CombesThomasReport:
    decay_rate_fit: float
    slope: float
    residual: float
    passed: bool
    vacuous: bool = False


def combes_thomas_check(spec: OperatorSpec, z, j: int, n_range, c_CT: float = 0.05,
                        window: Window | None = None) -> CombesThomasReport:
    """Fit ``log|G(j, n)|`` against ``|n - j|`` at an energy at least 1 away from the spectrum.

    Requires ``|E| >= K`` (``K`` from :func:`spectrum_bound`), which puts
    ``E`` at distance >= 1 from ``[-K + 1, K - 1]``.  Passes when the
    fitted slope is at most ``-c_CT``.
    """
    z = as_energy(z)
    K = spectrum_bound(spec)
    if abs(z.E) < K:
        raise PreconditionError(f"|E| = {abs(z.E):g} < K = {K:g}: energy too close to the spectrum")
    n_range = np.asarray(list(n_range), dtype=np.int64)
    n_range = n_range[n_range != j]
    if window is None:
        span = int(np.max(np.abs(n_range - j)))
        window = Window(j - 2 * span - 1, j + 2 * span + 1)
    row = greens_row(spec, window, z, j)
    vals = np.abs(row[window.index(n_range)])
    mask = vals > 0
    if not mask.any():
        return CombesThomasReport(math.inf, -math.inf, 0.0, True, vacuous=True)
    d = np.abs(n_range[mask] - j).astype(float)
    logs = np.log(vals[mask])
    if np.unique(d).size < 2:
        raise ValueError("need at least two distinct distances to fit a decay rate")
    slope, icpt = np.polyfit(d, logs, 1)
    res = float(np.sqrt(np.mean((logs - (slope * d + icpt)) ** 2)))
    return CombesThomasReport(float(-slope), float(slope), res, bool(slope <= -c_CT))
