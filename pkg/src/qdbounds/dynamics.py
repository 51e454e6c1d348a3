"""Wave-packet dynamics on truncated windows.

Moments are Abel averages

    <|X|^p>(T) = (2/T) int_0^inf exp(-2t/T) sum_n |n|^p |(exp(-itH) phi)(n)|^2 dt.

With ``H = U diag(lam) U*`` the time integral is done in closed form: each
eigenpair product contributes ``B_kl / (1 - i (lam_k - lam_l) T/2)``.  A
direct time quadrature is kept as an independent check.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.integrate as si
import scipy.linalg as sla
import scipy.optimize as so

from . import _backend
from .lattice import OperatorSpec, Window, assemble_banded, spectrum_bound
from .spectral import eigensystem

ABEL_TAIL_TOL = 1e-10
QUADRATURE_TOL = 1e-6
LEAK_TOL = 1e-8
NORM_TOL = 1e-10
PARSEVAL_TOL = 1e-5
BALLISTIC_TOL = 0.05
DEFAULT_MAX_RADIUS = 4096
LOG_FLOOR = 1e-280


class WindowTooSmallError(RuntimeError):
    pass


class QuadratureError(RuntimeError):
    pass


def weighted_norm_sq(sites, amps, p: float) -> float:
    """``sum_n |n|^p |amps_n|^2``; ``0^0`` counts as 1."""
    sites = np.asarray(sites)
    a2 = np.abs(amps) ** 2
    if p == 0:
        return float(np.sum(a2))
    return float(np.sum(np.abs(sites).astype(float) ** p * a2))


@dataclass
class StateVector:
    """Finitely supported state stored on ``window``."""

    window: Window
    amps: np.ndarray

    def __post_init__(self):
        self.amps = np.asarray(self.amps, dtype=np.complex128)
        if self.amps.shape != (self.window.size,):
            raise ValueError("amplitude vector does not match the window")
        self.norm = float(np.linalg.norm(self.amps))

    @classmethod
    def delta(cls, n: int = 0) -> "StateVector":
        return cls(Window(n, n), np.ones(1))

    @classmethod
    def from_dict(cls, amps: dict) -> "StateVector":
        sites = sorted(int(k) for k in amps)
        w = Window(sites[0], sites[-1])
        v = np.zeros(w.size, dtype=np.complex128)
        for k, a in amps.items():
            v[int(k) - w.lo] = complex(a)
        return cls(w, v)

    @property
    def support(self) -> np.ndarray:
        return self.window.sites[self.amps != 0]

    @property
    def K1(self) -> int:
        """Largest ``|n|`` with a non-zero amplitude."""
        s = self.support
        return int(np.max(np.abs(s))) if s.size else 0

    def on(self, window: Window) -> np.ndarray:
        """Amplitudes embedded into a larger window (support must fit)."""
        out = np.zeros(window.size, dtype=np.complex128)
        s = self.support
        if s.size and not window.contains(s):
            raise WindowTooSmallError(f"state support {s.min()}..{s.max()} not inside window")
        out[self.window.sites[self.amps != 0] - window.lo] = self.amps[self.amps != 0]
        return out

    def __getitem__(self, n):
        if not self.window.contains(n):
            return 0.0
        return self.amps[self.window.index(n)]

    def scaled(self, c: complex) -> "StateVector":
        return StateVector(self.window, c * self.amps)

    def reflected(self) -> "StateVector":
        return StateVector(Window(-self.window.hi, -self.window.lo), self.amps[::-1])

    def moment(self, p: float) -> float:
        return weighted_norm_sq(self.window.sites, self.amps, p)


def light_cone_radius(spec: OperatorSpec, K1: int, t: float, guard: int = 8) -> float:
    """Radius outside which the evolved state carries negligible weight at time ``t``.

    ``K1 + v t`` with ``v = |coupling| sum |n a_n|``, widened by the
    ``t^(1/3)`` front width of lattice propagation and a fixed guard.
    """
    t = abs(float(t))
    return K1 + spec.velocity * t + 10.0 * t ** (1.0 / 3.0) + guard


def _default_guard(spec: OperatorSpec) -> int:
    return max(8, spec.kernel.radius)


def evolve(spec: OperatorSpec, phi: StateVector, t: float, window: Window | None = None,
           guard: int | None = None, leak_tol: float = LEAK_TOL, use_parity="auto") -> StateVector:
    """``exp(-itH) phi`` on a guarded window.

    The weight on the outer ``guard`` sites of each side must stay below
    ``leak_tol``; otherwise the window is doubled once and the evolution
    recomputed.  ``guard=0`` disables the check.
    """
    if guard is None:
        guard = _default_guard(spec)
    if window is None:
        R = math.ceil(light_cone_radius(spec, phi.K1, t)) + guard
        window = Window.centered(R)
    for attempt in range(2):
        psi = eigensystem(spec, window, use_parity).propagate(phi.on(window), t)
        if abs(np.linalg.norm(psi) - phi.norm) > NORM_TOL * max(1.0, phi.norm):
            raise RuntimeError("propagator lost unitarity")
        if guard == 0 or window.size <= 2 * guard:
            leak = 0.0 if guard == 0 else 1.0
        else:
            leak = float(np.sum(np.abs(psi[:guard]) ** 2) + np.sum(np.abs(psi[-guard:]) ** 2))
        if leak <= leak_tol:
            return StateVector(window, psi)
        half = window.size
        window = Window(window.lo - half // 2, window.hi + half - half // 2)
    raise WindowTooSmallError(f"guard-zone weight {leak:.2e} > {leak_tol:.0e} after enlarging the window")


def moment_window(spec: OperatorSpec, phi: StateVector, T_max: float,
                  max_radius: int = DEFAULT_MAX_RADIUS) -> Window:
    """Symmetric window reaching the light cone at the Abel cut-off time of ``T_max``."""
    t_max = 0.5 * T_max * math.log(1.0 / ABEL_TAIL_TOL)
    R = math.ceil(light_cone_radius(spec, phi.K1, t_max)) + _default_guard(spec)
    return Window.centered(max(phi.K1 + 1, min(R, max_radius)))


def truncation_error_bar(spec: OperatorSpec, K1: int, p: float, T: float, R: int,
                         leak_tol: float = LEAK_TOL) -> float:
    """Bound on the moment error caused by the finite window ``[-R, R]``.

    Before the light cone reaches the edge the windowed and full-line
    evolutions agree up to ``leak_tol``.  Afterwards both moments are
    bounded, by ``R^p`` on the window and by the light-cone radius to the
    ``p`` on the line.
    """
    Rp = float(R) ** p

    def reach(t):
        return light_cone_radius(spec, K1, t) - R

    if reach(0.0) >= 0:
        return 2.0 * Rp
    if spec.velocity == 0 and reach(1e12) < 0:
        return leak_tol * Rp
    lo, hi = 0.0, 1.0
    while reach(hi) < 0:
        hi *= 2.0
    t_exit = so.brentq(reach, lo, hi)

    def integrand(t):
        return (2.0 / T) * math.exp(-2.0 * t / T) * (light_cone_radius(spec, K1, t) ** p + Rp)

    val, _ = si.quad(integrand, t_exit, np.inf, limit=200)
    return float(val + leak_tol * Rp)


# --------------------------------------------------------------------------- moments


@dataclass
class MomentSeries:
    p: float
    T_grid: np.ndarray
    values: np.ndarray
    error_bars: np.ndarray
    method: str = "spectral"
    window: tuple = (0, 0)
    meta: dict = field(default_factory=dict)

    def rows(self):
        for T, v, e in zip(self.T_grid, self.values, self.error_bars):
            yield {"p": self.p, "T": float(T), "value": float(v), "error_bar": float(e)}


def _moment_spectral(es, phi_vec, sites, p, T_grid):
    w = np.abs(sites).astype(float) ** p if p != 0 else np.ones(sites.size)
    total = np.zeros(len(T_grid))
    for lam, B in es.moment_kernels(phi_vec, w):
        total += _backend.abel_pair_sum(lam, B, T_grid)
    return total


def _moment_quadrature(es, phi_vec, sites, p, T):
    t_max = 0.5 * T * math.log(1.0 / ABEL_TAIL_TOL)

    def f(t):
        psi = es.propagate(phi_vec, t)
        return (2.0 / T) * math.exp(-2.0 * t / T) * weighted_norm_sq(sites, psi, p)

    # split at a few multiples of T so the decaying weight is resolved
    pts = [x for x in (0.5 * T, T, 2 * T, 5 * T) if x < t_max]
    val, err = si.quad(f, 0.0, t_max, epsrel=QUADRATURE_TOL, epsabs=0.0, limit=500, points=pts or None)
    if not err <= max(QUADRATURE_TOL * abs(val), 1e-300) * 10:
        raise QuadratureError(f"moment quadrature reached only {err / max(abs(val), 1e-300):.1e} relative error")
    return val, err, t_max


def moment_series(spec: OperatorSpec, phi: StateVector, p: float, T_grid, window: Window | None = None,
                  method: str = "spectral", use_parity="auto") -> MomentSeries:
    """Abel-averaged moments ``<|X|^p>(T)`` for every ``T`` in ``T_grid``."""
    T_grid = np.asarray(T_grid, dtype=float)
    if np.any(T_grid <= 0):
        raise ValueError("T must be positive")
    if p < 0:
        raise ValueError("moment order must be non-negative")
    if window is None:
        window = moment_window(spec, phi, float(T_grid.max()))
    es = eigensystem(spec, window, use_parity)
    phi_vec = phi.on(window)
    sites = window.sites
    R = max(abs(window.lo), abs(window.hi))
    bars = np.array([truncation_error_bar(spec, phi.K1, p, T, R) for T in T_grid])
    meta = {"parity": es.parity, "sites": window.size}
    if method == "spectral":
        vals = _moment_spectral(es, phi_vec, sites, p, T_grid)
        # pair-sum round-off
        bars = bars + 1e-12 * np.abs(vals)
    elif method == "quadrature":
        vals = np.empty(T_grid.size)
        for i, T in enumerate(T_grid):
            v, err, t_max = _moment_quadrature(es, phi_vec, sites, p, T)
            vals[i] = v
            bars[i] += err + ABEL_TAIL_TOL * float(R) ** p
        meta["t_max_over_T"] = 0.5 * math.log(1.0 / ABEL_TAIL_TOL)
    else:
        raise ValueError(f"unknown method {method!r}")
    vals = np.maximum(vals, 0.0)
    return MomentSeries(float(p), T_grid, vals, bars, method, (window.lo, window.hi), meta)


def abel_moment(spec: OperatorSpec, phi: StateVector, p: float, T: float, window: Window | None = None,
                method: str = "spectral") -> tuple[float, float]:
    """``(value, error_bar)`` of ``<|X|^p>(T)``."""
    s = moment_series(spec, phi, p, [T], window, method)
    return float(s.values[0]), float(s.error_bars[0])


# --------------------------------------------------------------------------- exponents


@dataclass
class ExponentEstimate:
    p: float
    beta_hat: float
    beta_plain: float
    fit_window: tuple
    residual: float
    uncertainty: float
    error_bar_beta: float
    exact: bool = False
    points_used: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _upper_hull(x, y):
    """Indices of the upper concave hull of points sorted by ``x``."""
    hull = []
    for i in range(len(x)):
        while len(hull) >= 2:
            i0, i1 = hull[-2], hull[-1]
            cross = (x[i1] - x[i0]) * (y[i] - y[i0]) - (y[i1] - y[i0]) * (x[i] - x[i0])
            if cross >= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    return hull


def exponent_from_series(series: MomentSeries) -> ExponentEstimate:
    """Fit ``beta`` from ``ln value`` against ``p ln T``.

    ``beta_hat`` is the least-squares slope through the vertices of the
    upper concave hull over the largest decade of ``T`` (a finite-``T``
    stand-in for the limsup); ``beta_plain`` fits every point.  The
    uncertainty adds their gap, the fit residual spread over the grid span
    and the slope change allowed by the endpoint error bars.
    """
    p = series.p
    T = np.asarray(series.T_grid, float)
    v = np.asarray(series.values, float)
    if T.size < 5:
        raise ValueError("T_grid needs at least 5 points")
    if p <= 0:
        raise ValueError("exponent fit needs p > 0")
    keep = v > 0
    fw = (float(T.min()), float(T.max()))
    if not keep.any():
        return ExponentEstimate(p, 0.0, 0.0, fw, 0.0, 0.0, 0.0, exact=True, points_used=0)
    T, v, e = T[keep], v[keep], np.asarray(series.error_bars, float)[keep]
    if T.size < 2:
        raise ValueError("fewer than two non-zero moments")
    x = p * np.log(T)
    y = np.log(v)
    order = np.argsort(x)
    x, y, e, v, T = x[order], y[order], e[order], v[order], T[order]
    plain, c0 = np.polyfit(x, y, 1)
    top = T >= T[-1] / 10.0
    if top.sum() < 2:
        top[-2:] = True
    xd, yd = x[top], y[top]
    hull = _upper_hull(xd, yd)
    if len(hull) >= 2:
        beta, c1 = np.polyfit(xd[hull], yd[hull], 1)
    else:
        beta, c1 = plain, c0
    resid = float(np.sqrt(np.mean((yd - (beta * xd + c1)) ** 2)))
    span = x[-1] - x[0]
    rel = np.minimum(e / v, 0.999)
    eb = float((-np.log1p(-rel[0]) - np.log1p(-rel[-1])) / span) if span > 0 else math.inf
    unc = abs(beta - plain) + (resid / span if span > 0 else math.inf)
    return ExponentEstimate(p, float(beta), float(plain), (float(T[top][0]), float(T[-1])), resid,
                            float(unc), eb, False, int(T.size))


def transport_exponent(spec: OperatorSpec, phi: StateVector, p: float, T_grid, window: Window | None = None,
                       series: MomentSeries | None = None) -> ExponentEstimate:
    """Transport exponent ``beta(p)`` over a geometric ``T_grid`` (>= 5 points)."""
    if len(T_grid) < 5:
        raise ValueError("T_grid needs at least 5 points")
    if series is None:
        series = moment_series(spec, phi, p, T_grid, window)
    return exponent_from_series(series)


@dataclass
class BallisticReport:
    estimates: list
    tol: float
    passed: bool

    def to_dict(self) -> dict:
        return {"tol": self.tol, "pass": self.passed, "estimates": [e.to_dict() for e in self.estimates]}


def ballistic_check(spec: OperatorSpec, phi: StateVector, p_list, T_grid, window: Window | None = None,
                    tol: float = BALLISTIC_TOL) -> BallisticReport:
    """Check ``beta_hat(p) <= 1 + tol`` for every ``p``."""
    ests = [transport_exponent(spec, phi, p, T_grid, window) for p in p_list]
    return BallisticReport(ests, tol, all(e.beta_hat <= 1.0 + tol for e in ests))


@dataclass
class MonotonicityReport:
    estimates: list
    slacks: list
    passed: bool
    bar_slacks: list = field(default_factory=list)

    @property
    def passed_with_error_bars(self) -> bool:
        """Whether the ordering holds once the truncation error bars widen the slack (informational)."""
        return all(b.beta_hat >= a.beta_hat - s
                   for a, b, s in zip(self.estimates, self.estimates[1:], self.bar_slacks))

    @property
    def worst_drop(self) -> float:
        """Largest ``beta_hat(p) - beta_hat(p')`` over neighbours ``p < p'`` (positive means a decrease)."""
        return max(a.beta_hat - b.beta_hat for a, b in zip(self.estimates, self.estimates[1:]))

    def to_dict(self) -> dict:
        return {"pass": self.passed, "slacks": self.slacks, "worst_drop": self.worst_drop,
                "bar_slacks": self.bar_slacks, "pass_with_error_bars": self.passed_with_error_bars,
                "estimates": [e.to_dict() for e in self.estimates]}


def beta_monotonicity_check(spec: OperatorSpec, phi: StateVector, p_grid, T_grid, window: Window | None = None,
                            estimates=None) -> MonotonicityReport:
    """``beta_hat(p)`` nondecreasing in ``p`` up to the combined fit uncertainty of each neighbour pair.

    The slack of a pair is the sum of the two fit uncertainties.  The
    report also carries the slack widened by the truncation error bars,
    which is informational only.
    """
    p_grid = sorted(p_grid)
    if len(p_grid) < 3:
        raise ValueError("monotonicity check needs at least 3 values of p")
    if estimates is None:
        estimates = [transport_exponent(spec, phi, p, T_grid, window) for p in p_grid]
    slacks = []
    bar_slacks = []
    ok = True
    for a, b in zip(estimates, estimates[1:]):
        slacks.append(float(a.uncertainty + b.uncertainty))
        bar_slacks.append(slacks[-1] + float(a.error_bar_beta + b.error_bar_beta))
        if b.beta_hat < a.beta_hat - slacks[-1]:
            ok = False
    return MonotonicityReport(list(estimates), slacks, ok, bar_slacks)


# --------------------------------------------------------------------------- correlators


@dataclass
class Correlator:
    j: int
    n: int
    T: float
    a_time: float
    a_energy: float
    residual: float
    tail_bound: float

    @property
    def rel_residual(self) -> float:
        return self.residual / max(self.a_time, 1e-12)


def _gl_nodes(k: int = 10):
    return np.polynomial.legendre.leggauss(k)


def energy_quadrature(K: float, eta: float, panel: float | None = None, order: int = 10, tail_nodes: int = 64):
    """Nodes and weights covering the real line.

    ``[-K, K]`` uses composite Gauss-Legendre with panels of width
    ``eta`` (the Lorentzian width); each tail uses ``E = K + (1 - s)/s``.
    """
    panel = eta if panel is None else panel
    m = max(1, math.ceil(2 * K / panel))
    edges = np.linspace(-K, K, m + 1)
    x, w = _gl_nodes(order)
    h = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    E_in = (mid[:, None] + h[:, None] * x[None, :]).ravel()
    W_in = (h[:, None] * w[None, :]).ravel()
    xs, ws = _gl_nodes(tail_nodes)
    s = 0.5 * (xs + 1.0)
    ds = 0.5 * ws
    u = (1.0 - s) / s
    jac = ds / s**2
    E = np.concatenate([E_in, K + u, -K - u])
    W = np.concatenate([W_in, jac, jac])
    return E, W, E_in.size


def correlator(spec: OperatorSpec, j: int, n: int, T: float, window: Window | None = None,
               order: int = 10) -> Correlator:
    """``a(j, n, T)`` from the time side and from the energy side.

    Time side: closed-form Abel average of ``|(exp(-itH) delta_j, delta_n)|^2``.
    Energy side: ``(1/(T pi)) int |G(j, n; E + i/T)|^2 dE`` by quadrature
    (see :func:`energy_quadrature`).  ``tail_bound`` is the resolvent bound
    on the part outside ``[-K, K]``, namely ``2 / (T pi)``.
    """
    if window is None:
        window = Window.centered(512)
    if not (window.contains(j) and window.contains(n)):
        return Correlator(j, n, float(T), 0.0, 0.0, 0.0, 2.0 / (T * math.pi))
    es = eigensystem(spec, window)
    lam, u = es.pair_weights(j, n)
    a_time = float(_backend.abel_rank1(lam, u, [T])[0])
    K = spectrum_bound(spec)
    E, W, _ = energy_quadrature(K, 1.0 / T, order=order)
    g2 = _backend.resolvent_sq(lam, u, E, 1.0 / T)
    a_energy = float(np.dot(W, g2) / (T * math.pi))
    return Correlator(j, n, float(T), a_time, a_energy, abs(a_time - a_energy), 2.0 / (T * math.pi))


@dataclass
class ParsevalAudit:
    records: list
    max_rel_residual: float
    tol: float
    passed: bool


def parseval_audit(spec: OperatorSpec, trials: int = 50, K1: int = 0, n_max: int = 50,
                   T_range=(10.0, 200.0), seed: int = 0, window: Window | None = None,
                   tol: float = PARSEVAL_TOL) -> ParsevalAudit:
    """Compare both sides of the Parseval identity on random ``(j, n, T)``.

    ``j`` is uniform on ``|j| <= K1``, ``n`` on ``[-n_max, n_max]`` and
    ``T`` log-uniform on ``T_range``.
    """
    rng = np.random.default_rng(seed)
    if window is None:
        window = Window.centered(512)
    recs = []
    for _ in range(trials):
        j = int(rng.integers(-K1, K1 + 1))
        n = int(rng.integers(-n_max, n_max + 1))
        T = float(np.exp(rng.uniform(*np.log(T_range))))
        recs.append(correlator(spec, j, n, T, window))
    worst = max(r.rel_residual for r in recs)
    return ParsevalAudit(recs, worst, tol, worst <= tol)


@dataclass
class DecayFit:
    best_c_pow: float | None
    slope: float
    residual: float
    passed: bool
    degenerate: bool
    fits: list
    log_a: list


def log_correlators(spec: OperatorSpec, j: int, T: float, ns, margin: int = 100, order: int = 10) -> np.ndarray:
    """``ln a(j, n, T)`` for many ``n`` at once, without underflow.

    For each energy node a banded solve gives the whole column ``G(., j)``;
    the energy integral is accumulated as a log-sum-exp.  Entries below
    ``LOG_FLOOR`` are returned as ``-inf``.  A complex kernel uses
    ``|G(j, n; z)| = |G(n, j; conj z)|``.
    """
    ns = np.asarray(list(ns), dtype=np.int64)
    lo = int(min(j, ns.min())) - margin
    hi = int(max(j, ns.max())) + margin
    win = Window(lo, hi, intent="full_line_truncated")
    K = spectrum_bound(spec)
    eta = 1.0 / T
    E, W, _ = energy_quadrature(K, eta, order=order)
    idx = ns - lo
    acc = np.full(ns.size, -np.inf)
    rhs = np.zeros(win.size, dtype=np.complex128)
    rhs[j - lo] = 1.0
    logW = np.log(W)
    for e, lw in zip(E, logW):
        ab, lu = assemble_banded(spec, win, complex(e, -eta) if not spec.is_real else complex(e, eta))
        col = sla.solve_banded(lu, ab, rhs, check_finite=False)
        g = np.abs(col[idx])
        with np.errstate(divide="ignore"):
            term = 2.0 * np.log(g) + lw
        acc = np.logaddexp(acc, term)
    out = acc - math.log(T * math.pi)
    out[out < math.log(LOG_FLOOR)] = -np.inf
    return out


def correlator_decay_check(spec: OperatorSpec, j: int, T: float, n_range, c_pow_grid=None,
                           fit_tol: float = 0.5, min_decay: float = 0.05) -> DecayFit:
    """Fit ``ln a(j, n, T)`` against ``|n|^c_pow`` for each ``c_pow`` in the grid.

    Passes when some power gives a slope ``<= -min_decay`` with RMS
    residual ``<= fit_tol``.  If every correlator is below the floor the
    check passes with the degenerate flag.
    """
    if c_pow_grid is None:
        c_pow_grid = np.linspace(0.5, 1.0, 11)
    ns = np.asarray(list(n_range), dtype=np.int64)
    la = log_correlators(spec, j, T, ns)
    ok = np.isfinite(la)
    if ok.sum() == 0:
        return DecayFit(None, -math.inf, 0.0, True, True, [], la.tolist())
    if ok.sum() < 3:
        raise ValueError("fewer than three correlators above the floor")
    x0 = np.abs(ns[ok]).astype(float)
    y = la[ok]
    fits = []
    best = None
    for cp in c_pow_grid:
        x = x0**cp
        slope, icpt = np.polyfit(x, y, 1)
        res = float(np.sqrt(np.mean((y - (slope * x + icpt)) ** 2)))
        good = slope <= -min_decay and res <= fit_tol
        fits.append({"c_pow": float(cp), "slope": float(slope), "residual": res, "pass": bool(good)})
        if good and (best is None or res < best["residual"]):
            best = fits[-1]
    if best is None:
        best = min(fits, key=lambda f: f["residual"])
        return DecayFit(best["c_pow"], best["slope"], best["residual"], False, False, fits, la.tolist())
    return DecayFit(best["c_pow"], best["slope"], best["residual"], True, False, fits, la.tolist())
