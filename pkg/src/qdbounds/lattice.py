"""Long-range quasiperiodic operators on finite windows of Z.

An operator is ``(H u)_n = coupling * sum_k a_{n-k} u_k + V_n u_n`` with a
Hermitian, exponentially decaying hopping kernel ``a`` and a potential
``V``.  Everything here is immutable; matrices are assembled on demand.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

KERNEL_TAIL_TOL = 1e-14
GOLDEN_MEAN = (math.sqrt(5.0) - 1.0) / 2.0

_ENVELOPE_RTOL = 1e-12


class KernelError(ValueError):
    """Hopping kernel violates Hermitian symmetry or its decay envelope."""


class EmptyWindowError(ValueError):
    pass


class DegenerateFitError(ValueError):
    pass


def _as_complex_tuple(values) -> tuple:
    return tuple(complex(v) for v in values)


@dataclass(frozen=True)
class HoppingKernel:
    """Hopping amplitudes ``a_n`` for ``-radius <= n <= radius``.

    Offsets outside the stored range are exactly zero.  The envelope
    ``|a_n| <= decay_amp * exp(-decay_rate * |n|)`` and the symmetry
    ``a_{-n} = conj(a_n)`` are checked at construction.
    """

    values: tuple
    decay_amp: float
    decay_rate: float

    def __post_init__(self):
        vals = _as_complex_tuple(self.values)
        object.__setattr__(self, "values", vals)
        if len(vals) % 2 != 1:
            raise KernelError("kernel table must cover offsets -R..R (odd length)")
        if not (self.decay_amp > 0 and self.decay_rate > 0):
            raise KernelError("decay_amp and decay_rate must be positive")
        arr = self.array
        if not np.array_equal(arr[::-1], np.conj(arr)):
            bad = int(np.argmax(np.abs(arr[::-1] - np.conj(arr)))) - self.radius
            raise KernelError(f"kernel is not Hermitian: a_{{-n}} != conj(a_n) at n={bad}")
        env = self.envelope(self.offsets)
        over = np.abs(arr) > env * (1 + _ENVELOPE_RTOL)
        if over.any():
            n = int(self.offsets[np.argmax(over)])
            raise KernelError(
                f"|a_{n}| = {abs(arr[n + self.radius]):.3e} exceeds the envelope "
                f"{self.decay_amp:g}*exp(-{self.decay_rate:g}*|n|)"
            )

    @classmethod
    def exponential(cls, A1: float = 1.0, a: float = 1.0, tail_tol: float = KERNEL_TAIL_TOL,
                    diagonal: float = 0.0, radius: int | None = None) -> "HoppingKernel":
        """``a_n = A1 exp(-a|n|)`` for ``n != 0`` and ``a_0 = diagonal``.

        The default radius is the smallest R with ``A1 exp(-a R) < tail_tol``.
        """
        if radius is None:
            radius = truncation_radius(A1, a, tail_tol)
        n = np.arange(-radius, radius + 1)
        vals = A1 * np.exp(-a * np.abs(n).astype(float))
        vals[radius] = diagonal
        return cls(tuple(vals), A1, a)

    @classmethod
    def nearest_neighbor(cls, t: float = 1.0) -> "HoppingKernel":
        """Discrete Laplacian hopping ``a_{+-1} = t``; envelope ``A1 = e|t|``, ``a = 1``."""
        return cls((t, 0.0, t), math.e * abs(t), 1.0)

    @classmethod
    def zero(cls) -> "HoppingKernel":
        return cls((0.0,), 1.0, 1.0)

    @classmethod
    def from_table(cls, table: Mapping[int, complex], A1: float, a: float) -> "HoppingKernel":
        """Kernel from ``{offset: amplitude}``; a missing ``-n`` is filled with ``conj(a_n)``."""
        full = {int(k): complex(v) for k, v in table.items()}
        for k, v in list(full.items()):
            full.setdefault(-k, v.conjugate())
        radius = max((abs(k) for k in full), default=0)
        vals = [full.get(n, 0.0) for n in range(-radius, radius + 1)]
        return cls(tuple(vals), A1, a)

    @property
    def radius(self) -> int:
        return (len(self.values) - 1) // 2

    @property
    def offsets(self) -> np.ndarray:
        return np.arange(-self.radius, self.radius + 1)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.values, dtype=np.complex128)

    @property
    def is_real(self) -> bool:
        return not np.any(self.array.imag)

    def __getitem__(self, n: int) -> complex:
        if abs(n) > self.radius:
            return 0j
        return self.values[n + self.radius]

    def lookup(self, d: np.ndarray) -> np.ndarray:
        """Vectorised ``a_d`` for an integer array of offsets."""
        d = np.asarray(d)
        arr = self.array if not self.is_real else self.array.real
        out = np.zeros(d.shape, dtype=arr.dtype)
        mask = np.abs(d) <= self.radius
        out[mask] = arr[d[mask] + self.radius]
        return out

    def envelope(self, n) -> np.ndarray:
        return self.decay_amp * np.exp(-self.decay_rate * np.abs(np.asarray(n, dtype=float)))

    def l1_norm(self) -> float:
        return float(np.abs(self.array).sum())

    def first_moment(self) -> float:
        """``sum_n |n| |a_n|``; bounds the group velocity of the free dynamics."""
        return float((np.abs(self.offsets) * np.abs(self.array)).sum())

    def tail_envelope(self, d: int) -> float:
        """Envelope bound on ``sum_{|k| > d} |a_k|`` for the untruncated kernel."""
        d = max(int(d), 0)
        q = math.exp(-self.decay_rate)
        return 2.0 * self.decay_amp * q ** (d + 1) / (1.0 - q)

    def reflected(self) -> "HoppingKernel":
        return HoppingKernel(tuple(self.values[::-1]), self.decay_amp, self.decay_rate)


def truncation_radius(A1: float, a: float, tail_tol: float = KERNEL_TAIL_TOL) -> int:
    """Smallest radius R with ``A1 exp(-a R) < tail_tol`` (at least 1)."""
    r = math.ceil(math.log(A1 / tail_tol) / a)
    if A1 * math.exp(-a * r) >= tail_tol:
        r += 1
    return max(r, 1)


@dataclass(frozen=True)
class PotentialLaw:
    """Diagonal potential ``V_n``.

    ``kind`` is one of ``"quasiperiodic"``, ``"explicit"`` or ``"constant"``.
    The quasiperiodic law evaluates the real trigonometric polynomial

        v(x) = sum_m cos_coeffs[m] cos(2 pi m x) + sum_m sin_coeffs[m-1] sin(2 pi m x)

    at ``x = (theta + n alpha) mod 1``.
    """

    kind: str
    cos_coeffs: tuple = ()
    sin_coeffs: tuple = ()
    theta: float = 0.0
    alpha: float = 0.0
    table: tuple = ()
    table_lo: int = 0
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in ("quasiperiodic", "explicit", "constant"):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        object.__setattr__(self, "cos_coeffs", tuple(float(c) for c in self.cos_coeffs))
        object.__setattr__(self, "sin_coeffs", tuple(float(c) for c in self.sin_coeffs))
        object.__setattr__(self, "table", tuple(float(c) for c in self.table))
        if self.kind == "explicit" and not self.table:
            raise ValueError("explicit potential needs a non-empty table")

    @classmethod
    def quasiperiodic(cls, cos=(0.0, 2.0), sin=(), theta=0.0, alpha=GOLDEN_MEAN):
        return cls("quasiperiodic", cos_coeffs=tuple(cos), sin_coeffs=tuple(sin),
                   theta=float(theta) % 1.0, alpha=float(alpha) % 1.0)

    @classmethod
    def explicit(cls, values: Sequence[float], lo: int = 0):
        return cls("explicit", table=tuple(values), table_lo=int(lo))

    @classmethod
    def constant(cls, c: float = 0.0):
        return cls("constant", value=float(c))

    @property
    def bound(self) -> float:
        """A true upper bound of ``|V_n|`` over every site where V is defined."""
        if self.kind == "quasiperiodic":
            return float(sum(abs(c) for c in self.cos_coeffs) + sum(abs(s) for s in self.sin_coeffs))
        if self.kind == "explicit":
            return float(max(abs(v) for v in self.table))
        return abs(self.value)

    def evaluate(self, sites) -> np.ndarray:
        sites = np.asarray(sites, dtype=np.int64)
        if self.kind == "constant":
            return np.full(sites.shape, self.value, dtype=float)
        if self.kind == "explicit":
            idx = sites - self.table_lo
            if idx.size and (idx.min() < 0 or idx.max() >= len(self.table)):
                raise ValueError(
                    f"explicit potential is defined on [{self.table_lo}, "
                    f"{self.table_lo + len(self.table) - 1}] only"
                )
            return np.asarray(self.table)[idx]
        x = np.mod(self.theta + sites * self.alpha, 1.0)
        out = np.zeros(sites.shape, dtype=float)
        for m, c in enumerate(self.cos_coeffs):
            if c:
                out += c * np.cos(2 * np.pi * m * x)
        for m, s in enumerate(self.sin_coeffs, start=1):
            if s:
                out += s * np.sin(2 * np.pi * m * x)
        return out

    def reflected(self) -> "PotentialLaw":
        """Law of ``n -> V_{-n}``."""
        if self.kind == "quasiperiodic":
            return PotentialLaw.quasiperiodic(self.cos_coeffs, self.sin_coeffs,
                                              self.theta, (-self.alpha) % 1.0)
        if self.kind == "explicit":
            lo = -(self.table_lo + len(self.table) - 1)
            return PotentialLaw.explicit(self.table[::-1], lo)
        return self


@dataclass(frozen=True)
class Window:
    """Closed integer interval ``[lo, hi]``.

    Half-lines and the full line are stored as finite windows tagged with
    an ``intent`` and the error budget of the cut.
    """

    lo: int
    hi: int
    intent: str = "finite"
    truncation_error_budget: float = 0.0

    def __post_init__(self):
        if self.hi < self.lo:
            raise EmptyWindowError(f"empty window [{self.lo}, {self.hi}]")
        if self.intent not in ("finite", "left_halfline_truncated", "full_line_truncated"):
            raise ValueError(f"unknown window intent {self.intent!r}")
        if self.truncation_error_budget < 0:
            raise ValueError("truncation_error_budget must be >= 0")

    @classmethod
    def centered(cls, radius: int, **kw) -> "Window":
        return cls(-int(radius), int(radius), **kw)

    @property
    def size(self) -> int:
        return self.hi - self.lo + 1

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.lo, self.hi + 1)

    @property
    def is_symmetric(self) -> bool:
        return self.lo == -self.hi

    def contains(self, n) -> bool:
        n = np.asarray(n)
        return bool(np.all((n >= self.lo) & (n <= self.hi)))

    def index(self, n):
        if not self.contains(n):
            raise IndexError(f"site(s) {n} outside window [{self.lo}, {self.hi}]")
        return np.asarray(n) - self.lo

    def shifted(self, s: int) -> "Window":
        return Window(self.lo + s, self.hi + s, self.intent, self.truncation_error_budget)


@dataclass(frozen=True)
class OperatorSpec:
    """``H = coupling * A + V`` with Toeplitz hopping ``A`` and diagonal ``V``."""

    kernel: HoppingKernel
    potential: PotentialLaw = field(default_factory=PotentialLaw.constant)
    coupling: float = 1.0

    @property
    def is_real(self) -> bool:
        return self.kernel.is_real

    @property
    def hopping_norm(self) -> float:
        """Schur row-sum bound ``|coupling| sum_n |a_n|`` on the hopping part."""
        return abs(self.coupling) * self.kernel.l1_norm()

    @property
    def velocity(self) -> float:
        """``|coupling| sum_n |n a_n|``, the light-cone speed used for window sizing."""
        return abs(self.coupling) * self.kernel.first_moment()

    def potential_on(self, window: Window) -> np.ndarray:
        return self.potential.evaluate(window.sites)

    def matrix(self, window: Window) -> np.ndarray:
        return assemble(self, window)

    def reflected(self) -> "OperatorSpec":
        return OperatorSpec(self.kernel.reflected(), self.potential.reflected(), self.coupling)

    def free(self) -> "OperatorSpec":
        """Same hopping, zero potential."""
        return OperatorSpec(self.kernel, PotentialLaw.constant(0.0), self.coupling)

    @classmethod
    def from_config(cls, cfg: Mapping) -> "OperatorSpec":
        return operator_from_config(cfg)


def assemble(spec: OperatorSpec, window: Window) -> np.ndarray:
    """Dense matrix of ``spec`` restricted to ``window``.

    ``M[i, j] = coupling * a_{(lo+i)-(lo+j)} + delta_ij V_{lo+i}``.  The
    strict upper triangle is evaluated and mirrored, so the result equals
    its conjugate transpose bit for bit.  The dtype is ``float64`` when the
    kernel is real and ``complex128`` otherwise.
    """
    sites = window.sites
    d = sites[:, None] - sites[None, :]
    hop = spec.coupling * spec.kernel.lookup(d)
    upper = np.triu(hop, 1)
    M = upper + upper.conj().T
    diag = spec.coupling * spec.kernel[0].real + spec.potential_on(window)
    M[np.diag_indices_from(M)] = diag
    return M


def assemble_banded(spec: OperatorSpec, window: Window, z: complex = 0.0):
    """``H - z`` on ``window`` in LAPACK general-band storage.

    Returns ``(ab, (l, u))`` ready for :func:`scipy.linalg.solve_banded`.
    """
    n = window.size
    r = min(spec.kernel.radius, n - 1)
    ab = np.zeros((2 * r + 1, n), dtype=np.complex128)
    V = spec.potential_on(window)
    for off in range(-r, r + 1):
        # ab[r + i - j, j] = M[i, j]; diagonal offset i - j = off
        val = spec.coupling * spec.kernel[off]
        if off > 0:
            ab[r + off, : n - off] = val
        elif off < 0:
            ab[r + off, -off:] = val
        else:
            ab[r, :] = val.real + V - z
    return ab, (r, r)


def spectrum_bound(spec: OperatorSpec) -> float:
    """``K`` with ``sigma(H) in [-K+1, K-1]``: Schur bound on the hopping plus ``sup|V|`` plus 1."""
    return spec.hopping_norm + spec.potential.bound + 1.0


@dataclass(frozen=True)
class DiophantineParams:
    kappa: float
    tau: float
    k_max: int

    def __post_init__(self):
        if not (self.kappa > 0 and self.tau > 0):
            raise ValueError("kappa and tau must be positive")
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")


@dataclass(frozen=True)
class DiophantineReport:
    passed: bool
    worst_k: int
    worst_value: float

    def to_dict(self) -> dict:
        return {"pass": self.passed, "worst_k": self.worst_k, "worst_value": self.worst_value}


def circle_distance(x) -> np.ndarray:
    """``||x||_{R/Z}``, distance to the nearest integer."""
    f = np.mod(x, 1.0)
    return np.minimum(f, 1.0 - f)


def diophantine_check(alpha: float, params: DiophantineParams, rational_tol: float = 1e-12) -> DiophantineReport:
    """Scan ``||k alpha|| >= tau / k^kappa`` for ``1 <= k <= k_max``.

    ``worst_k`` minimises ``||k alpha|| k^kappa``.  If ``alpha`` is within
    ``rational_tol * k`` of ``p/k`` for some ``k <= k_max`` it is treated as
    rational: the check fails with ``worst_k`` the smallest such ``k`` and
    ``worst_value = 0``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    k = np.arange(1, params.k_max + 1, dtype=np.int64)
    dist = circle_distance(k * alpha)
    rational = dist <= rational_tol * k
    if rational.any():
        return DiophantineReport(False, int(k[np.argmax(rational)]), 0.0)
    scaled = dist * k.astype(float) ** params.kappa
    i = int(np.argmin(scaled))
    return DiophantineReport(bool(scaled[i] >= params.tau), int(k[i]), float(scaled[i]))


@dataclass(frozen=True)
class KernelFit:
    A1_fit: float
    a_fit: float
    envelope_ok: bool
    residual: float
    degenerate: bool = False


def kernel_decay_fit(kernel: HoppingKernel) -> KernelFit:
    """Least-squares fit of ``log|a_n|`` against ``|n|`` over the nonzero off-diagonal entries.

    When the nonzero entries sit at a single distance the slope is not
    identifiable; the stored rate is kept, the amplitude is the tightest one
    compatible with it, and ``degenerate`` is set.  ``envelope_ok`` is a
    direct scan of the stored envelope against every entry.
    """
    arr = kernel.array
    n = kernel.offsets
    mask = (n != 0) & (np.abs(arr) > 0)
    if not mask.any():
        raise DegenerateFitError("all off-diagonal kernel entries are zero")
    env_ok = bool(np.all(np.abs(arr) <= kernel.envelope(n) * (1 + _ENVELOPE_RTOL)))
    dist = np.abs(n[mask]).astype(float)
    logs = np.log(np.abs(arr[mask]))
    if np.unique(dist).size < 2:
        a_fit = kernel.decay_rate
        A1_fit = float(np.max(np.exp(logs + a_fit * dist)))
        return KernelFit(A1_fit, a_fit, env_ok, 0.0, degenerate=True)
    slope, intercept = np.polyfit(dist, logs, 1)
    resid = logs - (slope * dist + intercept)
    return KernelFit(float(np.exp(intercept)), float(-slope), env_ok,
                     float(np.sqrt(np.mean(resid**2))))


def _complex_entry(v) -> complex:
    if isinstance(v, (list, tuple)):
        re, im = v
        return complex(float(re), float(im))
    return complex(v)


def kernel_from_config(cfg: Mapping) -> HoppingKernel:
    kind = cfg.get("type", "exp")
    if kind == "exp":
        A1 = float(cfg.get("A1", 1.0))
        a = float(cfg.get("a", 1.0))
        return HoppingKernel.exponential(A1, a, radius=cfg.get("radius"),
                                         tail_tol=float(cfg.get("tail_tol", KERNEL_TAIL_TOL)))
    if kind == "nn":
        return HoppingKernel.nearest_neighbor(float(cfg.get("t", 1.0)))
    if kind == "table":
        table = {int(k): _complex_entry(v) for k, v in cfg["table"].items()}
        return HoppingKernel.from_table(table, float(cfg["A1"]), float(cfg["a"]))
    if kind == "zero":
        return HoppingKernel.zero()
    raise ValueError(f"unknown kernel type {kind!r}")


def potential_from_config(cfg: Mapping) -> PotentialLaw:
    kind = cfg.get("type", "zero")
    if kind == "quasiperiodic":
        coeffs = cfg.get("fourier_coeffs", {"cos": [0.0, 2.0]})
        return PotentialLaw.quasiperiodic(coeffs.get("cos", ()), coeffs.get("sin", ()),
                                          cfg.get("theta", 0.0), cfg.get("alpha", GOLDEN_MEAN))
    if kind == "table":
        tab = cfg["table"]
        return PotentialLaw.explicit(tab["values"], tab.get("lo", 0))
    if kind == "constant":
        return PotentialLaw.constant(cfg.get("value", 0.0))
    if kind == "zero":
        return PotentialLaw.constant(0.0)
    raise ValueError(f"unknown potential type {kind!r}")


def operator_from_config(cfg: Mapping) -> OperatorSpec:
    """Build an :class:`OperatorSpec` from the ``operator`` block of a scenario."""
    return OperatorSpec(
        kernel_from_config(cfg.get("kernel", {"type": "nn"})),
        potential_from_config(cfg.get("potential", {"type": "zero"})),
        float(cfg.get("coupling", 1.0)),
    )
