"""Periodic-orbit thermodynamics: zeta function, dynamical determinants,
Bowen sums for the center-Jacobian equilibrium state, pressure and the
joint-integrability test.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import TruncationWarning
from .periodic import DEFAULT_BUDGET, PeriodicSet, linear_periodic_points, periodic_points
from .torus_maps import AnosovMap, linear_eigen

__all__ = [
    "TrigObservable",
    "ZetaRational",
    "BowenEstimate",
    "PressureSeries",
    "IntegrabilityResult",
    "DynamicalDeterminant",
    "zeta_exact",
    "zeta_series",
    "zeta_taylor_from_counts",
    "dyn_determinant",
    "determinant_series",
    "bowen_measure",
    "pressure_estimate",
    "integrability_test",
    "center_lyapunov_estimate",
    "trace_exterior_square",
    "trace_asymptotic_residual",
    "aitken",
]

VERDICTS = ("JointlyIntegrable", "NotJointlyIntegrable", "Inconclusive")


# -- observables ----------------------------------------------------------

@dataclass(frozen=True)
class TrigObservable:
    """Real trigonometric polynomial
    constant + sum_j a_j cos(2 pi q_j.x) + b_j sin(2 pi q_j.x)."""

    name: str
    terms: tuple = ()  # (wavevector, a, b)
    constant: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(
            (tuple(int(v) for v in q), float(a), float(b)) for q, a, b in self.terms))

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape[:-1], self.constant)
        for q, a, b in self.terms:
            arg = 2.0 * np.pi * (x @ np.asarray(q, dtype=float))
            out = out + a * np.cos(arg) + b * np.sin(arg)
        return out

    def fourier(self) -> dict:
        """Mode -> complex coefficient of exp(2 pi i m.x)."""
        c: dict = {}
        if self.constant:
            c[(0, 0, 0)] = c.get((0, 0, 0), 0) + self.constant
        for q, a, b in self.terms:
            mq = tuple(-v for v in q)
            c[q] = c.get(q, 0) + 0.5 * a - 0.5j * b
            c[mq] = c.get(mq, 0) + 0.5 * a + 0.5j * b
        return c

    @staticmethod
    def one() -> "TrigObservable":
        return TrigObservable("one", (), 1.0)

    @staticmethod
    def cos(q, name=None) -> "TrigObservable":
        return TrigObservable(name or f"cos{tuple(q)}", ((q, 1.0, 0.0),))

    @staticmethod
    def sin(q, name=None) -> "TrigObservable":
        return TrigObservable(name or f"sin{tuple(q)}", ((q, 0.0, 1.0),))


# -- zeta function ----------------------------------------------------------

def _int_poly_mul_series(num, den, N):
    """Exact power-series coefficients of num/den (integer lists, den[0] = 1)."""
    out = []
    for n in range(N + 1):
        v = num[n] if n < len(num) else 0
        for j in range(1, min(n, len(den) - 1) + 1):
            v -= den[j] * out[n - j]
        out.append(v)
    return out


@dataclass(frozen=True)
class ZetaRational:
    """zeta(z) = prod(1 - z / a) / prod(1 - z / b) with a = numerator_roots,
    b = denominator_roots (the latter are the poles).

    ``numerator_poly`` / ``denominator_poly`` are the exact integer
    coefficient lists of the same polynomials.
    """

    numerator_roots: tuple
    denominator_roots: tuple
    numerator_poly: tuple
    denominator_poly: tuple

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        num = np.polyval(self.numerator_poly[::-1], z)
        den = np.polyval(self.denominator_poly[::-1], z)
        return num / den

    def taylor(self, N: int) -> list:
        """Exact integer Taylor coefficients c_0..c_N."""
        return _int_poly_mul_series(list(self.numerator_poly), list(self.denominator_poly), N)

    def log_derivative_coefficients(self, N: int) -> list:
        """Integers N_m with z d/dz log zeta = sum_m N_m z^m."""
        num, den = self.numerator_poly, self.denominator_poly
        # power sums of the reciprocal roots via Newton's identities
        def power_sums(poly):
            e = [(-1) ** k * poly[k] for k in range(len(poly))]
            p = [0] * (N + 1)
            for m in range(1, N + 1):
                v = (-1) ** (m - 1) * m * e[m] if m < len(e) else 0
                for i in range(1, m):
                    if i < len(e):
                        v += (-1) ** (i - 1) * e[i] * p[m - i]
                p[m] = v
            return p
        pn, pd = power_sums(num), power_sums(den)
        return [pd[m] - pn[m] for m in range(1, N + 1)]


def zeta_exact(A) -> ZetaRational:
    """Rational form of exp(sum_m |det(A^m - I)| z^m / m) for a hyperbolic
    A in SL(3, Z) with eigenvalues 0 < l_s < 1 < l_c < l_u.

    |det(A^m - I)| = sum_{i<j} (l_i l_j)^m - sum_i l_i^m, which gives
    zeta(z) = prod_i (1 - z l_i) / prod_{i<j} (1 - z l_i l_j).
    """
    Ai = np.asarray(A).astype(np.int64)
    Apy = [[int(v) for v in row] for row in Ai]
    tr = sum(Apy[i][i] for i in range(3))
    A2 = [[sum(Apy[i][k] * Apy[k][j] for k in range(3)) for j in range(3)] for i in range(3)]
    tr2 = sum(A2[i][i] for i in range(3))
    e2 = (tr * tr - tr2) // 2
    det = int(round(np.linalg.det(Ai)))
    numerator_poly = (1, -tr, e2, -det)
    # exterior square: eigenvalues l_i l_j; elementary symmetric functions
    # e1 = e2(A), e2 = det * tr(A), e3 = det^2
    denominator_poly = (1, -e2, det * tr, -det * det)
    lam = linear_eigen(Ai).values
    num_roots = tuple(float(1.0 / v) for v in lam)
    pair = [lam[0] * lam[1], lam[0] * lam[2], lam[1] * lam[2]]
    den_roots = tuple(float(1.0 / v) for v in pair)
    return ZetaRational(num_roots, den_roots, numerator_poly, denominator_poly)


def zeta_series(fmap: AnosovMap, N: int, budget: int = DEFAULT_BUDGET) -> list:
    """Card F_m for m = 1..N, counted from enumerated periodic points."""
    out = []
    for m in range(1, N + 1):
        if fmap.is_linear:
            out.append(len(linear_periodic_points(fmap.A, m, budget=budget)))
        else:
            out.append(len(periodic_points(fmap, m, budget=budget)))
    return out


def zeta_taylor_from_counts(counts) -> list:
    """Taylor coefficients of exp(sum_m counts[m-1] z^m / m), exactly."""
    N = len(counts)
    c = [Fraction(1)]
    for n in range(1, N + 1):
        s = sum(Fraction(counts[m - 1]) * c[n - m] for m in range(1, n + 1))
        c.append(s / n)
    if any(v.denominator != 1 for v in c):
        raise ValueError("counts do not define an integer zeta series")
    return [int(v) for v in c]


# -- dynamical determinants -------------------------------------------------

def trace_exterior_square(M) -> np.ndarray:
    """tr of the induced action on 2-vectors: (tr(M)^2 - tr(M^2)) / 2."""
    M = np.asarray(M)
    t = np.trace(M, axis1=-2, axis2=-1)
    t2 = np.trace(M @ M, axis1=-2, axis2=-1)
    return 0.5 * (t * t - t2)


def _periodic_data(fmap: AnosovMap, m: int, budget: int) -> PeriodicSet:
    if fmap.is_linear:
        return linear_periodic_points(fmap.A, m, budget=budget)
    return periodic_points(fmap, m, budget=budget)


def _inverse_multipliers(ps: PeriodicSet) -> np.ndarray:
    # multipliers of df^m stay positive under continuation from A^m
    return np.exp(-ps.log_multipliers)


def _trace_terms(ps: PeriodicSet) -> np.ndarray:
    """sum_x tr(L^k df^{-m}) / |det(I - df^{-m})| for k = 0..3.

    Computed from the multipliers of each orbit, whose product matrix is
    too ill-conditioned to invert directly.
    """
    nu = _inverse_multipliers(ps)
    e = np.stack([
        np.ones(len(nu)),
        nu.sum(axis=1),
        nu[:, 0] * nu[:, 1] + nu[:, 0] * nu[:, 2] + nu[:, 1] * nu[:, 2],
        nu.prod(axis=1),
    ], axis=1)
    denom = np.abs(np.prod(1.0 - nu, axis=1))
    w = ps.orbit_length.astype(float)
    return (w[:, None] * e / denom[:, None]).sum(axis=0)


@dataclass
class DynamicalDeterminant:
    degree: int
    N: int
    log_coefficients: np.ndarray  # a_1..a_N
    coefficients: np.ndarray  # d_0..d_N

    def __call__(self, z, warn_threshold: float = 1e-3):
        z = np.asarray(z, dtype=complex)
        val = np.polyval(self.coefficients[::-1], z)
        last = np.abs(self.coefficients[-1] * z ** self.N)
        rel = last / np.maximum(np.abs(val), 1e-300)
        if np.any(rel > warn_threshold):
            warnings.warn(f"determinant truncation: last term relative size {np.max(rel):.2e}",
                          TruncationWarning, stacklevel=2)
        return val

    def zeros(self) -> np.ndarray:
        c = np.trim_zeros(self.coefficients[::-1], "f")
        r = np.roots(c) if len(c) > 1 else np.array([], dtype=complex)
        return r[np.argsort(np.abs(r))]


def _exp_series(a):
    """Coefficients of exp(sum_{m>=1} a_m z^m) truncated to degree len(a)."""
    N = len(a)
    d = np.zeros(N + 1, dtype=complex if np.iscomplexobj(a) else float)
    d[0] = 1.0
    for n in range(1, N + 1):
        d[n] = sum(m * a[m - 1] * d[n - m] for m in range(1, n + 1)) / n
    return d


def determinant_series(fmap: AnosovMap, k: int, N: int, budget: int = DEFAULT_BUDGET) -> DynamicalDeterminant:
    if k not in (0, 1, 2, 3):
        raise ValueError("k must be in 0..3")
    a = np.empty(N)
    for m in range(1, N + 1):
        a[m - 1] = -_trace_terms(_periodic_data(fmap, m, budget))[k] / m
    return DynamicalDeterminant(k, N, a, _exp_series(a))


def dyn_determinant(fmap: AnosovMap, k: int, N: int, z, budget: int = DEFAULT_BUDGET,
                    radius: float = 1.0):
    if np.any(np.abs(np.asarray(z)) >= radius):
        raise ValueError(f"|z| must be below the configured radius {radius}")
    return determinant_series(fmap, k, N, budget)(z)


def trace_asymptotic_residual(ps: PeriodicSet) -> np.ndarray:
    """|det(I - df^{-m})| * |stable multiplier| - 1 per orbit."""
    nu = _inverse_multipliers(ps)
    return np.abs(np.prod(1.0 - nu, axis=1)) / nu[:, 0] - 1.0


# -- Bowen sums, pressure, integrability --------------------------------------

@dataclass
class BowenEstimate:
    observable_id: str
    period: int
    value: float  # self-normalized
    prev_value: float
    raw: float = 0.0  # lambda_u^{-n} sum exp(jc_sum) g
    raw_one: float = 0.0  # same with g = 1

    def as_dict(self):
        return {"observable": self.observable_id, "period": self.period, "value": self.value,
                "prev_value": self.prev_value, "raw": self.raw, "raw_one": self.raw_one}


def _bowen_sums(fmap: AnosovMap, n: int, g, budget: int):
    ps = _periodic_data(fmap, n, budget)
    lam_u = linear_eigen(fmap.A).values[2]
    log_scale = -n * np.log(lam_u)
    w = np.exp(ps.orbit_jc_sum + log_scale)[ps.orbit_id]
    vals = g(ps.points)
    return float(np.sum(w * vals)), float(np.sum(w))


def bowen_measure(fmap: AnosovMap, n: int, g, budget: int = DEFAULT_BUDGET) -> BowenEstimate:
    """Periodic-orbit average of g weighted by exp(sum of J^c) over F_n.

    The raw value is lambda_u^{-n} sum_{x in F_n} exp(jc_sum(x)) g(x); the
    reported value divides by the same sum with g = 1.
    """
    raw, one = _bowen_sums(fmap, n, g, budget)
    prev = np.nan
    if n > 1:
        r0, o0 = _bowen_sums(fmap, n - 1, g, budget)
        prev = r0 / o0
    name = getattr(g, "name", getattr(g, "__name__", "g"))
    return BowenEstimate(name, n, raw / one, float(prev), raw, one)


def center_lyapunov_estimate(fmap: AnosovMap, n: int, budget: int = DEFAULT_BUDGET) -> float:
    """Bowen average of log of the center rate, i.e. minus the average of J^c."""
    ps = _periodic_data(fmap, n, budget)
    w = np.exp(ps.orbit_jc_sum - ps.orbit_jc_sum.max()) * ps.orbit_length
    return float(-np.sum(w * ps.orbit_jc_sum / n) / np.sum(w))


def aitken(seq) -> np.ndarray:
    """Aitken delta-squared transform of a sequence (length len(seq) - 2)."""
    s = np.asarray(seq, dtype=float)
    if len(s) < 3:
        return np.array([])
    d2 = s[2:] - 2 * s[1:-1] + s[:-2]
    with np.errstate(divide="ignore", invalid="ignore"):
        acc = s[2:] - (s[2:] - s[1:-1]) ** 2 / d2
    return np.where(np.abs(d2) > 1e-300, acc, s[2:])


@dataclass
class PressureSeries:
    per_period: list  # (n, (1/n) log Z_n)
    ratio_values: list  # (n, log Z_n - log Z_{n-1})
    limit: float
    error: float
    log_partition: list = field(default_factory=list)  # (n, log Z_n)

    def as_dict(self):
        return {"per_period": [list(v) for v in self.per_period],
                "ratio_values": [list(v) for v in self.ratio_values],
                "log_partition": [list(v) for v in self.log_partition],
                "limit": self.limit, "error": self.error}


def _log_partition(fmap: AnosovMap, n: int, budget: int) -> float:
    ps = _periodic_data(fmap, n, budget)
    jc = ps.orbit_jc_sum
    mx = jc.max()
    return float(mx + np.log(np.sum(ps.orbit_length * np.exp(jc - mx))))


def pressure_estimate(fmap: AnosovMap, n_max: int, budget: int = DEFAULT_BUDGET,
                      passes: int = 2) -> PressureSeries:
    """Pressure of J^c from Z_n = sum_{x in F_n} exp(jc_sum(x)).

    (1/n) log Z_n converges only like 1/n, so the limit is extrapolated
    from the ratio sequence log(Z_n / Z_{n-1}), which converges
    geometrically, with ``passes`` rounds of Aitken's transform.  The
    error bar is the last increment of the accelerated sequence.
    """
    if n_max < 2:
        raise ValueError("n_max must be >= 2")
    logZ = [(n, _log_partition(fmap, n, budget)) for n in range(1, n_max + 1)]
    per = [(n, v / n) for n, v in logZ]
    ratios = [(logZ[i][0], logZ[i][1] - logZ[i - 1][1]) for i in range(1, len(logZ))]
    r = [v for _, v in ratios]
    # each subleading zero of the zeta function adds a geometric mode, so
    # the transform is iterated while two accelerated values remain
    acc, prev = np.asarray(r, dtype=float), None
    for _ in range(passes):
        nxt = aitken(acc)
        if len(nxt) < 2:
            break
        prev, acc = acc, nxt
    if len(acc) >= 2:
        limit, err = float(acc[-1]), float(abs(acc[-1] - acc[-2]))
    elif len(acc) == 1:
        limit = float(acc[-1])
        err = float(abs(acc[-1] - prev[-1])) if prev is not None else float("inf")
    else:
        limit, err = float(r[-1]), float("inf")
    return PressureSeries(per, ratios, limit, err, logZ)


@dataclass
class IntegrabilityResult:
    verdict: str
    spread: float
    tol: float
    per_period_spread: list

    def as_dict(self):
        return {"verdict": self.verdict, "spread": self.spread, "tol": self.tol,
                "per_period_spread": [list(v) for v in self.per_period_spread]}


def integrability_test(fmap: AnosovMap, n_max: int, tol: float = 1e-4,
                       budget: int = DEFAULT_BUDGET) -> IntegrabilityResult:
    """Compare the periodic averages of J^c with -log lambda_c.

    spread = max over periodic points of |jc_sum / n + log lambda_c|.
    """
    log_c = float(np.log(linear_eigen(fmap.A).values[1]))
    per = []
    for n in range(1, n_max + 1):
        ps = _periodic_data(fmap, n, budget)
        per.append((n, float(np.max(np.abs(ps.orbit_jc_sum + n * log_c)) / n)))
    spread = max(v for _, v in per)
    if spread > tol:
        verdict = "NotJointlyIntegrable"
    elif spread < tol / 10:
        verdict = "JointlyIntegrable"
    else:
        verdict = "Inconclusive"
    return IntegrabilityResult(verdict, spread, tol, per)
