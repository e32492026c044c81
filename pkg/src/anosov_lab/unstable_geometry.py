"""Strong unstable curves, length growth, Bowen brackets and holonomies.

Curves live on the lift R^3.  A local unstable leaf through x is
parametrized by the chart

    c(t) = F^m(z0 + t d) - F^m(z0) + x,   z0 = F^{-m}(x),  d = lambda_u^{-m} e_u(z0),

so that c(0) = x exactly.  A short
straight segment along e_u at z0 is pushed forward m steps, which flattens
its distance to the true leaf by (lambda_c / lambda_u)^m.

Center-stable leaves are located through the forward u-gap

    Phi_N(p; q) = lambda_u^{-N} l_u . (F^N p - F^N q),

which vanishes exactly when p lies on the lifted cs-leaf of q, in the limit
N -> infinity.  The error at finite N is of order lambda_u^{-N}.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetExceeded, NoConvergence, NoIntersection, TangentDrift
from .splitting import splitting_frames
from .torus_maps import AnosovMap, linear_eigen, mod1, torus_distance, wrap_delta

__all__ = [
    "UChart",
    "UnstableCurve",
    "Rectangle",
    "EntropyEstimate",
    "u_chart",
    "u_gap",
    "grow_curve",
    "curve_lengths",
    "entropy_estimate",
    "bracket",
    "cs_project",
    "rectangle",
    "holonomy_cs",
    "holonomy_u",
    "quasi_isometry_constant",
    "curve_to_csv",
]

CHART_STEPS = 8
GAP_STEPS = 28
MAX_SEG = 0.02
EPS0 = 0.2
VERTEX_BUDGET = 50_000_000
CHUNK_VERTICES = 1_000_000


# -- charts -----------------------------------------------------------------

@dataclass
class UChart:
    """Unstable-leaf charts through a stack of base points."""

    base: np.ndarray  # (K, 3) in [0,1)
    z0: np.ndarray  # (K, 3) seed points in [0,1)
    d: np.ndarray
    y_m: np.ndarray  # split form of F^m(z0)
    c_m: np.ndarray
    m: int
    fmap: AnosovMap = field(repr=False)

    def __len__(self):
        return len(self.base)

    def point(self, t, idx=None, level: int = 0) -> np.ndarray:
        """Lifted points F^level(c_idx(t)); idx defaults to chart 0.

        The first m steps run on the split (fraction, integer) form and are
        differenced against the base orbit, so c(0) reproduces the base point
        exactly and nearby parameters keep full relative precision.
        """
        t = np.asarray(t, dtype=float)
        idx = np.zeros(t.shape, dtype=int) if idx is None else np.broadcast_to(idx, t.shape)
        p = self.z0[idx] + t[..., None] * self.d[idx]
        fl = np.floor(p)
        y, c = p - fl, fl.astype(np.int64)
        for _ in range(self.m):
            y, c = self.fmap.step_split(y, c)
        p = (c - self.c_m[idx]).astype(float) + ((y - self.y_m[idx]) + self.base[idx])
        for _ in range(level):
            p = self.fmap.eval_lift(p)
        return p

    def speed(self, t, idx=None, level: int = 0) -> np.ndarray:
        """|d/dt F^level(c(t))|."""
        t = np.asarray(t, dtype=float)
        idx = np.zeros(t.shape, dtype=int) if idx is None else np.broadcast_to(idx, t.shape)
        p = self.z0[idx] + t[..., None] * self.d[idx]
        v = np.array(self.d[idx], dtype=float)
        for _ in range(self.m + level):
            p, J = self.fmap.eval_lift_and_jacobian(p)
            p -= np.floor(p)  # the Jacobian is periodic
            v = np.einsum("...ij,...j->...i", J, v)
        return np.linalg.norm(v, axis=-1)

    def arclength(self, t_a, t_b, idx: int = 0, level: int = 0, panel: float = 0.01, nodes: int = 8):
        """Arclength of F^level(c) between parameters t_a and t_b (signed)."""
        t_a, t_b = float(t_a), float(t_b)
        if t_a == t_b:
            return 0.0
        k = max(1, int(np.ceil(abs(t_b - t_a) / panel)))
        xg, wg = np.polynomial.legendre.leggauss(nodes)
        edges = np.linspace(t_a, t_b, k + 1)
        h = 0.5 * (edges[1:] - edges[:-1])
        mid = 0.5 * (edges[1:] + edges[:-1])
        tq = (mid[:, None] + h[:, None] * xg[None, :]).ravel()
        sp = self.speed(tq, np.full(tq.shape, idx), level).reshape(k, nodes)
        return float(np.sum(h[:, None] * wg[None, :] * sp))

    def param_at_arclength(self, s, idx: int = 0, tol: float = 1e-14, max_iter: int = 30) -> float:
        """Parameter t with signed arclength s from t = 0."""
        t = s / float(self.speed(np.array([0.0]), np.array([idx]))[0])
        for _ in range(max_iter):
            err = self.arclength(0.0, t, idx) - s
            if abs(err) <= tol * max(1.0, abs(s)):
                return t
            t -= err / float(self.speed(np.array([t]), np.array([idx]))[0])
        raise NoConvergence(f"arclength inversion did not converge (residual {err:.2e})")


def u_chart(fmap: AnosovMap, points, m: int = CHART_STEPS) -> UChart:
    Y = np.atleast_2d(np.asarray(points, dtype=float))
    Y = Y - np.floor(Y)
    # reduce every step: lifted backward orbits grow like 5^m and their
    # rounding would slide F^m(z0) along the leaf, away from the base point
    z = Y.copy()
    for _ in range(m):
        z = fmap.inverse_lift(z)
        z = z - np.floor(z)
    fr = splitting_frames(fmap, z)
    lam_u = linear_eigen(fmap.A).values[2]
    d = fr.e_u * lam_u ** (-m)
    y, c = z.copy(), np.zeros(z.shape, dtype=np.int64)
    for _ in range(m):
        y, c = fmap.step_split(y, c)
    return UChart(Y, z, d, y, c, m, fmap)


# -- the u-gap and monotone root finding ------------------------------------------

def u_gap(fmap: AnosovMap, P, X, N: int = GAP_STEPS) -> np.ndarray:
    """lambda_u^{-N} l_u . (F^N P - F^N X) on lifted points, with integer
    and fractional parts carried separately."""
    P = np.asarray(P, dtype=float)
    X = np.asarray(X, dtype=float)
    eig = linear_eigen(fmap.A)
    lu = eig.left[2]
    fP, fX = np.floor(P), np.floor(X)
    yP, yX = P - fP, X - fX
    cP, cX = fP.astype(np.int64), fX.astype(np.int64)
    for _ in range(N):
        yP, cP = fmap.step_split(yP, cP)
        yX, cX = fmap.step_split(yX, cX)
    diff = (cP - cX).astype(float) + (yP - yX)
    return (diff @ lu) * eig.values[2] ** (-N)


def _solve_increasing(fun, t0, width, tol: float = 1e-15, ftol: float = 1e-15,
                      max_expand: int = 30, max_iter: int = 80):
    """Vectorized root of increasing functions: bracket expansion, then the
    Illinois variant of regula falsi.  Stops on |f| <= ftol or a collapsed
    bracket; raises NoConvergence otherwise."""
    t0 = np.asarray(t0, dtype=float)
    width = np.broadcast_to(np.asarray(width, dtype=float), t0.shape).copy()
    lo, hi = t0 - width, t0 + width
    flo, fhi = fun(lo), fun(hi)
    for _ in range(max_expand):
        bad_lo, bad_hi = flo > 0, fhi < 0
        if not (bad_lo.any() or bad_hi.any()):
            break
        width = np.where(bad_lo | bad_hi, 2 * width, width)
        lo = np.where(bad_lo, t0 - width, lo)
        hi = np.where(bad_hi, t0 + width, hi)
        flo = np.where(bad_lo, fun(lo), flo)
        fhi = np.where(bad_hi, fun(hi), fhi)
    if np.any(flo > 0) or np.any(fhi < 0):
        raise NoIntersection("no sign change of the cs-gap along the u-curve")
    side = np.zeros(t0.shape, dtype=int)
    t = 0.5 * (lo + hi)
    ft = np.full(t0.shape, np.inf)
    for _ in range(max_iter):
        done = (np.abs(ft) <= ftol) | ((hi - lo) <= tol * np.maximum(1.0, np.abs(t)))
        if done.all():
            return t
        denom = fhi - flo
        tn = np.where(denom > 0, (lo * fhi - hi * flo) / np.where(denom > 0, denom, 1.0), 0.5 * (lo + hi))
        tn = np.clip(tn, lo, hi)
        t = np.where(done, t, tn)
        fn = fun(t)
        ft = np.where(done, ft, fn)
        left = (ft < 0) & ~done
        right = (ft > 0) & ~done
        # Illinois: halve the retained endpoint value when the same side repeats
        fhi = np.where(left & (side == 1), 0.5 * fhi, fhi)
        flo = np.where(right & (side == -1), 0.5 * flo, flo)
        lo, flo = np.where(left, t, lo), np.where(left, ft, flo)
        hi, fhi = np.where(right, t, hi), np.where(right, ft, fhi)
        side = np.where(left, 1, np.where(right, -1, side))
    raise NoConvergence(f"root solve stalled: max |f| = {np.max(np.abs(ft)):.2e}")


def _nearest_lift(X, ref):
    X = np.asarray(X, dtype=float)
    return ref + wrap_delta(X - ref)


def _bracket_params(chart: UChart, idx, targets, N: int, tol: float):
    """Parameters t with c_idx(t) on the cs-leaf of each target."""
    idx = np.asarray(idx)
    Xt = _nearest_lift(targets, chart.base[idx])
    g0 = u_gap(chart.fmap, chart.point(np.zeros(len(idx)), idx), Xt, N)
    sp = chart.speed(np.zeros(len(idx)), idx)
    t0 = -g0 / sp
    fun = lambda t: u_gap(chart.fmap, chart.point(t, idx), Xt, N)  # noqa: E731
    width = 0.1 * np.abs(t0) + 1e-9
    return _solve_increasing(fun, t0, width, tol=tol)


def bracket(fmap: AnosovMap, x, y, tol: float = 1e-13, eps0: float = EPS0, N: int = GAP_STEPS):
    """[x, y]: the point of W^u(y) on the cs-leaf of x.  Accepts stacks."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    x, y = np.broadcast_arrays(x, y)
    if np.any(torus_distance(x, y) > eps0):
        raise NoIntersection(f"points farther apart than eps0={eps0}")
    chart = u_chart(fmap, y)
    idx = np.arange(len(y))
    t = _bracket_params(chart, idx, x, N, tol)
    z = mod1(chart.point(t, idx))
    return z[0] if z.shape[0] == 1 else z


def cs_project(fmap: AnosovMap, x, Q, N: int = GAP_STEPS, tol: float = 1e-15) -> np.ndarray:
    """Slide the lifted points Q along the linear unstable direction onto the
    lifted cs-leaf of x.  Returns lifted points near Q."""
    x = np.asarray(x, dtype=float).reshape(1, 3)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    eu = linear_eigen(fmap.A).right[:, 2]
    X = np.broadcast_to(x, Q.shape)
    fun = lambda tau: u_gap(fmap, Q + tau[:, None] * eu, X, N)  # noqa: E731
    t0 = -fun(np.zeros(len(Q)))
    tau = _solve_increasing(fun, t0, 0.1 * np.abs(t0) + 1e-9, tol=tol)
    return Q + tau[:, None] * eu


# -- curves -----------------------------------------------------------------

@dataclass
class UnstableCurve:
    base: np.ndarray
    vertices: np.ndarray  # lifted polyline
    cumulative_length: np.ndarray
    params: np.ndarray  # chart parameters of the vertices
    iteration: int
    delta: float
    level_lengths: list  # polyline length after 0..iteration pushes
    max_seg: float

    @property
    def length(self) -> float:
        return float(self.cumulative_length[-1]) if len(self.cumulative_length) else 0.0

    def torus_vertices(self) -> np.ndarray:
        return self.vertices - np.floor(self.vertices)


def _refine(chart: UChart, t, P, level, max_seg, max_rounds: int = 60):
    for _ in range(max_rounds):
        seg = np.linalg.norm(np.diff(P, axis=0), axis=1)
        bad = np.flatnonzero(seg > max_seg)
        if len(bad) == 0:
            return t, P, seg
        tm = 0.5 * (t[bad] + t[bad + 1])
        Pm = chart.point(tm, None, level)
        t = np.insert(t, bad + 1, tm)
        P = np.insert(P, bad + 1, Pm, axis=0)
    raise NoConvergence("curve refinement did not settle")


def _grow_piece(chart, t_a, t_b, n, max_seg, keep):
    t = np.array([t_a, t_b])
    P = chart.point(t)
    lengths = []
    for level in range(n + 1):
        if level:
            P = chart.fmap.eval_lift(P)
        t, P, seg = _refine(chart, t, P, level, max_seg)
        lengths.append(float(seg.sum()))
    return (t, P) if keep else (None, None), np.array(lengths)


def _seed_params(fmap, x, delta, m):
    chart = u_chart(fmap, x, m)
    t_lo = chart.param_at_arclength(-delta)
    t_hi = chart.param_at_arclength(delta)
    return chart, t_lo, t_hi


def curve_lengths(fmap: AnosovMap, x, delta: float, n: int, max_seg: float = MAX_SEG,
                  m: int = CHART_STEPS, keep: bool = False, budget: int = VERTEX_BUDGET):
    """Polyline lengths of F^k(W^u(x, delta)) for k = 0..n, streamed over
    pieces of the seed so that memory stays bounded."""
    chart, t_lo, t_hi = _seed_params(fmap, x, delta, m)
    lam_u = linear_eigen(fmap.A).values[2]
    est = 2 * delta * (1.3 * lam_u) ** n / max_seg
    if keep and est > budget:
        raise BudgetExceeded(f"about {est:.2e} vertices needed, budget {budget:.2e}")
    pieces = max(1, int(np.ceil(est / CHUNK_VERTICES)))
    edges = np.linspace(t_lo, t_hi, pieces + 1)
    total = np.zeros(n + 1)
    ts, Ps = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        (t, P), L = _grow_piece(chart, a, b, n, max_seg, keep)
        total += L
        if keep:
            ts.append(t if not ts else t[1:])
            Ps.append(P if not Ps else P[1:])
    if keep:
        return chart, total, np.concatenate(ts), np.concatenate(Ps)
    return chart, total, None, None


def _check_tangents(fmap, P, tol, samples: int = 16):
    if len(P) < 3:
        return 0.0
    idx = np.unique(np.linspace(1, len(P) - 2, min(samples, len(P) - 2)).astype(int))
    chord = P[idx + 1] - P[idx - 1]
    chord /= np.linalg.norm(chord, axis=1, keepdims=True)
    fr = splitting_frames(fmap, P[idx] - np.floor(P[idx]))
    ang = np.arccos(np.clip(np.abs(np.sum(chord * fr.e_u, axis=1)), 0.0, 1.0))
    if ang.max() > tol:
        raise TangentDrift(f"polyline tangent deviates from e_u by {ang.max():.3e} rad; refine max_seg")
    return float(ang.max())


def grow_curve(fmap: AnosovMap, x, delta: float, n: int, max_seg: float = MAX_SEG,
               m: int = CHART_STEPS, budget: int = VERTEX_BUDGET, tangent_tol: float = 0.05) -> UnstableCurve:
    """Polyline for F^n(W^u(x, delta)) on the lift."""
    x = np.asarray(x, dtype=float).reshape(3)
    chart, L, t, P = curve_lengths(fmap, x, delta, n, max_seg, m, keep=True, budget=budget)
    _check_tangents(fmap, P, tangent_tol)
    cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(P, axis=0), axis=1))])
    return UnstableCurve(x - np.floor(x), P, cum, t, n, float(delta), list(L), max_seg)


@dataclass
class EntropyEstimate:
    value: float
    error: float
    n_values: list
    lengths: list
    fit_from: int
    base: list
    delta: float

    def as_dict(self):
        return {"value": self.value, "error": self.error, "n": self.n_values,
                "lengths": self.lengths, "fit_from": self.fit_from, "base": self.base, "delta": self.delta}


def entropy_estimate(fmap: AnosovMap, x, delta: float, n_max: int, max_seg: float = MAX_SEG,
                     m: int = CHART_STEPS) -> EntropyEstimate:
    """Least-squares slope of log(length) against n over the last half of
    0..n_max; the error bar is the standard error of the slope."""
    if n_max < 2:
        raise ValueError("n_max must be >= 2")
    _, L, _, _ = curve_lengths(fmap, x, delta, n_max, max_seg, m)
    ns = np.arange(n_max + 1)
    k0 = n_max // 2
    xs, ys = ns[k0:], np.log(L[k0:])
    A = np.vstack([xs, np.ones_like(xs)]).T.astype(float)
    coef, *_ = np.linalg.lstsq(A, ys, rcond=None)
    resid = ys - A @ coef
    dof = max(len(xs) - 2, 1)
    s2 = float(resid @ resid) / dof
    err = float(np.sqrt(s2 / np.sum((xs - xs.mean()) ** 2)))
    return EntropyEstimate(float(coef[0]), err, ns.tolist(), L.tolist(), int(k0),
                           np.asarray(x, dtype=float).tolist(), float(delta))


def quasi_isometry_constant(curve: UnstableCurve, pairs: int = 200) -> float:
    """Smallest C with d^u <= C d + C over deterministic vertex pairs."""
    P, cum = curve.vertices, curve.cumulative_length
    n = len(P)
    if n < 2:
        return 0.0
    i = np.linspace(0, n - 1, pairs).astype(int)
    j = np.linspace(n - 1, 0, pairs).astype(int)[::-1][np.argsort(np.arange(pairs) * 7919 % pairs)]
    du = np.abs(cum[i] - cum[j])
    d = np.linalg.norm(P[i] - P[j], axis=1)
    return float(np.max(du / (d + 1.0)))


def curve_to_csv(curve: UnstableCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z", "cumulative_length"])
        for p, c in zip(curve.vertices, curve.cumulative_length):
            w.writerow([repr(float(p[0])), repr(float(p[1])), repr(float(p[2])), repr(float(c))])


# -- rectangles and holonomies -------------------------------------------------------

@dataclass
class Rectangle:
    center: np.ndarray
    u_radius: float
    cs_radius: float
    corners: np.ndarray
    info: dict = field(default_factory=dict)

    def cs_offsets(self, fmap: AnosovMap) -> np.ndarray:
        """Linear (c, s) directions spanning the cs side."""
        V = linear_eigen(fmap.A).right
        return V[:, 1], V[:, 0]


def rectangle(fmap: AnosovMap, center, u_radius: float = 0.05, cs_radius: float = 0.05) -> Rectangle:
    """Rectangle around center: u-interval of half-arclength u_radius times a
    cs-disk whose linear (c, s) coordinates are bounded by cs_radius.
    Corners are the brackets [u-end, cs-corner]."""
    c = np.asarray(center, dtype=float).reshape(3)
    c = c - np.floor(c)
    chart = u_chart(fmap, c)
    u_ends = chart.point(np.array([chart.param_at_arclength(-u_radius), chart.param_at_arclength(u_radius)]))
    V = linear_eigen(fmap.A).right
    sgn = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=float)
    Q = c + cs_radius * (sgn[:, :1] * V[:, 1] + sgn[:, 1:] * V[:, 0])
    cs_pts = cs_project(fmap, c, Q)
    X = np.repeat(u_ends, len(cs_pts), axis=0)
    Y = np.tile(cs_pts, (len(u_ends), 1))
    corners = bracket(fmap, X - np.floor(X), Y - np.floor(Y))
    spread = float(np.max(torus_distance(corners, c)))
    return Rectangle(c, float(u_radius), float(cs_radius), corners,
                     {"u_ends": u_ends, "cs_points": cs_pts, "corner_spread": spread})


def holonomy_cs(fmap: AnosovMap, R: Rectangle, x, y, pts, tol: float = 1e-13, return_params: bool = False):
    """Hol^cs_{x,y}(z) = [z, y] for z on W^u_R(x): slide along cs-leaves onto W^u(y)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    chart = u_chart(fmap, y)
    idx = np.zeros(len(pts), dtype=int)
    t = _bracket_params(chart, idx, pts - np.floor(pts), GAP_STEPS, tol)
    z = chart.point(t, idx)
    out = mod1(z)
    return (out, t, chart) if return_params else out


def holonomy_u(fmap: AnosovMap, R: Rectangle, x, y, pts, tol: float = 1e-13):
    """Hol^u_{x,y}(z) = [y, z] for z on W^cs_R(x): slide along u-leaves onto W^cs(y)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    pts = pts - np.floor(pts)
    chart = u_chart(fmap, pts)
    idx = np.arange(len(pts))
    Y = np.broadcast_to(np.asarray(y, dtype=float).reshape(1, 3), pts.shape)
    t = _bracket_params(chart, idx, Y, GAP_STEPS, tol)
    return mod1(chart.point(t, idx))
