"""Approximate Margulis systems along the strong unstable and center-stable
foliations, their holonomy invariance, and the center cocycle omega.

u-measures.  For a segment S of a strong unstable leaf,

    mu^n(S) = lambda_u^{-n} L(F^n S),

computed by Gauss quadrature of the tangent speed |d/dt F^{n}(c(t))| over
parameter panels whose images are shorter than ``max_image``.  For n large
these masses converge and satisfy mu(F S) = lambda_u mu(S).

cs-measures.  For a patch E of a center-stable leaf,

    theta^n(E) = lambda_u^{-n} area(F^{-n} E),

evaluated as a sum over a triangulation of E of the area factor of the
backward derivative at a node of each triangle.  The area factor of a linear
map D on a plane with unit normal N is |det D| |D^{-T} N|; here det D = 1
and D^{-T} N is the transposed forward derivative along the backward orbit.
Patches are graphs over the linear (c, s) plane, so the surface element is
|det(e_c, e_s, e_u)| / |N . e_u| da db.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetExceeded, DegenerateTriangle, NoConvergence
from .splitting import splitting_frames
from .torus_maps import AnosovMap, linear_eigen, torus_distance, wrap_delta
from .unstable_geometry import (
    CHART_STEPS,
    GAP_STEPS,
    Rectangle,
    UChart,
    UnstableCurve,
    _bracket_params,
    _solve_increasing,
    cs_project,
    holonomy_cs,
    holonomy_u,
    u_chart,
)

__all__ = [
    "LeafDensity",
    "CsPatch",
    "HolonomyResidual",
    "LocalBump",
    "leaf_masses",
    "u_density_iterate",
    "u_scaling_residual",
    "cs_patch",
    "theta_weights",
    "theta_cs_measure",
    "cs_invariance_residual",
    "u_invariance_residual",
    "center_chart",
    "center_leaf_point",
    "omega_center_density",
    "local_product_residual",
    "density_to_csv",
    "patch_to_csv",
]

MAX_IMAGE = 0.25
GAUSS_NODES = 6
CHUNK_PANELS = 250_000
PANEL_BUDGET = 40_000_000


# -- u-masses -----------------------------------------------------------------

def _panel_lengths(chart: UChart, idx: int, a, b, level: int, nodes: int):
    xg, wg = np.polynomial.legendre.leggauss(nodes)
    h = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    tq = (mid[:, None] + h[:, None] * xg[None, :]).ravel()
    sp = chart.speed(tq, np.full(tq.shape, idx), level).reshape(-1, nodes)
    return np.abs(h) * (sp @ wg)


def _cell_length(chart, idx, a, b, level, max_image, nodes, budget):
    est = abs(b - a) * float(chart.speed(np.array([0.5 * (a + b)]), np.array([idx]), level)[0])
    k = max(1, int(np.ceil(1.5 * est / max_image)))
    if k > budget:
        raise BudgetExceeded(f"about {k:.2e} quadrature panels needed, budget {budget:.2e}")
    total, used = 0.0, 0
    for i0 in range(0, k, CHUNK_PANELS):
        i = np.arange(i0, min(k, i0 + CHUNK_PANELS))
        pa = a + (b - a) * i / k
        pb = a + (b - a) * (i + 1) / k
        while len(pa):
            used += len(pa)
            if used > budget:
                raise BudgetExceeded(f"more than {budget:.2e} quadrature panels needed")
            L = _panel_lengths(chart, idx, pa, pb, level, nodes)
            ok = L <= max_image
            total += float(np.sum(L[ok]))
            if ok.all():
                break
            pa, pb, Lb = pa[~ok], pb[~ok], L[~ok]
            pieces = np.ceil(1.25 * Lb / max_image).astype(int) + 1
            rep = np.repeat(np.arange(len(pa)), pieces)
            j = np.concatenate([np.arange(p) for p in pieces])
            w = (pb - pa)[rep] / pieces[rep]
            pa, pb = pa[rep] + j * w, pa[rep] + (j + 1) * w
    return total


def leaf_masses(chart: UChart, t_edges, n: int, idx: int = 0, max_image: float = MAX_IMAGE,
                nodes: int = GAUSS_NODES, budget: int = PANEL_BUDGET) -> np.ndarray:
    """mu^n of the chart segments between consecutive parameters t_edges."""
    t_edges = np.asarray(t_edges, dtype=float)
    lam_u = linear_eigen(chart.fmap.A).values[2]
    L = np.array([_cell_length(chart, idx, a, b, n, max_image, nodes, budget)
                  for a, b in zip(t_edges[:-1], t_edges[1:])])
    return L * lam_u ** (-n)


def _arclength_params(chart: UChart, s, idx: int = 0) -> np.ndarray:
    return np.array([chart.param_at_arclength(float(v), idx) for v in np.atleast_1d(s)])


def _arclength_of(chart: UChart, t, idx, nodes: int = 16) -> np.ndarray:
    """Signed arclength from 0 to t along charts idx (vectorized Gauss rule)."""
    t = np.asarray(t, dtype=float)
    idx = np.broadcast_to(np.asarray(idx), t.shape)
    xg, wg = np.polynomial.legendre.leggauss(nodes)
    tq = 0.5 * t[:, None] * (xg[None, :] + 1.0)
    sp = chart.speed(tq.ravel(), np.repeat(idx, nodes)).reshape(-1, nodes)
    return 0.5 * t * (sp @ wg)


@dataclass
class LeafDensity:
    """mu^n on a window of a strong unstable leaf, tabulated on cells."""

    curve: UnstableCurve  # polyline through the cell edges
    density: np.ndarray  # per vertex, mass per unit arclength
    iteration: int
    cell_edges: np.ndarray  # arclength from the base point
    masses: np.ndarray
    params: np.ndarray = field(repr=False, default=None)
    chart: UChart = field(repr=False, default=None)

    @property
    def cell_density(self) -> np.ndarray:
        return self.masses / np.diff(self.cell_edges)

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())


def u_density_iterate(fmap: AnosovMap, x, window: float, n: int, cells: int = 20,
                      max_image: float = MAX_IMAGE, m: int = CHART_STEPS,
                      budget: int = PANEL_BUDGET) -> LeafDensity:
    """mu^n on W^u(x, window), split into equal arclength cells."""
    if n < 0:
        raise ValueError("n must be >= 0")
    x = np.asarray(x, dtype=float).reshape(3)
    x = x - np.floor(x)
    chart = u_chart(fmap, x, m)
    s = np.linspace(-window, window, cells + 1)
    t = _arclength_params(chart, s)
    masses = leaf_masses(chart, t, n, max_image=max_image, budget=budget)
    dens = masses / np.diff(s)
    vert = np.empty(cells + 1)
    vert[0], vert[-1] = dens[0], dens[-1]
    vert[1:-1] = 0.5 * (dens[:-1] + dens[1:])
    P = chart.point(t)
    cum = s - s[0]
    curve = UnstableCurve(x, P, cum, t, 0, float(window), [float(s[-1] - s[0])], float("nan"))
    return LeafDensity(curve, vert, int(n), s, masses, t, chart)


def u_scaling_residual(fmap: AnosovMap, density: LeafDensity, max_image: float = MAX_IMAGE) -> float:
    """max over cells S of |mu^n(F S) / (lambda_u mu^n(S)) - 1|.

    mu^n(F S) = lambda_u^{-n} L(F^{n+1} S) = lambda_u mu^{n+1}(S), so only
    one more level is needed.
    """
    nxt = leaf_masses(density.chart, density.params, density.iteration + 1, max_image=max_image)
    return float(np.max(np.abs(nxt / density.masses - 1.0)))


# -- cs-patches ------------------------------------------------------------------

@dataclass
class CsPatch:
    """Triangulated piece of a center-stable leaf, graph over the linear
    (c, s) plane through ``base``."""

    base: np.ndarray
    vertices: np.ndarray  # lifted, on the leaf
    triangles: np.ndarray  # (T, 3) vertex indices
    areas: np.ndarray  # surface area per triangle
    nodes: np.ndarray  # one quadrature node per triangle, on the leaf
    plane: np.ndarray = field(repr=False, default=None)  # (c, s) coordinates of the vertices
    block: np.ndarray = field(repr=False, default=None)  # subpatch label per triangle

    @property
    def total_area(self) -> float:
        return float(self.areas.sum())


def _plane_coords(fmap, base, P):
    L = linear_eigen(fmap.A).left
    d = P - base
    return np.stack([d @ L[1], d @ L[0]], axis=-1)


def _surface_factor(fmap, nodes):
    """|det(e_c, e_s, e_u)| / |N . e_u| with N the unit cs-normal."""
    V = linear_eigen(fmap.A).right
    fr = splitting_frames(fmap, nodes - np.floor(nodes))
    N = np.cross(fr.e_s, fr.e_c)
    N /= np.linalg.norm(N, axis=1, keepdims=True)
    return abs(np.linalg.det(V)) / np.abs(N @ V[:, 2])


def _triangle_areas(plane, tri):
    a, b, c = plane[tri[:, 0]], plane[tri[:, 1]], plane[tri[:, 2]]
    u, v = b - a, c - a
    return 0.5 * np.abs(u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0])


def _grid_triangles(M: int, blocks: int):
    i, j = np.meshgrid(np.arange(M), np.arange(M), indexing="ij")
    i, j = i.ravel(), j.ravel()
    v00 = i * (M + 1) + j
    v10, v01, v11 = v00 + (M + 1), v00 + 1, v00 + M + 2
    tri = np.concatenate([np.stack([v00, v10, v11], 1), np.stack([v00, v11, v01], 1)])
    bl = (i * blocks // M) * blocks + (j * blocks // M)
    return tri, np.concatenate([bl, bl])


def cs_patch(fmap: AnosovMap, base, radius: float, M: int = 24, blocks: int = 2) -> CsPatch:
    """Patch of W^cs(base) over the square |c|, |s| <= radius of the linear
    plane, with an M x M grid of squares split into triangles."""
    x = np.asarray(base, dtype=float).reshape(3)
    x = x - np.floor(x)
    V = linear_eigen(fmap.A).right
    g = np.linspace(-radius, radius, M + 1)
    A, B = np.meshgrid(g, g, indexing="ij")
    ab = np.stack([A.ravel(), B.ravel()], 1)
    tri, bl = _grid_triangles(M, blocks)
    cen = ab[tri].mean(axis=1)
    pts = x + np.concatenate([ab, cen]) @ np.stack([V[:, 1], V[:, 0]])
    P = cs_project(fmap, x, pts)
    verts, nodes = P[:len(ab)], P[len(ab):]
    plane = _plane_coords(fmap, x, verts)
    flat = _triangle_areas(plane, tri)
    if np.any(flat <= 1e-14 * radius ** 2):
        raise DegenerateTriangle("degenerate triangle in the patch mesh")
    return CsPatch(x, verts, tri, flat * _surface_factor(fmap, nodes), nodes, plane, bl)


def theta_weights(fmap: AnosovMap, patch: CsPatch, levels) -> dict:
    """Per-triangle theta^n masses for every n in levels."""
    levels = sorted(set(int(v) for v in np.atleast_1d(levels)))
    if levels[0] < 0:
        raise ValueError("levels must be >= 0")
    lam_u = linear_eigen(fmap.A).values[2]
    p = patch.nodes - np.floor(patch.nodes)
    fr = splitting_frames(fmap, p)
    v = np.cross(fr.e_s, fr.e_c)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    out = {}
    if levels[0] == 0:
        out[0] = patch.areas.copy()
    for k in range(1, levels[-1] + 1):
        p = fmap.inverse(p)
        v = np.einsum("nji,nj->ni", fmap.jacobian(p), v)
        if k in levels:
            out[k] = patch.areas * np.linalg.norm(v, axis=1) * lam_u ** (-k)
    return out


def theta_cs_measure(fmap: AnosovMap, patch: CsPatch, g, n: int, with_previous: bool = False):
    """theta^n(g) on the patch (centroid rule).  With with_previous, returns
    (theta^n(g), theta^{n-1}(g))."""
    w = theta_weights(fmap, patch, [max(n - 1, 0), n])
    gv = np.ones(len(patch.nodes)) if g is None else np.asarray(g(patch.nodes - np.floor(patch.nodes)), dtype=float)
    val = float(np.sum(w[n] * gv))
    if with_previous:
        return val, float(np.sum(w[max(n - 1, 0)] * gv))
    return val


# -- holonomy invariance ---------------------------------------------------------

@dataclass
class HolonomyResidual:
    rectangle: Rectangle
    value: float
    iteration: int
    info: dict = field(default_factory=dict)

    def as_dict(self):
        return {"value": self.value, "iteration": self.iteration,
                "u_radius": self.rectangle.u_radius, "cs_radius": self.rectangle.cs_radius,
                **{k: v for k, v in self.info.items() if isinstance(v, (int, float, str, list))}}


def cs_invariance_residual(fmap: AnosovMap, R: Rectangle, n: int, z=None, cells: int = 8,
                           max_image: float = MAX_IMAGE) -> HolonomyResidual:
    """Compare mu^n on cells of W^u_R(x), x the center of R, with mu^n of
    their cs-holonomy images on W^u(z).  z defaults to a cs-corner of R."""
    x = R.center
    z = R.info["cs_points"][0] if z is None else np.asarray(z, dtype=float).reshape(3)
    z = z - np.floor(z)
    cx = u_chart(fmap, x)
    tx = _arclength_params(cx, np.linspace(-R.u_radius, R.u_radius, cells + 1))
    mx = leaf_masses(cx, tx, n, max_image=max_image)
    if torus_distance(x, z) == 0.0:
        mz = mx.copy()
    else:
        _, tz, cz = holonomy_cs(fmap, R, x, z, cx.point(tx), return_params=True)
        mz = leaf_masses(cz, tz, n, max_image=max_image)
    rel = mz / mx - 1.0
    return HolonomyResidual(R, float(np.max(np.abs(rel))), int(n),
                            {"per_cell": rel.tolist(), "z": z.tolist(), "mass_x": float(mx.sum())})


def _normals(fmap, P):
    fr = splitting_frames(fmap, P - np.floor(P))
    v = np.cross(fr.e_s, fr.e_c)
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _paired_log_factors(fmap: AnosovMap, C, Y, N: int):
    """Per-step log cs-area factors of f^{-1} along the backward orbit of C
    and along the paired orbit y_k on W^u(f^{-k} C) with F(y_k) = y_{k-1},
    y_0 = Y.  Each y_k is placed on a fresh u-chart at f^{-k} C by matching
    the linear unstable coordinate, so stable errors are never amplified."""
    lu = linear_eigen(fmap.A).left[2]
    lam_u = linear_eigen(fmap.A).values[2]
    c = C - np.floor(C)
    y = c + wrap_delta(Y - c)
    vc, vy = _normals(fmap, c), _normals(fmap, y)
    logc = np.empty((N, len(c)))
    logy = np.empty((N, len(c)))
    idx = np.arange(len(c))
    for k in range(N):
        cn = fmap.inverse(c)
        # offsets are tiny here, so a short chart is accurate and less noisy
        ch = u_chart(fmap, cn, 4)
        Fc = fmap.eval_lift(cn)
        target = (y - c) @ lu

        def fun(tau):
            return (fmap.eval_lift(ch.point(tau, idx)) - Fc) @ lu - target

        t0 = target / lam_u
        tau = _solve_increasing(fun, t0, 0.5 * np.abs(t0) + 1e-14, tol=1e-15, ftol=1e-13)
        yn = ch.point(tau, idx)
        vc = np.einsum("nji,nj->ni", fmap.jacobian(cn), vc)
        vy = np.einsum("nji,nj->ni", fmap.jacobian(yn), vy)
        ac, ay = np.linalg.norm(vc, axis=1), np.linalg.norm(vy, axis=1)
        logc[k], logy[k] = np.log(ac), np.log(ay)
        vc /= ac[:, None]
        vy /= ay[:, None]
        c, y = cn, yn
    return logc, logy


def u_invariance_residual(fmap: AnosovMap, R: Rectangle, n: int, y=None, M: int = 24,
                          blocks: int = 2, tail: int = 20) -> HolonomyResidual:
    """Compare theta^n on blocks E_b of a patch of W^cs_R(x) with theta^n of
    their u-holonomy images on W^cs(y).  y defaults to an end of W^u_R(x).

    The u-holonomy is only Hoelder along the center, so images of mesh
    triangles do not resolve its area Jacobian.  The image measure is
    instead written as an integral over E_b with the Jacobian given by the
    product of cs-area factor ratios along paired backward orbits; theta^n
    of the image then differs from theta^n(E_b) by the factors of index
    n+1 .. n+tail, which is what is reported.
    """
    x = R.center
    y = R.info["u_ends"][1] if y is None else np.asarray(y, dtype=float).reshape(3)
    y = y - np.floor(y)
    E = cs_patch(fmap, x, R.cs_radius, M, blocks)
    wx = theta_weights(fmap, E, [n])[n]
    nb = blocks * blocks
    if torus_distance(x, y) == 0.0:
        rel = np.zeros(nb)
    else:
        H = holonomy_u(fmap, R, x, y, E.nodes)
        logc, logy = _paired_log_factors(fmap, E.nodes, H, n + tail)
        J = np.exp(np.sum(logc[n:] - logy[n:], axis=0))
        rel = np.bincount(E.block, wx * J, nb) / np.bincount(E.block, wx, nb) - 1.0
    return HolonomyResidual(R, float(np.max(np.abs(rel))), int(n),
                            {"per_block": rel.tolist(), "y": y.tolist(), "theta_x": float(wx.sum()),
                             "tail": int(tail)})


# -- center leaves and omega -------------------------------------------------------

@dataclass
class CenterChart:
    """Center-leaf charts: short center seeds in W^cs(f^{-m} z), pushed
    forward m steps.  Inside a cs-leaf the center is the expanding
    direction, so the seed error is flattened by (lambda_s / lambda_c)^m."""

    base: np.ndarray
    w: np.ndarray
    d: np.ndarray
    y_m: np.ndarray
    c_m: np.ndarray
    m: int
    fmap: AnosovMap = field(repr=False)

    def point(self, tau, idx=None) -> np.ndarray:
        tau = np.asarray(tau, dtype=float)
        idx = np.zeros(tau.shape, dtype=int) if idx is None else np.broadcast_to(idx, tau.shape)
        seeds = np.empty(tau.shape + (3,))
        for k in np.unique(idx):
            sel = idx == k
            seeds[sel] = cs_project(self.fmap, self.w[k], self.w[k] + tau[sel, None] * self.d[k])
        fl = np.floor(seeds)
        y, c = seeds - fl, fl.astype(np.int64)
        for _ in range(self.m):
            y, c = self.fmap.step_split(y, c)
        return (c - self.c_m[idx]).astype(float) + ((y - self.y_m[idx]) + self.base[idx])


def center_chart(fmap: AnosovMap, points, m: int = CHART_STEPS) -> CenterChart:
    Z = np.atleast_2d(np.asarray(points, dtype=float))
    Z = Z - np.floor(Z)
    w = Z.copy()
    for _ in range(m):
        w = fmap.inverse(w)
    fr = splitting_frames(fmap, w)
    lam_c = linear_eigen(fmap.A).values[1]
    y, c = w.copy(), np.zeros(w.shape, dtype=np.int64)
    for _ in range(m):
        y, c = fmap.step_split(y, c)
    return CenterChart(Z, w, fr.e_c * lam_c ** (-m), y, c, m, fmap)


def center_leaf_point(fmap: AnosovMap, z, offset: float, m: int = CHART_STEPS) -> np.ndarray:
    """Point of W^c(z) whose linear center coordinate relative to z is offset."""
    ch = center_chart(fmap, z, m)
    lc = linear_eigen(fmap.A).left[1]
    tau = _center_param(ch, np.zeros(1, dtype=int), np.array([offset]))
    p = ch.point(tau, np.zeros(1, dtype=int))[0]
    assert abs(lc @ (p - ch.base[0]) - offset) < 1e-12 * max(1.0, abs(offset))
    return p - np.floor(p)


def _center_param(ch: CenterChart, idx, offset):
    lc = linear_eigen(ch.fmap.A).left[1]
    fun = lambda tau: lc @ (ch.point(tau, idx) - ch.base[idx]).T - offset  # noqa: E731
    return _solve_increasing(fun, offset.copy(), 0.1 * np.abs(offset) + 1e-9, tol=1e-15, ftol=1e-16)


def omega_center_density(fmap: AnosovMap, z, y, tol: float = 1e-6, max_terms: int = 200,
                         m: int = CHART_STEPS, return_info: bool = False):
    """omega(z, y) = sum_{k>=0} J^c(f^{-k} y) - J^c(f^{-k} z) for y on W^c(z).

    The backward orbit of y is never iterated directly, since that would
    amplify any stable error by 1/lambda_s per step.  Instead each y_k is
    recovered on a fresh center chart at z_k = f^{-k} z by matching
    F(y_k) = y_{k-1} in the linear center coordinate.

    omega is only Hoelder along the stable direction, so rounding a point
    to double precision moves it by about 1e-6 at epsilon = 0.05; tolerances
    much below that are not meaningful.  Stops once the geometric tail
    bound is below tol.
    """
    lc = linear_eigen(fmap.A).left[1]
    z = np.asarray(z, dtype=float).reshape(3)
    z = z - np.floor(z)
    y = np.asarray(y, dtype=float).reshape(3)
    y = y - np.floor(y)
    lift_y = z + wrap_delta(y - z)
    if torus_distance(y, z) == 0.0:
        return (0.0, {"terms": 0, "tail_bound": 0.0}) if return_info else 0.0
    ch0 = center_chart(fmap, z, m)
    off = np.array([lc @ (lift_y - z)])
    p0 = ch0.point(_center_param(ch0, np.zeros(1, dtype=int), off))[0]
    miss = float(np.linalg.norm(p0 - lift_y))
    if miss > 1e-8:
        raise ValueError(f"y is not on the center leaf of z (distance {miss:.2e} from the chart)")

    batch = 16
    total, incs = 0.0, []
    zs = [z]
    ys = [lift_y]
    k = 0
    while k < max_terms:
        # next batch of backward steps for z and charts there
        Zb = [zs[-1]]
        for _ in range(batch):
            Zb.append(fmap.inverse(Zb[-1]))
        Zb = np.array(Zb[1:])
        ch = center_chart(fmap, Zb, m)
        for i in range(batch):
            zn = Zb[i]
            # y_{k+1}: on W^c(zn) with F(y_{k+1}) = y_k
            guess = fmap.inverse(ys[-1] - np.floor(ys[-1]))
            guess = zn + wrap_delta(guess - zn)
            target = lc @ wrap_delta(ys[-1] - fmap.eval(zn))
            Fz = fmap.eval_lift(zn)
            idx = np.array([i])

            def fun(tau):
                return lc @ (fmap.eval_lift(ch.point(tau, idx)) - Fz).T - target

            t0 = np.array([lc @ (guess - zn)])
            tau = _solve_increasing(fun, t0, 0.1 * np.abs(t0) + 1e-12, tol=1e-16, ftol=1e-17)
            ys.append(ch.point(tau, idx)[0])
            zs.append(zn)
        pts = np.concatenate([np.array(ys[k:k + batch]), np.array(zs[k:k + batch])])
        fr = splitting_frames(fmap, pts - np.floor(pts))
        jc = fr.center_jacobian
        d = jc[:batch] - jc[batch:]
        for v in d:
            total += float(v)
            incs.append(float(v))
            k += 1
            if len(incs) >= 6 and max(abs(u) for u in incs[-3:]) < tol:
                a = np.abs(incs[-6:])
                rho = float(np.clip(np.exp(np.polyfit(np.arange(len(a)), np.log(a + 1e-300), 1)[0]), 0.0, 0.99))
                tail = abs(incs[-1]) * rho / (1.0 - rho)
                if tail < tol:
                    info = {"terms": k, "tail_bound": tail, "increments": incs}
                    return (total, info) if return_info else total
    raise NoConvergence(f"omega increments still {abs(incs[-1]):.2e} after {max_terms} terms")


# -- local product structure -------------------------------------------------------

def _bump(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - t[inside] ** 2))
    return out


@dataclass
class LocalBump:
    """g times a smooth bump in the product coordinates of a rectangle:
    arclength along W^u(q) of [z, q], and the linear (c, s) coordinates
    of [q, z] on W^cs(q)."""

    fmap: AnosovMap
    q: np.ndarray
    u_radius: float
    cs_radius: float
    g: object = None
    name: str = "bump"
    chart: UChart = field(repr=False, default=None)

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(3)
        self.q = self.q - np.floor(self.q)
        if self.chart is None:
            self.chart = u_chart(self.fmap, self.q)

    def with_factor(self, g, name: str) -> "LocalBump":
        return LocalBump(self.fmap, self.q, self.u_radius, self.cs_radius, g, name, self.chart)

    def product_coords(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        Z = self.q + wrap_delta(Z - self.q)
        idx = np.zeros(len(Z), dtype=int)
        t = _bracket_params(self.chart, idx, Z, GAP_STEPS, 1e-13)
        s_u = _arclength_of(self.chart, t, idx)
        # [q, z]: slide z along its own u-leaf onto W^cs(q)
        cz = u_chart(self.fmap, Z)
        tz = _bracket_params(cz, np.arange(len(Z)), np.broadcast_to(self.q, Z.shape), GAP_STEPS, 1e-13)
        w = cz.point(tz, np.arange(len(Z)))
        w = self.q + wrap_delta(w - self.q)
        ab = _plane_coords(self.fmap, self.q, w)
        return np.column_stack([s_u, ab])

    def weight(self, coords) -> np.ndarray:
        return (_bump(coords[:, 0] / self.u_radius) * _bump(coords[:, 1] / self.cs_radius)
                * _bump(coords[:, 2] / self.cs_radius))

    def __call__(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        out = np.zeros(len(Z))
        L = linear_eigen(self.fmap.A).left
        d = wrap_delta(Z - self.q)
        # coarse prefilter in linear coordinates
        near = ((np.abs(d @ L[2]) < 1.5 * self.u_radius + 0.02)
                & (np.abs(d @ L[1]) < 1.5 * self.cs_radius + 0.02)
                & (np.abs(d @ L[0]) < 1.5 * self.cs_radius + 0.02))
        if near.any():
            Zn = Z[near]
            w = self.weight(self.product_coords(Zn))
            if self.g is not None:
                w = w * np.asarray(self.g(Zn - np.floor(Zn)), dtype=float)
            out[near] = w
        return out


def local_product_residual(fmap: AnosovMap, R: Rectangle, q=None, n: int = 10, period: int = 8,
                           observables=None, u_cells: int = 48, M: int = 32,
                           return_info: bool = False):
    """Bowen averages of g * bump against the leafwise double integral
    int int g * bump dtheta dmu^u over the product coordinates of R.

    Both sides are divided by their value on the bare bump; the residual is
    the largest absolute difference of the normalized values over the
    observables.
    """
    from .thermo import TrigObservable, bowen_measure

    q = R.center if q is None else np.asarray(q, dtype=float).reshape(3)
    q = q - np.floor(q)
    if observables is None:
        observables = [TrigObservable.cos((1, 0, 0)), TrigObservable.cos((0, 2, 1)),
                       TrigObservable.sin((3, -1, 2))]
    bump = LocalBump(fmap, q, R.u_radius, R.cs_radius)

    # leaf side
    dens = u_density_iterate(fmap, q, R.u_radius, n, cells=u_cells)
    s_mid = 0.5 * (dens.cell_edges[:-1] + dens.cell_edges[1:])
    t_mid = _arclength_params(dens.chart, s_mid)
    U = dens.chart.point(t_mid)
    mu = dens.masses * _bump(s_mid / R.u_radius)
    E = cs_patch(fmap, q, R.cs_radius, M, 1)
    th = theta_weights(fmap, E, [n])[n]
    ab = _plane_coords(fmap, q, E.nodes)
    th = th * _bump(ab[:, 0] / R.cs_radius) * _bump(ab[:, 1] / R.cs_radius)
    keep_u, keep_c = mu > 0, th > 0
    U, mu = U[keep_u], mu[keep_u]
    Y, th = E.nodes[keep_c], th[keep_c]
    cy = u_chart(fmap, Y)
    ii = np.repeat(np.arange(len(Y)), len(U))
    targets = np.tile(U, (len(Y), 1))
    t = _bracket_params(cy, ii, targets - np.floor(targets), GAP_STEPS, 1e-13)
    Z = cy.point(t, ii)
    Z = Z - np.floor(Z)
    W = (th[:, None] * mu[None, :]).ravel()
    leaf_one = float(W.sum())

    bw_one = bowen_measure(fmap, period, bump)
    rows = []
    for g in observables:
        leaf = float(np.sum(W * g(Z))) / leaf_one
        b = bowen_measure(fmap, period, bump.with_factor(g, g.name))
        bow = b.raw / bw_one.raw
        rows.append({"observable": g.name, "leaf": leaf, "bowen": bow, "mismatch": abs(leaf - bow)})
    res = max(r["mismatch"] for r in rows)
    if return_info:
        return res, {"rows": rows, "period": period, "n": n, "u_nodes": len(U), "cs_nodes": len(Y),
                     "bowen_bump_raw": bw_one.raw}
    return res


# -- export ------------------------------------------------------------------------

def density_to_csv(density: LeafDensity, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s_left", "s_right", "mass", "density"])
        for a, b, mass in zip(density.cell_edges[:-1], density.cell_edges[1:], density.masses):
            w.writerow([repr(float(a)), repr(float(b)), repr(float(mass)), repr(float(mass / (b - a)))])


def patch_to_csv(patch: CsPatch, weights, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z", "area", "theta"])
        for p, a, t in zip(patch.nodes, patch.areas, weights):
            w.writerow([repr(float(p[0])), repr(float(p[1])), repr(float(p[2])), repr(float(a)), repr(float(t))])
