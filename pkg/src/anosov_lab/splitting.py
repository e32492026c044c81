"""Invariant splitting E_s + E_c + E_u, one-step expansion rates and the
center Jacobian.

Line fields are obtained by transporting the linear eigendirections along
finite orbit segments: E_u forward along a backward orbit, E_s backward
along a forward orbit.  The planes E_cu and E_cs are carried by their
normals, and E_c is their intersection.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFrame, NoConvergence, OrderViolation
from .torus_maps import AnosovMap, grid_points, linear_eigen

__all__ = [
    "SplittingFrame",
    "FrameBatch",
    "splitting_frame",
    "splitting_frames",
    "center_jacobian",
    "rate_bounds",
    "orbit_jacobian",
    "periodic_log_multipliers",
]

MIN_FRAME_DET = 1e-3
CHUNK = 8192


@dataclass(frozen=True)
class SplittingFrame:
    point: np.ndarray
    e_s: np.ndarray
    e_c: np.ndarray
    e_u: np.ndarray
    rate_s: float
    rate_c: float
    rate_u: float
    increment: float = 0.0

    @property
    def center_jacobian(self) -> float:
        return -float(np.log(self.rate_c))

    @property
    def matrix(self) -> np.ndarray:
        return np.column_stack([self.e_s, self.e_c, self.e_u])


@dataclass
class FrameBatch:
    """Frames at a stack of points; arrays have leading shape (N,)."""

    points: np.ndarray
    e_s: np.ndarray
    e_c: np.ndarray
    e_u: np.ndarray
    rate_s: np.ndarray
    rate_c: np.ndarray
    rate_u: np.ndarray
    increment: np.ndarray

    @property
    def center_jacobian(self) -> np.ndarray:
        return -np.log(self.rate_c)

    def frame(self, i: int) -> SplittingFrame:
        return SplittingFrame(self.points[i], self.e_s[i], self.e_c[i], self.e_u[i],
                              float(self.rate_s[i]), float(self.rate_c[i]), float(self.rate_u[i]),
                              float(self.increment[i]))


def _normalize(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _orient(v, ref):
    s = np.sign(v @ ref)
    s[s == 0] = 1.0
    return v * s[..., None]


def _matvec(M, v):
    return np.einsum("...ij,...j->...i", M, v)


def _frames_chunk(fmap: AnosovMap, X: np.ndarray, n_iter: int):
    eig = linear_eigen(fmap.A)
    es0, ec0, eu0 = eig.right.T
    ls0, lc0, lu0 = eig.left
    N = X.shape[0]

    back = np.empty((n_iter + 1, N, 3))
    back[0] = X
    for k in range(1, n_iter + 1):
        back[k] = fmap.inverse(back[k - 1])
    fwd = np.empty((n_iter + 1, N, 3))
    fwd[0] = X
    for k in range(1, n_iter + 1):
        fwd[k] = fmap.eval(fwd[k - 1])

    # forward transport along the backward orbit: e_u and the E_cu normal;
    # a second copy started one step later measures the Cauchy increment
    u1 = np.tile(eu0, (N, 1))
    m1 = np.tile(ls0, (N, 1))
    u2 = m2 = None
    for k in range(n_iter, 0, -1):
        J = fmap.jacobian(back[k])
        u1 = _normalize(_matvec(J, u1))
        m1 = _normalize(np.linalg.solve(np.swapaxes(J, -1, -2), m1[..., None])[..., 0])
        if u2 is not None:
            u2 = _normalize(_matvec(J, u2))
            m2 = _normalize(np.linalg.solve(np.swapaxes(J, -1, -2), m2[..., None])[..., 0])
        if k == n_iter:
            u2 = np.tile(eu0, (N, 1))
            m2 = np.tile(ls0, (N, 1))
    # backward transport along the forward orbit: e_s and the E_cs normal
    s1 = np.tile(es0, (N, 1))
    p1 = np.tile(lu0, (N, 1))
    s2 = p2 = None
    for k in range(n_iter - 1, -1, -1):
        J = fmap.jacobian(fwd[k])
        s1 = _normalize(np.linalg.solve(J, s1[..., None])[..., 0])
        p1 = _normalize(_matvec(np.swapaxes(J, -1, -2), p1))
        if s2 is not None:
            s2 = _normalize(np.linalg.solve(J, s2[..., None])[..., 0])
            p2 = _normalize(_matvec(np.swapaxes(J, -1, -2), p2))
        if k == n_iter - 1:
            s2 = np.tile(es0, (N, 1))
            p2 = np.tile(lu0, (N, 1))
    if n_iter == 1:
        u2, m2, s2, p2 = (np.tile(eu0, (N, 1)), np.tile(ls0, (N, 1)),
                          np.tile(es0, (N, 1)), np.tile(lu0, (N, 1)))

    e_u = _orient(u1, eu0)
    e_s = _orient(s1, es0)
    e_c = _orient(_normalize(np.cross(m1, p1)), ec0)
    e_c2 = _orient(_normalize(np.cross(m2, p2)), ec0)
    inc = np.max(np.stack([
        np.linalg.norm(e_u - _orient(u2, eu0), axis=-1),
        np.linalg.norm(e_s - _orient(s2, es0), axis=-1),
        np.linalg.norm(e_c - e_c2, axis=-1),
    ]), axis=0)
    J0 = fmap.jacobian(X)
    rates = [np.linalg.norm(_matvec(J0, e), axis=-1) for e in (e_s, e_c, e_u)]
    return e_s, e_c, e_u, rates, inc


def splitting_frames(fmap: AnosovMap, X, n_iter: int = 60, tol: float = 1e-9,
                     check: bool = True) -> FrameBatch:
    """Frames at every point of X (shape (N,3) or (3,))."""
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    X = X - np.floor(X)
    parts = [_frames_chunk(fmap, X[i:i + CHUNK], n_iter) for i in range(0, len(X), CHUNK)]
    e_s = np.concatenate([p[0] for p in parts])
    e_c = np.concatenate([p[1] for p in parts])
    e_u = np.concatenate([p[2] for p in parts])
    rs, rc, ru = (np.concatenate([p[3][j] for p in parts]) for j in range(3))
    inc = np.concatenate([p[4] for p in parts])
    batch = FrameBatch(X, e_s, e_c, e_u, rs, rc, ru, inc)
    if check:
        if np.any(~np.isfinite(inc)) or inc.max() > tol:
            raise NoConvergence(f"splitting increment {np.nanmax(inc):.3e} > tol {tol:.1e}; increase n_iter")
        dets = np.abs(np.linalg.det(np.stack([e_s, e_c, e_u], axis=-1)))
        if dets.min() < MIN_FRAME_DET:
            raise DegenerateFrame(f"frame determinant {dets.min():.3e} below {MIN_FRAME_DET}")
    return batch


def splitting_frame(fmap: AnosovMap, x, n_iter: int = 60, tol: float = 1e-9) -> SplittingFrame:
    return splitting_frames(fmap, np.asarray(x, dtype=float).reshape(1, 3), n_iter, tol).frame(0)


def center_jacobian(fmap: AnosovMap, x, n_iter: int = 60, tol: float = 1e-9):
    """-log of the center expansion rate; scalar for one point, array for a stack."""
    x = np.asarray(x, dtype=float)
    jc = splitting_frames(fmap, x.reshape(-1, 3), n_iter, tol).center_jacobian
    return float(jc[0]) if x.ndim == 1 else jc


def rate_bounds(fmap: AnosovMap, grid_n: int = 16, n_iter: int = 60, tol: float = 1e-9) -> dict:
    """Extremal one-step rates over a grid, certifying rate_s < 1 < rate_c < rate_u."""
    pts = grid_points(grid_n)
    try:
        fb = splitting_frames(fmap, pts, n_iter, tol)
    except (NoConvergence, DegenerateFrame) as exc:
        raise OrderViolation(f"splitting not available on the grid: {exc}") from exc
    out = {}
    for name, r in (("s", fb.rate_s), ("c", fb.rate_c), ("u", fb.rate_u)):
        out[f"min_rate_{name}"] = float(r.min())
        out[f"max_rate_{name}"] = float(r.max())
    margins = {
        "stable_below_one": 1.0 - out["max_rate_s"],
        "center_above_one": out["min_rate_c"] - 1.0,
        "unstable_above_center": float(np.min(fb.rate_u - fb.rate_c)),
    }
    out["margins"] = margins
    if min(margins.values()) <= 0:
        raise OrderViolation(f"rate ordering violated on the grid: {margins}")
    return out


def orbit_jacobian(fmap: AnosovMap, X, n: int):
    """Product df^n along the orbit of each point, with the determinant
    accumulated separately (it is the accurate source for the smallest
    multiplier).  Returns (J, det, endpoint)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    J = np.broadcast_to(np.eye(3), X.shape[:-1] + (3, 3)).copy()
    det = np.ones(X.shape[:-1])
    y = X - np.floor(X)
    for _ in range(n):
        Jk = fmap.jacobian(y)
        J = Jk @ J
        det = det * np.linalg.det(Jk)
        y = fmap.eval(y)
    return J, det, y


def periodic_log_multipliers(J, det) -> np.ndarray:
    """log|multipliers| (stable, center, unstable) of orbit Jacobian products.

    The two expanding multipliers come from the eigenvalues; the
    contracting one is recovered from the determinant, which avoids the
    cancellation that spoils the smallest eigenvalue of a product matrix.
    """
    w = np.linalg.eigvals(J)
    mod = np.sort(np.abs(w), axis=-1)
    log_c = np.log(mod[..., 1])
    log_u = np.log(mod[..., 2])
    log_s = np.log(np.abs(det)) - log_c - log_u
    return np.stack([log_s, log_c, log_u], axis=-1)
