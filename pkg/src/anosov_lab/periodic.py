"""Periodic points: exact enumeration for the linear model and Newton
continuation to the perturbed map.

Fixed points of A^n on the torus are M^{-1} Z^3 / Z^3 with M = A^n - I.
They are indexed by residues k in Z^3 / M Z^3, enumerated as a box using
a lower-triangular Hermite basis of the lattice M Z^3.  The A-action on
residues groups them into orbits; each orbit is continued in epsilon as a
whole by multiple shooting, seeded with the linear orbit.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import BudgetExceeded, Collision, LostOrbit, Overflow
from .splitting import periodic_log_multipliers
from .torus_maps import AnosovMap, linear_eigen, torus_distance

__all__ = [
    "PeriodicPoint",
    "PeriodicSet",
    "lefschetz_count",
    "linear_periodic_points",
    "continue_periodic_points",
    "periodic_points",
    "hermite_lower",
    "DEFAULT_BUDGET",
]

DEFAULT_BUDGET = 20_000_000
SEPARATION = 1e-6
CHUNK = 200_000
INT64_MAX = 2**63 - 1


def _int_matrix(A):
    return [[int(v) for v in row] for row in np.asarray(A)]


def _matmul(P, Q):
    return [[sum(P[i][k] * Q[k][j] for k in range(3)) for j in range(3)] for i in range(3)]


def _matpow(A, n):
    R = [[int(i == j) for j in range(3)] for i in range(3)]
    P = [row[:] for row in A]
    while n:
        if n & 1:
            R = _matmul(R, P)
        P = _matmul(P, P)
        n >>= 1
    return R


def _det(M):
    return (M[0][0] * (M[1][1] * M[2][2] - M[1][2] * M[2][1])
            - M[0][1] * (M[1][0] * M[2][2] - M[1][2] * M[2][0])
            + M[0][2] * (M[1][0] * M[2][1] - M[1][1] * M[2][0]))


def _adj(M):
    c = [[0] * 3 for _ in range(3)]
    for i in range(3):
        for j in range(3):
            rows = [r for r in range(3) if r != i]
            cols = [q for q in range(3) if q != j]
            minor = M[rows[0]][cols[0]] * M[rows[1]][cols[1]] - M[rows[0]][cols[1]] * M[rows[1]][cols[0]]
            c[i][j] = (-1) ** (i + j) * minor
    return [[c[j][i] for j in range(3)] for i in range(3)]


def _power_minus_identity(A, n):
    M = _matpow(_int_matrix(A), n)
    for i in range(3):
        M[i][i] -= 1
    return M


def lefschetz_count(A, n: int) -> int:
    """|det(A^n - I)| in exact integer arithmetic."""
    if n < 1:
        raise ValueError("period must be >= 1")
    d = abs(_det(_power_minus_identity(A, n)))
    if d == 0:
        raise ValueError("A^n - I is singular; A is not hyperbolic")
    if d > INT64_MAX:
        raise Overflow(f"|det(A^{n} - I)| = {d} exceeds the int64 range")
    return d


def hermite_lower(M):
    """Lower-triangular basis H (positive diagonal) of the column lattice M Z^3,
    obtained by unimodular column operations."""
    H = [list(map(int, row)) for row in M]

    def colop(dst, src, q):  # column dst -= q * column src
        for r in range(3):
            H[r][dst] -= q * H[r][src]

    def swap(a, b):
        for r in range(3):
            H[r][a], H[r][b] = H[r][b], H[r][a]

    for i in range(3):
        for j in range(i + 1, 3):
            while H[i][j] != 0:
                if H[i][i] == 0 or abs(H[i][j]) < abs(H[i][i]):
                    swap(i, j)
                    continue
                colop(j, i, H[i][j] // H[i][i])
        if H[i][i] < 0:
            for r in range(3):
                H[r][i] = -H[r][i]
        if H[i][i] == 0:
            raise ValueError("matrix is singular")
    # reduce the entries left of the diagonal into [0, h_ii)
    for i in range(1, 3):
        for j in range(i):
            colop(j, i, H[i][j] // H[i][i])
    return H


@dataclass(frozen=True)
class PeriodicPoint:
    point: np.ndarray
    period: int
    jc_sum: float


@dataclass
class PeriodicSet:
    """All period-n points, ordered by the lattice index of their linear seed.

    Per-point arrays have length Card F_n.  Per-orbit arrays describe the
    A-orbits of seeds (lengths divide n); ``log_multipliers`` holds
    log|eigenvalues| (stable, center, unstable) of df^n along the orbit.
    """

    period: int
    expected_count: int
    points: np.ndarray
    seeds: np.ndarray
    seed_index: np.ndarray
    orbit_id: np.ndarray
    orbit_length: np.ndarray
    orbit_rep: np.ndarray
    log_multipliers: np.ndarray
    epsilon: float = 0.0
    max_residual: float = 0.0
    conjugacy_estimate: float = 0.0
    info: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.points)

    @property
    def orbit_jc_sum(self) -> np.ndarray:
        return -self.log_multipliers[:, 1]

    @property
    def jc_sum(self) -> np.ndarray:
        return self.orbit_jc_sum[self.orbit_id]

    def point(self, i: int) -> PeriodicPoint:
        return PeriodicPoint(self.points[i].copy(), self.period, float(self.jc_sum[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self.point(i)


class _Lattice:
    """Residues Z^3 / M Z^3 for M = A^n - I, as a box of linear indices."""

    def __init__(self, A, n):
        self.A = np.asarray(A, dtype=np.int64)
        self.Mpy = _power_minus_identity(A, n)
        det = _det(self.Mpy)
        self.D = abs(det)
        self.sign = 1 if det > 0 else -1
        H = hermite_lower(self.Mpy)
        self.H = np.array(H, dtype=np.int64)
        self.h = np.array([H[i][i] for i in range(3)], dtype=np.int64)
        self.M = np.array(self.Mpy, dtype=np.int64)
        adj = _adj(self.Mpy)
        self.adj_mod = np.array([[(self.sign * v) % self.D for v in row] for row in adj], dtype=np.int64)

    def decode(self, idx):
        h1, h2 = self.h[1], self.h[2]
        k2 = idx % h2
        t = idx // h2
        return np.stack([t // h1, t % h1, k2], axis=-1)

    def encode(self, k):
        return (k[..., 0] * self.h[1] + k[..., 1]) * self.h[2] + k[..., 2]

    def reduce(self, k):
        k = k.copy()
        for i in range(3):
            q = np.floor_divide(k[..., i], self.h[i])
            k -= q[..., None] * self.H[:, i]
        return k

    def numerators(self, k):
        """r with x = r / D the fixed point of A^n attached to residue k."""
        return (k @ self.adj_mod.T) % self.D

    def translation(self, r):
        """Integer vector M x for x = r / D (exact)."""
        return (r @ self.M.T) // self.D


def _orbits(lat: _Lattice, n: int):
    D = lat.D
    perm = np.empty(D, dtype=np.int64)
    for s in range(0, D, CHUNK * 4):
        idx = np.arange(s, min(D, s + CHUNK * 4), dtype=np.int64)
        perm[idx] = lat.encode(lat.reduce(lat.decode(idx) @ lat.A.T))
    label = np.arange(D, dtype=np.int64)
    cur = perm.copy()
    for _ in range(n - 1):
        np.minimum(label, cur, out=label)
        cur = perm[cur]
    del cur
    reps = np.flatnonzero(label == np.arange(D))
    length = np.ones(len(reps), dtype=np.int64)
    cur = perm[reps]
    for j in range(1, n + 1):
        open_ = cur != reps
        if not np.any(open_):
            break
        length += open_
        cur = np.where(open_, perm[cur], cur)
    return perm, label, reps, length


def _solve_orbits(fmap: AnosovMap, r0, lat: "_Lattice", n, steps, tol, max_newton):
    """Multiple-shooting Newton continuation along eps' in (0, eps].

    Unknowns are all n orbit points x_j in [0,1)^3 with equations
    F(x_j) - x_{j+1} - k_j = 0 (indices mod n, k_j integer).  Each Newton
    step is condensed onto x_0 through the orbit Jacobian product.
    Returns orbit points (R, n, 3), the final residual, the orbit
    Jacobian product and its determinant.
    """
    A = lat.A
    D = lat.D
    R = len(r0)
    rs = np.empty((n + 1, R, 3), dtype=np.int64)
    rs[0] = r0
    for j in range(n):
        rs[j + 1] = (rs[j] @ A.T) % D
    x = (rs[:n] / D).transpose(1, 0, 2).copy()  # (R, n, 3)
    k = ((rs[:n] @ A.T - rs[1:]) // D).transpose(1, 0, 2).copy()
    eye = np.eye(3)
    eps_path = [fmap.epsilon * j / steps for j in range(1, steps + 1)]
    res = np.zeros(R)
    x_prev = None
    for step, e in enumerate(eps_path):
        g = fmap.with_epsilon(e)
        if x_prev is not None:
            # secant predictor along the homotopy path
            dx = x - x_prev
            dx -= np.round(dx)
            x_prev = x
            x = x + dx
            m = np.floor(x).astype(np.int64)
            x = x - m
            k = k - m @ A.T + np.roll(m, -1, axis=1)
        else:
            x_prev = x
        # intermediate homotopy stages only need to stay in the basin
        target = tol * 1e-3 if step == len(eps_path) - 1 else 1e-5
        for it in range(max_newton + 1):
            Fx, Js = g.eval_lift_and_jacobian(x)
            err = Fx - k - np.roll(x, -1, axis=1)
            res = np.abs(err).max(axis=(1, 2))
            if res.max() < target or it == max_newton:
                break
            Phi = np.broadcast_to(eye, (R, 3, 3)).copy()
            s = np.zeros((R, 3, 1))
            for j in range(n):
                Phi = Js[:, j] @ Phi
                s = Js[:, j] @ s + err[:, j, :, None]
            d = np.empty_like(x)
            d[:, 0] = np.linalg.solve(Phi - eye, -s)[..., 0]
            for j in range(n - 1):
                d[:, j + 1] = (Js[:, j] @ d[:, j, :, None])[..., 0] + err[:, j]
            x = x + d
            m = np.floor(x).astype(np.int64)
            x = x - m
            k = k - m @ A.T + np.roll(m, -1, axis=1)
    _, Js = fmap.eval_lift_and_jacobian(x)
    Phi = np.broadcast_to(eye, (R, 3, 3)).copy()
    det = np.ones(R)
    for j in range(n):
        Phi = Js[:, j] @ Phi
        det = det * np.linalg.det(Js[:, j])
    return x, res, Phi, det


def continue_periodic_points(fmap: AnosovMap, n: int, tol: float = 1e-9, steps: int = 10,
                             budget: int = DEFAULT_BUDGET, max_newton: int = 12,
                             check_collisions: bool = True, group_orbits: bool = True) -> PeriodicSet:
    """All period-n points of fmap, continued from the linear model.

    With ``group_orbits=False`` (linear maps only) every point is its own
    trivial orbit; sums weighted by orbit length are unaffected.
    """
    count = lefschetz_count(fmap.A, n)
    if count > budget:
        raise BudgetExceeded(f"Card F_{n} = {count} exceeds the enumeration budget {budget}")
    lat = _Lattice(fmap.A, n)
    seeds = np.empty((lat.D, 3))
    for s in range(0, lat.D, CHUNK * 4):
        idx = np.arange(s, min(lat.D, s + CHUNK * 4), dtype=np.int64)
        seeds[idx] = lat.numerators(lat.decode(idx)) / lat.D
    if group_orbits or not fmap.is_linear:
        perm, label, reps, length = _orbits(lat, n)
        orbit_id = np.searchsorted(reps, label)
        del label
    else:
        perm = None
        reps = orbit_id = np.arange(lat.D, dtype=np.int64)
        length = np.ones(lat.D, dtype=np.int64)
    R = len(reps)
    residual = np.zeros(R)
    if fmap.is_linear:
        points = seeds
        log_mult = np.broadcast_to(n * np.log(linear_eigen(fmap.A).values), (R, 3)).copy()
    else:
        points = np.empty((lat.D, 3))
        log_mult = np.empty((R, 3))
        chunk = max(1, CHUNK // n)
        for s in range(0, R, chunk):
            sl = slice(s, min(R, s + chunk))
            r0 = lat.numerators(lat.decode(reps[sl]))
            x, res, Phi, det = _solve_orbits(fmap, r0, lat, n, steps, tol, max_newton)
            bad = np.flatnonzero(~(res < tol))
            if bad.size:
                b = bad[0]
                seed = (r0[b] / lat.D).tolist()
                raise LostOrbit(f"continuation lost period-{n} orbit seeded at {seed} "
                                f"(residual {res[b]:.3e})", seed=seed, residual=float(res[b]))
            residual[sl] = res
            log_mult[sl] = periodic_log_multipliers(Phi, det)
            idx = reps[sl].copy()
            for j in range(n):
                act = length[sl] > j
                points[idx[act]] = x[act, j]
                idx = perm[idx]
    grouped = perm is not None
    del perm
    seed_index = np.arange(lat.D, dtype=np.int64)
    conj = 0.0 if fmap.is_linear else float(torus_distance(points, seeds).max())
    if check_collisions and count > 1 and not fmap.is_linear:
        tree = cKDTree(np.clip(points, 0.0, np.nextafter(1.0, 0.0)), boxsize=1.0)
        pairs = tree.query_pairs(SEPARATION, output_type="ndarray")
        if len(pairs):
            i, j = pairs[0]
            raise Collision(f"period-{n} points {i} and {j} closer than {SEPARATION}: "
                            f"{points[i].tolist()} vs {points[j].tolist()}")
    return PeriodicSet(
        period=n, expected_count=count, points=points, seeds=seeds, seed_index=seed_index,
        orbit_id=orbit_id, orbit_length=length, orbit_rep=reps, log_multipliers=log_mult,
        epsilon=fmap.epsilon, max_residual=float(residual.max()) if R else 0.0,
        conjugacy_estimate=conj,
        info={"orbits": int(R), "grouped": grouped},
    )


def linear_periodic_points(A, n: int, budget: int = DEFAULT_BUDGET, group_orbits: bool = False) -> PeriodicSet:
    """All solutions of (A^n - I) x in Z^3 inside [0,1)^3."""
    return continue_periodic_points(AnosovMap(np.asarray(A)), n, budget=budget,
                                    check_collisions=False, group_orbits=group_orbits)


_CACHE: "OrderedDict[tuple, PeriodicSet]" = OrderedDict()
_CACHE_SIZE = 12


def map_key(fmap: AnosovMap) -> tuple:
    return (tuple(map(int, fmap.A.ravel())),
            tuple((t.wavevector, t.amplitude, t.phase) for t in fmap.perturbation),
            float(fmap.epsilon) if not fmap.is_linear else 0.0)


def periodic_points(fmap: AnosovMap, n: int, tol: float = 1e-9, steps: int = 10,
                    budget: int = DEFAULT_BUDGET, cache: bool = True) -> PeriodicSet:
    """Cached entry point used by the thermodynamic routines."""
    key = (map_key(fmap), int(n), float(tol), int(steps))
    if cache and key in _CACHE:
        _CACHE.move_to_end(key)
        return _CACHE[key]
    ps = continue_periodic_points(fmap, n, tol=tol, steps=steps, budget=budget)
    if cache:
        _CACHE[key] = ps
        while len(_CACHE) > _CACHE_SIZE:
            _CACHE.popitem(last=False)
    return ps


def clear_cache():
    _CACHE.clear()
