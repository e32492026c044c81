"""Maps of the 3-torus of the form x -> A x + eps * g(x) (mod 1).

Points are numpy arrays whose last axis has length 3; every function
accepts a single point or a stack of points.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConeViolation, NoConvergence, NotDiffeomorphism

__all__ = [
    "TrigTerm",
    "AnosovMap",
    "LinearEigen",
    "ValidationReport",
    "companion_matrix",
    "default_map",
    "linear_eigen",
    "eval",
    "eval_lift",
    "jacobian",
    "inverse",
    "inverse_lift",
    "mod1",
    "validate",
    "torus_distance",
    "wrap_delta",
]

TWO_PI = 2.0 * np.pi


def companion_matrix() -> np.ndarray:
    """Companion matrix of t^3 - 5 t^2 + 6 t - 1 (columns act on e1 -> e2 -> e3)."""
    return np.array([[0, 0, 1], [1, 0, -6], [0, 1, 5]], dtype=np.int64)


@dataclass(frozen=True)
class TrigTerm:
    wavevector: tuple
    amplitude: tuple
    phase: float = 0.0

    def __post_init__(self):
        q = tuple(int(v) for v in self.wavevector)
        a = tuple(float(v) for v in self.amplitude)
        if len(q) != 3 or len(a) != 3:
            raise ValueError("wavevector and amplitude must have three components")
        if not any(q):
            raise ValueError("wavevector must be nonzero")
        if not all(np.isfinite(a)) or not np.isfinite(self.phase):
            raise ValueError("amplitude and phase must be finite")
        object.__setattr__(self, "wavevector", q)
        object.__setattr__(self, "amplitude", a)
        object.__setattr__(self, "phase", float(self.phase))


@dataclass(frozen=True)
class LinearEigen:
    """Eigen-data of the integer matrix, ordered (stable, center, unstable)."""

    values: np.ndarray  # (3,)
    right: np.ndarray  # columns are unit eigenvectors
    left: np.ndarray  # rows are covectors with left[i] @ right[:, j] = delta_ij


def linear_eigen(A) -> LinearEigen:
    A = np.asarray(A, dtype=float)
    w, v = np.linalg.eig(A)
    if np.max(np.abs(w.imag)) > 1e-12:
        raise ValueError("matrix must have real eigenvalues")
    w = w.real
    v = v.real
    order = np.argsort(w)
    w = w[order]
    v = v[:, order]
    v /= np.linalg.norm(v, axis=0)
    # orientation: the entry of largest modulus is positive
    for j in range(3):
        i = np.argmax(np.abs(v[:, j]))
        if v[i, j] < 0:
            v[:, j] = -v[:, j]
    return LinearEigen(values=w, right=v, left=np.linalg.inv(v))


@dataclass(frozen=True)
class AnosovMap:
    homology: np.ndarray
    perturbation: tuple = ()
    epsilon: float = 0.0
    conjugacy_bound: float = 1.0
    _q: np.ndarray = field(init=False, repr=False, compare=False)
    _amp: np.ndarray = field(init=False, repr=False, compare=False)
    _phase: np.ndarray = field(init=False, repr=False, compare=False)
    _Ainv: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        A = np.array(self.homology)
        if A.shape != (3, 3):
            raise ValueError("homology must be 3x3")
        if not np.all(A == np.round(A)):
            raise ValueError("homology must have integer entries")
        A = np.round(A).astype(np.int64)
        det = int(round(np.linalg.det(A)))
        if det != 1:
            raise ValueError(f"homology must have determinant +1, got {det}")
        if self.epsilon < 0 or not np.isfinite(self.epsilon):
            raise ValueError("epsilon must be finite and >= 0")
        if self.conjugacy_bound <= 0:
            raise ValueError("conjugacy_bound must be positive")
        A.setflags(write=False)
        object.__setattr__(self, "homology", A)
        terms = tuple(t if isinstance(t, TrigTerm) else TrigTerm(**t) for t in self.perturbation)
        object.__setattr__(self, "perturbation", terms)
        q = np.array([t.wavevector for t in terms], dtype=float).reshape(-1, 3)
        amp = np.array([t.amplitude for t in terms], dtype=float).reshape(-1, 3)
        ph = np.array([t.phase for t in terms], dtype=float)
        object.__setattr__(self, "_q", q)
        object.__setattr__(self, "_amp", amp)
        object.__setattr__(self, "_phase", ph)
        Ainv = np.round(np.linalg.inv(A)).astype(np.int64)
        if not np.array_equal(Ainv @ A, np.eye(3, dtype=np.int64)):
            raise ValueError("homology is not unimodular")
        object.__setattr__(self, "_Ainv", Ainv)

    # -- basic pieces -------------------------------------------------
    @property
    def A(self) -> np.ndarray:
        return self.homology

    @property
    def A_inv(self) -> np.ndarray:
        return self._Ainv

    @property
    def is_linear(self) -> bool:
        return self.epsilon == 0.0 or len(self.perturbation) == 0

    def with_epsilon(self, epsilon: float) -> "AnosovMap":
        return AnosovMap(self.homology, self.perturbation, float(epsilon), self.conjugacy_bound)

    def perturbation_field(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if len(self.perturbation) == 0:
            return np.zeros_like(x)
        arg = TWO_PI * (x @ self._q.T) + self._phase
        return np.sin(arg) @ self._amp

    def perturbation_derivative(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape + (3,))
        if len(self.perturbation) == 0:
            return out
        arg = TWO_PI * (x @ self._q.T) + self._phase
        return self._dg_from_cos(np.cos(arg), out)

    def _dg_from_cos(self, cos_arg, out):
        for t in range(len(self._phase)):
            out += (TWO_PI * cos_arg[..., t])[..., None, None] * np.outer(self._amp[t], self._q[t])
        return out

    def eval_lift_and_jacobian(self, x):
        """F(x) and df(x) sharing one evaluation of the trig arguments."""
        x = np.asarray(x, dtype=float)
        Af = self.homology.astype(float)
        F = x @ Af.T
        J = np.broadcast_to(Af, x.shape[:-1] + (3, 3)).copy()
        if not self.is_linear:
            arg = TWO_PI * (x @ self._q.T) + self._phase
            F += self.epsilon * (np.sin(arg) @ self._amp)
            dg = self._dg_from_cos(np.cos(arg), np.zeros(x.shape + (3,)))
            J += self.epsilon * dg
        return F, J

    # -- map, lift, derivative ----------------------------------------
    def eval_lift(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = x @ self.homology.T.astype(float)
        if not self.is_linear:
            out = out + self.epsilon * self.perturbation_field(x)
        return out

    def eval(self, x) -> np.ndarray:
        return mod1(self.eval_lift(x))

    def jacobian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        J = np.broadcast_to(self.homology.astype(float), x.shape[:-1] + (3, 3)).copy()
        if not self.is_linear:
            J += self.epsilon * self.perturbation_derivative(x)
        return J

    def step_split(self, y, c):
        """One step of the lift on the representation lift = c + y.

        y holds fractional parts in [0,1) and c integer parts, so that
        the lifted orbit keeps full precision in y for long orbits.
        """
        z = self.eval_lift(y)
        fl = np.floor(z)
        return z - fl, c @ self.homology.T + fl.astype(np.int64)

    def inverse_lift(self, y, tol: float = 1e-13, max_iter: int = 50) -> np.ndarray:
        """Solve F(x) = y on the lift by damped Newton, seeded at A^{-1} y."""
        y = np.asarray(y, dtype=float)
        x = y @ self._Ainv.T.astype(float)
        if self.is_linear:
            return x
        scale = np.maximum(1.0, np.abs(y).max(axis=-1, keepdims=True))
        r = self.eval_lift(x) - y
        res = np.linalg.norm(r, axis=-1)
        for _ in range(max_iter):
            active = res > tol * scale[..., 0]
            if not np.any(active):
                return x
            step = np.linalg.solve(self.jacobian(x), r[..., None])[..., 0]
            t = np.ones(res.shape)
            for _ in range(30):
                xn = x - t[..., None] * step
                rn = self.eval_lift(xn) - y
                resn = np.linalg.norm(rn, axis=-1)
                bad = active & (resn > res) & (t > 1e-6)
                if not np.any(bad):
                    break
                t = np.where(bad, 0.5 * t, t)
            x = np.where(active[..., None], xn, x)
            r = np.where(active[..., None], rn, r)
            res = np.where(active, resn, res)
        if np.any(res > tol * scale[..., 0] * 10):
            raise NoConvergence(f"inverse: Newton residual {res.max():.3e} after {max_iter} iterations")
        return x

    def inverse(self, y, tol: float = 1e-13) -> np.ndarray:
        return mod1(self.inverse_lift(np.asarray(y, dtype=float), tol=tol))


def default_map(epsilon: float = 0.05) -> AnosovMap:
    """Companion matrix perturbed along the second coordinate by sin(2 pi x3)."""
    term = TrigTerm((0, 0, 1), (0.0, 1.0, 0.0), 0.0)
    return AnosovMap(companion_matrix(), (term,), epsilon)


# module-level functional interface ----------------------------------

def eval(fmap: AnosovMap, x) -> np.ndarray:  # noqa: A001 - mirrors the operation name
    return fmap.eval(x)


def eval_lift(fmap: AnosovMap, x) -> np.ndarray:
    return fmap.eval_lift(x)


def jacobian(fmap: AnosovMap, x) -> np.ndarray:
    return fmap.jacobian(x)


def inverse(fmap: AnosovMap, y, tol: float = 1e-13) -> np.ndarray:
    return fmap.inverse(y, tol)


def inverse_lift(fmap: AnosovMap, y, tol: float = 1e-13) -> np.ndarray:
    return fmap.inverse_lift(y, tol)


def mod1(x) -> np.ndarray:
    """Reduce to [0, 1)^3; x - floor(x) rounds tiny negatives up to 1.0."""
    r = np.asarray(x, dtype=float)
    r = r - np.floor(r)
    return np.where(r >= 1.0, 0.0, r)


def wrap_delta(d) -> np.ndarray:
    """Representative of a difference vector in [-1/2, 1/2)^3."""
    d = np.asarray(d, dtype=float)
    return d - np.round(d)


def torus_distance(x, y) -> np.ndarray:
    return np.linalg.norm(wrap_delta(np.asarray(x) - np.asarray(y)), axis=-1)


# validation ------------------------------------------------------------

@dataclass
class ValidationReport:
    grid_n: int
    aperture: float
    min_det: float
    cone_ratios: dict  # worst image/boundary ratio per cone, must be < 1
    passed: bool
    worst_point: tuple | None = None

    def as_dict(self) -> dict:
        return {
            "grid_n": self.grid_n,
            "aperture": self.aperture,
            "min_det": self.min_det,
            "cone_ratios": dict(self.cone_ratios),
            "passed": self.passed,
            "worst_point": None if self.worst_point is None else list(self.worst_point),
        }


def grid_points(grid_n: int) -> np.ndarray:
    g = np.arange(grid_n) / grid_n
    return np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)


def _cone_boundary(kind: str, aperture: float, n_dir: int = 48) -> np.ndarray:
    """Boundary rays of a cone, in linear eigen-coordinates (s, c, u)."""
    phi = TWO_PI * np.arange(n_dir) / n_dir
    t = np.tan(aperture)
    cs, sn = np.cos(phi), np.sin(phi)
    one = np.ones_like(phi)
    if kind == "u":  # |w_cs| = t |w_u|
        return np.stack([t * cs, t * sn, one], axis=-1)
    if kind == "s":  # |w_cu| = t |w_s|
        return np.stack([one, t * cs, t * sn], axis=-1)
    if kind == "cu":  # |w_s| = t |w_cu|
        return np.concatenate([np.stack([t * one, cs, sn], -1), np.stack([-t * one, cs, sn], -1)])
    if kind == "cs":  # |w_u| = t |w_cs|
        return np.concatenate([np.stack([cs, sn, t * one], -1), np.stack([cs, sn, -t * one], -1)])
    raise ValueError(kind)


def _cone_ratio(kind: str, w: np.ndarray) -> np.ndarray:
    ws, wc, wu = w[..., 0], w[..., 1], w[..., 2]
    if kind == "u":
        return np.hypot(ws, wc) / np.abs(wu)
    if kind == "s":
        return np.hypot(wc, wu) / np.abs(ws)
    if kind == "cu":
        return np.abs(ws) / np.hypot(wc, wu)
    return np.abs(wu) / np.hypot(ws, wc)


def validate(fmap: AnosovMap, grid_n: int = 32, aperture: float = 0.4, raise_on_fail: bool = True) -> ValidationReport:
    """Grid certificate: positive Jacobian determinant and strict cone invariance.

    Cones are measured in the eigen-coordinates of the linear part.  The
    u and cu cones must be mapped strictly inside themselves by df, the s
    and cs cones by df^{-1}.
    """
    if grid_n < 8:
        raise ValueError("grid_n must be >= 8")
    pts = grid_points(grid_n)
    J = fmap.jacobian(pts)
    dets = np.linalg.det(J)
    min_det = float(dets.min())
    if min_det <= 0:
        i = int(np.argmin(dets))
        if raise_on_fail:
            raise NotDiffeomorphism(f"det(df) = {min_det:.3e} <= 0 at {pts[i].tolist()}")
        return ValidationReport(grid_n, aperture, min_det, {}, False, tuple(pts[i]))
    eig = linear_eigen(fmap.A)
    P, Pinv = eig.right, eig.left
    fwd = Pinv @ J @ P
    bwd = np.linalg.inv(fwd)
    tan_a = np.tan(aperture)
    ratios = {}
    worst = None
    worst_val = -np.inf
    for kind, M in (("u", fwd), ("cu", fwd), ("s", bwd), ("cs", bwd)):
        w = np.einsum("pij,kj->pki", M, _cone_boundary(kind, aperture))
        r = _cone_ratio(kind, w).max(axis=1) / tan_a
        i = int(np.argmax(r))
        ratios[kind] = float(r[i])
        if r[i] > worst_val:
            worst_val, worst = r[i], tuple(float(v) for v in pts[i])
    passed = all(v < 1.0 for v in ratios.values())
    if not passed and raise_on_fail:
        bad = [k for k, v in ratios.items() if v >= 1.0]
        raise ConeViolation(f"cone(s) {bad} not strictly invariant; worst grid point {worst}", point=worst)
    return ValidationReport(grid_n, aperture, min_det, ratios, passed, None if passed else worst)
