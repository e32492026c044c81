"""Fourier-Galerkin truncations of the transfer operators on k-forms of T^3
and extraction of their leading eigenvalues.

Basis: e_m(x) dx_I with m in [-K, K]^3 and, for 2-forms, the Hodge-dual
basis (dx2^dx3, dx3^dx1, dx1^dx2), so that the wedge pairing between
k-forms and (3-k)-forms is the identity on components and m <-> -m on
modes.  The pullback f^* on j-forms is assembled column by column from the
Fourier transform of (e_n o f) times the component action of df; the
pushforward on k-forms is then R P_{3-k}^T R, with R the mode reflection.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from .errors import AliasWarning, EigenNoConvergence, NormalizationDegenerate, Underflow
from .torus_maps import AnosovMap, linear_eigen

__all__ = [
    "FourierForm",
    "TransferMatrix",
    "SpectrumResult",
    "n_components",
    "mode_grid",
    "assemble_pullback",
    "assemble_transfer",
    "leading_spectrum",
    "spectrum_across_truncations",
    "power_pullback",
    "co_resonant_state",
    "resonant_state",
    "projector_trace_measure",
    "no_jordan_witness",
    "restrict_to_leaf_compare",
]

STABLE_DRIFT = 1e-3
SPURIOUS_DRIFT = 1e-1
ALIAS_TOL = 1e-10


def n_components(k: int) -> int:
    return (1, 3, 3, 1)[k]


def mode_grid(K: int) -> np.ndarray:
    r = np.arange(-K, K + 1)
    return np.stack(np.meshgrid(r, r, r, indexing="ij"), -1).reshape(-1, 3)


def _mode_index(m: np.ndarray, K: int):
    M = 2 * K + 1
    ok = np.all(np.abs(m) <= K, axis=-1)
    idx = ((m[..., 0] + K) * M + (m[..., 1] + K)) * M + (m[..., 2] + K)
    return ok, idx


@dataclass
class FourierForm:
    """k-form sum_m sum_c coefficients[m, c] e_m dx_c on the truncation box."""

    degree: int
    K: int
    coefficients: np.ndarray  # ((2K+1)^3, n_components) complex
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        nm = (2 * self.K + 1) ** 3
        self.coefficients = np.asarray(self.coefficients, dtype=complex).reshape(nm, n_components(self.degree))

    @classmethod
    def from_vector(cls, k: int, K: int, v, info=None) -> "FourierForm":
        return cls(k, K, np.asarray(v).reshape(-1, n_components(k)), info or {})

    @classmethod
    def from_modes(cls, k: int, K: int, coeffs: dict) -> "FourierForm":
        """coeffs: {(mode, component): value}."""
        c = np.zeros(((2 * K + 1) ** 3, n_components(k)), dtype=complex)
        for (m, comp), v in coeffs.items():
            ok, i = _mode_index(np.asarray(m), K)
            if not ok:
                raise ValueError(f"mode {m} outside truncation K={K}")
            c[i, comp] += v
        return cls(k, K, c)

    @property
    def vector(self) -> np.ndarray:
        return self.coefficients.reshape(-1)

    def coefficient(self, m, comp: int = 0) -> complex:
        ok, i = _mode_index(np.asarray(m), self.K)
        return complex(self.coefficients[i, comp]) if ok else 0j

    def reality_defect(self) -> float:
        """max |c(-m) - conj(c(m))| relative to max |c|."""
        c = self.coefficients
        d = np.abs(c[::-1] - np.conj(c)).max()
        return float(d / max(np.abs(c).max(), 1e-300))

    def evaluate(self, x) -> np.ndarray:
        """Component values at points x (N, 3); complex array (N, n_components)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        modes = mode_grid(self.K)
        nz = np.any(self.coefficients != 0, axis=1)
        modes, c = modes[nz], self.coefficients[nz]
        out = np.zeros((len(x), c.shape[1]), dtype=complex)
        for i in range(0, len(x), 4096):
            ph = np.exp(2j * np.pi * (x[i:i + 4096] @ modes.T))
            out[i:i + 4096] = ph @ c
        return out


@dataclass
class TransferMatrix:
    """Truncated pushforward on k-forms, stored sparse (CSR)."""

    degree: int
    K: int
    matrix: sp.csr_matrix
    quad_n: int
    epsilon: float
    info: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def constant_block(self) -> np.ndarray:
        nc = n_components(self.degree)
        _, i0 = _mode_index(np.zeros(3, dtype=int), self.K)
        sl = slice(i0 * nc, (i0 + 1) * nc)
        return self.matrix[sl, sl].toarray()

    def apply(self, form: FourierForm) -> FourierForm:
        return FourierForm.from_vector(self.degree, self.K, self.matrix @ form.vector)


@dataclass
class SpectrumResult:
    eigenvalues: np.ndarray
    vectors: list
    truncations_compared: list
    stability: np.ndarray | None = None
    classification: list | None = None
    info: dict = field(default_factory=dict)

    def table(self) -> list:
        rows = []
        for i, lam in enumerate(self.eigenvalues):
            rows.append({
                "index": i, "re": float(lam.real), "im": float(lam.imag), "modulus": float(abs(lam)),
                "drift": None if self.stability is None else float(self.stability[i]),
                "class": None if self.classification is None else self.classification[i],
            })
        return rows


# -- assembly ---------------------------------------------------------------

def _component_fields(fmap: AnosovMap, j: int, X: np.ndarray) -> np.ndarray:
    """C[b, a](x): coefficient of output component b from input component a."""
    D = fmap.jacobian(X.reshape(-1, 3)).reshape(X.shape[:-1] + (3, 3))
    D = np.moveaxis(D, (-2, -1), (0, 1))  # D[a, b] = d f_a / d x_b
    if j == 0:
        return np.ones((1, 1) + X.shape[:-1])
    if j == 1:
        return np.swapaxes(D, 0, 1)
    if j == 2:
        # adjugate: adj[b, a] = cofactor[a, b]
        adj = np.empty_like(D)
        for a in range(3):
            for b in range(3):
                r = [i for i in range(3) if i != a]
                c = [i for i in range(3) if i != b]
                minor = D[r[0], c[0]] * D[r[1], c[1]] - D[r[0], c[1]] * D[r[1], c[0]]
                adj[b, a] = (-1) ** (a + b) * minor
        return adj
    det = (D[0, 0] * (D[1, 1] * D[2, 2] - D[1, 2] * D[2, 1])
           - D[0, 1] * (D[1, 0] * D[2, 2] - D[1, 2] * D[2, 0])
           + D[0, 2] * (D[1, 0] * D[2, 1] - D[1, 1] * D[2, 0]))
    return det[None, None]


def assemble_pullback(fmap: AnosovMap, j: int, K: int, quad_n: int = 48,
                      drop_tol: float = 1e-15) -> sp.csr_matrix:
    """Matrix of f^* on j-forms in the truncated Fourier basis.

    f^*(e_n dx_I) = e_{A^T n} * E_n * (component action of df), where
    E_n = exp(2 pi i n . (f - A x)); the product of the last two factors is
    a smooth periodic function whose coefficients are read off an FFT on a
    quad_n^3 grid.  Returns the matrix and the aliasing mass in info.
    """
    if j not in (0, 1, 2, 3):
        raise ValueError("degree must be in 0..3")
    Q = int(quad_n)
    g1 = np.arange(Q) / Q
    X = np.stack(np.meshgrid(g1, g1, g1, indexing="ij"), -1)
    nc = n_components(j)
    Cf = _component_fields(fmap, j, X)
    flat = X.reshape(-1, 3)
    if fmap.is_linear:
        G = np.zeros((0,) + X.shape[:-1])
    else:
        G = np.stack([np.sin(2 * np.pi * (flat @ q) + ph).reshape(X.shape[:-1])
                      for q, ph in zip(fmap._q, fmap._phase)])
    amps = fmap._amp if not fmap.is_linear else np.zeros((0, 3))

    freqs = np.fft.fftfreq(Q, 1.0 / Q).round().astype(int)
    FM = np.stack(np.meshgrid(freqs, freqs, freqs, indexing="ij"), -1).reshape(-1, 3)
    shell = np.max(np.abs(FM), axis=1) >= Q // 2 - 1
    modes = mode_grid(K)
    A = np.asarray(fmap.A, dtype=np.int64)
    cache: dict = {}
    alias = 0.0
    rows, cols, vals = [], [], []
    scale = max(1.0, float(np.abs(Cf).max()))
    for jn, n in enumerate(modes):
        key = tuple(np.round(amps @ n, 12)) if len(amps) else ()
        if key not in cache:
            if len(key):
                phase = 2j * np.pi * fmap.epsilon * np.tensordot(np.asarray(key), G, axes=1)
                E = np.exp(phase)
            else:
                E = np.ones(X.shape[:-1])
            tabs = []
            for b in range(nc):
                row = []
                for a in range(nc):
                    C = np.fft.fftn(E * Cf[b, a]).reshape(-1) / Q ** 3
                    mass = np.abs(C).sum()
                    if mass > 0:
                        alias = max(alias, float(np.abs(C[shell]).sum() / mass))
                    keep = np.abs(C) > drop_tol * scale
                    row.append((FM[keep], C[keep]))
                tabs.append(row)
            cache[key] = tabs
        base = A.T @ n
        for b in range(nc):
            for a in range(nc):
                p, C = cache[key][b][a]
                ok, ix = _mode_index(base + p, K)
                rows.append(ix[ok] * nc + b)
                cols.append(np.full(int(ok.sum()), jn * nc + a))
                vals.append(C[ok])
    N = len(modes) * nc
    P = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))
    P.sum_duplicates()
    return P, {"alias_mass": alias, "keys": len(cache)}


def _reflection(K: int, nc: int) -> np.ndarray:
    nm = (2 * K + 1) ** 3
    idx = np.arange(nm * nc)
    mode, comp = np.divmod(idx, nc)
    return (nm - 1 - mode) * nc + comp


def assemble_transfer(fmap: AnosovMap, k: int, K: int, quad_n: int = 48,
                      alias_tol: float = ALIAS_TOL) -> TransferMatrix:
    """Truncated pushforward f_* on k-forms, from the pullback on (3-k)-forms
    by duality of the wedge pairing."""
    if quad_n < 4 * K + 4:
        raise ValueError(f"quad_n={quad_n} below the anti-aliasing margin 4K+4={4 * K + 4}")
    P, info = assemble_pullback(fmap, 3 - k, K, quad_n)
    r = _reflection(K, n_components(k))
    T = P.T.tocsr()[r][:, r].tocsr()
    if info["alias_mass"] > alias_tol:
        warnings.warn(f"Fourier mass {info['alias_mass']:.2e} near the quadrature Nyquist shell",
                      AliasWarning, stacklevel=2)
    info["nnz"] = int(T.nnz)
    return TransferMatrix(k, K, T, quad_n, fmap.epsilon, info)


# -- spectra ----------------------------------------------------------------

def _start_vector(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)


def _eigs(M, m: int, seed: int, tol: float, maxiter: int | None):
    try:
        w, V = sla.eigs(M, k=m, which="LM", v0=_start_vector(M.shape[0], seed),
                        tol=tol, maxiter=maxiter)
    except sla.ArpackNoConvergence as exc:
        raise EigenNoConvergence(f"ARPACK did not converge: {len(exc.eigenvalues)} of {m} eigenvalues") from exc
    order = np.lexsort((-w.imag, -np.round(np.abs(w), 12)))
    return w[order], V[:, order]


def _fix_phase(v: np.ndarray) -> np.ndarray:
    i = np.argmax(np.abs(v))
    v = v * (abs(v[i]) / v[i])
    return v / np.linalg.norm(v)


def leading_spectrum(T: TransferMatrix, m: int = 12, left: bool = False, seed: int = 0,
                     tol: float = 0.0, maxiter: int | None = None) -> SpectrumResult:
    """m largest-modulus eigenvalues of T (of T^T when left=True), with
    unit eigenvectors whose largest entry is real positive."""
    if m >= T.dim - 1:
        raise ValueError("m must be well below the matrix dimension")
    M = T.matrix.T.tocsr() if left else T.matrix
    w, V = _eigs(M, m, seed, tol, maxiter)
    vecs = [FourierForm.from_vector(T.degree, T.K, _fix_phase(V[:, i])) for i in range(len(w))]
    return SpectrumResult(w, vecs, [T.K], info={"left": left, "dim": T.dim})


def _track_drift(spectra: list) -> np.ndarray:
    """Per-eigenvalue drift of the last spectrum, tracked backwards by
    nearest-neighbour matching through the previous truncations."""
    last = spectra[-1]
    drift = np.zeros(len(last))
    for i, lam in enumerate(last):
        cur, d = lam, 0.0
        for prev in reversed(spectra[:-1]):
            j = int(np.argmin(np.abs(prev - cur)))
            d = max(d, abs(prev[j] - cur))
            cur = prev[j]
        drift[i] = d
    return drift


def classify(drift: np.ndarray, stable: float = STABLE_DRIFT, spurious: float = SPURIOUS_DRIFT) -> list:
    return ["stable" if d < stable else "spurious" if d > spurious else "undetermined" for d in drift]


def spectrum_across_truncations(fmap: AnosovMap, k: int, Ks=(6, 8, 10), m: int = 12,
                                quad_n: int = 48, seed: int = 0) -> SpectrumResult:
    spectra, res = [], None
    for K in Ks:
        res = leading_spectrum(assemble_transfer(fmap, k, K, quad_n), m, seed=seed)
        spectra.append(res.eigenvalues)
    drift = _track_drift(spectra)
    res.truncations_compared = list(Ks)
    res.stability = drift
    res.classification = classify(drift)
    res.info["per_K"] = {int(K): s for K, s in zip(Ks, spectra)}
    return res


def no_jordan_witness(right: FourierForm, left: FourierForm) -> float:
    """|w^T v| / (|w| |v|) for right and left eigenvectors of the same eigenvalue."""
    v, w = right.vector, left.vector
    return float(abs(w @ v) / (np.linalg.norm(w) * np.linalg.norm(v)))


def resonant_state(fmap: AnosovMap, K: int, quad_n: int = 48, seed: int = 0):
    """(eigenvalue, theta): leading eigenpair of the pushforward on 2-forms."""
    spec = leading_spectrum(assemble_transfer(fmap, 2, K, quad_n), 4, seed=seed)
    return spec.eigenvalues[0], spec.vectors[0]


def co_resonant_state(fmap: AnosovMap, K: int, quad_n: int = 48, seed: int = 0):
    """(eigenvalue, nu): leading eigenpair of the pullback on 1-forms."""
    P, _ = assemble_pullback(fmap, 1, K, quad_n)
    w, V = _eigs(P, 4, seed, 0.0, None)
    return w[0], FourierForm.from_vector(1, K, _fix_phase(V[:, 0]))


def power_pullback(fmap: AnosovMap, eta: FourierForm, n: int, quad_n: int = 48,
                   underflow: float = 1e-10, P=None) -> FourierForm:
    """lambda_u^{-n} (f^*)^n eta on 1-forms.

    info holds the growth ratios |P v_k| / |v_k|, the Cauchy increments of
    the normalized iterates and the normalized limit direction.
    """
    if eta.degree != 1:
        raise ValueError("power_pullback acts on 1-forms")
    if P is None:
        P, _ = assemble_pullback(fmap, 1, eta.K, quad_n)
    lam_u = linear_eigen(fmap.A).values[2]
    v = eta.vector.copy()
    n0 = np.linalg.norm(v)
    if n0 == 0:
        raise Underflow("zero seed form")
    ratios, incs = [], []
    prev = _fix_phase(v)
    for _ in range(n):
        w = P @ v
        ratios.append(float(np.linalg.norm(w) / np.linalg.norm(v)))
        v = w / lam_u
        cur = _fix_phase(v)
        incs.append(float(np.linalg.norm(cur - prev)))
        prev = cur
    c = np.linalg.norm(v) / n0
    if c < underflow:
        raise Underflow(f"lambda_u^-n (f^*)^n eta has relative size {c:.2e}; the seed has no "
                        "component along the co-resonant state")
    return FourierForm.from_vector(1, eta.K, v, {"growth": ratios, "increments": incs,
                                                  "scale": float(c), "direction": prev})


def _pair(nu: np.ndarray, theta: np.ndarray, K: int, p) -> complex:
    """sum_q sum_a nu_a(q) theta_a(-p - q) on the truncation box."""
    M = 2 * K + 1
    a = nu.reshape(M, M, M, -1)
    b = theta.reshape(M, M, M, -1)[::-1, ::-1, ::-1]  # b[i] = theta(-(i - K))
    # theta(-p - q) = b at index of (q + p)
    sl_a, sl_b = [], []
    for d in range(3):
        s = int(p[d])
        if abs(s) >= M:
            return 0j
        if s >= 0:
            sl_a.append(slice(0, M - s))
            sl_b.append(slice(s, M))
        else:
            sl_a.append(slice(-s, M))
            sl_b.append(slice(0, M + s))
    return complex(np.sum(a[tuple(sl_a)] * b[tuple(sl_b)]))


def projector_trace_measure(theta: FourierForm, nu: FourierForm, g, rel_threshold: float = 1e-12) -> float:
    """Self-normalized integral of g against the 3-form nu ^ theta.

    g is an observable with a ``fourier()`` method returning {mode: coefficient}.
    """
    if theta.degree != 2 or nu.degree != 1 or theta.K != nu.K:
        raise ValueError("need a 2-form theta and a 1-form nu on the same truncation")
    K = theta.K
    one = _pair(nu.vector, theta.vector, K, (0, 0, 0))
    if abs(one) < rel_threshold * np.linalg.norm(nu.vector) * np.linalg.norm(theta.vector):
        raise NormalizationDegenerate(f"nu ^ theta has total mass {abs(one):.2e}")
    tot = 0j
    for p, gp in g.fourier().items():
        tot += gp * _pair(nu.vector, theta.vector, K, p)
    return float((tot / one).real)


def restrict_to_leaf_compare(fmap: AnosovMap, nu: FourierForm, curve, density, nodes: int = 3,
                             sub: int = 64) -> float:
    """Max relative mismatch between the integrals of nu over the cells of a
    leaf window and the cell masses of an iterated leaf density, after one
    global normalization of each side.

    With ``curve=None`` the density must carry its leaf chart and cell
    parameters (as a LeafDensity does); each cell is then resolved by ``sub``
    chords.  Otherwise ``curve.vertices`` is a lifted polyline and
    ``density.cell_edges`` holds the vertex indices bounding each cell.
    """
    if curve is None:
        t = np.asarray(density.params, dtype=float)
        u = np.linspace(0.0, 1.0, sub + 1)[:-1]
        tt = np.concatenate([a + (b - a) * u for a, b in zip(t[:-1], t[1:])] + [t[-1:]])
        P = density.chart.point(tt)
        edges = np.arange(len(t)) * sub
    else:
        P = np.asarray(curve.vertices)
        edges = np.asarray(density.cell_edges)
    seg = P[1:] - P[:-1]
    xg, wg = np.polynomial.legendre.leggauss(nodes)
    tq = 0.5 * (xg + 1.0)
    pts = P[:-1, None, :] + tq[None, :, None] * seg[:, None, :]
    vals = nu.evaluate(pts.reshape(-1, 3)).reshape(len(seg), nodes, 3)
    seg_int = 0.5 * np.einsum("snc,sc,n->s", vals, seg, wg)
    cum = np.concatenate([[0], np.cumsum(seg_int)])
    cell_nu = cum[edges[1:]] - cum[edges[:-1]]
    cell_nu = cell_nu / cell_nu.sum()
    masses = np.asarray(density.masses, dtype=float)
    masses = masses / masses.sum()
    return float(np.max(np.abs(cell_nu.real - masses) / masses))
