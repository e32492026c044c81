import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from anosov_lab.periodic import lefschetz_count
from anosov_lab.thermo import (
    TrigObservable,
    aitken,
    bowen_measure,
    determinant_series,
    integrability_test,
    pressure_estimate,
    trace_exterior_square,
    zeta_exact,
    zeta_series,
    zeta_taylor_from_counts,
)
from anosov_lab.torus_maps import companion_matrix, default_map, linear_eigen

A = companion_matrix()
LAM = linear_eigen(A).values


def test_zeta_taylor_first_coefficients():
    # exp(z + 13 z^2 / 2 + 91 z^3 / 3) = 1 + z + 7 z^2 + 37 z^3 + ...
    assert zeta_taylor_from_counts([1, 13, 91]) == [1, 1, 7, 37]


def test_zeta_exact_matches_counts():
    ze = zeta_exact(A)
    counts = [lefschetz_count(A, n) for n in range(1, 13)]
    assert ze.taylor(12) == zeta_taylor_from_counts(counts)
    assert ze.log_derivative_coefficients(12) == counts
    assert zeta_series(default_map(0.0), 6) == counts[:6]
    # poles at the reciprocals of the pair products l_i l_j
    pairs = np.sort([LAM[0] * LAM[1], LAM[0] * LAM[2], LAM[1] * LAM[2]])
    assert np.allclose(np.sort(1 / np.array(ze.denominator_roots)), pairs, atol=1e-12)


def test_zeta_series_perturbed_counts_are_topological():
    assert zeta_series(default_map(0.05), 5) == [lefschetz_count(A, n) for n in range(1, 6)]


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 3), elements=st.floats(-2, 2)))
def test_trace_exterior_square(M):
    w = np.linalg.eigvals(M)
    ref = w[0] * w[1] + w[0] * w[2] + w[1] * w[2]
    assert abs(trace_exterior_square(M) - ref.real) < 1e-9 * max(1.0, np.abs(w).max() ** 2)


def test_linear_determinants_are_characteristic_polynomials():
    # D_k(z) = det(I - z L^k A^{-1}); eigenvalues of L^k A^{-1} from those of A
    mu = 1.0 / LAM
    sets = [[1.0], list(mu), [mu[0] * mu[1], mu[0] * mu[2], mu[1] * mu[2]], [np.prod(mu)]]
    for k in range(4):
        D = determinant_series(default_map(0.0), k, 8)
        expect = np.zeros(9)
        poly = np.array([1.0])
        for m in sets[k]:
            poly = np.convolve(poly, [1.0, -m])
        expect[:len(poly)] = poly
        # the exp series cancels terms of size ~6^m
        assert np.all(np.abs(D.coefficients - expect) < 1e-12 * 6.0 ** np.arange(9)), k


def test_first_zero_of_d2_is_inverse_lambda_u():
    D2 = determinant_series(default_map(0.0), 2, 10)
    assert abs(D2.zeros()[0] - 1 / LAM[2]) < 1e-10


def test_determinant_identity_count_orientation():
    f = default_map(0.0)
    ze = zeta_exact(A)
    D = [determinant_series(f, k, 10) for k in range(4)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for z in (0.05, -0.1, 0.15, 0.1j, 0.08 + 0.08j):
            lhs = ze(z) * D[1](z) * D[3](z)
            rhs = D[0](z) * D[2](z)
            assert abs(lhs / rhs - 1) < 1e-10


def test_aitken_is_exact_on_one_geometric_mode():
    s = 2.0 + 0.3 * 0.6 ** np.arange(8)
    assert np.allclose(aitken(s), 2.0, atol=1e-14)


def test_pressure_linear():
    ps = pressure_estimate(default_map(0.0), 10)
    assert abs(np.exp(ps.limit) - LAM[2]) < 1e-3
    assert ps.error < 1e-3


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.tuples(st.integers(-3, 3), st.integers(-3, 3), st.integers(-3, 3)),
                          st.floats(-1, 1), st.floats(-1, 1)), max_size=3),
       arrays(np.float64, (4, 3), elements=st.floats(0, 1)))
def test_trig_observable_fourier_matches_values(terms, X):
    terms = [t for t in terms if any(t[0])]
    g = TrigObservable("g", tuple(terms), 0.25)
    c = g.fourier()
    val = sum(v * np.exp(2j * np.pi * (X @ np.array(m, dtype=float))) for m, v in c.items())
    assert np.allclose(val.real, g(X), atol=1e-12)
    assert np.allclose(val.imag, 0.0, atol=1e-12)


def test_bowen_linear_is_haar():
    f = default_map(0.0)
    assert abs(bowen_measure(f, 6, TrigObservable.cos((1, 0, 0))).value) < 1e-12
    assert bowen_measure(f, 6, TrigObservable.one()).value == pytest.approx(1.0, abs=1e-14)
    # raw g = 1 sum tends to 1
    assert abs(bowen_measure(f, 8, TrigObservable.one()).raw_one - 1) < 0.05


def test_integrability_dichotomy():
    r0 = integrability_test(default_map(0.0), 5)
    assert r0.verdict == "JointlyIntegrable" and r0.spread == 0.0
    r1 = integrability_test(default_map(0.05), 5)
    assert r1.verdict == "NotJointlyIntegrable" and r1.spread > 1e-3
