import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anosov_lab.errors import BudgetExceeded
from anosov_lab.periodic import (
    continue_periodic_points,
    hermite_lower,
    lefschetz_count,
    linear_periodic_points,
    periodic_points,
)
from anosov_lab.torus_maps import companion_matrix, default_map, torus_distance, wrap_delta

A = companion_matrix()


def _float_count(n):
    M = np.linalg.matrix_power(A.astype(float), n) - np.eye(3)
    return int(round(abs(np.linalg.det(M))))


def test_lefschetz_counts():
    assert [lefschetz_count(A, n) for n in (1, 2, 3)] == [1, 13, 91]
    for n in range(1, 11):
        assert lefschetz_count(A, n) == _float_count(n)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
def test_linear_points_are_periodic_and_distinct(n):
    ps = linear_periodic_points(A, n)
    assert len(ps) == lefschetz_count(A, n)
    Y = ps.points.copy()
    for _ in range(n):
        Y = Y @ A.T.astype(float)
    assert np.abs(wrap_delta(Y - ps.points)).max() < 1e-9
    keys = {tuple(np.round(p * lefschetz_count(A, n)).astype(int) % lefschetz_count(A, n)) for p in ps.points}
    assert len(keys) == len(ps)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6])
def test_continued_points_solve_the_period_equation(n):
    f = default_map(0.05)
    ps = continue_periodic_points(f, n)
    assert len(ps) == lefschetz_count(A, n)
    Y = ps.points.copy()
    for _ in range(n):
        Y = f.eval(Y)
    assert torus_distance(Y, ps.points).max() < 1e-9
    assert ps.max_residual < 1e-9
    # orbit lengths divide n and orbits partition the set
    assert np.all(n % ps.orbit_length == 0)
    assert ps.orbit_length.sum() == len(ps)


def test_jc_sums_are_orbit_invariant():
    f = default_map(0.05)
    ps = periodic_points(f, 4)
    img = f.eval(ps.points)
    # image of each point is a period-4 point of the same orbit
    from scipy.spatial import cKDTree
    tree = cKDTree(ps.points, boxsize=1.0)
    _, j = tree.query(np.clip(img, 0, np.nextafter(1.0, 0)))
    assert np.array_equal(ps.orbit_id[j], ps.orbit_id)
    assert np.allclose(ps.jc_sum[j], ps.jc_sum)


def test_budget_exceeded():
    with pytest.raises(BudgetExceeded):
        linear_periodic_points(A, 6, budget=1000)


unimodular_ops = st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2), st.integers(-3, 3)), max_size=8)


@settings(max_examples=60, deadline=None)
@given(unimodular_ops, st.integers(1, 4))
def test_hermite_lower_spans_the_same_lattice(ops, n):
    M = np.linalg.matrix_power(A, n) - np.eye(3, dtype=np.int64)
    U = np.eye(3, dtype=np.int64)
    for i, j, q in ops:
        if i != j:
            U[:, i] += q * U[:, j]
    H = np.array(hermite_lower(M @ U))
    assert np.all(np.triu(H, 1) == 0) and np.all(np.diag(H) > 0)
    # same lattice: H = M V with V integral and unimodular
    V = np.linalg.solve(M.astype(float), H.astype(float))
    assert np.allclose(V, np.round(V), atol=1e-8)
    assert abs(abs(np.linalg.det(V)) - 1) < 1e-8
    assert abs(np.prod(np.diag(H))) == lefschetz_count(A, n)
