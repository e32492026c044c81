import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from anosov_lab.errors import OrderViolation
from anosov_lab.periodic import periodic_points
from anosov_lab.splitting import (
    center_jacobian,
    orbit_jacobian,
    periodic_log_multipliers,
    rate_bounds,
    splitting_frame,
    splitting_frames,
)
from anosov_lab.torus_maps import companion_matrix, default_map, linear_eigen

points = arrays(np.float64, 3, elements=st.floats(0.0, 1.0, exclude_max=True))


def _same_line(a, b):
    a = a / np.linalg.norm(a, axis=-1, keepdims=True)
    b = b / np.linalg.norm(b, axis=-1, keepdims=True)
    return np.minimum(np.linalg.norm(a - b, axis=-1), np.linalg.norm(a + b, axis=-1))


def test_linear_frames_are_eigenvectors():
    ev = linear_eigen(companion_matrix())
    X = np.random.default_rng(3).random((20, 3))
    fb = splitting_frames(default_map(0.0), X)
    for i, e in enumerate((fb.e_s, fb.e_c, fb.e_u)):
        assert _same_line(e, ev.right[:, i]).max() < 1e-10
    assert np.allclose(fb.rate_c, ev.values[1], atol=1e-12)
    assert np.allclose(center_jacobian(default_map(0.0), X), -np.log(ev.values[1]), atol=1e-12)


def test_fixed_point_frames_are_eigenvectors_of_df():
    # sin(2 pi x3) vanishes at the origin, so it stays fixed for every eps
    f = default_map(0.05)
    J = f.jacobian(np.zeros(3))
    w, V = np.linalg.eig(J)
    order = np.argsort(np.abs(w))
    fr = splitting_frame(f, np.zeros(3))
    for k, e in enumerate((fr.e_s, fr.e_c, fr.e_u)):
        assert _same_line(e, V[:, order[k]].real) < 1e-10
    assert abs(fr.rate_c - abs(w[order[1]])) < 1e-10


@settings(max_examples=25, deadline=None)
@given(points)
def test_invariance_under_df(x):
    f = default_map(0.05)
    a = splitting_frame(f, x)
    b = splitting_frame(f, f.eval(x))
    J = f.jacobian(x)
    assert np.linalg.norm(J @ a.e_s - a.rate_s * b.e_s) < 1e-8 or np.linalg.norm(J @ a.e_s + a.rate_s * b.e_s) < 1e-8
    assert _same_line(J @ a.e_c, b.e_c) < 1e-8
    # e_u is only Hoelder along the stable direction; see the ledger
    assert _same_line(J @ a.e_u, b.e_u) < 1e-6
    assert a.rate_s < 1 < a.rate_c < a.rate_u


def test_center_rates_multiply_to_periodic_multiplier():
    # two routes to the center multiplier of a period-3 orbit
    f = default_map(0.05)
    ps = periodic_points(f, 3)
    X = ps.points[:40]
    J, det, end = orbit_jacobian(f, X, 3)
    lm = periodic_log_multipliers(J, det)
    total = np.zeros(len(X))
    y = X.copy()
    for _ in range(3):
        total += np.log(splitting_frames(f, y).rate_c)
        y = f.eval(y)
    assert np.allclose(total, lm[:, 1], atol=1e-8)
    assert np.allclose(lm.sum(axis=1), 0.0, atol=1e-10)


def test_rate_bounds_certify_order():
    out = rate_bounds(default_map(0.05))
    assert min(out["margins"].values()) > 0
    with pytest.raises(OrderViolation):
        rate_bounds(default_map(0.6), grid_n=8)
