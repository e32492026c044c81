import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from anosov_lab.errors import ConeViolation
from anosov_lab.torus_maps import (
    AnosovMap,
    TrigTerm,
    companion_matrix,
    default_map,
    linear_eigen,
    torus_distance,
    validate,
    wrap_delta,
)

points = arrays(np.float64, 3, elements=st.floats(0.0, 1.0, exclude_max=True))


def test_companion_eigenvalues_are_cosine_roots():
    # roots of l^3 - 5 l^2 + 6 l - 1 are 4 cos^2(k pi / 7), k = 1, 2, 3
    ref = np.sort([4 * np.cos(k * np.pi / 7) ** 2 for k in (1, 2, 3)])
    ev = linear_eigen(companion_matrix())
    assert np.allclose(ev.values, ref, rtol=0, atol=1e-13)
    A = companion_matrix().astype(float)
    for i in range(3):
        v = ev.right[:, i]
        assert np.allclose(A @ v, ev.values[i] * v, atol=1e-13)


def test_linear_map_is_integer_action():
    f = default_map(0.0)
    x = np.array([0.5, 0.25, 0.125])
    # A x = (x3, x1 - 6 x3, x2 + 5 x3) mod 1
    assert np.allclose(f.eval(x), np.array([0.125, 0.5 - 0.75, 0.25 + 0.625]) % 1.0)


@settings(max_examples=40, deadline=None)
@given(points)
def test_inverse_roundtrip(x):
    f = default_map(0.05)
    y = f.eval(x)
    assert torus_distance(f.inverse(y), x) < 1e-12


@settings(max_examples=40, deadline=None)
@given(points)
def test_jacobian_matches_central_differences(x):
    f = default_map(0.05)
    h = 1e-6
    J = f.jacobian(x)
    fd = np.stack([(f.eval_lift(x + h * e) - f.eval_lift(x - h * e)) / (2 * h) for e in np.eye(3)], axis=1)
    assert np.allclose(J, fd, atol=1e-8)


@settings(max_examples=40, deadline=None)
@given(points, st.floats(0.0, 0.3))
def test_jacobian_determinant_is_one(x, eps):
    # the perturbation moves x2 by a function of x3 only
    assert abs(np.linalg.det(default_map(eps).jacobian(x)) - 1.0) < 1e-12


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, 3, elements=st.floats(-50, 50)))
def test_wrap_delta_is_centered_and_integer_shifted(d):
    w = wrap_delta(d)
    assert np.all(np.abs(w) <= 0.5)
    assert np.allclose(d - w, np.round(d - w), atol=1e-9)


def test_validate_default_and_failure():
    rep = validate(default_map(0.05))
    assert rep.passed and all(v < 1 for v in rep.cone_ratios.values())
    with pytest.raises(ConeViolation):
        validate(default_map(10.0))


@pytest.mark.parametrize("kwargs", [
    {"homology": np.diag([2, 1, 1])},
    {"homology": np.eye(3) * 0.5},
    {"homology": companion_matrix(), "epsilon": -0.1},
])
def test_map_rejects_bad_input(kwargs):
    with pytest.raises(ValueError):
        AnosovMap(**kwargs)


def test_trig_term_rejects_zero_wavevector():
    with pytest.raises(ValueError):
        TrigTerm((0, 0, 0), (1.0, 0.0, 0.0))
