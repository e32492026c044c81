import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from anosov_lab.errors import BudgetExceeded, NoIntersection
from anosov_lab.splitting import splitting_frames
from anosov_lab.torus_maps import default_map, linear_eigen, torus_distance, wrap_delta
from anosov_lab.unstable_geometry import (
    bracket,
    curve_lengths,
    curve_to_csv,
    entropy_estimate,
    grow_curve,
    holonomy_cs,
    holonomy_u,
    quasi_isometry_constant,
    rectangle,
    u_chart,
    u_gap,
)

points = arrays(np.float64, 3, elements=st.floats(0.0, 1.0, exclude_max=True))
# brackets sit up to ~7x farther out than y (nearly parallel eigenlines)
offsets = arrays(np.float64, 3, elements=st.floats(-0.02, 0.02))
EIG = linear_eigen(default_map(0.0).A)
LN_U = float(np.log(EIG.values[2]))


def test_linear_chart_is_a_straight_unit_speed_line():
    f = default_map(0.0)
    x = np.array([0.2, 0.7, 0.1])
    ch = u_chart(f, x)
    t = np.linspace(-0.1, 0.1, 9)
    P = ch.point(t)
    eu = EIG.right[:, 2] / np.linalg.norm(EIG.right[:, 2])
    D = P - x
    assert np.allclose(np.abs(D @ eu), np.abs(t), atol=1e-12)
    assert np.allclose(D - np.outer(D @ eu, eu), 0.0, atol=1e-12)
    assert np.allclose(ch.speed(t), 1.0, atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(points, st.floats(-0.05, 0.05))
def test_chart_passes_base_and_follows_e_u(x, t):
    f = default_map(0.05)
    ch = u_chart(f, x)
    assert torus_distance(ch.point(np.array([0.0]))[0], x) < 1e-13
    h = 1e-6
    P = ch.point(np.array([t - h, t, t + h]))
    tang = (P[2] - P[0]) / np.linalg.norm(P[2] - P[0])
    eu = splitting_frames(f, P[1] - np.floor(P[1])).e_u[0]
    assert min(np.linalg.norm(tang - eu), np.linalg.norm(tang + eu)) < 1e-6


def test_linear_bracket_is_eigen_decomposition():
    f = default_map(0.0)
    x, y = np.array([0.31, 0.52, 0.47]), np.array([0.33, 0.5, 0.45])
    coef = np.linalg.solve(EIG.right, wrap_delta(x - y))
    expect = (y + coef[2] * EIG.right[:, 2]) % 1.0
    # root solve stops at a relative parameter tolerance of 1e-13
    assert torus_distance(bracket(f, x, y), expect) < 1e-10


@settings(max_examples=15, deadline=None)
@given(points, offsets)
def test_bracket_lies_on_both_leaves(x, d):
    f = default_map(0.05)
    y = (x + d) % 1.0
    z = bracket(f, x, y)
    # on W^cs(x): u-gap vanishes; [x, z] = z since z is on W^cs(x) and W^u(z)
    zl = x + wrap_delta(z - x)
    assert abs(u_gap(f, zl[None], x[None])[0]) < 1e-10
    assert torus_distance(bracket(f, x, z), z) < 1e-10
    assert torus_distance(bracket(f, x, x), x) < 1e-10
    assert np.all((z >= 0) & (z < 1))


def test_bracket_rejects_far_points():
    with pytest.raises(NoIntersection):
        bracket(default_map(0.05), np.zeros(3), np.full(3, 0.4))


def test_holonomy_roundtrips():
    f = default_map(0.05)
    R = rectangle(f, np.array([0.3, 0.4, 0.2]), 0.05, 0.05)
    x = R.center
    y = R.info["cs_points"][0] % 1.0
    ch = u_chart(f, x)
    pts = ch.point(np.linspace(-0.04, 0.04, 7))
    back = holonomy_cs(f, R, y, x, holonomy_cs(f, R, x, y, pts))
    assert torus_distance(back, pts % 1.0).max() < 1e-9
    z = R.info["u_ends"][1] % 1.0
    Q = (x + 0.02 * np.stack([EIG.right[:, 1], EIG.right[:, 0], -EIG.right[:, 1]])) % 1.0
    from anosov_lab.unstable_geometry import cs_project
    Q = cs_project(f, x, Q) % 1.0
    back = holonomy_u(f, R, z, x, holonomy_u(f, R, x, z, Q))
    assert torus_distance(back, Q).max() < 1e-8


def test_linear_lengths_scale_exactly():
    _, L, _, _ = curve_lengths(default_map(0.0), np.array([0.1, 0.2, 0.3]), 0.05, 6)
    assert np.allclose(L, 0.1 * EIG.values[2] ** np.arange(7), rtol=1e-10)
    est = entropy_estimate(default_map(0.0), np.array([0.1, 0.2, 0.3]), 0.05, 8)
    assert abs(est.value - LN_U) < 1e-10


def test_perturbed_entropy_close_to_ln_lambda_u():
    est = entropy_estimate(default_map(0.05), np.array([0.3, 0.4, 0.2]), 0.05, 10)
    assert abs(est.value - LN_U) < 0.03


def test_curve_polyline_matches_streamed_length(tmp_path):
    f = default_map(0.05)
    c = grow_curve(f, np.array([0.6, 0.1, 0.8]), 0.05, 4)
    assert c.cumulative_length[-1] == pytest.approx(c.level_lengths[-1], rel=1e-12)
    # chord distance never exceeds arclength; the ratio stays bounded
    q = quasi_isometry_constant(c)
    assert 0 < q < 10
    curve_to_csv(c, tmp_path / "c.csv")
    rows = list(csv.reader(open(tmp_path / "c.csv")))
    assert rows[0] == ["x", "y", "z", "cumulative_length"] and len(rows) == len(c.vertices) + 1


def test_curve_budget():
    with pytest.raises(BudgetExceeded):
        grow_curve(default_map(0.05), np.array([0.6, 0.1, 0.8]), 0.05, 12, budget=1000)
