import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import jv

from anosov_lab.errors import NormalizationDegenerate, Underflow
from anosov_lab.margulis import u_density_iterate
from anosov_lab.resonances import (
    FourierForm,
    assemble_pullback,
    assemble_transfer,
    co_resonant_state,
    leading_spectrum,
    no_jordan_witness,
    power_pullback,
    projector_trace_measure,
    resonant_state,
    restrict_to_leaf_compare,
)
from anosov_lab.thermo import TrigObservable
from anosov_lab.torus_maps import default_map, linear_eigen

F0, F1 = default_map(0.0), default_map(0.05)
A = F0.A.astype(float)
EIG = linear_eigen(F0.A)
LAM = EIG.values


def test_constant_blocks_at_zero_epsilon():
    assert np.allclose(assemble_transfer(F0, 0, 3, 16).constant_block(), [[1.0]], atol=1e-13)
    w = np.sort(np.linalg.eigvals(assemble_transfer(F0, 2, 3, 16).constant_block()).real)
    assert np.allclose(w, LAM, atol=1e-12)


modes = st.tuples(*[st.integers(-1, 1)] * 3)


@settings(max_examples=20, deadline=None)
@given(modes, st.integers(0, 2))
def test_linear_pullback_is_the_lattice_action(m, a):
    K = 6
    P, _ = assemble_pullback(F0, 1, K, 28)
    v = FourierForm.from_modes(1, K, {(m, a): 1.0})
    out = FourierForm.from_vector(1, K, P @ v.vector)
    target = tuple(int(q) for q in F0.A.T @ np.array(m))
    if max(abs(q) for q in target) > K:
        # the image mode leaves the truncation box
        assert not np.any(out.vector)
        return
    # e_m dx_a pulls back to e_{A^T m} sum_b A[a, b] dx_b
    for b in range(3):
        assert out.coefficient(target, b) == pytest.approx(A[a, b], abs=1e-13)
    assert np.abs(out.vector).sum() == pytest.approx(np.abs(A[a]).sum(), abs=1e-12)


@pytest.mark.parametrize("n", [(0, 1, 0), (1, 2, 0), (0, -3, 1)])
def test_pullback_coefficients_are_bessel(n):
    # e_n o f = e_{A^T n} exp(2 pi i eps n_2 sin 2 pi x_3), a Jacobi-Anger series
    K, eps = 8, 0.05
    P, _ = assemble_pullback(F1, 0, K, 40)
    v = FourierForm.from_modes(0, K, {(n, 0): 1.0})
    out = FourierForm.from_vector(0, K, P @ v.vector)
    base = F1.A.T @ np.array(n)
    for k in range(-3, 4):
        m = tuple(int(q) for q in base + np.array([0, 0, k]))
        if max(abs(q) for q in m) <= K:
            assert abs(out.coefficient(m) - jv(k, 2 * np.pi * eps * n[1])) < 1e-12


def test_linear_leading_eigenvalue_is_lambda_u():
    spec = leading_spectrum(assemble_transfer(F0, 2, 4, 20), 4)
    assert abs(spec.eigenvalues[0] - LAM[2]) < 1e-10


def test_perturbed_leading_eigenvalue_and_witness():
    T = assemble_transfer(F1, 2, 6, 28)
    r = leading_spectrum(T, 6)
    l_ = leading_spectrum(T, 6, left=True)
    assert abs(np.log(abs(r.eigenvalues[0])) - np.log(LAM[2])) < 0.03
    assert abs(r.eigenvalues[0].imag) < 1e-8
    assert abs(r.eigenvalues[0] - l_.eigenvalues[0]) < 1e-9
    assert no_jordan_witness(r.vectors[0], l_.vectors[0]) > 1e-2


def test_power_pullback_rayleigh_and_underflow():
    K = 4
    seed = FourierForm.from_modes(1, K, {((0, 0, 0), 0): 1.0, ((0, 0, 0), 2): 0.5})
    out = power_pullback(F0, seed, 40, quad_n=20)
    assert out.info["growth"][-1] == pytest.approx(LAM[2], rel=1e-10)
    # limit direction: constant 1-form along the lambda_u eigenvector of A^T
    w, V = np.linalg.eig(A.T)
    lu = V[:, np.argmax(np.abs(w))].real
    c = out.coefficients[(len(out.coefficients) - 1) // 2]
    assert np.allclose(np.abs(c.real) / np.linalg.norm(c), np.abs(lu) / np.linalg.norm(lu), atol=1e-10)
    ws = V[:, np.argmin(np.abs(w))].real
    with pytest.raises(Underflow):
        power_pullback(F0, FourierForm.from_modes(1, K, {((0, 0, 0), i): ws[i] for i in range(3)}), 20,
                       quad_n=20)


def test_projector_is_haar_at_zero_epsilon():
    _, theta = resonant_state(F0, 4, 20)
    _, nu = co_resonant_state(F0, 4, 20)
    assert projector_trace_measure(theta, nu, TrigObservable.one()) == pytest.approx(1.0, abs=1e-12)
    for g in (TrigObservable.cos((1, 0, 0)), TrigObservable.sin((3, -1, 2))):
        assert abs(projector_trace_measure(theta, nu, g)) < 1e-6


def test_projector_rejects_mismatched_forms():
    _, theta = resonant_state(F0, 3, 16)
    zero = FourierForm.from_modes(1, 3, {((1, 0, 0), 0): 1.0})
    with pytest.raises(NormalizationDegenerate):
        projector_trace_measure(theta, zero, TrigObservable.one())
    with pytest.raises(ValueError):
        projector_trace_measure(theta, theta, TrigObservable.one())


def test_co_resonant_state_restricts_to_leaf_density():
    _, nu = co_resonant_state(F0, 3, 16)
    d = u_density_iterate(F0, np.array([0.3, 0.4, 0.2]), 0.05, 4, cells=8)
    assert restrict_to_leaf_compare(F0, nu, None, d) < 1e-8
