import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from torusmaf.forms import (Background, FormError, Pencil, class_volume, hermitian_matrix, ma_density,
                            metric_field, min_eigenvalue_field, mixed_class_pairing, reference_form_at,
                            ricci_form)
from torusmaf.grid import HermitianField, ScalarField, complex_hessian, integrate, make_grid, synth


def const_field(g, M):
    M = np.asarray(M, dtype=complex)
    diag = np.stack([np.full(g.shape, M[j, j].real) for j in range(g.n)])
    off = np.full(g.shape, M[0, 1]) if g.n == 2 else None
    return HermitianField(g, diag, off)


def pencil_1d(A0=2.0, Ainf=1.0, N=8):
    g = make_grid(1, N)
    return Pencil(Background.from_parts(g, [[A0]]), Background.from_parts(g, [[Ainf]]),
                  ScalarField.constant(g, 1.0))


def test_background_rejects_nonzero_mean_and_non_hermitian():
    g = make_grid(1, 8)
    with pytest.raises(FormError):
        Background([[1.0]], ScalarField.constant(g, 0.1))
    with pytest.raises(FormError):
        hermitian_matrix([[1, 1j], [1j, 1]], 2)
    # from_parts removes the mean
    assert abs(integrate(Background.from_parts(g, [[1.0]], ScalarField.constant(g, 0.3)).psi0)) < 1e-15


def test_pencil_invariants():
    g = make_grid(1, 8)
    one = Background.from_parts(g, [[1.0]])
    with pytest.raises(FormError):
        Pencil(one, one, ScalarField.constant(g, 2.0))
    with pytest.raises(FormError):
        Pencil(one, Background.from_parts(g, [[2.0]]), ScalarField.constant(g, 1.0))
    bad0 = Background.from_parts(g, [[0.1]], synth(g, [((1, 0), 0.05, 0.0)]))
    with pytest.raises(FormError):
        Pencil(bad0, one, ScalarField.constant(g, 1.0))


def test_reference_form_examples():
    p = pencil_1d()
    b0 = reference_form_at(p, 0.0)
    np.testing.assert_allclose(b0.A, p.omega0.A, atol=1e-15)
    assert reference_form_at(p, math.inf) is p.omegaInf
    assert reference_form_at(p, math.log(2)).A[0, 0].real == pytest.approx(1.5, abs=1e-15)
    with pytest.raises(FormError):
        reference_form_at(p, -0.1)


def test_metric_field_examples():
    g = make_grid(1, 64)
    bg = Background.from_parts(g, [[1.0]])
    assert np.all(metric_field(bg, ScalarField.constant(g, 0.0)).diag == 1.0)
    eps = 0.03
    phi = synth(g, [((1, 0), eps, 0.0)])
    np.testing.assert_allclose(metric_field(bg, phi).diag[0], 1 - eps * np.pi ** 2 * np.cos(2 * np.pi * g.coords()[0]) + 0 * phi.values, atol=1e-12)


def test_metric_field_additivity(rng):
    g = make_grid(2, 8)
    bg = Background.from_parts(g, [[1.5, 0.2j], [-0.2j, 1.0]], synth(g, [((1, 0, 0, 1), 0.01, 0.2)]))
    p1 = synth(g, [((0, 1, 1, 0), 0.02, 0.4)])
    p2 = synth(g, [((1, 1, 0, 0), -0.01, 1.0), ((0, 0, 2, 1), 0.005, 0.0)])
    lhs = metric_field(bg, p1 + p2)
    rhs = metric_field(bg, p1) + complex_hessian(p2)
    np.testing.assert_allclose(lhs.diag, rhs.diag, atol=1e-13)
    np.testing.assert_allclose(lhs.off, rhs.off, atol=1e-13)


def test_ma_density_and_min_eigenvalue_examples():
    g = make_grid(2, 8)
    assert np.allclose(ma_density(const_field(g, np.diag([2.0, 3.0]))).values, 6.0)
    M = [[2, 1j], [-1j, 2]]
    assert np.allclose(ma_density(const_field(g, M)).values, 3.0, atol=1e-15)
    assert np.allclose(min_eigenvalue_field(const_field(g, np.diag([2.0, 3.0]))).values, 2.0)
    assert np.allclose(min_eigenvalue_field(const_field(g, M)).values, 1.0, atol=1e-15)
    g1 = make_grid(1, 64)
    f = synth(g1, [((1, 0), 1.0, 0.0)]) + 1.0
    h1 = HermitianField(g1, f.values[None])
    np.testing.assert_array_equal(ma_density(h1).values, f.values)
    assert float(np.min(min_eigenvalue_field(h1).values)) == pytest.approx(0.0, abs=1e-15)


def test_min_eigenvalue_matches_dense_eigvalsh(rng):
    g = make_grid(2, 8)
    diag = 1 + 0.3 * rng.normal(size=(2,) + g.shape)
    off = 0.4 * (rng.normal(size=g.shape) + 1j * rng.normal(size=g.shape))
    h = HermitianField(g, diag, off)
    ref = np.linalg.eigvalsh(h.as_matrices())[..., 0]
    np.testing.assert_allclose(min_eigenvalue_field(h).values, ref, atol=1e-13)
    np.testing.assert_allclose(ma_density(h).values, np.linalg.det(h.as_matrices()).real, atol=1e-13)


def test_class_volume_examples():
    g = make_grid(2, 8)
    assert class_volume(Background.from_parts(g, np.diag([2.0, 3.0]))) == pytest.approx(6.0)
    g1 = make_grid(1, 64)
    bg = Background.from_parts(g1, [[1.0]], synth(g1, [((1, 0), 0.05, 0.0), ((2, 3), 0.01, 1.0)]))
    assert class_volume(bg) == 1.0
    phi = synth(g1, [((0, 5), 0.02, 0.3)])
    assert abs(integrate(ma_density(metric_field(bg, phi))) - 1.0) <= 1e-10


def test_mixed_class_pairing_examples():
    I = np.eye(2)
    assert mixed_class_pairing(I, I) == pytest.approx(np.linalg.det(2 * I) - 1 - 1)
    assert mixed_class_pairing(np.diag([1.0, 0.0]), np.diag([0.0, 1.0])) == pytest.approx(1.0)
    assert mixed_class_pairing([[0.5]], [[3.0]]) == pytest.approx(0.5)
    with pytest.raises(FormError):
        mixed_class_pairing(I, [[1.0]])


def test_ricci_form_of_constant_density_vanishes():
    g = make_grid(1, 16)
    r = ricci_form(ScalarField.constant(g, 1.0))
    assert not r.diag.any()
    with pytest.raises(FormError):
        ricci_form(ScalarField.constant(g, -1.0))


wave4 = st.tuples(st.tuples(*[st.integers(-3, 3)] * 4), st.floats(-0.05, 0.05), st.floats(0, 6.3))


@settings(max_examples=20, deadline=None)
@given(st.lists(wave4, max_size=4), st.lists(wave4, max_size=4))
def test_property_zero_class_n2(w_bg, w_phi):
    """Adding i ddbar of anything leaves the integrated determinant at the class volume."""
    g = make_grid(2, 8)
    A = np.array([[1.3, 0.2 + 0.1j], [0.2 - 0.1j, 0.9]])
    bg = Background.from_parts(g, A, synth(g, w_bg))
    g_ = metric_field(bg, synth(g, w_phi))
    dense = np.linalg.det(g_.as_matrices()).real
    assert abs(float(np.mean(dense)) - np.linalg.det(A).real) <= 1e-10
