import numpy as np
import pytest

from distkalman import linalg
from distkalman.rng import Rng

from conftest import random_spd
from property_checks import metric_axiom_margins, spd_property_margins

SQRT2_LN2 = np.sqrt(2.0) * np.log(2.0)


class TestSymmetricEigenvalues:
    def test_identity(self):
        assert np.allclose(linalg.symmetric_eigenvalues(np.eye(3)), [1, 1, 1])

    def test_diagonal_descending(self):
        assert np.allclose(linalg.symmetric_eigenvalues(np.diag([1.0, 4.0])), [4, 1])

    def test_eigenvalue_sum_matches_trace(self, rng):
        m = linalg.sym(rng.standard_normal((5, 5)))
        assert abs(linalg.symmetric_eigenvalues(m).sum() - np.trace(m)) < 1e-10

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            linalg.symmetric_eigenvalues(np.array([[0.0, 1.0], [0.0, 0.0]]))

    def test_rejects_nonsquare(self):
        with pytest.raises(ValueError):
            linalg.symmetric_eigenvalues(np.zeros((2, 3)))


class TestRiemannianDistance:
    def test_zero_at_equal_arguments(self, rng):
        p = random_spd(rng, 4)
        assert linalg.riemannian_distance(p, p) < 1e-10

    def test_scaled_identity(self):
        d = linalg.riemannian_distance(2.0 * np.eye(2), np.eye(2))
        assert abs(d - SQRT2_LN2) < 1e-12

    def test_diagonal_closed_form(self):
        d = linalg.riemannian_distance(np.diag([1.0, 4.0]), np.eye(2))
        assert abs(d - np.log(4.0)) < 1e-12

    def test_symmetric_in_arguments(self, rng):
        p, q = random_spd(rng, 3), random_spd(rng, 3)
        assert abs(linalg.riemannian_distance(p, q)
                   - linalg.riemannian_distance(q, p)) < 1e-10

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            linalg.riemannian_distance(np.eye(2), np.eye(3))

    def test_rejects_non_spd(self):
        with pytest.raises(linalg.NotSpdError):
            linalg.riemannian_distance(np.diag([1.0, -1.0]), np.eye(2))


class TestNorms:
    def test_spectral_norm_identity(self):
        assert linalg.spectral_norm(np.eye(5)) == pytest.approx(1.0)

    def test_spectral_norm_signed_diagonal(self):
        assert linalg.spectral_norm(np.diag([1.0, -3.0])) == pytest.approx(3.0)

    def test_spectral_norm_nilpotent(self):
        assert linalg.spectral_norm([[0.0, 2.0], [0.0, 0.0]]) == pytest.approx(2.0)

    def test_frobenius(self):
        assert linalg.frobenius_norm(np.zeros((3, 3))) == 0.0
        assert linalg.frobenius_norm(np.eye(4)) == pytest.approx(2.0)
        assert linalg.frobenius_norm([[3.0, 4.0], [0.0, 0.0]]) == pytest.approx(5.0)


class TestSpectralRadius:
    def test_identity(self):
        assert linalg.spectral_radius(np.eye(6)) == pytest.approx(1.0)

    def test_rotation(self):
        assert linalg.spectral_radius([[0.0, -1.0], [1.0, 0.0]]) == pytest.approx(1.0)

    def test_scaling_property(self, rng):
        a = rng.standard_normal((8, 8))
        scaled = 0.999 * a / linalg.spectral_radius(a)
        assert abs(linalg.spectral_radius(scaled) - 0.999) < 1e-9

    def test_rejects_nonsquare(self):
        with pytest.raises(ValueError):
            linalg.spectral_radius(np.zeros((2, 3)))


class TestInvertSpd:
    def test_identity(self):
        assert np.allclose(linalg.invert_spd(np.eye(3)), np.eye(3))

    def test_diagonal(self):
        assert np.allclose(linalg.invert_spd(np.diag([2.0, 0.5])), np.diag([0.5, 2.0]))

    def test_residual(self, rng):
        m = random_spd(rng, 6)
        inv = linalg.invert_spd(m)
        resid = linalg.spectral_norm(m @ inv - np.eye(6))
        assert resid < 1e-10 * linalg.spectral_norm(m) * linalg.spectral_norm(inv)

    def test_inversion_invariance_of_metric(self, rng):
        for _ in range(50):
            p, q = random_spd(rng, 4), random_spd(rng, 4)
            d = linalg.riemannian_distance(p, q)
            d_inv = linalg.riemannian_distance(linalg.invert_spd(p), linalg.invert_spd(q))
            assert abs(d - d_inv) < 1e-8

    def test_singular_guard(self):
        with pytest.raises(linalg.SingularMatrixError):
            linalg.invert_spd(np.diag([1.0, 1e-15]))


def test_spd_sqrt_squares_back(rng):
    m = random_spd(rng, 5)
    root = linalg.spd_sqrt(m)
    assert np.allclose(root @ root, m, atol=1e-10)


def test_metric_axioms(rng):
    sym_m, ident_m, tri_m = metric_axiom_margins(rng, trials=200)
    assert sym_m < 1e-8
    assert ident_m < 1e-8
    assert tri_m < 1e-8


def test_spd_metric_properties(rng):
    inv_m, contr_m, diff_m, pert_m = spd_property_margins(rng, trials=200)
    assert inv_m < 1e-8
    assert contr_m < 1e-8
    assert diff_m < 1e-8
    assert pert_m < 1e-8


def test_validate_psd_accepts_boundary():
    assert np.allclose(linalg.validate_psd(np.diag([1.0, 0.0])), np.diag([1.0, 0.0]))
    with pytest.raises(linalg.NotSpdError):
        linalg.validate_psd(np.diag([1.0, -1e-3]))
