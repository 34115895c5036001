# test_automorphic.py
"""Automorphic families: evaluation, inverse branches, branch images and automorphy."""

import numpy as np
import pytest

from automorphic import evaluate_h, local_inverse_h, strong_automorphy_check, weierstrass_p, zorich_eval
from geometry import Lattice, from_complex
from qr_errors import BranchImage


class TestExpType:
    def test_automorphy(self, exp_map):
        assert strong_automorphy_check(exp_map, samples=200) <= 1e-9

    def test_local_inverse_picks_hinted_branch(self, exp_map):
        x = np.array([[0.3, 0.2 + 2.0 * np.pi]])
        np.testing.assert_allclose(exp_map.local_inverse(exp_map(x), x), x, atol=1e-9)

    def test_no_branch_images(self, exp_map):
        assert not np.any(exp_map.is_branch_image(np.array([[1.0, 0.0], [-1.0, 0.0]])))

    def test_closed_form_has_zero_bound(self, exp_map):
        values, bound = evaluate_h(exp_map, np.array([[0.0, np.pi]]), with_bound=True)
        np.testing.assert_allclose(values, [[-1.0, 0.0]], atol=1e-15)
        assert np.all(bound == 0.0)

    def test_local_inverse_h(self, exp_map):
        x = np.array([[-0.4, 1.0 - 2.0 * np.pi]])
        np.testing.assert_allclose(local_inverse_h(exp_map, evaluate_h(exp_map, x), x), x, atol=1e-9)


class TestCosType:
    def test_automorphy(self, cos_map):
        assert strong_automorphy_check(cos_map, samples=200) <= 1e-9

    def test_branch_images_are_plus_minus_one(self, cos_map):
        flags = cos_map.is_branch_image(np.array([[1.0, 0.0], [-1.0, 0.0], [0.5, 0.0]]))
        np.testing.assert_array_equal(flags, [True, True, False])

    def test_inverse_refuses_branch_image(self, cos_map):
        with pytest.raises(BranchImage):
            cos_map.local_inverse(np.array([[1.0, 0.0]]), np.zeros((1, 2)))

    def test_local_inverse(self, cos_map):
        x = np.array([[0.7, 0.4], [-2.0, -0.3]])
        np.testing.assert_allclose(cos_map.local_inverse(cos_map(x), x), x, atol=1e-9)


class TestWeierstrass:
    def test_evaluate_h_reports_tail_bound(self, p_map):
        x = np.array([[0.3, 0.2], [-0.1, 0.45]])
        values, bound = evaluate_h(p_map, x, with_bound=True)
        np.testing.assert_array_equal(values, p_map(x))
        assert np.all(np.isfinite(bound)) and np.all(bound >= 0.0)

    def test_methods_agree_within_bounds(self):
        lattice = Lattice(np.eye(2))
        z = np.array([0.3 + 0.2j, -0.1 + 0.45j])
        direct = weierstrass_p(z, lattice, 40, 'direct')
        rows = weierstrass_p(z, lattice, 8, 'rows')
        assert np.all(np.abs(direct.value - rows.value) <= direct.tail_bound + rows.tail_bound)

    def test_square_lattice_symmetries(self):
        lattice = Lattice(np.eye(2))
        z = np.array([0.3 + 0.2j, 0.15 - 0.35j])
        p = weierstrass_p(z, lattice, 8, 'rows').value
        np.testing.assert_allclose(weierstrass_p(-z, lattice, 8, 'rows').value, p, rtol=1e-10)
        np.testing.assert_allclose(weierstrass_p(1j * z, lattice, 8, 'rows').value, -p, rtol=1e-10)

    def test_pole_at_lattice_points(self):
        value = weierstrass_p(np.array([0j, 1 + 1j]), Lattice(np.eye(2)), 8, 'rows').value
        assert np.all(np.isinf(value))

    def test_truncation_guard(self):
        with pytest.raises(ValueError):
            weierstrass_p(np.array([0.3j]), Lattice(np.eye(2)), 4)

    def test_half_period_values_are_branch_images(self, p_map):
        values = from_complex(p_map.half_period_values())
        assert np.all(p_map.is_branch_image(values))

    @pytest.mark.slow
    def test_automorphy(self, p_map):
        assert strong_automorphy_check(p_map, samples=200) <= 1e-9


class TestZorich:
    def test_values_on_the_beam(self):
        points = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.5]])
        expected = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 0.0, np.exp(1.5)]])
        np.testing.assert_allclose(zorich_eval(points), expected, atol=1e-14)

    def test_modulus_is_exponential_of_height(self, zorich_map, rng):
        x = rng.uniform(-3.0, 3.0, size=(50, 3))
        np.testing.assert_allclose(np.linalg.norm(zorich_map(x), axis=1), np.exp(x[:, 2]), rtol=1e-13)

    def test_automorphy(self, zorich_map):
        assert strong_automorphy_check(zorich_map, samples=300) <= 1e-6

    def test_local_inverse(self, zorich_map):
        x = np.array([[0.3, -0.2, 0.5], [-0.7, 0.1, -0.4]])
        np.testing.assert_allclose(zorich_map.local_inverse(zorich_map(x), x), x, atol=1e-6)

    def test_branch_images_on_diagonal_rays(self, zorich_map):
        y = np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]]) / np.array([[np.sqrt(2.0)], [1.0]])
        np.testing.assert_array_equal(zorich_map.is_branch_image(y), [True, False])
