# test_infspace.py
"""Mean radius, homogeneity, generalized derivatives and the chain/inverse rules."""

import numpy as np
import pytest

from infspace import (AsymptoticRepresentation, SampledSphereMap, asymptotic_rep_check,
                      chain_rule_check, dilatation_estimate, equivalence_decay, fd_jacobian,
                      fit_homogeneity, generalized_derivative, geometric_scales, image_ball_measure,
                      inverse_formula_check, inverse_rep_check, is_starlike, linear_map, local_degree,
                      local_inverse_map, mean_radius, mean_radius_profile, newton_inverse, power_map,
                      radial_stretch, sphere_grid)
from qr_errors import DegenerateJacobian


@pytest.fixture(scope='module')
def grid():
    return sphere_grid(2, 256)


@pytest.fixture(scope='module')
def identity_sample(grid):
    return SampledSphereMap(grid, grid.nodes, 1.0)



def cubic_tail(f):
    """f plus |x|^3 along the first axis: same infinitesimal space at 0, different map."""
    def perturbed(x):
        x = np.asarray(x, dtype=float)
        return f(x) + np.linalg.norm(x, axis=-1, keepdims=True) ** 3 * np.array([1.0, 0.0])
    return perturbed


class TestGrids:
    def test_circle_nodes_are_unit(self, grid):
        assert grid.count == 256
        np.testing.assert_allclose(np.linalg.norm(grid.nodes, axis=1), 1.0)

    def test_fibonacci_nodes_are_unit(self):
        nodes = sphere_grid(3, 128).nodes
        np.testing.assert_allclose(np.linalg.norm(nodes, axis=1), 1.0)
        assert abs(nodes[:, 2].mean()) < 1e-12

    def test_too_few_nodes(self):
        with pytest.raises(ValueError):
            sphere_grid(2, 32)

    def test_unsupported_dimension(self):
        with pytest.raises(ValueError):
            sphere_grid(4)


class TestJacobians:
    def test_fd_jacobian_of_linear_map(self, rng):
        A = np.array([[2.0, 1.0], [-1.0, 3.0]])
        jac = fd_jacobian(linear_map(A), rng.normal(size=(5, 2)))
        np.testing.assert_allclose(jac, np.broadcast_to(A, (5, 2, 2)), atol=1e-8)

    def test_local_degree(self):
        assert local_degree(power_map(3), np.zeros(2), 0.1) == 3
        assert local_degree(power_map(1), np.array([0.5, 0.5]), 0.1) == 1


class TestInversion:
    def test_newton_reaches_zero_target(self):
        x = newton_inverse(linear_map(np.diag([2.0, 3.0])), np.zeros((2, 2)),
                           np.array([[1e-3, 0.0], [0.0, -1e-3]]))
        np.testing.assert_allclose(x, 0.0, atol=1e-20)

    def test_sampled_inverse_at_centre(self, identity_sample):
        out = identity_sample.inverse(np.array([[0.0, 0.0], [0.3, 0.4], [0.0, 0.0]]))
        np.testing.assert_array_equal(out[[0, 2]], 0.0)
        np.testing.assert_allclose(out[1], [0.3, 0.4], atol=1e-5)
        np.testing.assert_array_equal(identity_sample.inverse(np.zeros(2)), [0.0, 0.0])

    def test_representation_inverse_at_base(self, grid):
        f = linear_map(np.diag([2.0, 1.0]))
        representation = AsymptoticRepresentation.from_map(f, np.zeros(2), geometric_scales(0.1, 6), grid)
        np.testing.assert_array_equal(representation.inverse(representation.base), [0.0, 0.0])
        x = 0.05 * grid.nodes[::32]
        np.testing.assert_allclose(representation.inverse(representation(x)), x, atol=1e-8)

    def test_local_inverse_fixes_centre(self, grid):
        f = radial_stretch(1.5)
        representation = AsymptoticRepresentation.from_map(f, np.zeros(2), geometric_scales(0.01, 6), grid)
        finv = local_inverse_map(f, representation)
        y = np.array([[0.0, 0.0], [0.008, -0.006]])
        x = finv(y)
        np.testing.assert_array_equal(x[0], [0.0, 0.0])
        np.testing.assert_allclose(f(x[1:]), y[1:], atol=1e-12)


class TestMeanRadius:
    def test_power_map_radius(self, grid):
        assert mean_radius(power_map(2), np.zeros(2), 0.1, grid=grid) == pytest.approx(0.01, rel=1e-6)

    def test_linear_map_radius(self, grid):
        r = mean_radius(linear_map(np.diag([2.0, 3.0])), np.zeros(2), 0.2, grid=grid)
        assert r == pytest.approx(0.2 * np.sqrt(6.0), rel=1e-8)

    def test_radial_stretch_radius(self, grid):
        r = mean_radius(radial_stretch(1.5), np.zeros(2), 0.25, grid=grid)
        assert r == pytest.approx(0.25 ** 1.5, rel=1e-5)

    def test_montecarlo_agrees(self, grid):
        f = linear_map(np.diag([2.0, 3.0]))
        quad = mean_radius(f, np.zeros(2), 0.2, 'jacobian', grid)
        counted = mean_radius(f, np.zeros(2), 0.2, 'montecarlo', grid, seed=4577)
        assert abs(quad - counted) / quad <= 0.02

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            mean_radius(power_map(2), np.zeros(2), 0.1, method='guess')

    def test_non_positive_radius(self):
        with pytest.raises(ValueError):
            mean_radius(power_map(2), np.zeros(2), 0.0)


class TestHomogeneity:
    @pytest.mark.parametrize('degree', [2, 3])
    def test_power_map_degree(self, degree, grid):
        profile = mean_radius_profile(power_map(degree), np.zeros(2), t0=0.1, count=8, grid=grid, threads=2)
        assert fit_homogeneity(profile) == pytest.approx(degree, abs=1e-3)

    def test_needs_six_samples(self, grid):
        profile = mean_radius_profile(power_map(2), np.zeros(2), t0=0.1, count=5, grid=grid, threads=1)
        with pytest.raises(ValueError):
            fit_homogeneity(profile)

    def test_scales(self):
        np.testing.assert_allclose(geometric_scales(0.1, 3), [0.1, 0.05, 0.025])


class TestGeneralizedDerivative:
    def test_linear_map_is_simple(self, grid):
        A = np.diag([2.0, 1.0])
        result = generalized_derivative(linear_map(A), np.zeros(2), geometric_scales(0.1, 6), grid)
        assert result.simple
        assert result.d == pytest.approx(1.0, abs=1e-6)
        expected = grid.nodes @ A.T / np.sqrt(2.0)
        np.testing.assert_allclose(result.g.values, expected, atol=1e-6)

    def test_scales_must_be_geometric(self, grid):
        with pytest.raises(ValueError):
            generalized_derivative(power_map(2), np.zeros(2), [0.1, 0.05, 0.02, 0.01], grid)

    def test_asymptotic_representation_of_square_at_one(self, grid):
        table = asymptotic_rep_check(power_map(2), np.array([1.0, 0.0]), grid=grid)
        assert np.all(np.diff(table['ratio']) < 0)
        assert table['ratio'].iloc[-1] <= 1e-3

    def test_representation_shares_infinitesimal_space(self, grid):
        f = cubic_tail(linear_map(np.diag([2.0, 1.0])))
        ts = geometric_scales(0.01, 6)
        of_f = generalized_derivative(f, np.zeros(2), ts, grid)
        representation = AsymptoticRepresentation(np.zeros(2), f(np.zeros(2)), of_f)
        of_representation = generalized_derivative(representation, np.zeros(2), ts, grid)
        assert of_f.simple and of_representation.simple
        assert of_representation.d == pytest.approx(of_f.d, abs=1e-6)
        np.testing.assert_allclose(of_representation.g.values, of_f.g.values, atol=1e-4)

    def test_equivalent_maps_share_infinitesimal_space(self, grid):
        A = np.diag([2.0, 1.0])
        f = cubic_tail(linear_map(A))
        ts = geometric_scales(0.01, 6)
        table = equivalence_decay(linear_map(A), f, np.zeros(2), [1e-1, 1e-2, 1e-3], grid)
        assert np.all(np.diff(table['ratio']) < 0)
        exact = generalized_derivative(linear_map(A), np.zeros(2), ts, grid)
        perturbed = generalized_derivative(f, np.zeros(2), ts, grid)
        np.testing.assert_allclose(perturbed.g.values, exact.g.values, atol=1e-4)

    def test_asymptotic_representation_of_linear_map(self, grid):
        table = asymptotic_rep_check(linear_map(np.diag([2.0, 1.0])), np.zeros(2), grid=grid)
        assert list(table.columns) == ['radius', 'ratio']
        assert table['ratio'].max() <= 1e-6

    def test_equivalence_decay_of_quadratic_perturbation(self, grid):
        A = np.diag([2.0, 1.0])

        def perturbed(x):
            return linear_map(A)(x) + np.sum(np.square(x), axis=-1, keepdims=True) * np.array([1.0, 0.0])

        table = equivalence_decay(linear_map(A), perturbed, np.zeros(2), [1e-1, 1e-2, 1e-3], grid)
        assert np.all(np.diff(table['ratio']) < 0)
        assert table['ratio'].iloc[-1] <= 1e-3


class TestMeasure:
    def test_boundary_measure_of_identity(self, identity_sample):
        assert image_ball_measure(identity_sample).volume == pytest.approx(np.pi, rel=1e-4)

    def test_montecarlo_measure_of_identity(self, identity_sample):
        estimate = image_ball_measure(identity_sample, 'montecarlo', seed=4577, replicates=4, log2_points=12)
        assert estimate.volume == pytest.approx(np.pi, rel=0.02)
        assert estimate.stderr > 0

    def test_identity_is_starlike(self, identity_sample):
        assert is_starlike(identity_sample)

    def test_stretched_samples_are_starlike(self, grid):
        assert is_starlike(SampledSphereMap(grid, grid.nodes @ np.diag([2.0, 1.0]).T / np.sqrt(2.0), 1.0))
        assert is_starlike(SampledSphereMap(grid, power_map(2)(grid.nodes), 2.0))

    def test_inward_rays_are_not_starlike(self, grid):
        assert not is_starlike(SampledSphereMap(grid, grid.nodes, -1.0))


class TestDilatation:
    def test_stretch_dilatation(self):
        estimate = dilatation_estimate(linear_map(np.diag([2.0, 1.0])), ([-1.0, -1.0], [1.0, 1.0]), samples=50)
        assert estimate.K_O == pytest.approx(2.0)
        assert estimate.K_I == pytest.approx(2.0)
        assert estimate.skipped == 0

    def test_conformal_map(self):
        estimate = dilatation_estimate(power_map(2), ([0.5, 0.5], [1.0, 1.0]), samples=50)
        assert estimate.K == pytest.approx(1.0, abs=1e-6)

    def test_zorich_dilatation(self, zorich_map):
        estimate = dilatation_estimate(zorich_map, ([0.3, -0.1, -0.5], [0.7, 0.1, 0.5]), samples=50)
        assert estimate.skipped == 0
        assert 1.0 < estimate.K_O < 4.0
        assert 1.0 < estimate.K_I < 4.0
        assert estimate.K == max(estimate.K_O, estimate.K_I)

    def test_degenerate_everywhere(self):
        with pytest.raises(DegenerateJacobian):
            dilatation_estimate(linear_map(np.zeros((2, 2))), ([-1.0, -1.0], [1.0, 1.0]), samples=10)


@pytest.mark.slow
class TestRules:
    def test_chain_rule_for_powers(self, grid):
        result = chain_rule_check(power_map(2), power_map(3), grid)
        assert result.discrepancy <= 1e-3
        assert result.d_composite == pytest.approx(6.0, abs=1e-3)

    def test_chain_rule_with_stretch(self, grid):
        result = chain_rule_check(power_map(2), radial_stretch(1.5), grid)
        assert result.discrepancy <= 1e-3

    def test_inverse_formula_for_stretch(self, grid):
        result = inverse_formula_check(radial_stretch(1.5), grid)
        assert result.d_inverse == pytest.approx(2.0 / 3.0, abs=1e-3)
        assert result.discrepancy <= 2e-3

    def test_inverse_formula_for_diagonal_matrix(self, grid):
        result = inverse_formula_check(linear_map(np.diag([2.0, 3.0])), grid)
        assert result.d == pytest.approx(1.0, abs=1e-6)
        assert result.d_inverse == pytest.approx(1.0, abs=1e-6)
        assert result.discrepancy <= 1e-6

    def test_chain_rule_for_diagonal_pair(self, grid):
        A = np.diag([2.0, 1.0])
        result = chain_rule_check(linear_map(A), linear_map(A), grid)
        assert result.discrepancy <= 1e-3
        assert result.d_composite == pytest.approx(1.0, abs=1e-6)

    def test_inverse_representation_gap_decays(self, grid):
        table = inverse_rep_check(cubic_tail(radial_stretch(1.5)), np.zeros(2), grid=grid)
        assert list(table['radius']) == [1e-1, 1e-2, 1e-3]
        assert np.all(np.diff(table['ratio']) < 0)
        assert table['ratio'].iloc[-1] <= 1e-3

    def test_inverse_representation_of_stretch(self, grid):
        table = inverse_rep_check(radial_stretch(1.5), np.zeros(2), grid=grid)
        assert table['ratio'].max() <= 1e-3

    def test_zorich_asymptotic_representation(self, zorich_map):
        table = asymptotic_rep_check(zorich_map, np.array([0.5, 0.1, 0.0]), radii=[1e-1, 1e-2, 1e-3],
                                     grid=sphere_grid(3))
        assert np.all(np.diff(table['ratio']) < 0)
        assert table['ratio'].iloc[-1] <= 1e-2
