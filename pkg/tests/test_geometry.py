# test_geometry.py
"""Conformal-linear maps, isometries, lattices and discrete groups."""

import numpy as np
import pytest

from geometry import (ConformalLinear, DiscreteGroup, Isometry, Lattice, check_group_invariance,
                      chordal_distance, compose, conjugate, extract_linear_part, infinity_point,
                      lattice_points_within, orthogonal_order, planar_rotation, point_group_order,
                      to_sphere)
from infspace import linear_map
from qr_errors import GeometryError, NoFiniteOrder, NonConformal


class TestConformalLinear:
    def test_from_complex_matches_multiplication(self):
        M = ConformalLinear.from_complex(1 + 1j)
        assert M.scale == pytest.approx(np.sqrt(2.0))
        np.testing.assert_allclose(M.matrix, [[1.0, -1.0], [1.0, 1.0]], atol=1e-14)

    def test_rejects_non_orthogonal_part(self):
        with pytest.raises(GeometryError):
            ConformalLinear(2.0, np.diag([1.0, 2.0]))

    def test_rejects_non_positive_scale(self):
        with pytest.raises(GeometryError):
            ConformalLinear(0.0, np.eye(2))

    def test_power_and_inverse(self):
        M = ConformalLinear.from_complex(1 + 1j)
        np.testing.assert_allclose(M.power(8).matrix, 16.0 * np.eye(2), atol=1e-12)
        np.testing.assert_allclose(M.power(-1).compose(M).matrix, np.eye(2), atol=1e-14)

    def test_three_dimensional_rotation(self):
        M = ConformalLinear.from_axis_angle(2.0, np.pi / 2, axis=(0, 0, 1), n=3)
        np.testing.assert_allclose(M(np.array([1.0, 0.0, 0.0])), [0.0, 2.0, 0.0], atol=1e-14)


class TestIsometry:
    def test_compose_is_function_composition(self, rng):
        g1 = Isometry(planar_rotation(np.pi / 2), np.array([1.0, 0.0]))
        g2 = Isometry.translation([0.0, 2.0])
        x = rng.normal(size=(20, 2))
        np.testing.assert_allclose(compose(g1, g2)(x), g1(g2(x)), atol=1e-14)

    def test_inverse(self, rng):
        g = Isometry(planar_rotation(0.3), np.array([1.0, -2.0]))
        x = rng.normal(size=(20, 2))
        np.testing.assert_allclose(g.inverse()(g(x)), x, atol=1e-13)

    def test_conjugate_scales_translation(self):
        g = conjugate(ConformalLinear.dilation(2.0, 2), Isometry.translation([0.0, 1.5]))
        assert g.is_translation()
        np.testing.assert_allclose(g.shift, [0.0, 3.0])

    def test_dimension_mismatch(self):
        with pytest.raises(GeometryError):
            Isometry.identity(2).compose(Isometry.identity(3))


class TestLattice:
    def test_points_within_unit_radius(self):
        points = Lattice(np.eye(2)).points_within(1.0)
        assert len(points) == 5
        np.testing.assert_array_equal(points[0], [0.0, 0.0])
        norms = np.linalg.norm(points, axis=1)
        assert np.all(np.diff(norms) >= 0)

    def test_points_within_includes_boundary(self):
        assert len(Lattice(np.eye(2)).points_within(np.sqrt(2.0))) == 9

    def test_lattice_points_within_radius_two(self):
        points = lattice_points_within(Lattice(np.eye(2)), 2.0)
        assert len(points) == 13
        assert np.max(np.linalg.norm(points, axis=1)) == 2.0

    def test_dependent_basis_rejected(self):
        with pytest.raises(GeometryError):
            Lattice([[1.0, 0.0], [2.0, 0.0]])

    def test_nearest_and_contains(self):
        lattice = Lattice(np.eye(2))
        np.testing.assert_allclose(lattice.nearest(np.array([[0.4, 1.6]])), [[0.0, 2.0]])
        assert lattice.contains(np.array([3.0, -1.0]))
        assert not lattice.contains(np.array([0.5, 0.0]))

    def test_rank_deficient_complement(self):
        lattice = Lattice([[0.0, 2.0 * np.pi]])
        assert lattice.rank == 1
        np.testing.assert_allclose(np.abs(lattice.complement), [1.0, 0.0], atol=1e-14)


class TestDiscreteGroup:
    def test_cos_group_membership(self, cos_map):
        G = cos_map.group
        assert point_group_order(G) == 2
        assert G.contains(Isometry(-np.eye(2), np.array([2.0 * np.pi, 0.0])))
        assert not G.contains(Isometry(planar_rotation(np.pi / 2), np.zeros(2)))
        assert not G.contains(Isometry.translation([np.pi, 0.0]))

    def test_zorich_group_accepts_three_rejects_two(self, zorich_map):
        assert point_group_order(zorich_map.group) == 2
        assert check_group_invariance(ConformalLinear.dilation(3.0, 3), zorich_map.group)
        assert not check_group_invariance(ConformalLinear.dilation(2.0, 3), zorich_map.group)

    def test_exp_group_invariance(self, exp_map, doubling):
        assert check_group_invariance(doubling, exp_map.group)
        assert not check_group_invariance(ConformalLinear.from_complex(2j), exp_map.group)

    def test_branch_set_distance(self, cos_map):
        x = np.array([[np.pi, 0.5], [0.3, 0.0]])
        np.testing.assert_allclose(cos_map.group.branch_set_distance(x), [0.5, 0.3], atol=1e-12)

    def test_min_orbit_separation(self):
        G = DiscreteGroup.from_lattice(Lattice(4.0 * np.eye(2)), [Isometry(-np.eye(2), np.zeros(2))])
        assert G.min_orbit_separation(np.array([1.0, 1.0])) == pytest.approx(2.0 * np.sqrt(2.0))


class TestExtendedSpace:
    def test_chordal_distance_at_infinity(self):
        inf = infinity_point(2)
        assert chordal_distance(inf, inf) == 0.0
        assert chordal_distance(np.zeros(2), inf) == pytest.approx(2.0)
        np.testing.assert_allclose(to_sphere(np.zeros(2)), [0.0, 0.0, -1.0])


class TestLinearPart:
    def test_recovers_conformal_map(self):
        M = ConformalLinear.from_complex(1 + 1j)
        extracted = extract_linear_part(M, Lattice(np.eye(2)))
        np.testing.assert_allclose(extracted.matrix, M.matrix, atol=1e-12)

    def test_rank_deficient_lattice(self, exp_map, doubling):
        extracted = extract_linear_part(doubling, exp_map.group.lattice)
        np.testing.assert_allclose(extracted.matrix, 2.0 * np.eye(2), atol=1e-12)

    def test_orientation_reversing_extension(self, exp_map):
        reflected = linear_map(np.diag([-2.0, 2.0]))
        extracted = extract_linear_part(reflected, exp_map.group.lattice, orientation=-1)
        np.testing.assert_allclose(extracted.matrix, np.diag([-2.0, 2.0]), atol=1e-12)
        assert np.linalg.det(extracted.orth) == pytest.approx(-1.0)
        np.testing.assert_allclose(extract_linear_part(reflected, exp_map.group.lattice).matrix,
                                   2.0 * np.eye(2), atol=1e-12)

    def test_orientation_reversing_in_three_dimensions(self, zorich_map):
        reflected = linear_map(np.diag([3.0, 3.0, -3.0]))
        extracted = extract_linear_part(reflected, zorich_map.group.lattice, orientation=-1)
        np.testing.assert_allclose(extracted.matrix, np.diag([3.0, 3.0, -3.0]), atol=1e-12)

    def test_orientation_must_be_a_sign(self):
        with pytest.raises(ValueError):
            extract_linear_part(ConformalLinear.dilation(2.0, 2), Lattice(np.eye(2)), orientation=0)

    def test_rejects_non_conformal(self):
        with pytest.raises(NonConformal):
            extract_linear_part(linear_map(np.diag([2.0, 3.0])), Lattice(np.eye(2)))

    def test_requires_origin_fixed(self):
        with pytest.raises(GeometryError):
            extract_linear_part(lambda x: np.asarray(x) + 1.0, Lattice(np.eye(2)))


class TestOrders:
    def test_eighth_turn(self):
        assert orthogonal_order(planar_rotation(np.pi / 4)) == 8

    def test_irrational_rotation(self):
        with pytest.raises(NoFiniteOrder):
            orthogonal_order(planar_rotation(1.0), kmax=50)
