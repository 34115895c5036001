# test_schroder.py
"""Closed-form and implicit Schroder solutions, Lattes fits and the conjugacy iteration."""

import numpy as np
import pytest

from automorphic import WeierstrassTypeMap
from geometry import (ConformalLinear, DiscreteGroup, Isometry, Lattice, check_group_invariance,
                      chordal_distance, extract_linear_part, from_complex)
from qr_errors import GeometryError, PoorFit
from schroder import (ChebyshevMap, ImplicitUqrMap, LattesFit, LattesMap, PowerMap, RationalMap, Twist,
                      UqrMap, conjugacy_iteration, construct_nonlinear_A, equivariance_residual,
                      fit_lattes_rational, group_images, lattes_normal_form, rational_fixed_points,
                      schroder_residual, smooth_bump, uqr_eval)


class BranchEcho(UqrMap):
    """h(M(hint)): agrees with the Schroder equation only when the hint is x itself."""

    def __init__(self, h, M):
        self.h = h
        self.M = M
        self.name = 'echo'

    @property
    def dim(self):
        return self.h.dim

    def __call__(self, y, hint=None):
        return self.h(self.M(hint))


@pytest.fixture
def zorich_f(zorich_map):
    return ImplicitUqrMap(zorich_map, ConformalLinear.dilation(3.0, 3))


@pytest.fixture
def half_turn_group():
    return DiscreteGroup.from_lattice(Lattice(4.0 * np.eye(2)), [Isometry(-np.eye(2), np.zeros(2))],
                                      name='conjugacy')


class TestClosedForms:
    def test_power_map_solves_schroder(self, exp_map, doubling):
        assert schroder_residual(PowerMap(2), exp_map, doubling) <= 1e-12

    def test_chebyshev_solves_schroder(self, cos_map, doubling):
        assert schroder_residual(ChebyshevMap(2), cos_map, doubling) <= 1e-12

    def test_chebyshev_coefficients(self):
        w = np.array([0.3 + 0.1j, -0.5 + 0j])
        np.testing.assert_allclose(ChebyshevMap(3).complex_map(w), 4 * w ** 3 - 3 * w, atol=1e-14)

    def test_iterate(self):
        y = from_complex(np.array([0.5 + 0.5j]))
        np.testing.assert_allclose(PowerMap(2).iterate(3)(y), from_complex(np.array([(0.5 + 0.5j) ** 8])),
                                   atol=1e-15)


class TestImplicit:
    def test_agrees_with_power_map(self, exp_map, doubling, rng):
        w = rng.uniform(0.3, 2.0, 50) * np.exp(1j * rng.uniform(-np.pi, np.pi, 50))
        y = from_complex(w)
        implicit = ImplicitUqrMap(exp_map, doubling)
        np.testing.assert_allclose(implicit(y), PowerMap(2)(y), atol=1e-10)

    def test_rejects_incompatible_multiplier(self, exp_map):
        with pytest.raises(GeometryError):
            ImplicitUqrMap(exp_map, ConformalLinear.from_complex(2j))

    def test_zorich_schroder_residual(self, zorich_map, zorich_f):
        assert schroder_residual(zorich_f, zorich_map, zorich_f.M, samples=200) <= 1e-6

    def test_group_images_leave_h_unchanged(self, zorich_map, rng):
        low, high = zorich_map.sample_box
        x = rng.uniform(low, high, size=(100, 3))
        images = group_images(zorich_map, x, rng)
        assert np.all(np.linalg.norm(images - x, axis=-1) > 1e-6)
        assert np.max(chordal_distance(zorich_map(images), zorich_map(x))) <= 1e-12

    def test_residual_detects_branch_dependence(self, exp_map):
        M = ConformalLinear.dilation(1.5, 2)
        assert schroder_residual(BranchEcho(exp_map, M), exp_map, M) > 0.1

    def test_zorich_uqr_eval_is_independent_of_branch(self, zorich_map, zorich_f):
        x = np.array([[0.3, 0.2, 0.1]])
        y = zorich_map(x)
        expected = zorich_map(3.0 * x)
        other = np.array([[2.0 - 0.3 + 4.0, 2.0 - 0.2, 0.1]])
        for hint in (x, other):
            np.testing.assert_allclose(uqr_eval(zorich_f, y, hint), expected, atol=1e-9)

    def test_iterate_matches_repeated_steps(self, zorich_map, zorich_f, rng):
        x = rng.uniform(-0.3, 0.3, size=(20, 3))
        y = zorich_map(x)
        once, hint = zorich_f.step(y, x)
        twice, _ = zorich_f.step(once, hint)
        direct = zorich_f.iterate(2)(y, hint=x)
        assert np.max(chordal_distance(direct, twice)) <= 1e-7
        assert zorich_f.iterate(2).M.scale == pytest.approx(9.0)

    def test_squared_multiplier_keeps_group_invariance(self, zorich_map, p_map):
        assert check_group_invariance(ConformalLinear.dilation(3.0, 3).power(2), zorich_map.group)
        assert check_group_invariance(ConformalLinear.from_complex(1 + 1j).power(2), p_map.group)
        assert not check_group_invariance(ConformalLinear.dilation(2.0, 3).power(2), zorich_map.group)

    @pytest.mark.slow
    def test_lattes_residual_from_other_cells(self, p_map):
        f = ImplicitUqrMap(p_map, ConformalLinear.from_complex(1 + 1j))
        assert schroder_residual(f, p_map, f.M, samples=100) <= 1e-6

    def test_uqr_eval_is_independent_of_branch(self, cos_map, doubling):
        x = np.array([[0.4, 0.3]])
        y = cos_map(x)
        f = ImplicitUqrMap(cos_map, doubling)
        expected = ChebyshevMap(2)(y)
        for hint in (x, np.array([[2.0 * np.pi - 0.4, -0.3]])):
            np.testing.assert_allclose(uqr_eval(f, y, hint), expected, atol=1e-10)


class TestLattes:
    def test_normal_form_fixed_points(self):
        f = LattesMap()
        points = rational_fixed_points(f)
        finite = points[np.isfinite(points)]
        assert len(finite) == 2
        assert np.any(np.isinf(points))
        np.testing.assert_allclose(f.complex_map(finite), finite, atol=1e-12)
        np.testing.assert_allclose(finite ** 2, 1.0 / (2j - 1.0), atol=1e-12)

    def test_value_at_infinity(self):
        assert np.isinf(LattesMap().value_at_infinity())
        assert RationalMap([1.0], [0.0, 1.0]).value_at_infinity() == 0

    def test_normal_form_coefficient_from_exact_map(self):
        rational = RationalMap([1.0, 0.0, 1.0], [0.0, 2j])
        fit = LattesFit(rational, 0.0, 0.0, 1.0, 0)
        assert lattes_normal_form(fit) == pytest.approx(1 / 2j)

    def test_normal_form_rejects_even_part(self):
        fit = LattesFit(RationalMap([1.0, 1.0, 1.0], [0.0, 1.0]), 0.0, 0.0, 1.0, 0)
        with pytest.raises(PoorFit):
            lattes_normal_form(fit)

    @pytest.mark.slow
    def test_fit_recovers_normal_form(self):
        h = WeierstrassTypeMap()
        fit = fit_lattes_rational(h, ConformalLinear.from_complex(1 + 1j), 2)
        assert fit.holdout_residual <= 1e-6
        assert abs(lattes_normal_form(fit) - 1 / 2j) <= 1e-6
        assert schroder_residual(fit.rational, h, ConformalLinear.from_complex(1 + 1j)) <= 1e-6

    @pytest.mark.slow
    def test_fit_of_half_turn_is_identity(self, p_map):
        fit = fit_lattes_rational(p_map, ConformalLinear.from_complex(-1.0 + 0j), 1)
        assert fit.holdout_residual <= 1e-9
        w = np.array([0.5 + 0.2j, -1.5 + 2.0j])
        np.testing.assert_allclose(fit.rational.complex_map(w), w, atol=1e-9)

    @pytest.mark.slow
    def test_fit_of_doubling_has_degree_four(self, p_map):
        fit = fit_lattes_rational(p_map, ConformalLinear.dilation(2.0, 2), 4)
        assert fit.holdout_residual <= 1e-6
        assert fit.rational.degree == 4
        assert abs(fit.denominator[3] - 4.0) <= 1e-6


class TestTwist:
    def test_smooth_bump_profile(self):
        values = smooth_bump(np.array([0.0, 0.4, 0.6, 0.8, 1.0]), 0.4)
        np.testing.assert_allclose(values[[0, 1, 3, 4]], [1.0, 1.0, 0.0, 0.0])
        assert 0.0 < values[2] < 1.0

    def test_equivariance_and_linear_part(self, half_turn_group):
        M = ConformalLinear.dilation(2.0, 2)
        A = construct_nonlinear_A(half_turn_group, M, Twist([1.0, 1.0], 0.4, np.pi / 3))
        np.testing.assert_allclose(A(np.zeros(2)), [0.0, 0.0], atol=1e-15)
        assert equivariance_residual(A, half_turn_group, M) <= 1e-9
        np.testing.assert_allclose(extract_linear_part(A, half_turn_group.lattice).matrix,
                                   2.0 * np.eye(2), atol=1e-12)

    def test_twist_is_not_linear(self, half_turn_group):
        M = ConformalLinear.dilation(2.0, 2)
        A = construct_nonlinear_A(half_turn_group, M, Twist([1.0, 1.0], 0.4, np.pi / 3))
        x = np.array([[1.1, 1.0]])
        assert np.linalg.norm(A(x) - M(x)) > 1e-3

    def test_overlapping_twist_rejected(self, half_turn_group):
        with pytest.raises(GeometryError):
            construct_nonlinear_A(half_turn_group, ConformalLinear.dilation(2.0, 2),
                                  Twist([1.0, 1.0], 0.5, np.pi / 3))


class TestConjugacyIteration:
    def test_linear_map_converges_immediately(self, half_turn_group):
        M = ConformalLinear.dilation(2.0, 2)
        report, iota = conjugacy_iteration(M, M, 4.0, lattice=half_turn_group.lattice)
        assert report.converged
        assert report.k_final == 0
        assert report.residual_conj <= 1e-12
        assert report.residual_lattice <= 1e-12

    def test_requires_repelling_multiplier(self):
        M = ConformalLinear.dilation(1.0, 2)
        with pytest.raises(ValueError):
            conjugacy_iteration(M, M, 4.0)

    @pytest.mark.slow
    def test_twisted_map_converges_geometrically(self, half_turn_group):
        M = ConformalLinear.dilation(2.0, 2)
        A = construct_nonlinear_A(half_turn_group, M, Twist([1.0, 1.0], 0.4, np.pi / 3))
        report, _ = conjugacy_iteration(A, M, 4.0, lattice=half_turn_group.lattice)
        assert report.converged
        assert report.decay_ratio <= 0.55
        assert report.residual_conj <= 1e-8
        assert report.residual_lattice <= 1e-10
        assert list(report.to_frame().columns) == ['k', 'sup_step']
