# test_dynamics.py
"""Periodic points, linearizers, multipliers, classification and Julia rasters."""

import numpy as np
import pytest

from config import QR_CONFIG
from dynamics import (CONVERGED, ESCAPED, UNDECIDED, JuliaRaster, build_linearizer, classify_fixed_point,
                      default_radius, distance_to_circle, distance_to_segment, julia_render,
                      linearizer_residual, marked_distance, multiplier, periodic_points)
from geometry import ConformalLinear, infinity_point, to_complex
from qr_errors import BranchPoint, DegenerateJacobian
from schroder import ChebyshevMap, ImplicitUqrMap, LattesMap, PowerMap


@pytest.fixture(scope='module')
def chebyshev_records():
    from automorphic import CosTypeMap
    return periodic_points(CosTypeMap(), ConformalLinear.dilation(2.0, 2), 1, f=ChebyshevMap(2))


class TestPeriodicPoints:
    @pytest.mark.parametrize('m', [1, 2, 3, 4])
    def test_power_counts_roots_of_unity(self, exp_map, doubling, m):
        records = periodic_points(exp_map, doubling, m, f=PowerMap(2))
        count = 2 ** m - 1
        assert len(records) == count
        roots = np.exp(2j * np.pi * np.arange(count) / count)
        for rec in records:
            assert np.min(np.abs(complex(to_complex(rec.x)) - roots)) <= 1e-10
            assert not rec.branch_flag
            np.testing.assert_allclose(rec.multiplier, 2.0 ** m * np.eye(2), atol=1e-6 * 2.0 ** m)

    def test_records_sorted_by_translation_length(self, exp_map, doubling):
        records = periodic_points(exp_map, doubling, 3, f=PowerMap(2))
        lengths = [np.linalg.norm(rec.v) for rec in records]
        assert lengths == sorted(lengths)

    def test_default_radius_covers_sample_box(self, exp_map, doubling):
        assert default_radius(exp_map, doubling, 2) > 3 * 2.0 * np.pi

    def test_chebyshev_fixed_points(self, chebyshev_records):
        found = sorted((round(float(rec.x[0]), 12), rec.branch_flag) for rec in chebyshev_records)
        assert found == [(-0.5, False), (1.0, True)]

    def test_rows_have_multiplier_columns(self, chebyshev_records):
        row = chebyshev_records[0].to_row()
        assert {'m', 'R_index', 'u_0', 'x_1', 'branch_flag', 'residual', 'multiplier_11'} <= set(row)

    def test_period_must_be_positive(self, exp_map, doubling):
        with pytest.raises(ValueError):
            periodic_points(exp_map, doubling, 0)


class TestLinearizer:
    def test_chebyshev_linearizer(self, cos_map, doubling, chebyshev_records):
        rec = next(r for r in chebyshev_records if not r.branch_flag)
        spec = build_linearizer(rec, cos_map, doubling)
        assert (spec.q, spec.p, spec.r, spec.period) == (2, 1, 2, 2)
        assert linearizer_residual(spec, ChebyshevMap(2)) <= 1e-10

    def test_branch_image_refused(self, cos_map, doubling, chebyshev_records):
        rec = next(r for r in chebyshev_records if r.branch_flag)
        with pytest.raises(BranchPoint):
            build_linearizer(rec, cos_map, doubling)

    @pytest.mark.parametrize('m', [1, 2, 3, 4])
    def test_power_linearizers(self, exp_map, doubling, m):
        for rec in periodic_points(exp_map, doubling, m, f=PowerMap(2)):
            spec = build_linearizer(rec, exp_map, doubling)
            assert spec.r == 1
            assert linearizer_residual(spec, PowerMap(2), samples=100) <= 1e-10


class TestMultiplier:
    def test_chebyshev_second_iterate(self):
        jac = multiplier(ChebyshevMap(2), np.array([-0.5, 0.0]), 2)
        np.testing.assert_allclose(jac, 4.0 * np.eye(2), atol=1e-6)

    def test_lattes_normal_form(self):
        z = np.sqrt(1.0 / (2j - 1.0))
        x = np.array([z.real, z.imag])
        one = multiplier(LattesMap(), x, 1)
        assert np.sqrt(abs(np.linalg.det(one))) == pytest.approx(np.sqrt(2.0), abs=1e-6)
        np.testing.assert_allclose(multiplier(LattesMap(), x, 4), -4.0 * np.eye(2), atol=4e-5)
        np.testing.assert_allclose(multiplier(LattesMap(), x, 8), 16.0 * np.eye(2), atol=16e-4)

    def test_degenerate_at_critical_point(self):
        with pytest.raises(DegenerateJacobian):
            multiplier(PowerMap(2), np.zeros(2), 1)


class TestClassification:
    def test_unit_fixed_point_repels(self):
        assert classify_fixed_point(PowerMap(2), np.array([1.0, 0.0])) == 'repelling'

    def test_origin_superattracts(self):
        assert classify_fixed_point(PowerMap(2), np.zeros(2)) == 'superattracting'

    def test_infinity_superattracts(self):
        assert classify_fixed_point(PowerMap(2), infinity_point(2)) == 'superattracting'

    def test_neighbourhood_comes_from_config(self, monkeypatch):
        x = np.array([1.0, 0.0])
        assert classify_fixed_point(PowerMap(2), x, iterations=5) == 'neutral'
        monkeypatch.setitem(QR_CONFIG['tolerances'], 'classify_neighbourhood', 1e-5)
        assert classify_fixed_point(PowerMap(2), x, iterations=5) == 'repelling'

    def test_not_a_fixed_point(self):
        with pytest.raises(ValueError):
            classify_fixed_point(PowerMap(2), np.array([0.5, 0.0]))


class TestJuliaRaster:
    def test_square_map_marks_unit_circle(self):
        raster = julia_render(PowerMap(2), ((-2.0, 2.0), (-2.0, 2.0)), (128, 128), 11, threads=2)
        counts = raster.class_counts()
        assert counts['undecided'] > 0 and counts['escaped'] > 0 and counts['converged'] > 0
        assert marked_distance(raster, distance_to_circle) <= 2.0

    def test_chebyshev_marks_segment(self):
        raster = julia_render(ChebyshevMap(2), ((-2.0, 2.0), (-2.0, 2.0)), (128, 129), 11, threads=2)
        assert raster.class_counts()['undecided'] > 0
        assert marked_distance(raster, distance_to_segment) <= 2.0

    def test_rows_run_top_down(self):
        raster = julia_render(PowerMap(2), ((-2.0, 2.0), (-1.0, 3.0)), (8, 8), 11, threads=1)
        centers = raster.pixel_centers
        assert centers[0, 0, 1] > centers[-1, 0, 1]
        assert raster.classes[0, 0] == ESCAPED

    def test_ppm_layout(self):
        raster = JuliaRaster(np.array([[ESCAPED, CONVERGED, UNDECIDED, ESCAPED]] * 3, dtype=np.uint8),
                             ((0.0, 1.0), (0.0, 1.0)), 1)
        payload = raster.to_ppm_bytes()
        header = b"P6\n4 3\n255\n"
        assert payload.startswith(header)
        assert len(payload) == len(header) + 3 * 4 * 3

    def test_nothing_marked(self):
        raster = JuliaRaster(np.zeros((4, 4), dtype=np.uint8), ((0.0, 1.0), (0.0, 1.0)), 1)
        assert marked_distance(raster, distance_to_circle) == float('inf')

    def test_distances(self):
        points = np.array([[0.0, 1.0], [2.0, 0.0], [0.0, 0.0]])
        np.testing.assert_allclose(distance_to_segment(points), [1.0, 1.0, 0.0])
        np.testing.assert_allclose(distance_to_circle(points), [0.0, 1.0, 1.0])


@pytest.mark.slow
class TestZorichDynamics:
    def test_fixed_point_above_origin(self, zorich_map):
        M = ConformalLinear.dilation(3.0, 3)
        records = periodic_points(zorich_map, M, 1)
        top = next(rec for rec in records if np.linalg.norm(rec.x - [0.0, 0.0, 1.0]) <= 1e-12)
        assert not top.branch_flag
        np.testing.assert_allclose(top.multiplier, 3.0 * np.eye(3), atol=3e-2)

    def test_fixed_point_repels(self, zorich_map):
        M = ConformalLinear.dilation(3.0, 3)
        records = periodic_points(zorich_map, M, 1)
        top = next(rec for rec in records if np.linalg.norm(rec.x - [0.0, 0.0, 1.0]) <= 1e-12)
        assert classify_fixed_point(ImplicitUqrMap(zorich_map, M), top.x, hint=top.u) == 'repelling'

    def test_linearizer_at_fixed_point(self, zorich_map):
        M = ConformalLinear.dilation(3.0, 3)
        records = periodic_points(zorich_map, M, 1)
        top = next(rec for rec in records if np.linalg.norm(rec.x - [0.0, 0.0, 1.0]) <= 1e-12)
        spec = build_linearizer(top, zorich_map, M)
        assert spec.r == 2
        residual = linearizer_residual(spec, ImplicitUqrMap(zorich_map, M),
                                       (-0.5 * np.ones(3), 0.5 * np.ones(3)), samples=100)
        assert residual <= 1e-5
