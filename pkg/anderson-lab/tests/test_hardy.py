import math

import numpy as np
import pytest

from bounds_oracles import h_d
from errors import DomainError, PreconditionError
from hardy import (delta_star, f_eta, f_eta_sup, hardy_rayleigh, hardy_threshold, key_lower_bound_constants,
                   lb_potential_check, multipolar_bound, multipolar_check, partition_functions,
                   partition_of_unity_check, partition_samples, random_multipolar_cloud, single_pole_criticality,
                   v_tilde)
from point_process import PointCloud, RegionDescriptor
from utils import make_rng


class TestRayleighQuotient:
    def test_v_tilde(self):
        assert v_tilde([0.5, 1.0, 2.0]) == pytest.approx([1.0, 1.0, 0.25])

    def test_preconditions(self):
        with pytest.raises(DomainError):
            hardy_rayleigh(1.5, 10.0, 0.1, 3)
        with pytest.raises(DomainError):
            hardy_rayleigh(4.0, 8.0, 0.1, 3)

    def test_outer_energy_does_not_grow_with_n(self):
        small = hardy_rayleigh(10.0, 21.0, 0.1, 3)
        large = hardy_rayleigh(1e6, 2e6 + 1, 0.1, 3)
        assert large.outer_energy == pytest.approx(small.outer_energy)
        assert large.middle_energy > small.middle_energy

    def test_closed_form_pieces(self):
        n = 50.0
        result = hardy_rayleigh(n, 2 * n + 1, 0.1, 3)
        assert result.middle_energy == pytest.approx(4 * math.pi / 8 * math.log(n))
        assert result.outer_energy == pytest.approx(4 * math.pi * 0.5 * 7 / 3)
        # inner 1/3, middle log n, outer int_1^2 (2-s)^2 ds = 1/3
        expected = 4 * math.pi * (0.125 + 0.1) * (2.0 / 3.0 + math.log(n))
        assert result.numerator == pytest.approx(expected)

    def test_threshold_is_minimal(self):
        eps = 0.25
        threshold = hardy_threshold(eps, 3)
        assert threshold.ratio > 1.0
        assert threshold.K_star == 2 * threshold.n0 + 1
        if threshold.n0 > 2:
            below = threshold.n0 - 1
            assert hardy_rayleigh(below, 2 * below + 1, eps, 3).ratio <= 1.0

    def test_threshold_needs_positive_eps(self):
        with pytest.raises(DomainError):
            hardy_threshold(0.0, 3)


class TestTightClusters:
    def test_delta_star(self):
        assert delta_star(3, 2, h_d(3)) == pytest.approx(0.125)
        with pytest.raises(DomainError):
            delta_star(3, 2, h_d(3) / 2)

    def test_potential_comparison_holds(self):
        theta = h_d(3)
        cloud = PointCloud.manual([[0.05, 0.0, 0.0], [-0.05, 0.03, 0.0]])
        samples = RegionDescriptor.ball((0.0, 0.0, 0.0), 6.0).sample_uniform(5000, make_rng(0, 1))
        verdict = lb_potential_check(cloud, theta, samples)
        assert verdict.holds
        assert verdict.samples == 5000
        assert verdict.min_ratio >= 1.0

    def test_cluster_must_be_tight(self):
        cloud = PointCloud.manual([[0.5, 0.0, 0.0], [-0.5, 0.0, 0.0]])
        with pytest.raises(PreconditionError):
            lb_potential_check(cloud, h_d(3), np.array([[2.0, 0.0, 0.0]]))

    @pytest.mark.slow
    def test_key_lower_bound_constants(self):
        result = key_lower_bound_constants(3, 2, h_d(3), h=1.0 / 64)
        assert result.delta_star == pytest.approx(0.125)
        assert result.lambda_tilde > 0
        assert result.c2 > 0 and result.c1 > 0

    def test_key_lower_bound_window(self):
        with pytest.raises(DomainError):
            key_lower_bound_constants(3, 2, 0.2)


class TestMultipolar:
    def test_bound_formula(self):
        cloud = PointCloud.manual([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
        theta = 0.1
        assert multipolar_bound(cloud, theta) == pytest.approx(2 * (math.pi ** 2 + 0.3) / 2)

    def test_theta_window(self):
        cloud = PointCloud.manual([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
        with pytest.raises(DomainError):
            multipolar_bound(cloud, 0.01)

    def test_needs_two_points(self):
        with pytest.raises(PreconditionError):
            multipolar_bound(PointCloud.manual([[0.0, 0.0, 0.0]]), 0.1)

    def test_random_cloud_theta_in_window(self):
        cloud, theta = random_multipolar_cloud(3, 3, seed=1, index=0)
        assert len(cloud) == 3
        assert h_d(3) / 3 < theta <= h_d(3) / 2
        assert np.all(np.linalg.norm(cloud.points, axis=1) < 1.0)

    def test_discretized_eigenvalue_below_bound(self):
        cloud, theta = random_multipolar_cloud(2, 3, seed=0, index=7)
        check = multipolar_check(cloud, theta, h=0.25, radius=3.0)
        assert check.holds
        assert check.to_row()["pass"] is True


class TestCriticality:
    @pytest.mark.slow
    def test_critical_coupling_stays_bounded(self):
        critical = single_pole_criticality(h_d(3), [1e3, 1e4])
        assert critical.relative_change < 0.05

    @pytest.mark.slow
    def test_supercritical_coupling_blows_up(self):
        report = single_pole_criticality(1.5 * h_d(3), [1e3, 1e4])
        assert report.relative_change > 0.5

    def test_report_rows_follow_cap_sweep(self):
        report = single_pole_criticality(h_d(3), [10.0, 100.0], radius=4.0, h=1.0 / 32)
        assert [row.cap for row in report.rows] == [10.0, 100.0]
        data = report.to_dict()
        assert data["relative_change"] == pytest.approx(report.relative_change)
        assert all(row["lambda_"] < 10 * h_d(3) for row in data["rows"])


class TestTrigonometricInequality:
    def test_single_variable(self):
        # cos^2 / (1 - sin^2) is identically 1
        assert f_eta(np.array([[0.3], [1.2]])) == pytest.approx([1.0, 1.0])

    @pytest.mark.parametrize("N", [1, 2, 3])
    def test_sup_at_most_N(self, N):
        result = f_eta_sup(N, 40)
        assert result.holds
        assert result.sup <= N + 1e-9
        assert result.sup >= 1.0 - 1e-9

    def test_invalid_N(self):
        with pytest.raises(DomainError):
            f_eta_sup(0, 10)


class TestPartitionOfUnity:
    def test_functions_square_sum_to_one(self, two_point_cloud):
        x = np.array([[0.0, 0.0, 0.0], [0.5, 0.3, 0.0], [4.0, 0.0, 0.0]])
        j1, j2 = partition_functions(two_point_cloud.points, 0.4, x)
        assert j1 ** 2 + j2 ** 2 == pytest.approx(np.ones(3))
        assert j1[0] == 0.0 and j1[2] == 1.0

    def test_gradient_bound(self):
        cloud = PointCloud.manual([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.2, 0.0]])
        r = 0.45
        verdict = partition_of_unity_check(cloud, r, partition_samples(cloud, r, 3000, seed=5))
        assert verdict.holds
        assert verdict.N == 3

    def test_radius_must_be_below_connectivity_radius(self, two_point_cloud):
        with pytest.raises(PreconditionError):
            partition_of_unity_check(two_point_cloud, 0.6, np.zeros((1, 3)))
