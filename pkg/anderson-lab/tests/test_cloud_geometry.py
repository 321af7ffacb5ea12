import math

import numpy as np
import pytest

from cloud_geometry import (component_diameters, components, covering_number, diameter_bound_holds, gamma)
from errors import PreconditionError
from point_process import PointCloud, RegionDescriptor, sample_ppp


class TestComponents:
    def test_close_points_share_a_component(self, two_point_cloud):
        decomposition = components(two_point_cloud, 0.6)
        assert len(decomposition.components) == 1
        assert decomposition.N_r == 2

    def test_far_points_split(self):
        decomposition = components(PointCloud.manual([[0, 0, 0], [3, 0, 0]]), 1.0)
        assert len(decomposition.components) == 2
        assert decomposition.N_r == 1

    def test_touching_balls_are_not_connected(self):
        decomposition = components(PointCloud.manual([[0, 0, 0], [2, 0, 0]]), 1.0)
        assert len(decomposition.components) == 2

    def test_mixed_cloud(self):
        cloud = PointCloud.manual([[0, 0, 0], [1, 0, 0], [5, 0, 0]])
        decomposition = components(cloud, 0.75)
        assert [c.member_indices for c in decomposition.components] == [(0, 1), (2,)]
        assert decomposition.N_r == 2
        assert decomposition.Lambda is None

    def test_labels_partition_the_cloud(self):
        cloud = sample_ppp(RegionDescriptor.box((0, 0, 0), 3.0), 1.0, seed=9)
        decomposition = components(cloud, 0.4)
        members = sorted(i for c in decomposition.components for i in c.member_indices)
        assert members == list(range(len(cloud)))
        for index, comp in enumerate(decomposition.components):
            assert np.all(decomposition.labels[list(comp.member_indices)] == index)

    def test_empty_cloud(self):
        with pytest.raises(PreconditionError):
            components(PointCloud.empty(3), 1.0)

    def test_domain_contains_component_balls(self, two_point_cloud):
        domain = components(two_point_cloud, 0.6).domain(0, two_point_cloud)
        assert domain.contains(np.array([[0.5, 0.0, 0.0], [0.0, 0.59, 0.0], [0.0, 0.61, 0.0]])).tolist() == [
            True, True, False]
        assert domain.distance_to_boundary(np.array([0.0, 0.0, 0.0]))[0] == pytest.approx(0.6)

    def test_components_only_merge_as_r_grows(self):
        cloud = sample_ppp(RegionDescriptor.box((0, 0, 0), 2.0), 1.5, seed=13)
        radii = [0.1, 0.2, 0.3, 0.45, 0.6]
        decompositions = [components(cloud, r) for r in radii]
        assert [d.N_r for d in decompositions] == sorted(d.N_r for d in decompositions)
        for finer, coarser in zip(decompositions, decompositions[1:]):
            assert len(coarser.components) <= len(finer.components)
            # every finer component lies inside a single coarser one
            for comp in finer.components:
                assert len(set(coarser.labels[list(comp.member_indices)].tolist())) == 1


class TestConnectivityRadius:
    def test_two_points(self):
        assert gamma(PointCloud.manual([[0, 0, 0], [2, 0, 0]])) == pytest.approx(1.0)

    def test_single_point(self):
        assert gamma(PointCloud.manual([[1, 2, 3]])) == 0.0

    def test_collinear_bottleneck(self):
        assert gamma(PointCloud.manual([[0, 0, 0], [1, 0, 0], [3, 0, 0]])) == pytest.approx(1.0)

    def test_components_merge_exactly_above_gamma(self):
        cloud = sample_ppp(RegionDescriptor.box((0, 0, 0), 2.0), 1.0, seed=21)
        g = gamma(cloud)
        assert len(components(cloud, g * (1 + 1e-9)).components) == 1
        assert len(components(cloud, g).components) > 1


class TestDiameters:
    def test_diameter_bound(self):
        cloud = sample_ppp(RegionDescriptor.box((0, 0, 0), 4.0), 0.5, seed=3)
        decomposition = components(cloud, 0.5)
        diameters = component_diameters(decomposition, cloud)
        assert len(diameters) == len(decomposition.components)
        assert diameter_bound_holds(decomposition, cloud)

    def test_chain_diameter(self):
        cloud = PointCloud.manual([[0, 0, 0], [0.9, 0, 0], [1.8, 0, 0]])
        decomposition = components(cloud, 0.5)
        assert component_diameters(decomposition, cloud) == [pytest.approx(1.8)]


class TestCoveringNumber:
    @pytest.mark.parametrize("r, expected", [(0.5, 8), (2.0, 1), (0.3, 64)])
    def test_unit_box(self, r, expected):
        cover = covering_number(RegionDescriptor.box((0, 0, 0), 0.5), r)
        assert cover.exact
        assert cover.count == expected

    @pytest.mark.parametrize("divisor, rel", [(64, 0.10), (256, 0.02)])
    def test_ball_count_tracks_volume(self, divisor, rel):
        R = 1.0
        r = R / divisor
        cover = covering_number(RegionDescriptor.ball((0, 0, 0), R), r)
        assert not cover.exact
        assert cover.count * r ** 3 == pytest.approx(4 * math.pi / 3, rel=rel)
        assert cover.count * r ** 3 >= 4 * math.pi / 3

    def test_non_positive_side(self):
        with pytest.raises(PreconditionError):
            covering_number(RegionDescriptor.box((0, 0), 1.0), 0.0)
