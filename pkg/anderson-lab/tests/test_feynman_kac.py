import math

import numpy as np
import pytest

from errors import DomainError, IllPosedError, OnPoleError, PreconditionError
from feynman_kac import (
    CalibratedConstants,
    PathConfig,
    PotentialField,
    brownian_paths,
    brownian_tail_check,
    estimate_from_log_weights,
    exit_laplace_check,
    grid_fk_value,
    l1_bound_check,
    mild_solution_residual,
    run_paths,
    simulate_fk,
    simulate_stopped_fk,
    stopped_closed_form,
    sup_abs_tail_1d,
)
from kernels import SmoothAttenuatedKernel, TruncatedKernel
from point_process import PointCloud, RegionDescriptor
from spectral import build_operator, cloud_potential_fn
from utils import make_rng


class TestPathConfig:
    def test_steps_for_divisible_horizon(self):
        assert PathConfig(dt=1e-3).steps_for(0.5) == 500

    def test_steps_for_rejects_non_divisible_horizon(self):
        with pytest.raises(PreconditionError):
            PathConfig(dt=0.3).steps_for(1.0)

    def test_validate_lists_every_problem(self):
        problems = PathConfig(dt=0.0, n_paths=0, substep_factor=0).validate()
        assert len(problems) == 3

    def test_dict_round_trip_ignores_unknown_keys(self):
        data = PathConfig(dt=0.01, seed=9).to_dict()
        data["unused"] = True
        assert PathConfig.from_dict(data) == PathConfig(dt=0.01, seed=9)


class TestEstimateFromLogWeights:
    def test_known_weights(self):
        estimate = estimate_from_log_weights(np.log([1.0, 3.0]))
        assert estimate.mean == pytest.approx(2.0)
        assert estimate.stderr == pytest.approx(1.0)
        assert estimate.n_effective == pytest.approx(1.6)
        assert estimate.log_mean == pytest.approx(math.log(2.0))

    def test_all_killed(self):
        estimate = estimate_from_log_weights(np.full(4, -np.inf))
        assert estimate.mean == 0.0
        assert estimate.log_mean == -math.inf

    def test_large_log_weights_are_rescaled(self):
        estimate = estimate_from_log_weights(np.array([500.0, 500.0]))
        assert estimate.log_mean == pytest.approx(500.0)
        assert estimate.stderr == 0.0

    def test_cap_dominated_flag(self):
        assert estimate_from_log_weights(np.zeros(3), clipped=1, evaluations=10).cap_dominated
        assert not estimate_from_log_weights(np.zeros(3), clipped=0, evaluations=10).cap_dominated


class TestSimulateFk:
    def test_zero_potential_is_exactly_one(self):
        cfg = PathConfig(n_paths=200, batch_size=50, seed=1)
        estimate = simulate_fk(PointCloud.empty(3), TruncatedKernel(1.0, 3), 0.1, 0.1, np.zeros(3), cfg)
        assert estimate.mean == 1.0
        assert estimate.stderr == 0.0

    def test_saturated_cap_gives_constant_exponential(self):
        # every node sits within the support of a wide kernel, so min(V, cap) is the cap throughout
        cloud = PointCloud.manual([[1.0, 0.0, 0.0]])
        theta, cap, t = 2.0, 1e-3, 0.5
        cfg = PathConfig(cap=cap, n_paths=100, seed=4)
        estimate = simulate_fk(cloud, TruncatedKernel(20.0, 3), theta, t, np.zeros(3), cfg)
        assert estimate.mean == pytest.approx(math.exp(theta * cap * t), rel=1e-9)
        assert estimate.cap_dominated

    def test_thread_count_does_not_change_result(self):
        cloud = PointCloud.manual([[0.2, 0.0, 0.0], [-0.3, 0.1, 0.0]])
        kernel = SmoothAttenuatedKernel(1.0, 4.0, 3)
        cfg = PathConfig(n_paths=300, batch_size=100, seed=11, cap=50.0)
        serial = simulate_fk(cloud, kernel, 0.05, 0.05, np.zeros(3), cfg, n_jobs=1)
        threaded = simulate_fk(cloud, kernel, 0.05, 0.05, np.zeros(3), cfg, n_jobs=3)
        assert serial.to_dict() == threaded.to_dict()

    def test_start_on_pole(self):
        cloud = PointCloud.manual([[0.0, 0.0, 0.0]])
        with pytest.raises(OnPoleError):
            simulate_fk(cloud, TruncatedKernel(1.0, 3), 0.1, 0.01, np.zeros(3), PathConfig(n_paths=10))

    def test_theta_must_be_positive(self):
        with pytest.raises(DomainError):
            simulate_fk(PointCloud.empty(3), TruncatedKernel(1.0, 3), 0.0, 0.1, np.zeros(3), PathConfig(n_paths=10))

    def test_theta_above_half_hardy_constant_rejected_for_long_range_kernels(self):
        with pytest.raises(DomainError):
            simulate_fk(PointCloud.empty(3), SmoothAttenuatedKernel(1.0, 4.0, 3), 0.1, 0.1, np.zeros(3),
                        PathConfig(n_paths=10))

    def test_confinement_kills_paths(self):
        cfg = PathConfig(n_paths=400, seed=2)
        box = RegionDescriptor.box((0.0, 0.0, 0.0), 0.1)
        estimate = simulate_fk(PointCloud.empty(3), TruncatedKernel(1.0, 3), 0.1, 0.2, np.zeros(3), cfg,
                               confinement=box)
        assert 0.0 <= estimate.mean < 0.2

    def test_stopping_without_potential_or_discount_is_one(self):
        cfg = PathConfig(n_paths=200, seed=2)
        box = RegionDescriptor.box((0.0, 0.0, 0.0), 0.1)
        estimate = simulate_fk(PointCloud.empty(3), TruncatedKernel(1.0, 3), 0.1, 0.2, np.zeros(3), cfg,
                               confinement=box, stop_on_exit=True)
        assert estimate.mean == 1.0


class TestCommonPaths:
    """Runs with one PathConfig share their Brownian increments, so weights compare path by path."""

    CFG = PathConfig(dt=0.01, n_paths=200, batch_size=100, seed=5)
    START = np.array([0.5, 0.3, 0.0])

    def _log_weights(self, cloud, theta=0.1, cap=1e4, domain=None, mode="free", gamma=0.0):
        potential = PotentialField(cloud, TruncatedKernel(1.0), theta, cap, self.CFG.near_pole_radius)
        return run_paths(potential, self.START, self.CFG, 50, domain, mode, gamma).log_weights

    def test_monotone_in_theta(self, two_point_cloud):
        weights = [self._log_weights(two_point_cloud, theta=theta) for theta in (0.02, 0.05, 0.1)]
        for lower, higher in zip(weights, weights[1:]):
            assert np.all(lower <= higher)

    def test_monotone_in_cap(self, two_point_cloud):
        weights = [self._log_weights(two_point_cloud, cap=cap) for cap in (1.0, 10.0, 1e4)]
        for lower, higher in zip(weights, weights[1:]):
            assert np.all(lower <= higher)
        assert np.any(weights[0] < weights[-1])

    def test_confined_never_exceeds_free(self, two_point_cloud):
        ball = RegionDescriptor.ball((0.0, 0.0, 0.0), 0.8)
        free = self._log_weights(two_point_cloud, domain=ball)
        confined = self._log_weights(two_point_cloud, domain=ball, mode="confined")
        assert np.all(confined <= free)
        assert np.any(np.isneginf(confined))

    def test_weights_at_least_one_without_discount(self, two_point_cloud):
        assert np.all(self._log_weights(two_point_cloud) >= 0.0)


class TestStoppedFk:
    def test_closed_form_limits(self):
        assert stopped_closed_form(1.0, 2.0) == pytest.approx(2.0 / math.sinh(2.0))
        assert stopped_closed_form(1.0, 2.0, distance=1.0) == pytest.approx(1.0)
        assert stopped_closed_form(1.0, 2.0, distance=1e-6) == pytest.approx(stopped_closed_form(1.0, 2.0), rel=1e-6)

    def test_zero_potential_matches_closed_form(self):
        ball = RegionDescriptor.ball((0.0, 0.0, 0.0), 1.0)
        cfg = PathConfig(n_paths=2000, seed=5)
        estimate = simulate_stopped_fk(PointCloud.empty(3), TruncatedKernel(1.0, 3), 0.1, 2.0, ball, np.zeros(3), cfg,
                                       lambda_estimate=-math.pi ** 2 / 2)
        exact = stopped_closed_form(1.0, 2.0)
        assert abs(estimate.mean - exact) <= 3 * estimate.stderr + 0.02

    def test_gamma_below_principal_eigenvalue_is_ill_posed(self):
        ball = RegionDescriptor.ball((0.0, 0.0, 0.0), 1.0)
        with pytest.raises(IllPosedError):
            simulate_stopped_fk(PointCloud.empty(3), TruncatedKernel(1.0, 3), 0.1, -10.0, ball, np.zeros(3),
                                PathConfig(n_paths=10))

    def test_start_outside_domain(self):
        ball = RegionDescriptor.ball((0.0, 0.0, 0.0), 1.0)
        with pytest.raises(PreconditionError):
            simulate_stopped_fk(PointCloud.empty(3), TruncatedKernel(1.0, 3), 0.1, 1.0, ball, [2.0, 0.0, 0.0],
                                PathConfig(n_paths=10), lambda_estimate=-1.0)

    def test_l1_bound_without_poles(self):
        domain = RegionDescriptor.ball((0.0, 0.0, 0.0), 0.5)
        starts = RegionDescriptor.box((0.0, 0.0, 0.0), 0.5)
        cfg = PathConfig(n_paths=100, batch_size=100, seed=3)
        verdict = l1_bound_check(PointCloud.empty(3), TruncatedKernel(1.0, 3), 0.1, 1.0, domain, starts, cfg,
                                 grid_per_axis=2, lambda_estimate=-19.0)
        assert verdict.starts == 8
        assert verdict.holds
        assert verdict.lhs <= starts.volume


class TestBrownianOracles:
    def test_paths_start_at_origin_point(self):
        paths = brownian_paths(np.array([1.0, 2.0]), 5, 10, 0.01, make_rng(0))
        assert paths.shape == (5, 11, 2)
        np.testing.assert_array_equal(paths[:, 0], np.tile([1.0, 2.0], (5, 1)))

    def test_sup_abs_tail_1d_range(self):
        assert sup_abs_tail_1d(1.0, 0.0) == 1.0
        assert sup_abs_tail_1d(1.0, 10.0) == pytest.approx(0.0, abs=1e-12)
        assert 0.0 < sup_abs_tail_1d(1.0, 1.0) < 1.0

    def test_tail_matches_one_dimensional_oracle(self):
        check = brownian_tail_check(1.0, 1.5, 1, 4000, seed=7)
        # discrete monitoring only misses crossings
        assert check.empirical <= check.oracle + 3 * check.stderr
        assert check.empirical >= check.oracle - 3 * check.stderr - 0.03
        assert check.holds

    def test_exit_laplace_matches_three_dimensional_oracle(self):
        check = exit_laplace_check(1.0, 2.0, 3, 1500, seed=8, dt=1e-3)
        assert abs(check.empirical - check.oracle) <= 3 * check.stderr + 0.02
        assert check.holds

    def test_analytic_constants(self):
        constants = CalibratedConstants.analytic(3)
        assert constants.K_star == 6.0
        assert constants.K == pytest.approx(72.0)
        assert constants.c == pytest.approx(1.0 / 192.0)
        assert CalibratedConstants.from_dict(constants.to_dict()) == constants


class TestGridOracles:
    @pytest.fixture
    def small_operator(self):
        cloud = PointCloud.manual([[0.3, 0.0, 0.0], [-0.3, 0.2, 0.0]])
        kernel = SmoothAttenuatedKernel(1.0, 4.0, 3)
        h = 0.5
        return build_operator(RegionDescriptor.box((0.0, 0.0, 0.0), 2.0), h,
                              cloud_potential_fn(cloud, kernel, 1.0 / 16, 4.0, h))

    def test_mild_solution_residual_is_small(self, small_operator):
        residual = mild_solution_residual(small_operator, 0.25, n_time=64)
        assert residual.relative < 5e-3

    def test_mild_solution_needs_even_intervals(self, small_operator):
        with pytest.raises(PreconditionError):
            mild_solution_residual(small_operator, 0.25, n_time=5)

    def test_grid_value_without_potential_is_a_survival_probability(self):
        op = build_operator(RegionDescriptor.box((0.0, 0.0, 0.0), 1.0), 0.25)
        value = grid_fk_value(op, 0.1, np.zeros(3))
        assert 0.0 < value < 1.0
