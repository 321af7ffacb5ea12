import math

import pytest

from bounds_oracles import (
    ScaleParams,
    c_inf,
    c_inf_numeric,
    c_mp,
    constants_report,
    eigen_tail_bound,
    eigen_tail_frequency,
    h_d,
    heuristic_exponent,
    heuristic_optimum,
    heuristic_optimum_numeric,
    k_theta,
    scales,
    summability_test,
)
from errors import DomainError, PreconditionError


def test_hardy_constant():
    assert h_d(3) == 0.125
    assert h_d(4) == 0.5
    with pytest.raises(DomainError):
        h_d(2)


@pytest.mark.parametrize("theta,expected", [(0.0625, 2), (0.04, 3), (0.01, 12)])
def test_critical_cluster_size(theta, expected):
    assert k_theta(3, theta) == expected


def test_critical_cluster_size_outside_range():
    with pytest.raises(DomainError):
        k_theta(3, 0.1)
    with pytest.raises(DomainError):
        k_theta(3, 0.0)


def test_scale_params_exponent():
    params = ScaleParams.from_values(3, 0.0625)
    assert params.k == 2
    assert params.exponent == pytest.approx(3.0)


def test_multipolar_constant():
    assert c_mp(2, 0.0625) == pytest.approx(1.5 * (math.pi ** 2 + 0.1875))


class TestEigenTailBound:
    def test_terms_add_up(self):
        bound = eigen_tail_bound(2.0, 0.2, 100.0, 0.0625, 3)
        assert bound.value == pytest.approx(bound.term_s + bound.term_r)
        assert bound.k == 2

    def test_decreases_in_s(self):
        low = eigen_tail_bound(2.0, 0.2, 100.0, 0.0625, 3)
        high = eigen_tail_bound(2.0, 0.2, 400.0, 0.0625, 3)
        assert high.term_s < low.term_s
        assert high.term_r == low.term_r

    def test_s_below_threshold(self):
        with pytest.raises(PreconditionError):
            eigen_tail_bound(2.0, 0.2, 10.0, 0.0625, 3)


class TestScales:
    @pytest.mark.parametrize("k", [2, 3, 5])
    def test_defining_relations(self, k):
        t = 1e6
        s = scales(t, k, 3)
        assert s.R * s.r == pytest.approx(t, rel=1e-10)
        assert (s.R * s.r ** k) ** 3 == pytest.approx(s.loglog, rel=1e-10)

    def test_small_time_rejected(self):
        with pytest.raises(DomainError):
            scales(10.0, 2, 3)

    def test_cluster_size_at_least_two(self):
        with pytest.raises(DomainError):
            scales(1e6, 1, 3)


class TestLiminfConstant:
    @pytest.mark.parametrize("theta,c", [(0.0625, 1.0), (0.04, 0.5), (0.02, 0.1)])
    def test_closed_form_matches_optimisation(self, theta, c):
        assert c_inf_numeric(3, theta, c) == pytest.approx(c_inf(3, theta, c), rel=1e-6)

    def test_c_out_of_range(self):
        with pytest.raises(DomainError):
            c_inf(3, 0.0625, 1.5)


class TestHeuristicOptimum:
    def test_closed_form(self):
        optimum = heuristic_optimum(100.0, 10.0, 1.0, 1.0)
        assert optimum.t0 == pytest.approx(10.0)
        assert optimum.exponent == pytest.approx(80.0)
        assert heuristic_exponent(optimum.t0, 100.0, 10.0, 1.0, 1.0) == pytest.approx(optimum.exponent)
        assert optimum.feasible

    def test_numeric_agrees(self):
        assert heuristic_optimum_numeric(100.0, 10.0, 1.0, 1.0) == pytest.approx(10.0, rel=1e-4)

    def test_infeasible_when_t0_exceeds_t(self):
        assert not heuristic_optimum(5.0, 10.0, 1.0, 1.0).feasible


class TestSummability:
    def test_geometric_converges(self):
        assert summability_test(lambda t: t).converges

    def test_square_of_log_converges(self):
        assert summability_test(lambda t: (math.log2(t) + 1) ** 2).converges

    def test_log_diverges(self):
        result = summability_test(lambda t: math.log2(t) + 1)
        assert not result.converges
        assert result.terms == 1001

    def test_sequence_input(self):
        assert summability_test([2.0 ** n for n in range(40)]).converges

    def test_rejects_non_positive_values(self):
        with pytest.raises(PreconditionError):
            summability_test([1.0, 2.0, 0.0, 4.0])


def test_tail_frequency_below_bound():
    result = eigen_tail_frequency(2.0, 0.2, 100.0, 0.0625, 3, trials=4, seed=3)
    assert result.trials == 4
    assert 0.0 <= result.frequency <= 1.0
    assert result.passed


def test_constants_report():
    report = constants_report(3, 0.0625, t=1e6)
    assert report["k"] == 2
    assert report["c_mp"] == pytest.approx(c_mp(2, 0.0625))
    assert report["scales"]["R"] * report["scales"]["r"] == pytest.approx(1e6)


def test_constants_report_above_half_hardy_constant():
    assert set(constants_report(3, 0.1)) == {"d", "theta", "h_d"}
