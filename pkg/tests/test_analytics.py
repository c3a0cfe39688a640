import math
import random

import pytest

from tool.analytics import (DomainError, OverloadModel, StableLoadModel, backoff_delay_closed_form, cost_heatmap,
                            expected_backoff_delay, mm1m_oracle, mm1m_rejection_prob, normalized_retry_curve,
                            overload_offered_rate, overload_oracle, overload_rejection_prob, retry_count_pmf,
                            retry_stage_rate, solve_overload)


class TestOverloadModel:

    def test_single_attempt_rejects_excess_fraction(self):
        assert overload_rejection_prob(OverloadModel(lam=2, mu=1, k=1)) == pytest.approx(0.5)

    def test_two_stages(self):
        assert overload_rejection_prob(OverloadModel(lam=2, mu=1, k=2)) == pytest.approx(0.70711, abs=1e-5)

    def test_near_critical_load(self):
        model = OverloadModel(lam=1.0001, mu=1, k=3)
        assert overload_rejection_prob(model) == pytest.approx((1 - 1 / 1.0001) ** (1 / 3), rel=1e-9)
        assert overload_rejection_prob(model) == pytest.approx(0.04642, abs=1e-5)

    def test_stable_load_is_domain_error(self):
        with pytest.raises(DomainError, match="lambda > mu"):
            overload_rejection_prob(OverloadModel(lam=1, mu=1, k=2))

    def test_zero_stages_is_domain_error(self):
        with pytest.raises(DomainError, match="k >= 1"):
            overload_offered_rate(OverloadModel(lam=2, mu=1, k=0))

    def test_invalid_rates(self):
        with pytest.raises(DomainError):
            OverloadModel(lam=0, mu=1, k=1)
        with pytest.raises(DomainError):
            OverloadModel(lam=1, mu=1, k=-1)

    def test_offered_rate(self):
        assert overload_offered_rate(OverloadModel(lam=2, mu=1, k=1)) == pytest.approx(2.0)
        assert overload_offered_rate(OverloadModel(lam=2, mu=1, k=2)) == pytest.approx(2 * (1 + math.sqrt(0.5)), abs=1e-4)

    def test_stage_rates(self):
        model = OverloadModel(lam=2, mu=1, k=2)
        assert retry_stage_rate(model, 0) == 2.0
        assert retry_stage_rate(model, 1) == pytest.approx(1.41421, abs=1e-4)
        assert retry_stage_rate(model, 2) == pytest.approx(1.0, abs=1e-9)

    def test_stage_index_out_of_range(self):
        with pytest.raises(IndexError):
            retry_stage_rate(OverloadModel(lam=2, mu=1, k=2), 3)

    def test_random_models_match_fixed_point_oracle(self):
        rng = random.Random(7)

        for _ in range(50):
            mu = rng.uniform(0.5, 100)
            model = OverloadModel(lam=mu * rng.uniform(1.01, 5), mu=mu, k=rng.randint(1, 6))
            p_tilde = overload_rejection_prob(model)
            oracle, stages = overload_oracle(model)

            assert p_tilde == pytest.approx(oracle, abs=1e-9)
            assert overload_offered_rate(model) == pytest.approx(stages[:model.k].sum(), rel=1e-8)

    def test_consistency_and_conservation(self):
        for lam, mu, k in [(2, 1, 1), (3, 1, 4), (150, 100, 6), (1.2, 1, 5)]:
            model = OverloadModel(lam=lam, mu=mu, k=k)
            p_tilde = overload_rejection_prob(model)

            assert mu / overload_offered_rate(model) == pytest.approx(1 - p_tilde, abs=1e-9)
            assert retry_stage_rate(model, k) == pytest.approx(lam - mu, rel=1e-9)

    def test_solution_invariants(self):
        solution = solve_overload(OverloadModel(lam=3, mu=1, k=4))

        assert solution.p + solution.p_tilde == pytest.approx(1.0)
        assert solution.lambda_i[0] == 3
        assert all(a >= b for a, b in zip(solution.lambda_i, solution.lambda_i[1:]))
        assert solution.big_lambda >= 3

        single = solve_overload(OverloadModel(lam=3, mu=1, k=1))
        assert single.big_lambda == pytest.approx(3)


class TestBackoffDelay:

    def test_no_rejection(self):
        assert expected_backoff_delay(0.0, 5) == 0.0

    def test_always_rejected(self):
        assert expected_backoff_delay(1.0, 3) == 7.0

    def test_closed_form_singular_point_uses_direct_sum(self):
        assert expected_backoff_delay(0.5, 2) == 1.0

        with pytest.raises(DomainError):
            backoff_delay_closed_form(0.5, 2)
        with pytest.raises(DomainError):
            backoff_delay_closed_form(1.0, 2)

    def test_closed_form_matches_direct_sum(self):
        rng = random.Random(11)

        for _ in range(1000):
            p_tilde, k = rng.random(), rng.randint(0, 12)
            if abs(p_tilde - 0.5) < 1e-6:
                continue

            direct = expected_backoff_delay(p_tilde, k)
            assert backoff_delay_closed_form(p_tilde, k) == pytest.approx(direct, abs=1e-9, rel=1e-9)

    def test_monotone(self):
        for p_tilde in (0.1, 0.5, 0.9):
            values = [expected_backoff_delay(p_tilde, k) for k in range(8)]
            assert values == sorted(values)

        for k in (1, 3, 6):
            values = [expected_backoff_delay(p / 20, k) for p in range(21)]
            assert values == sorted(values)

    def test_pmf_sums_to_one(self):
        assert sum(retry_count_pmf(0.3, 4)) == pytest.approx(1.0)

    def test_probability_out_of_range(self):
        with pytest.raises(DomainError):
            expected_backoff_delay(1.5, 2)


class TestMM1m:

    def test_limit_branch(self):
        assert mm1m_rejection_prob(StableLoadModel(rho=1.0, m=10)) == pytest.approx(1 / 11)

    def test_matches_birth_death_solver(self):
        model = StableLoadModel(rho=0.5, m=2)
        assert mm1m_rejection_prob(model) == pytest.approx(0.142857, abs=1e-6)
        assert mm1m_oracle(model) == pytest.approx(0.142857, abs=1e-6)

        for rho in (0.1, 0.8, 0.95, 0.999):
            for m in (1, 5, 20):
                model = StableLoadModel(rho=rho, m=m)
                assert mm1m_rejection_prob(model) == pytest.approx(mm1m_oracle(model), abs=1e-9)

    def test_no_arrivals(self):
        assert mm1m_rejection_prob(StableLoadModel(rho=0, m=5)) == 0

    def test_continuous_at_one(self):
        limit = 1 / 11
        for rho in (1 - 1e-6, 1 + 1e-6):
            assert abs(mm1m_rejection_prob(StableLoadModel(rho=rho, m=10)) - limit) < 1e-4

    def test_negative_load(self):
        with pytest.raises(DomainError):
            StableLoadModel(rho=-0.1, m=3)


class TestNormalizedCurve:

    def test_stable_side_composition(self):
        point = normalized_retry_curve([0.5], 3, 10)[0]
        assert point.regime == "stable"
        assert point.value == pytest.approx(3 * mm1m_rejection_prob(StableLoadModel(rho=0.5, m=10)))

    def test_overload_side(self):
        point = normalized_retry_curve([2.0], 2, 10)[0]
        assert point.regime == "overload"
        assert point.value == pytest.approx(math.sqrt(0.5), abs=1e-4)

    def test_both_sides_at_critical_load(self):
        points = normalized_retry_curve([1.0], 5, 20)
        assert [p.regime for p in points] == ["stable", "overload"]
        assert points[0].value == pytest.approx(5 / 21)

    def test_steep_transition(self):
        low, high = normalized_retry_curve([0.9, 1.1], 5, 20)
        assert high.value / low.value > 5


class TestCostHeatmap:

    def test_rows_monotone_in_k(self):
        grid = cost_heatmap([1.05, 1.5, 2.0, 4.0], range(1, 7))
        assert (grid[:, 1:] >= grid[:, :-1]).all()
        assert grid[3, 5] > grid[0, 5]

    def test_single_retry_cell(self):
        assert cost_heatmap([2.0], [1])[0, 0] == pytest.approx(0.5)

    def test_requires_overload(self):
        with pytest.raises(DomainError):
            cost_heatmap([0.9], [1])
