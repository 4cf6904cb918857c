"""Cost-model arithmetic pinned to hand-computed values."""

from __future__ import annotations

import pytest

from steproute.costs import (
    FLOPS_UNIT,
    GPT_4_1_MINI_PRICING,
    CostBreakdown,
    EvalReport,
    ac_ratio,
    api_cost,
    eval_report,
    flops_cost,
)
from steproute.trace import ApiPricing


class TestFlopsCost:
    def test_hand_arithmetic(self):
        # 2 * 1.5e9 * 1000 / 1e12 = 3.0
        assert flops_cost(1.5e9, 1000) == pytest.approx(3.0, abs=1e-9)
        # 2 * 7e9 * 316 / 1e12 = 4.424
        assert flops_cost(7e9, 316) == pytest.approx(4.424, abs=1e-9)

    def test_zero_tokens_cost_nothing(self):
        assert flops_cost(7e9, 0) == 0.0

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            flops_cost(-1.0, 10)
        with pytest.raises(ValueError):
            flops_cost(1e9, -1)

    def test_unit_is_1e12(self):
        assert FLOPS_UNIT == 1e12
        assert flops_cost(0.5e12, 1) == 1.0


class TestApiCost:
    def test_published_rates(self):
        # $0.40 / $0.10 / $1.60 per 1M tokens = 40 / 10 / 160 cents per 1M
        assert GPT_4_1_MINI_PRICING.input_per_mtok == 40.0
        assert GPT_4_1_MINI_PRICING.cached_input_per_mtok == 10.0
        assert GPT_4_1_MINI_PRICING.output_per_mtok == 160.0

    def test_hand_arithmetic(self):
        # (1000*40 + 500*10 + 400*160) / 1e6 = 0.109 cents
        got = api_cost(GPT_4_1_MINI_PRICING, (1000, 500, 400))
        assert got == pytest.approx(0.109, abs=1e-9)
        # (2000*40 + 0 + 250*160) / 1e6 = 0.12 cents
        assert api_cost(GPT_4_1_MINI_PRICING, (2000, 0, 250)) == pytest.approx(
            0.12, abs=1e-9)

    def test_additive_over_steps(self):
        a = api_cost(GPT_4_1_MINI_PRICING, (100, 20, 30))
        b = api_cost(GPT_4_1_MINI_PRICING, (50, 0, 70))
        whole = api_cost(GPT_4_1_MINI_PRICING, (150, 20, 100))
        assert a + b == pytest.approx(whole, abs=1e-12)

    def test_rejects_negative_tokens(self):
        with pytest.raises(ValueError):
            api_cost(GPT_4_1_MINI_PRICING, (-1, 0, 0))


class TestAcRatio:
    def test_percent_convention(self):
        assert ac_ratio(0.945, 2.03, "percent") == pytest.approx(94.5 / 2.03)

    def test_fraction_convention(self):
        assert ac_ratio(0.952, 0.0293, "fraction") == pytest.approx(0.952 / 0.0293)

    def test_zero_cost_is_undefined(self):
        assert ac_ratio(0.85, 0.0, "percent") is None

    def test_unknown_scale_rejected(self):
        with pytest.raises(ValueError):
            ac_ratio(0.5, 1.0, "points")


class TestEvalReport:
    def test_aggregates_hand_example(self):
        cb = lambda f: CostBreakdown(flops_e12=f, api_cents=f / 10.0,
                                     tokens=(0, 0, 0))
        results = [(True, cb(1.0)), (False, cb(3.0)), (True, cb(2.0)),
                   (True, cb(2.0))]
        rep = eval_report(results, cost_basis="flops", accuracy_scale="percent")
        assert isinstance(rep, EvalReport)
        assert rep.n_problems == 4
        assert rep.accuracy == pytest.approx(0.75)
        assert rep.avg_cost == pytest.approx(2.0)
        assert rep.ac_ratio == pytest.approx(75.0 / 2.0)

    def test_api_basis_selected(self):
        results = [(True, CostBreakdown(4.0, 0.25, (10, 0, 5)))]
        rep = eval_report(results, cost_basis="api", accuracy_scale="fraction")
        assert rep.avg_cost == pytest.approx(0.25)
        assert rep.ac_ratio == pytest.approx(4.0)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            eval_report([], "flops", "percent")


class TestCostBreakdown:
    def test_basis_dispatch(self):
        cb = CostBreakdown(flops_e12=1.5, api_cents=0.02, tokens=(5, 1, 2))
        assert cb.on_basis("flops") == 1.5
        assert cb.on_basis("api") == 0.02
        with pytest.raises(ValueError):
            cb.on_basis("watts")

    def test_validation(self):
        with pytest.raises(ValueError):
            CostBreakdown(-1.0, 0.0, (0, 0, 0))
        with pytest.raises(ValueError):
            CostBreakdown(0.0, 0.0, (0, 0))

    def test_pricing_type_shared_with_traces(self):
        assert isinstance(GPT_4_1_MINI_PRICING, ApiPricing)
