"""Cost models (FLOPs and API cents) and evaluation metrics.

Two scale conventions coexist in reported numbers: accuracy expressed in
percent when costs are FLOPs (units of 10^12), and as a fraction when costs
are API cents. The report carries its convention explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .trace import ApiPricing

FLOPS_UNIT = 1e12
TOKENS_PER_MEGA = 1e6

# Published GPT-4.1-mini endpoint rates, in US cents per 1M tokens.
GPT_4_1_MINI_PRICING = ApiPricing(
    input_per_mtok=40.0,
    cached_input_per_mtok=10.0,
    output_per_mtok=160.0,
)


@dataclass(frozen=True)
class CostBreakdown:
    """Per-problem cumulative cost under both bases plus raw token totals."""

    flops_e12: float
    api_cents: float
    tokens: tuple  # (input, cached, output)

    def __post_init__(self):
        if self.flops_e12 < 0 or self.api_cents < 0:
            raise ValueError("costs must be nonnegative")
        if len(self.tokens) != 3 or any(t < 0 for t in self.tokens):
            raise ValueError("tokens must be a nonnegative (input, cached, output) triple")

    def on_basis(self, cost_basis: str) -> float:
        if cost_basis == "flops":
            return self.flops_e12
        if cost_basis == "api":
            return self.api_cents
        raise ValueError(f"unknown cost basis {cost_basis!r}")


@dataclass(frozen=True)
class EvalReport:
    accuracy: float  # fraction in [0, 1]
    avg_cost: float
    ac_ratio: Optional[float]  # None when undefined (zero average cost)
    n_problems: int
    accuracy_scale: str  # "percent" | "fraction"


def flops_cost(param_count: float, generated_tokens: int) -> float:
    """2N FLOPs per generated token, reported in units of 10^12."""
    if param_count < 0 or generated_tokens < 0:
        raise ValueError("inputs must be nonnegative")
    return 2.0 * param_count * generated_tokens / FLOPS_UNIT

def api_cost(pricing: ApiPricing, tokens) -> float:
    """Cents for one step or trajectory given (input, cached, output) counts."""
    inp, cached, out = tokens
    if inp < 0 or cached < 0 or out < 0:
        raise ValueError("token counts must be nonnegative")
    return (inp * pricing.input_per_mtok
            + cached * pricing.cached_input_per_mtok
            + out * pricing.output_per_mtok) / TOKENS_PER_MEGA


def ac_ratio(accuracy: float, avg_cost: float, accuracy_scale: str) -> Optional[float]:
    """Accuracy-per-Cost under the stated scale; undefined for zero cost."""
    if accuracy_scale not in ("percent", "fraction"):
        raise ValueError(f"unknown accuracy scale {accuracy_scale!r}")
    if avg_cost <= 0.0:
        return None
    scaled = accuracy * 100.0 if accuracy_scale == "percent" else accuracy
    return scaled / avg_cost


def eval_report(results, cost_basis: str, accuracy_scale: str) -> EvalReport:
    """Aggregate (correct bit, CostBreakdown) pairs into accuracy/cost/A-per-C."""
    results = list(results)
    if not results:
        raise ValueError("eval_report needs at least one result")
    n = len(results)
    accuracy = sum(1.0 for bit, _ in results if bit) / n
    avg_cost = sum(cb.on_basis(cost_basis) for _, cb in results) / n
    return EvalReport(
        accuracy=accuracy,
        avg_cost=avg_cost,
        ac_ratio=ac_ratio(accuracy, avg_cost, accuracy_scale),
        n_problems=n,
        accuracy_scale=accuracy_scale,
    )
