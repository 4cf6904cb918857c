"""Collect stepwise LLM reasoning traces into routing trace-tree files."""

from .answers import check_answer, extract_boxed, normalize_answer, parse_verdict
from .collect import CollectSettings, Problem, collect_problems, collect_tree
from .endpoint import (Completion, DemoEndpoint, Endpoint, EndpointConfig,
                       EndpointError, MockEndpoint, Pricing, RateLimiter,
                       TokenInfo, Usage, with_retries)
from .prompts import generation_prompt, verification_prompt
from .scoring import math_token_mask, score_hosted, score_local

__version__ = "0.1.0"

__all__ = [
    "CollectSettings", "Completion", "DemoEndpoint", "Endpoint",
    "EndpointConfig", "EndpointError", "MockEndpoint", "Pricing", "Problem",
    "RateLimiter", "TokenInfo", "Usage", "check_answer", "collect_problems",
    "collect_tree", "extract_boxed", "generation_prompt", "math_token_mask",
    "normalize_answer", "parse_verdict", "score_hosted", "score_local",
    "verification_prompt", "with_retries", "__version__",
]
