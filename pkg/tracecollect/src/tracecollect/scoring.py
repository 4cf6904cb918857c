"""Per-step confidence scores computed from generated tokens.

Both scores look only at mathematically salient tokens, found by a fixed
character-class rule so that traces are reproducible: a token counts as math
when, ignoring surrounding whitespace, it is nonempty and either consists
solely of digits, operators, or grouping characters, or is a backslash
command such as \\frac. When a step has no math tokens at all, both scores
fall back to every position and the step is flagged.
"""

from __future__ import annotations

import math
from typing import Sequence

from .endpoint import TokenInfo

MATH_CHARS = frozenset("0123456789+-−×*/=^_{}\\().,")
TOP_PROB_FLOOR = 1e-6


def is_math_token(text: str) -> bool:
    s = text.strip()
    if not s:
        return False
    if s[0] == "\\" and len(s) > 1 and s[1:].isalpha():
        return True
    return all(c in MATH_CHARS for c in s)


def math_token_mask(tokens: Sequence[TokenInfo]) -> list:
    return [is_math_token(t.text) for t in tokens]


def _picked(tokens: Sequence[TokenInfo], flags: list) -> list:
    if not tokens:
        raise ValueError("scoring needs at least one token")
    mask = math_token_mask(tokens)
    chosen = [i for i, m in enumerate(mask) if m]
    if not chosen:
        flags.append({"kind": "no_math_tokens"})
        chosen = list(range(len(tokens)))
    return chosen


def score_local(tokens: Sequence[TokenInfo]):
    """Mean pre-softmax max logit over math tokens -> (score, flags)."""
    flags: list = []
    chosen = _picked(tokens, flags)
    for i in chosen:
        if tokens[i].max_logit is None:
            raise ValueError(f"token {i} carries no max logit; "
                             "local scoring needs raw logits")
    score = math.fsum(tokens[i].max_logit for i in chosen) / len(chosen)
    return score, flags


def score_hosted(tokens: Sequence[TokenInfo]):
    """Weakest observed top-1 probability over math tokens -> (score, flags).

    At positions where the sampled token is absent from the returned
    top-k list the server's ranking gives no usable probability; those
    positions enter the minimum at a fixed floor and are flagged.
    """
    flags: list = []
    chosen = _picked(tokens, flags)
    probs = []
    for i in chosen:
        tok = tokens[i]
        in_top = any(text == tok.text for text, _ in tok.top)
        if tok.top and in_top:
            probs.append(min(1.0, math.exp(tok.top[0][1])))
        else:
            probs.append(TOP_PROB_FLOOR)
            flags.append({"kind": "absent_from_top", "position": i})
    return min(probs), flags
