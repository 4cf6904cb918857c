"""Final-answer extraction and checking, and verifier verdict parsing.

Answer checking is deterministic text normalization plus exact rational
comparison; it deliberately avoids any model call so labels are reproducible.
A hook for an external verifier endpoint exists at the collection layer, and
the label source is recorded in the collection report when used.
"""

from __future__ import annotations

import re
from fractions import Fraction
from typing import Optional

_BOXED = "\\boxed{"
_FRAC_RE = re.compile(r"\\[dt]?frac\{([^{}]+)\}\{([^{}]+)\}")
_TEXT_RE = re.compile(r"\\text\{([^{}]*)\}")
_THOUSANDS_RE = re.compile(r"(?<=\d),(?=\d)")


def extract_boxed(text: str) -> Optional[str]:
    """Contents of the last balanced \\boxed{...} in ``text``, or None."""
    start = text.rfind(_BOXED)
    if start < 0:
        return None
    depth = 1
    out = []
    for c in text[start + len(_BOXED):]:
        if c == "{":
            depth += 1
        elif c == "}":
            depth -= 1
            if depth == 0:
                return "".join(out)
        out.append(c)
    return None  # unbalanced braces


def normalize_answer(s: str) -> str:
    s = s.strip()
    if len(s) >= 2 and s[0] == "$" and s[-1] == "$":
        s = s[1:-1]
    for cmd in ("\\left", "\\right", "\\,", "\\;", "\\!"):
        s = s.replace(cmd, "")
    s = s.replace("~", " ")
    prev = None
    while prev != s:  # nested simple fractions resolve inside-out
        prev = s
        s = _FRAC_RE.sub(r"\1/\2", s)
        s = _TEXT_RE.sub(r"\1", s)
    s = _THOUSANDS_RE.sub("", s)
    s = "".join(s.split())
    while len(s) >= 2 and s[0] == "{" and s[-1] == "}":
        s = s[1:-1]
    return s.rstrip(".")


def _as_fraction(s: str) -> Optional[Fraction]:
    try:
        return Fraction(s)
    except (ValueError, ZeroDivisionError):
        return None


def check_answer(extracted: Optional[str], gold: str):
    """Grade an extracted answer against the gold one -> (bit, flags).

    Numeric answers compare as exact rationals, so "1/2" matches "0.5";
    everything else compares as normalized text. A missing answer is wrong
    and flagged.
    """
    if extracted is None:
        return 0, [{"kind": "missing_final_answer"}]
    a, b = normalize_answer(extracted), normalize_answer(gold)
    fa, fb = _as_fraction(a), _as_fraction(b)
    if fa is not None and fb is not None:
        return int(fa == fb), []
    return int(a == b), []


def parse_verdict(reply: str) -> Optional[int]:
    """Map a verifier reply onto a bit; None when it is not a lone verdict."""
    word = reply.strip().rstrip(".!").casefold()
    if word == "correct":
        return 1
    if word == "incorrect":
        return 0
    return None
