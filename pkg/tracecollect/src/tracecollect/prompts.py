"""Prompt templates, reproduced byte-for-byte.

Both templates are frozen: the generation prompt's system line and chat
markers, and the verification prompt's instruction block, are contracts with
the models' expected formats, so even whitespace changes are breaking. The
golden files under tests/golden pin the exact bytes.
"""

from __future__ import annotations

from typing import Sequence

STEP_SEPARATOR = "\n\n"

GENERATION_TEMPLATE = (
    "<|im_start|>system\n"
    "Please reason step by step, and put your final answer within \\boxed{}.\n"
    "<|im_end|>\n"
    "\n"
    "<|im_start|>user\n"
    "{input}\n"
    "<|im_end|>\n"
    "\n"
    "<|im_start|>assistant\n"
    "{output}"
)

VERIFICATION_TEMPLATE = (
    "Task: Determine whether the final step is correct for the given problem.\n"
    "\n"
    "Instructions:\n"
    "- Reply with exactly one verdict: correct or incorrect.\n"
    "- Do not explain, justify, or provide any reasoning.\n"
    "\n"
    "Question:\n"
    "{question}\n"
    "\n"
    "Previous steps:\n"
    "{prefix}\n"
    "\n"
    "Last step:\n"
    "{answer}\n"
    "\n"
    "Verdict:\n"
    "correct | incorrect"
)


def generation_prompt(question: str, prefix_steps: Sequence[str] = ()) -> str:
    """Prompt asking the model for the next reasoning step.

    Accepted steps are joined by the blank-line separator; a trailing
    separator is appended when any exist so the model starts a fresh step
    (generation stops at the same separator, yielding exactly one step).
    """
    output = ""
    if prefix_steps:
        output = STEP_SEPARATOR.join(prefix_steps) + STEP_SEPARATOR
    return GENERATION_TEMPLATE.replace("{input}", question).replace("{output}", output)


def verification_prompt(question: str, prefix_steps: Sequence[str],
                        last_step: str) -> str:
    """Prompt asking the verifier for a one-word verdict on the last step."""
    return (VERIFICATION_TEMPLATE
            .replace("{question}", question)
            .replace("{prefix}", STEP_SEPARATOR.join(prefix_steps))
            .replace("{answer}", last_step))
