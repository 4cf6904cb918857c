"""Trace-tree assembly: stepwise prompting, branching, labeling, emission.

One tree per problem. Nodes expand both routing actions (keep drafting, or
escalate the step to a bigger model) down to a configurable depth, then
follow the draft-only path; a path ends when a step carries a boxed final
answer or the depth budget runs out. Terminal labels come from the answer
checker; the large-model reference bit comes from separate large-model-only
rollouts and is shared by every terminal of the tree.

Emitted records follow the routing trace file contract (schema_version 1,
sorted keys, one JSON object per line). Raw step text and per-call usage
stay out of the trace; they go into a collection report instead.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from .answers import check_answer, extract_boxed, parse_verdict
from .endpoint import Endpoint, EndpointError, RateLimiter, with_retries
from .prompts import STEP_SEPARATOR, generation_prompt, verification_prompt
from .scoring import score_hosted, score_local

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Problem:
    problem_id: str
    question: str
    gold_answer: str
    difficulty: Optional[float] = None

    def __post_init__(self):
        if not self.problem_id or not self.question:
            raise ValueError("problem_id and question must be nonempty")
        if self.difficulty is not None and not 0.0 <= self.difficulty <= 1.0:
            raise ValueError("difficulty must lie in [0, 1]")


@dataclass(frozen=True)
class CollectSettings:
    """Budgets and retry policy for one collection run.

    ``depth_budget`` caps path length in steps; 0 means a single full
    completion with no stepwise structure. Both actions are expanded at
    depths below ``full_branch_depth``; deeper nodes only extend the
    draft path. ``reference_rollouts`` large-model-only runs define the
    reference bit (correct when at least half succeed).
    """

    depth_budget: int = 8
    full_branch_depth: int = 3
    reference_rollouts: int = 1
    max_step_tokens: int = 256
    retry_attempts: int = 3
    retry_backoff: float = 0.5

    def __post_init__(self):
        if self.depth_budget < 0:
            raise ValueError("depth_budget must be nonnegative")
        if self.full_branch_depth < 0:
            raise ValueError("full_branch_depth must be nonnegative")
        if self.reference_rollouts < 1:
            raise ValueError("reference_rollouts must be at least 1")
        if self.max_step_tokens < 1:
            raise ValueError("max_step_tokens must be at least 1")
        if self.retry_attempts < 1:
            raise ValueError("retry_attempts must be at least 1")
        if self.retry_backoff < 0:
            raise ValueError("retry_backoff must be nonnegative")


def model_pool_record(endpoints: Sequence[Endpoint]) -> list:
    pool = []
    for i, ep in enumerate(endpoints):
        entry: dict = {"index": i, "param_count": float(ep.config.param_count)}
        if ep.config.pricing is not None:
            entry["pricing"] = ep.config.pricing.to_obj()
        pool.append(entry)
    return pool


class _TreeBuilder:
    """Collection state for a single problem: endpoint calls, flags, usage."""

    def __init__(self, problem: Problem, endpoints: Sequence[Endpoint],
                 settings: CollectSettings, verifier: Optional[Endpoint],
                 limiter: Optional[RateLimiter],
                 sleep: Callable[[float], None]):
        if not endpoints:
            raise ValueError("need at least one endpoint")
        self.problem = problem
        self.endpoints = list(endpoints)
        self.settings = settings
        self.verifier = verifier
        self.limiter = limiter
        self.sleep = sleep
        self.calls: list = []
        self.flags: list = []

    def call(self, endpoint: Endpoint, prompt: str, stop: Optional[str],
             purpose: str):
        if self.limiter is not None:
            self.limiter.acquire()
        comp = with_retries(
            lambda: endpoint.complete(prompt, stop, self.settings.max_step_tokens),
            attempts=self.settings.retry_attempts,
            backoff=self.settings.retry_backoff, sleep=self.sleep)
        self.calls.append({
            "purpose": purpose,
            "model": endpoint.config.model,
            "input_tokens": comp.usage.input_tokens,
            "cached_tokens": comp.usage.cached_tokens,
            "output_tokens": comp.usage.output_tokens,
            "text": comp.text,
        })
        return comp

    def flag(self, kind: str, **extra) -> None:
        self.flags.append({"kind": kind, **extra})

    # -- labeling -----------------------------------------------------------

    def reference_bit(self) -> bool:
        """Large-model-only rollouts; True when at least half answer right."""
        large = self.endpoints[-1]
        hits = 0
        for r in range(self.settings.reference_rollouts):
            try:
                hits += self._one_reference(large)
            except EndpointError:
                self.flag("reference_failure", rollout=r)
        return 2 * hits >= self.settings.reference_rollouts

    def _one_reference(self, large: Endpoint) -> int:
        q = self.problem.question
        if self.settings.depth_budget == 0:
            comp = self.call(large, generation_prompt(q), None, "reference")
            bit, _ = check_answer(extract_boxed(comp.text), self.problem.gold_answer)
            return bit
        prefix: list = []
        for _ in range(self.settings.depth_budget):
            comp = self.call(large, generation_prompt(q, prefix),
                             STEP_SEPARATOR, "reference")
            prefix.append(comp.text)
            if extract_boxed(comp.text) is not None:
                break
        bit, _ = check_answer(extract_boxed(prefix[-1]), self.problem.gold_answer)
        return bit

    def verify_step(self, prefix: Sequence[str], step_text: str, depth: int) -> bool:
        """One verdict for the step; an unusable reply retries once, then 0."""
        prompt = verification_prompt(self.problem.question, prefix, step_text)
        for _ in range(2):
            try:
                comp = self.call(self.verifier, prompt, None, "verify")
            except EndpointError:
                self.flag("verifier_failure", depth=depth)
                return False
            verdict = parse_verdict(comp.text)
            if verdict is not None:
                return bool(verdict)
        self.flag("unparseable_verdict", depth=depth)
        return False

    # -- tree expansion -----------------------------------------------------

    def score(self, endpoint: Endpoint, tokens) -> float:
        scorer = score_local if endpoint.config.kind == "local" else score_hosted
        value, sflags = scorer(tokens)
        for f in sflags:
            self.flags.append(f)
        return value

    def actions_at(self, depth: int, model_idx: int) -> list:
        acts = [("continue", model_idx)]
        if depth < self.settings.full_branch_depth:
            for k in range(model_idx + 1, len(self.endpoints)):
                acts.append((f"escalate_to_{k}", k))
        return acts

    def terminal(self, last_step_text: Optional[str], large_correct: bool) -> dict:
        if last_step_text is None:
            bit = 0
        else:
            bit, aflags = check_answer(extract_boxed(last_step_text),
                                       self.problem.gold_answer)
            for f in aflags:
                self.flags.append(f)
        return {"routed_correct": bool(bit), "large_model_correct": large_correct}

    def expand(self, depth: int, prefix: list, model_idx: int,
               large_correct: bool) -> dict:
        node: dict = {"depth": depth}
        children: dict = {}
        for key, m in self.actions_at(depth, model_idx):
            endpoint = self.endpoints[m]
            prompt = generation_prompt(self.problem.question, prefix)
            try:
                comp = self.call(endpoint, prompt, STEP_SEPARATOR, "step")
            except EndpointError:
                self.flag("unexpanded", depth=depth, action=key)
                continue
            step_text = comp.text
            step_obj = {
                "text_len_tokens": len(comp.tokens),
                "uncertainty": self.score(endpoint, comp.tokens),
                "is_final_answer": extract_boxed(step_text) is not None,
                "input_tokens_billed": comp.usage.input_tokens,
                "cached_tokens_billed": comp.usage.cached_tokens,
                "output_tokens_billed": comp.usage.output_tokens,
            }
            if self.verifier is not None:
                step_obj["verifier_bit"] = self.verify_step(prefix, step_text, depth)
            if step_obj["is_final_answer"] or depth + 1 >= self.settings.depth_budget:
                child = {"depth": depth + 1,
                         "terminal": self.terminal(step_text, large_correct)}
            else:
                child = self.expand(depth + 1, prefix + [step_text], m,
                                    large_correct)
            children[key] = {"step": step_obj, "node": child}
        if children:
            node["children"] = children
        else:
            # every action at this node failed; close the path conservatively
            node["terminal"] = self.terminal(None, large_correct)
            self.flag("dead_end", depth=depth)
        return node

    def build(self):
        large_correct = self.reference_bit()
        if self.settings.depth_budget == 0:
            try:
                comp = self.call(self.endpoints[0],
                                 generation_prompt(self.problem.question),
                                 None, "full")
                root = {"depth": 0, "terminal": self.terminal(comp.text, large_correct)}
            except EndpointError:
                self.flag("unexpanded", depth=0, action="continue")
                root = {"depth": 0, "terminal": self.terminal(None, large_correct)}
        else:
            root = self.expand(0, [], 0, large_correct)
        record: dict = {
            "schema_version": SCHEMA_VERSION,
            "problem_id": self.problem.problem_id,
            "model_pool": model_pool_record(self.endpoints),
            "root": root,
        }
        if self.problem.difficulty is not None:
            record["difficulty"] = float(self.problem.difficulty)
        report = {
            "problem_id": self.problem.problem_id,
            "large_model_correct": large_correct,
            "label_source": "normalized-match",
            "calls": self.calls,
            "flags": self.flags,
        }
        return record, report


def collect_tree(problem: Problem, endpoints: Sequence[Endpoint],
                 settings: CollectSettings,
                 verifier: Optional[Endpoint] = None,
                 limiter: Optional[RateLimiter] = None,
                 sleep: Callable[[float], None] = time.sleep):
    """Collect one problem -> (trace record dict, collection report dict)."""
    builder = _TreeBuilder(problem, endpoints, settings, verifier, limiter, sleep)
    return builder.build()


def collect_problems(problems: Sequence[Problem], endpoints: Sequence[Endpoint],
                     settings: CollectSettings,
                     verifier: Optional[Endpoint] = None,
                     limiter: Optional[RateLimiter] = None, workers: int = 1,
                     sleep: Callable[[float], None] = time.sleep):
    """Collect every problem -> (records, reports), in input order.

    Workers parallelize across problems only; a single worker assembles any
    one tree, and all workers share the rate limiter.
    """
    if workers < 1:
        raise ValueError("workers must be at least 1")
    if workers == 1:
        pairs = [collect_tree(p, endpoints, settings, verifier, limiter, sleep)
                 for p in problems]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(collect_tree, p, endpoints, settings,
                                   verifier, limiter, sleep)
                       for p in problems]
            pairs = [f.result() for f in futures]
    return [rec for rec, _ in pairs], [rep for _, rep in pairs]


# ---------------------------------------------------------------------------
# file I/O


def read_problems(path) -> list:
    """Parse a problems file: one JSON object per line with id, question,
    answer, and optional difficulty."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            try:
                gold = obj["answer"]
                out.append(Problem(
                    problem_id=str(obj["id"]),
                    question=str(obj["question"]),
                    gold_answer=gold if isinstance(gold, str) else repr(gold),
                    difficulty=obj.get("difficulty"),
                ))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"line {line_no}: {exc}") from exc
    return out


def write_trace_file(records: Sequence[dict], path) -> None:
    """One sorted-key JSON object per line; the routing trace contract."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":"),
                                ensure_ascii=False, allow_nan=False) + "\n")


def write_report(reports: Sequence[dict], path) -> None:
    totals = {
        "calls": sum(len(r["calls"]) for r in reports),
        "input_tokens": sum(c["input_tokens"] for r in reports for c in r["calls"]),
        "cached_tokens": sum(c["cached_tokens"] for r in reports for c in r["calls"]),
        "output_tokens": sum(c["output_tokens"] for r in reports for c in r["calls"]),
        "flags": sum(len(r["flags"]) for r in reports),
    }
    obj = {"totals": totals, "problems": list(reports)}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1, ensure_ascii=False)
        fh.write("\n")
