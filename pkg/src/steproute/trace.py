"""Trace-tree data model and line-delimited JSON serialization.

A trace file holds one problem per line. Each line is a JSON object with
``schema_version: 1`` and snake_case keys serialized in canonical (sorted)
key order, so a loaded tree re-serializes to the identical byte sequence.

Tree shape: the root sits at depth 0 and edges are keyed by routing action.
Every non-terminal node carries a ``continue`` child whose step record is the
draft proposed by the model active at that node; an ``escalate_to_<k>`` child,
when expanded, records the replacement step generated by model ``k``. A node
either carries a terminal label or has children, never both.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Optional

SCHEMA_VERSION = 1
T_MAX_DEFAULT = 32

_ESCALATE_KEY_RE = re.compile(r"^escalate_to_([1-9][0-9]*)$")


class TraceParseError(ValueError):
    """Raised when a trace line is not valid JSON or misses required keys."""

    def __init__(self, message: str, line_no: Optional[int] = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class TraceValidationError(ValueError):
    """Raised when a structurally parsed tree violates a format invariant."""

    def __init__(self, message: str, problem_id: Optional[str] = None):
        if problem_id is not None:
            message = f"problem {problem_id!r}: {message}"
        super().__init__(message)
        self.problem_id = problem_id


@dataclass(frozen=True)
class Action:
    """A routing action: accept the current draft or escalate to model ``target``."""

    kind: str  # "continue" | "escalate"
    target: Optional[int] = None

    def __post_init__(self):
        if self.kind == "continue":
            if self.target is not None:
                raise ValueError("continue action carries no target")
        elif self.kind == "escalate":
            if not isinstance(self.target, int) or self.target < 1:
                raise ValueError("escalate action needs a target index >= 1")
        else:
            raise ValueError(f"unknown action kind {self.kind!r}")

    @staticmethod
    def cont() -> "Action":
        return Action("continue")

    @staticmethod
    def escalate(target: int) -> "Action":
        return Action("escalate", target)

    @property
    def index(self) -> int:
        """Global action index: 0 for continue, k for escalate_to_k."""
        return 0 if self.kind == "continue" else int(self.target)

    def key(self) -> str:
        if self.kind == "continue":
            return "continue"
        return f"escalate_to_{self.target}"

    @staticmethod
    def from_key(key: str) -> "Action":
        if key == "continue":
            return Action.cont()
        m = _ESCALATE_KEY_RE.match(key)
        if m is None:
            raise ValueError(f"bad action key {key!r}")
        return Action.escalate(int(m.group(1)))

    @staticmethod
    def from_index(index: int) -> "Action":
        return Action.cont() if index == 0 else Action.escalate(index)


@dataclass(frozen=True)
class ApiPricing:
    """Endpoint rates in US cents per 10^6 tokens."""

    input_per_mtok: float
    cached_input_per_mtok: float
    output_per_mtok: float

    def __post_init__(self):
        for name in ("input_per_mtok", "cached_input_per_mtok", "output_per_mtok"):
            v = getattr(self, name)
            if not _finite(v) or v < 0:
                raise ValueError(f"{name} must be a finite nonnegative number")
        if self.cached_input_per_mtok > self.input_per_mtok:
            raise ValueError("cached input rate must not exceed the input rate")


@dataclass(frozen=True)
class ModelId:
    """One entry of the model pool, ordered by increasing capability and cost."""

    index: int
    param_count: float
    pricing: Optional[ApiPricing] = None

    def __post_init__(self):
        if not isinstance(self.index, int) or self.index < 0:
            raise ValueError("model index must be a nonnegative integer")
        if not _finite(self.param_count) or self.param_count <= 0:
            raise ValueError("param_count must be positive")


@dataclass(frozen=True)
class StepRecord:
    """Observable facts about one generated reasoning step."""

    text_len_tokens: int
    uncertainty: float
    is_final_answer: bool
    input_tokens_billed: int
    cached_tokens_billed: int
    output_tokens_billed: int
    verifier_bit: Optional[bool] = None

    def __post_init__(self):
        for name in ("text_len_tokens", "input_tokens_billed",
                     "cached_tokens_billed", "output_tokens_billed"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise ValueError(f"{name} must be a nonnegative integer")
        if not _finite(self.uncertainty):
            raise ValueError("uncertainty must be finite")
        if not isinstance(self.is_final_answer, bool):
            raise ValueError("is_final_answer must be a bool")
        if self.verifier_bit is not None and not isinstance(self.verifier_bit, bool):
            raise ValueError("verifier_bit must be a bool when present")


@dataclass(frozen=True)
class TerminalLabel:
    """Outcome bits for a finished path: routed correctness and the large-model reference."""

    routed_correct: bool
    large_model_correct: bool

    def __post_init__(self):
        if not isinstance(self.routed_correct, bool) or not isinstance(self.large_model_correct, bool):
            raise ValueError("terminal label bits must be bools")


@dataclass
class TraceNode:
    depth: int
    children: dict = field(default_factory=dict)  # Action -> (StepRecord, TraceNode)
    terminal: Optional[TerminalLabel] = None

    def child(self, action: Action):
        """Return (StepRecord, TraceNode) for ``action`` or None when unexpanded."""
        return self.children.get(action)


@dataclass
class TraceTree:
    problem_id: str
    root: TraceNode
    model_pool: list
    difficulty: Optional[float] = None


def _finite(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def is_verifier_labeled(tree: TraceTree) -> bool:
    """True when every step record in the tree carries a verifier bit."""

    def walk(node: TraceNode) -> bool:
        for step, child in node.children.values():
            if step.verifier_bit is None or not walk(child):
                return False
        return True

    return walk(tree.root)


def validate_tree(tree: TraceTree, t_max: int = T_MAX_DEFAULT) -> None:
    """Check structural invariants; raise TraceValidationError on the first violation."""
    pid = tree.problem_id
    if not isinstance(pid, str) or not pid:
        raise TraceValidationError("problem_id must be a nonempty string")
    if tree.difficulty is not None:
        if not _finite(tree.difficulty) or not 0.0 <= tree.difficulty <= 1.0:
            raise TraceValidationError("difficulty must lie in [0, 1]", pid)

    pool = tree.model_pool
    if not pool:
        raise TraceValidationError("model_pool must be nonempty", pid)
    for i, m in enumerate(pool):
        if m.index != i:
            raise TraceValidationError(
                f"model_pool indices must be dense and ordered, got {m.index} at position {i}", pid)
    k = len(pool)

    if tree.root.depth != 0:
        raise TraceValidationError(f"root depth must be 0, got {tree.root.depth}", pid)

    def walk(node: TraceNode, current_model: int) -> None:
        if node.depth > t_max:
            raise TraceValidationError(
                f"node depth {node.depth} exceeds horizon cap {t_max}", pid)
        has_children = bool(node.children)
        if has_children == (node.terminal is not None):
            raise TraceValidationError(
                f"node at depth {node.depth} must be terminal xor have children", pid)
        for action, (step, child) in node.children.items():
            next_model = current_model
            if action.kind == "escalate":
                if not current_model < action.target < k:
                    raise TraceValidationError(
                        f"escalation target {action.target} invalid from model "
                        f"{current_model} in a pool of {k}", pid)
                next_model = action.target
            if child.depth != node.depth + 1:
                raise TraceValidationError(
                    f"child depth {child.depth} under depth {node.depth} is not parent+1", pid)
            walk(child, next_model)

    walk(tree.root, 0)


# ---------------------------------------------------------------------------
# JSON record <-> dataclass mapping


def _pricing_to_obj(p: ApiPricing) -> dict:
    return {
        "input_per_mtok": float(p.input_per_mtok),
        "cached_input_per_mtok": float(p.cached_input_per_mtok),
        "output_per_mtok": float(p.output_per_mtok),
    }


def _step_to_obj(s: StepRecord) -> dict:
    obj = {
        "text_len_tokens": s.text_len_tokens,
        "uncertainty": float(s.uncertainty),
        "is_final_answer": s.is_final_answer,
        "input_tokens_billed": s.input_tokens_billed,
        "cached_tokens_billed": s.cached_tokens_billed,
        "output_tokens_billed": s.output_tokens_billed,
    }
    if s.verifier_bit is not None:
        obj["verifier_bit"] = s.verifier_bit
    return obj


def _node_to_obj(n: TraceNode) -> dict:
    obj: dict = {"depth": n.depth}
    if n.children:
        obj["children"] = {
            action.key(): {"step": _step_to_obj(step), "node": _node_to_obj(child)}
            for action, (step, child) in n.children.items()
        }
    if n.terminal is not None:
        obj["terminal"] = {
            "routed_correct": n.terminal.routed_correct,
            "large_model_correct": n.terminal.large_model_correct,
        }
    return obj


def tree_to_record(tree: TraceTree) -> dict:
    obj: dict = {
        "schema_version": SCHEMA_VERSION,
        "problem_id": tree.problem_id,
        "model_pool": [
            {"index": m.index, "param_count": float(m.param_count),
             **({"pricing": _pricing_to_obj(m.pricing)} if m.pricing is not None else {})}
            for m in tree.model_pool
        ],
        "root": _node_to_obj(tree.root),
    }
    if tree.difficulty is not None:
        obj["difficulty"] = float(tree.difficulty)
    return obj


def _require(obj: dict, key: str, ctx: str):
    if key not in obj:
        raise TraceParseError(f"missing key {key!r} in {ctx}")
    return obj[key]


def _as_int(v, what: str) -> int:
    if not isinstance(v, int) or isinstance(v, bool):
        raise TraceParseError(f"{what} must be an integer, got {v!r}")
    return v


def _as_float(v, what: str) -> float:
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        raise TraceParseError(f"{what} must be a number, got {v!r}")
    return float(v)


def _as_bool(v, what: str) -> bool:
    if not isinstance(v, bool):
        raise TraceParseError(f"{what} must be a boolean, got {v!r}")
    return v


def _step_from_obj(obj: dict) -> StepRecord:
    vb = obj.get("verifier_bit")
    return StepRecord(
        text_len_tokens=_as_int(_require(obj, "text_len_tokens", "step"), "text_len_tokens"),
        uncertainty=_as_float(_require(obj, "uncertainty", "step"), "uncertainty"),
        is_final_answer=_as_bool(_require(obj, "is_final_answer", "step"), "is_final_answer"),
        input_tokens_billed=_as_int(_require(obj, "input_tokens_billed", "step"), "input_tokens_billed"),
        cached_tokens_billed=_as_int(_require(obj, "cached_tokens_billed", "step"), "cached_tokens_billed"),
        output_tokens_billed=_as_int(_require(obj, "output_tokens_billed", "step"), "output_tokens_billed"),
        verifier_bit=None if vb is None else _as_bool(vb, "verifier_bit"),
    )


def _node_from_obj(obj: dict) -> TraceNode:
    if not isinstance(obj, dict):
        raise TraceParseError("node must be an object")
    node = TraceNode(depth=_as_int(_require(obj, "depth", "node"), "depth"))
    for key, edge in obj.get("children", {}).items():
        try:
            action = Action.from_key(key)
        except ValueError as exc:
            raise TraceParseError(str(exc)) from exc
        if not isinstance(edge, dict):
            raise TraceParseError(f"child {key!r} must be an object")
        step = _step_from_obj(_require(edge, "step", f"child {key!r}"))
        child = _node_from_obj(_require(edge, "node", f"child {key!r}"))
        node.children[action] = (step, child)
    term = obj.get("terminal")
    if term is not None:
        node.terminal = TerminalLabel(
            routed_correct=_as_bool(_require(term, "routed_correct", "terminal"), "routed_correct"),
            large_model_correct=_as_bool(
                _require(term, "large_model_correct", "terminal"), "large_model_correct"),
        )
    return node


def record_to_tree(obj: dict) -> TraceTree:
    if not isinstance(obj, dict):
        raise TraceParseError("trace record must be a JSON object")
    version = _require(obj, "schema_version", "record")
    if version != SCHEMA_VERSION:
        raise TraceParseError(f"unsupported schema_version {version!r}")
    pool = []
    for entry in _require(obj, "model_pool", "record"):
        pricing = entry.get("pricing")
        pool.append(ModelId(
            index=_as_int(_require(entry, "index", "model_pool entry"), "index"),
            param_count=_as_float(_require(entry, "param_count", "model_pool entry"), "param_count"),
            pricing=None if pricing is None else ApiPricing(
                input_per_mtok=_as_float(_require(pricing, "input_per_mtok", "pricing"), "input_per_mtok"),
                cached_input_per_mtok=_as_float(
                    _require(pricing, "cached_input_per_mtok", "pricing"), "cached_input_per_mtok"),
                output_per_mtok=_as_float(_require(pricing, "output_per_mtok", "pricing"), "output_per_mtok"),
            ),
        ))
    difficulty = obj.get("difficulty")
    return TraceTree(
        problem_id=_require(obj, "problem_id", "record"),
        root=_node_from_obj(_require(obj, "root", "record")),
        model_pool=pool,
        difficulty=None if difficulty is None else _as_float(difficulty, "difficulty"),
    )


def canonical_json(obj) -> str:
    """Serialize with sorted keys and no whitespace; rejects non-finite floats."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False, allow_nan=False)


def dumps_tree(tree: TraceTree) -> str:
    return canonical_json(tree_to_record(tree))


def save_trace_file(trees: Iterable[TraceTree], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for tree in trees:
            validate_tree(tree)
            fh.write(dumps_tree(tree) + "\n")


def load_trace_file(path, t_max: int = T_MAX_DEFAULT) -> list:
    """Parse and validate a trace file; returns a list of TraceTree.

    An empty file yields an empty list. Parse errors carry the 1-based line
    number; validation errors carry the offending problem_id.
    """
    trees = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceParseError(f"invalid JSON ({exc.msg})", line_no) from exc
            try:
                tree = record_to_tree(obj)
            except TraceParseError as exc:
                raise TraceParseError(str(exc), line_no) from exc
            validate_tree(tree, t_max=t_max)
            trees.append(tree)
    return trees


def validate_flops_pool(model_pool) -> None:
    """FLOPs costing additionally requires strictly increasing param counts."""
    for a, b in zip(model_pool, model_pool[1:]):
        if not b.param_count > a.param_count:
            raise TraceValidationError(
                f"param_count must increase strictly with index for FLOPs costing "
                f"({a.param_count} at {a.index} vs {b.param_count} at {b.index})")
