"""Observation construction and the two step-level uncertainty scores.

The observation is a fixed six-feature vector; its layout is pinned because
the policy network's input dimension is baked into checkpoints:

    [uncertainty, step_index_norm, difficulty, is_final_answer,
     step_len_norm, current_model_frac]
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .trace import StepRecord, T_MAX_DEFAULT

FEATURE_DIM = 6
STEP_LEN_CAP = 512  # tokens; generous for a single reasoning step


@dataclass(frozen=True)
class Observation:
    """Black-box per-step features the router sees."""

    uncertainty: float
    step_index_norm: float
    difficulty: float
    is_final_answer: float
    step_len_norm: float
    current_model_frac: float

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"observation field {name} must be finite")

    def vector(self) -> np.ndarray:
        return np.array([
            self.uncertainty,
            self.step_index_norm,
            self.difficulty,
            self.is_final_answer,
            self.step_len_norm,
            self.current_model_frac,
        ], dtype=np.float64)


@dataclass
class RunningStats:
    """Streaming mean/variance for uncertainty standardization.

    Fitted once on training data, then frozen; evaluation never mutates it.
    Uses Welford accumulation so a single pass is exact.
    """

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def update(self, value: float) -> None:
        self.count += 1
        delta = value - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (value - self.mean)

    @property
    def variance(self) -> float:
        return self.m2 / self.count if self.count > 1 else 1.0

    @property
    def std(self) -> float:
        return math.sqrt(max(self.variance, 1e-16))

    def standardize(self, value: float) -> float:
        if self.count == 0:
            return value
        return (value - self.mean) / self.std

    def to_obj(self) -> dict:
        return {"count": self.count, "mean": self.mean, "m2": self.m2}

    @staticmethod
    def from_obj(obj: dict) -> "RunningStats":
        return RunningStats(count=int(obj["count"]), mean=float(obj["mean"]),
                            m2=float(obj["m2"]))


def score_open(logit_rows, math_mask) -> float:
    """Mean per-token max pre-softmax logit over math-masked positions.

    ``logit_rows`` holds the max logit already extracted per token. An empty
    mask falls back to averaging every position.
    """
    rows = [float(v) for v in logit_rows]
    if not rows:
        raise ValueError("score_open needs at least one token")
    mask = list(math_mask)
    if len(mask) != len(rows):
        raise ValueError("mask length must match token count")
    picked = [v for v, m in zip(rows, mask) if m] or rows
    return math.fsum(picked) / len(picked)


def score_api(top1_probs, math_mask) -> float:
    """Minimum top-1 probability over math-masked positions (empty mask: all)."""
    probs = [float(p) for p in top1_probs]
    if not probs:
        raise ValueError("score_api needs at least one token")
    for p in probs:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"probability {p} outside [0, 1]")
    mask = list(math_mask)
    if len(mask) != len(probs):
        raise ValueError("mask length must match token count")
    picked = [p for p, m in zip(probs, mask) if m] or probs
    return min(picked)


def build_observation(step: StepRecord, t: int, difficulty, model_index: int,
                      stats: RunningStats, num_models: int,
                      t_max: int = T_MAX_DEFAULT) -> Observation:
    """Deterministic feature vector for one step record.

    ``stats`` must already be fitted (training pass) and is treated as frozen.
    """
    if t < 0:
        raise ValueError("step index must be nonnegative")
    if not 0 <= model_index < num_models:
        raise ValueError("model_index out of range")
    frac = model_index / (num_models - 1) if num_models > 1 else 0.0
    return Observation(
        uncertainty=stats.standardize(step.uncertainty),
        step_index_norm=t / t_max,
        difficulty=0.5 if difficulty is None else float(difficulty),
        is_final_answer=1.0 if step.is_final_answer else 0.0,
        step_len_norm=min(step.text_len_tokens / STEP_LEN_CAP, 1.0),
        current_model_frac=frac,
    )
