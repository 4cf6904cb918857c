"""Threshold-filtered routing policies.

Three views of one network:
  * the smooth categorical pi(a|o) (sampling during training),
  * the filtered uniform distribution S over {a : pi(a|o) >= kappa}
    (importance-weighting target),
  * the deterministic inference rule: escalate iff the escalate
    probability clears kappa.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import Observation
from .nn import PolicyHead, policy_probs
from .trace import Action


@dataclass
class ThresholdPolicy:
    head: PolicyHead
    kappa: float

    def __post_init__(self) -> None:
        k = float(self.kappa)
        if not np.isfinite(k) or not 0.0 <= k <= 1.0:
            raise ValueError(f"kappa must lie in [0, 1], got {self.kappa}")
        self.kappa = k


def model_index_of(obs: Observation, num_models: int) -> int:
    if num_models == 1:
        return 0
    return int(round(obs.current_model_frac * (num_models - 1)))


def valid_action_mask(current_index: int, num_models: int) -> np.ndarray:
    """Continue is always allowed; escalation only to strictly larger models."""
    mask = np.zeros(num_models, dtype=bool)
    mask[0] = True
    mask[current_index + 1:] = True
    return mask


def smooth_probs(head: PolicyHead, obs: Observation) -> np.ndarray:
    num_models = head.n_actions
    mask = valid_action_mask(model_index_of(obs, num_models), num_models)
    return policy_probs(head, obs.vector(), mask)


def threshold_set(probs: np.ndarray, mask: np.ndarray, kappa: float) -> list:
    """Indices with probability >= kappa; argmax fallback when none clear.

    Ties in the fallback resolve to the lowest index, which is the cheapest
    action (continue, then escalation targets in size order).
    """
    idx = [i for i in range(len(probs)) if mask[i] and probs[i] >= kappa]
    if not idx:
        masked = np.where(mask, probs, -np.inf)
        idx = [int(np.argmax(masked))]
    return idx


def action_set(tp: ThresholdPolicy, obs: Observation) -> list:
    num_models = tp.head.n_actions
    mask = valid_action_mask(model_index_of(obs, num_models), num_models)
    probs = policy_probs(tp.head, obs.vector(), mask)
    return [Action.from_index(i) for i in threshold_set(probs, mask, tp.kappa)]


def filtered_probs_vector(probs: np.ndarray, mask: np.ndarray, kappa: float) -> np.ndarray:
    out = np.zeros_like(probs)
    idx = threshold_set(probs, mask, kappa)
    out[idx] = 1.0 / len(idx)
    return out


def filtered_rows(probs: np.ndarray, masks: np.ndarray, kappa: float) -> np.ndarray:
    """Row-wise threshold filtering over a (N, K) probability matrix.

    Rows where nothing clears kappa fall back to the masked argmax, matching
    the scalar path; ties there resolve to the lowest index (cheapest action).
    """
    member = (probs >= kappa) & masks
    empty = ~member.any(axis=1)
    if empty.any():
        fallback = np.argmax(np.where(masks[empty], probs[empty], -np.inf), axis=1)
        member[np.nonzero(empty)[0], fallback] = True
    return member / member.sum(axis=1, keepdims=True)


def filtered_distribution(tp: ThresholdPolicy, obs: Observation) -> np.ndarray:
    num_models = tp.head.n_actions
    mask = valid_action_mask(model_index_of(obs, num_models), num_models)
    probs = policy_probs(tp.head, obs.vector(), mask)
    return filtered_probs_vector(probs, mask, tp.kappa)


def behavior_sample(head: PolicyHead, obs: Observation,
                    rng: np.random.Generator) -> tuple:
    """Draw an action from the smooth pi; the returned probability is the
    exact mass used, recorded for later importance ratios."""
    probs = smooth_probs(head, obs)
    a = int(rng.choice(len(probs), p=probs))
    return Action.from_index(a), float(probs[a])


def route_inference(tp: ThresholdPolicy, obs: Observation) -> Action:
    """Deterministic routing: escalate to the largest target whose
    probability clears kappa (inclusive), otherwise continue."""
    probs = smooth_probs(tp.head, obs)
    num_models = tp.head.n_actions
    mask = valid_action_mask(model_index_of(obs, num_models), num_models)
    for j in range(num_models - 1, 0, -1):
        if mask[j] and probs[j] >= tp.kappa:
            return Action.from_index(j)
    return Action.cont()
