"""Off-policy value targets and advantages via V-trace.

Two critics share the machinery: the cost critic regresses cumulative
per-step cost, the coverage critic regresses a terminal-only indicator.
Importance ratios compare the filtered target distribution S against the
recorded behavior probabilities, clipped per step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import nn
from .calibrate import CoverageEvent, coverage_bit
from .features import Observation
from .trace import Action, TerminalLabel

SIGNALS = ("cost", "coverage")


@dataclass
class VTraceConfig:
    rho_bar: float = 2.0
    c_bar: float = 1.0
    discount: float = 1.0

    def __post_init__(self) -> None:
        if self.rho_bar < 1.0:
            raise ValueError("rho_bar must be >= 1")
        if self.c_bar < 1.0:
            raise ValueError("c_bar must be >= 1")
        if self.c_bar > self.rho_bar:
            raise ValueError("c_bar must not exceed rho_bar")
        if not 0.0 < self.discount <= 1.0:
            raise ValueError("discount must lie in (0, 1]")


@dataclass
class StepSample:
    obs: Observation
    action: Action
    behavior_prob: float
    cost: float
    verifier_bit: Optional[bool] = None


@dataclass
class EpisodeLog:
    steps: list
    label: TerminalLabel

    @property
    def length(self) -> int:
        return len(self.steps)

    def total_cost(self) -> float:
        return float(sum(s.cost for s in self.steps))

    def coverage_event(self) -> CoverageEvent:
        verified = all(s.verifier_bit is True for s in self.steps)
        return CoverageEvent(bool(self.label.routed_correct),
                             bool(self.label.large_model_correct),
                             bool(verified))


def _signals(ep: EpisodeLog, signal: str, use_verifier: bool) -> np.ndarray:
    if signal == "cost":
        return np.array([s.cost for s in ep.steps], dtype=np.float64)
    if signal == "coverage":
        out = np.zeros(ep.length)
        out[-1] = coverage_bit(ep.coverage_event(), use_verifier)
        return out
    raise ValueError(f"signal must be one of {SIGNALS}")


def _ratios(ep: EpisodeLog, target_probs: Callable, cfg: VTraceConfig):
    """Per-step clipped ratios (rho, c-trace) of S(a|o) over behavior prob."""
    rho = np.empty(ep.length)
    ctr = np.empty(ep.length)
    for t, s in enumerate(ep.steps):
        if not s.behavior_prob > 0.0:
            raise ValueError("behavior probability must be positive")
        ratio = float(target_probs(s.obs)[s.action.index]) / s.behavior_prob
        rho[t] = min(cfg.rho_bar, ratio)
        ctr[t] = min(cfg.c_bar, ratio)
        assert rho[t] <= cfg.rho_bar
    return rho, ctr


def episode_targets(ep: EpisodeLog, critic: nn.CriticHead, target_probs: Callable,
                    cfg: VTraceConfig, signal: str, use_verifier: bool = True):
    """V-trace targets v_t and the values V(o_t) used, for one episode.

    Terminal bootstrap is zero: episodes end, nothing follows.
    """
    sig = _signals(ep, signal, use_verifier)
    rho, ctr = _ratios(ep, target_probs, cfg)
    obs_mat = np.stack([s.obs.vector() for s in ep.steps])
    vals = nn.values(critic, obs_mat)
    gamma = cfg.discount
    T = ep.length
    v = np.zeros(T + 1)
    vals_ext = np.append(vals, 0.0)
    for t in range(T - 1, -1, -1):
        delta = rho[t] * (sig[t] + gamma * vals_ext[t + 1] - vals_ext[t])
        v[t] = vals_ext[t] + delta + gamma * ctr[t] * (v[t + 1] - vals_ext[t + 1])
    if not np.all(np.isfinite(v)):
        raise nn.NumericError("non-finite V-trace target")
    return v[:T], vals, rho


def vtrace_targets(episodes: list, critic: nn.CriticHead, target_probs: Callable,
                   cfg: VTraceConfig, signal: str, use_verifier: bool = True) -> list:
    return [episode_targets(ep, critic, target_probs, cfg, signal, use_verifier)[0]
            for ep in episodes]


def advantages(episodes: list, critic: nn.CriticHead, target_probs: Callable,
               cfg: VTraceConfig, signal: str, use_verifier: bool = True) -> list:
    """A_t = rho_t * (signal_t + gamma * v_{t+1} - V(o_t)) per episode."""
    out = []
    gamma = cfg.discount
    for ep in episodes:
        v, vals, rho = episode_targets(ep, critic, target_probs, cfg,
                                       signal, use_verifier)
        sig = _signals(ep, signal, use_verifier)
        v_next = np.append(v[1:], 0.0)
        out.append(rho * (sig + gamma * v_next - vals))
    return out


def fit_critic(episodes: list, critic: nn.CriticHead, target_probs: Callable,
               cfg: VTraceConfig, signal: str, use_verifier: bool = True,
               lr: float = 1e-3, steps: int = 25) -> tuple:
    """Full-batch gradient descent toward frozen V-trace targets.

    Each step backtracks (halving) until the batch loss decreases, so the
    after-loss never exceeds the before-loss. Returns (critic, before, after).
    """
    targets = vtrace_targets(episodes, critic, target_probs, cfg, signal,
                             use_verifier)
    x = np.vstack([np.stack([s.obs.vector() for s in ep.steps])
                   for ep in episodes])
    y = np.concatenate(targets)
    params = critic.params.copy()
    before = None
    loss = None
    for _ in range(steps):
        loss, grad = nn.critic_loss_and_grad(nn.CriticHead(params), x, y)
        if before is None:
            before = loss
        if loss == 0.0:
            break
        flat = nn.flatten(params)
        step = lr
        for _ in range(40):
            cand = nn.unflatten(params, flat - step * grad)
            new_loss, _ = nn.critic_loss_and_grad(nn.CriticHead(cand), x, y)
            if new_loss < loss:
                params = cand
                loss = new_loss
                break
            step *= 0.5
        else:
            break  # no improving step at any scale: converged
    after = nn.critic_loss_and_grad(nn.CriticHead(params), x, y)[0] \
        if loss is None else loss
    return nn.CriticHead(params), before if before is not None else after, after


def fit_critics(episodes: list, cost_critic: nn.CriticHead,
                coverage_critic: nn.CriticHead, target_probs: Callable,
                cfg: VTraceConfig, use_verifier: bool = True,
                lr: float = 1e-3, steps: int = 25) -> tuple:
    """Fit both critics; returns (cost critic, coverage critic, loss dict)."""
    cost_critic, cb, ca = fit_critic(episodes, cost_critic, target_probs, cfg,
                                     "cost", use_verifier, lr, steps)
    coverage_critic, vb, va = fit_critic(episodes, coverage_critic, target_probs,
                                         cfg, "coverage", use_verifier, lr, steps)
    losses = {"cost_before": cb, "cost_after": ca,
              "coverage_before": vb, "coverage_after": va}
    return cost_critic, coverage_critic, losses
