"""Online threshold calibration.

The routing threshold kappa is adjusted after every episode by a
stochastic-approximation step driven by a single coverage bit:
kappa rises by eta*(1-alpha) on a miss and falls by eta*alpha on a hit,
clamped to [0, 1]. With a step size decaying as 1/sqrt(k+1) the long-run
miss rate settles near alpha.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import policy as policy_mod

SCHEDULES = ("fixed", "inverse_sqrt")


@dataclass
class CoverageEvent:
    routed_correct: bool
    large_correct: bool
    all_steps_verified: bool

    def __post_init__(self) -> None:
        for name in ("routed_correct", "large_correct", "all_steps_verified"):
            if not isinstance(getattr(self, name), (bool, np.bool_)):
                raise ValueError(f"{name} must be a bool")


@dataclass
class CalibratorState:
    kappa: float = 0.5
    alpha: float = 0.02
    step_base: float = 0.1
    schedule: str = "fixed"
    iteration: int = 0
    coverage_window: deque = field(default_factory=lambda: deque(maxlen=1000))

    def __post_init__(self) -> None:
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError("kappa must lie in [0, 1]")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.step_base <= 0.0:
            raise ValueError("step_base must be positive")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")

    def step_size(self) -> float:
        if self.schedule == "inverse_sqrt":
            return self.step_base / np.sqrt(self.iteration + 1.0)
        return self.step_base

    def window_miscoverage(self) -> float:
        if not self.coverage_window:
            return 0.0
        return 1.0 - float(np.mean(self.coverage_window))


def coverage_bit(ev: CoverageEvent, use_verifier: bool) -> int:
    covered = ev.routed_correct or not ev.large_correct
    if use_verifier:
        covered = covered or ev.all_steps_verified
    return int(covered)


def update_kappa(state: CalibratorState, ev: CoverageEvent,
                 use_verifier: bool) -> CalibratorState:
    bit = coverage_bit(ev, use_verifier)
    eta = state.step_size()
    delta = eta * (1.0 - bit - state.alpha)
    # exactly one of the two legal magnitudes, pre-clamp
    assert np.isclose(delta, -eta * state.alpha) or \
        np.isclose(delta, eta * (1.0 - state.alpha))
    window = deque(state.coverage_window, maxlen=state.coverage_window.maxlen)
    window.append(bit)
    return CalibratorState(
        kappa=min(1.0, max(0.0, state.kappa + delta)),
        alpha=state.alpha,
        step_base=state.step_base,
        schedule=state.schedule,
        iteration=state.iteration + 1,
        coverage_window=window,
    )


def episode_event(env, tp) -> tuple:
    """Run one deterministic routed episode; returns (event, total cost, steps)."""
    obs = env.reset()
    total_cost = 0.0
    steps = 0
    all_verified = True
    while True:
        act = policy_mod.route_inference(tp, obs)
        out = env.step(act)
        total_cost += out.cost
        steps += 1
        if out.verifier_bit is None or not out.verifier_bit:
            all_verified = False
        if out.terminal:
            label = out.terminal_label
            ev = CoverageEvent(bool(label.routed_correct),
                               bool(label.large_model_correct),
                               bool(all_verified))
            return ev, total_cost, steps
        obs = out.observation


def run_calibration(env, tp, state: CalibratorState, episodes: int,
                    use_verifier: bool, trace_out=None) -> tuple:
    """Route `episodes` problems under the live kappa, updating it after each.

    Returns (final state, list of coverage bits). The policy network is
    fixed; only kappa moves.
    """
    bits = []
    for _ in range(episodes):
        tp = policy_mod.ThresholdPolicy(tp.head, state.kappa)
        ev, _, _ = episode_event(env, tp)
        bit = coverage_bit(ev, use_verifier)
        bits.append(bit)
        state = update_kappa(state, ev, use_verifier)
        if trace_out is not None:
            miss = 1.0 - float(np.mean(bits))
            trace_out.write(f"{state.iteration}\t{state.kappa:.6f}\t{bit}\t{miss:.6f}\n")
    return state, bits
