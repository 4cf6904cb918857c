"""Trust-region constrained policy updates.

Each update linearizes the cost objective and the coverage constraint around
the current network, solves the quadratic trust-region subproblem in natural
gradient coordinates (conjugate gradient against Fisher-vector products),
and line-searches the proposed step. Three regimes:

  slack     constraint comfortably satisfied: plain natural-gradient step
  binding   dual-optimal mix of objective and constraint directions
  recovery  infeasible beyond repair inside the radius: move along the
            constraint gradient only

The trust region is measured between the threshold-filtered distributions
at fixed kappa; since those are piecewise constant in the logits, gradients
use the underlying smooth categorical and the literal filtered KL serves as
the line-search acceptance check.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import nn
from .calibrate import coverage_bit
from .policy import (ThresholdPolicy, filtered_rows, model_index_of,
                     valid_action_mask)


@dataclass
class CpoConfig:
    delta: float = 0.01
    alpha: float = 0.02
    cg_iters: int = 20
    cg_tol: float = 1e-10
    backtrack_coeff: float = 0.5
    max_backtracks: int = 15
    damping: float = 0.1

    def __post_init__(self) -> None:
        if self.delta <= 0.0:
            raise ValueError("delta must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.cg_iters <= 0 or self.cg_tol <= 0.0:
            raise ValueError("cg parameters must be positive")
        if not 0.0 < self.backtrack_coeff < 1.0:
            raise ValueError("backtrack_coeff must lie in (0, 1)")
        if self.max_backtracks < 0:
            raise ValueError("max_backtracks must be nonnegative")
        if self.damping < 0.0:
            raise ValueError("damping must be nonnegative")


@dataclass
class ConstraintEstimate:
    j_bar: float
    p_routed_correct: float
    p_large_wrong: float

    def __post_init__(self) -> None:
        for name in ("j_bar", "p_routed_correct", "p_large_wrong"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        expected = min(1.0, self.p_routed_correct + self.p_large_wrong)
        if abs(self.j_bar - expected) > 1e-12:
            raise ValueError("j_bar must equal min(1, p_routed_correct + p_large_wrong)")


@dataclass
class StepReport:
    accepted: bool
    case: str
    lam: float = 0.0
    nu: float = 0.0
    kl: float = 0.0
    surrogate_before: float = 0.0
    surrogate_after: float = 0.0
    jbar_before: float = 0.0
    jbar_after: float = 0.0
    empirical_coverage: float = 0.0
    backtracks: int = 0
    message: str = ""


def conjugate_gradient(apply_A: Callable, b: np.ndarray, iters: int,
                       tol: float) -> np.ndarray:
    """Solve A x = b for symmetric positive definite A."""
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return x
    for _ in range(iters):
        if np.sqrt(rs) <= tol * b_norm:
            break
        Ap = apply_A(p)
        if not np.all(np.isfinite(Ap)):
            raise nn.NumericError("non-finite operator output in CG")
        alpha = rs / float(p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
    if not np.all(np.isfinite(x)):
        raise nn.NumericError("non-finite CG solution")
    return x


def empirical_coverage(episodes: list) -> float:
    bits = [coverage_bit(ep.coverage_event(), use_verifier=False)
            for ep in episodes]
    return float(np.mean(bits))


def _episode_weight(ep, tp: ThresholdPolicy, rho_bar: float):
    """Clipped product importance weight of S over behavior, with the
    per-step unclipped flags needed for the score-function gradient."""
    from .policy import filtered_distribution  # local to avoid heavy import at top

    w = 1.0
    unclipped = np.zeros(ep.length, dtype=bool)
    for t, s in enumerate(ep.steps):
        if not s.behavior_prob > 0.0:
            raise ValueError("behavior probability must be positive")
        ratio = float(filtered_distribution(tp, s.obs)[s.action.index]) / s.behavior_prob
        unclipped[t] = ratio < rho_bar
        w *= min(rho_bar, ratio)
    return w, unclipped


def estimate_constraint(episodes: list, tp: ThresholdPolicy,
                        p_large_wrong: float, rho_bar: float = 2.0) -> ConstraintEstimate:
    """Importance-weighted coverage surrogate over an episode batch."""
    if not 0.0 <= p_large_wrong <= 1.0:
        raise ValueError("p_large_wrong must lie in [0, 1]")
    total = 0.0
    for ep in episodes:
        w, _ = _episode_weight(ep, tp, rho_bar)
        total += w * float(bool(ep.label.routed_correct))
    p_rc = min(1.0, total / len(episodes))
    return ConstraintEstimate(j_bar=min(1.0, p_rc + p_large_wrong),
                              p_routed_correct=p_rc,
                              p_large_wrong=p_large_wrong)


@dataclass
class _Batch:
    x: np.ndarray  # (N, F) observation vectors
    actions: np.ndarray  # (N,) action indices
    masks: np.ndarray  # (N, K) valid-action masks
    behavior: np.ndarray  # (N,) behavior probabilities
    slices: list  # per-episode slice into the flat axis


def _assemble(episodes: list, num_models: int) -> _Batch:
    xs, acts, masks, behs, slices = [], [], [], [], []
    pos = 0
    for ep in episodes:
        for s in ep.steps:
            xs.append(s.obs.vector())
            acts.append(s.action.index)
            masks.append(valid_action_mask(model_index_of(s.obs, num_models),
                                           num_models))
            behs.append(s.behavior_prob)
        slices.append(slice(pos, pos + ep.length))
        pos += ep.length
    return _Batch(np.stack(xs), np.array(acts), np.stack(masks),
                  np.array(behs), slices)


def _smooth_probs_batch(head: nn.PolicyHead, batch: _Batch) -> np.ndarray:
    logits, _ = nn.forward(head.params, batch.x)
    return nn.masked_softmax(logits, batch.masks)


def _pool_weights(filtered: np.ndarray, batch: _Batch,
                  rho_bar: float) -> tuple:
    """Per-episode clipped product weights and per-step unclipped flags,
    computed from precomputed filtered-probability rows."""
    if not np.all(batch.behavior > 0.0):
        raise ValueError("behavior probability must be positive")
    ratios = filtered[np.arange(len(batch.actions)), batch.actions] / batch.behavior
    unclipped = ratios < rho_bar
    clipped_ratios = np.minimum(ratios, rho_bar)
    weights = np.array([float(np.prod(clipped_ratios[sl])) for sl in batch.slices])
    return weights, unclipped


def _jbar_from_weights(weights: np.ndarray, episodes: list,
                       p_large_wrong: float) -> float:
    correct = np.array([bool(ep.label.routed_correct) for ep in episodes])
    p_rc = min(1.0, float(np.mean(weights * correct)))
    return min(1.0, p_rc + p_large_wrong)


def _cost_surrogate(probs: np.ndarray, batch: _Batch, adv_flat: np.ndarray,
                    rho_bar: float) -> float:
    ratios = probs[np.arange(len(batch.actions)), batch.actions] / batch.behavior
    return float(np.mean(np.minimum(ratios, rho_bar) * adv_flat))


def solve_constrained_step(g: np.ndarray, b: np.ndarray, e: float,
                           hvp: Callable, cfg: CpoConfig) -> tuple:
    """Solve min g.x s.t. b.x >= -e, 0.5 x.H.x <= delta.

    Returns (x, case, lam, nu) where case is one of
    {"no-op", "slack", "binding", "recovery"}.
    """
    delta = cfg.delta
    tiny = 1e-12
    g_zero = float(np.max(np.abs(g), initial=0.0)) < tiny
    b_zero = float(np.max(np.abs(b), initial=0.0)) < tiny
    if g_zero and (e >= 0.0 or b_zero):
        return np.zeros_like(g), "no-op", 0.0, 0.0

    x_b = np.zeros_like(b) if b_zero else conjugate_gradient(hvp, b, cfg.cg_iters, cfg.cg_tol)
    s = float(b @ x_b)
    if e <= -np.sqrt(max(2.0 * delta * s, 0.0)):
        if s <= tiny:
            return np.zeros_like(g), "no-op", 0.0, 0.0
        return np.sqrt(2.0 * delta / s) * x_b, "recovery", 0.0, 0.0

    x_g = conjugate_gradient(hvp, g, cfg.cg_iters, cfg.cg_tol)
    q = float(g @ x_g)
    if q <= tiny:
        return np.zeros_like(g), "no-op", 0.0, 0.0
    r = float(g @ x_b)

    if e >= np.sqrt(2.0 * delta * s):
        return -np.sqrt(2.0 * delta / q) * x_g, "slack", 0.0, np.sqrt(q / (2.0 * delta))

    # binding region: |e| < sqrt(2 delta s); maximize the dual
    # psi(lam) = -sqrt(2 delta (q - 2 lam r + lam^2 s)) - lam e over lam >= 0
    u = 2.0 * delta * s - e * e
    cands = [0.0]
    if u > tiny and s > tiny:
        disc = max((s * q - r * r) / u, 0.0)
        root = abs(e) / s * np.sqrt(disc)
        cands.extend(lam for lam in (r / s - root, r / s + root) if lam > 0.0)

    def psi(lam: float) -> float:
        quad = q - 2.0 * lam * r + lam * lam * s
        if quad <= 0.0:
            return -np.inf
        return -np.sqrt(2.0 * delta * quad) - lam * e

    lam = max(cands, key=psi)
    quad = q - 2.0 * lam * r + lam * lam * s
    nu = np.sqrt(quad / (2.0 * delta))
    if nu <= tiny:
        return np.zeros_like(g), "no-op", lam, nu
    x = -(x_g - lam * x_b) / nu
    case = "slack" if lam == 0.0 else "binding"
    return x, case, lam, nu


def cpo_update(head: nn.PolicyHead, episodes: list, adv_cost: list,
               adv_coverage: list, cfg: CpoConfig, kappa: float,
               p_large_wrong: float, rho_bar: float = 2.0) -> tuple:
    """One constrained policy step at fixed kappa.

    adv_cost / adv_coverage are per-episode advantage arrays aligned with
    the episode steps (coverage advantages are carried into the report;
    the constraint direction itself comes from the importance-weighted
    coverage estimator). Returns (new head, StepReport).
    """
    num_models = head.n_actions
    batch = _assemble(episodes, num_models)
    n = len(batch.actions)
    adv_flat = np.concatenate([np.asarray(a, dtype=np.float64) for a in adv_cost])
    if adv_flat.shape != (n,):
        raise ValueError("cost advantages misaligned with episode steps")

    probs_old = _smooth_probs_batch(head, batch)
    filtered_old = filtered_rows(probs_old, batch.masks, kappa)
    weights_old, unclipped_old = _pool_weights(filtered_old, batch, rho_bar)
    est = _jbar_from_weights(weights_old, episodes, p_large_wrong)
    e = est - (1.0 - cfg.alpha)
    cov = empirical_coverage(episodes)

    try:
        ratio_old = probs_old[np.arange(n), batch.actions] / batch.behavior
        # clipped-ratio surrogate: steps at or past the clip stop contributing
        g_weights = adv_flat * np.where(ratio_old < rho_bar, ratio_old, 0.0) / n
        g = nn.grad_weighted_log_prob(head, batch.x, batch.masks, batch.actions,
                                      g_weights)

        b_weights = np.zeros(n)
        for ep, w, sl in zip(episodes, weights_old, batch.slices):
            if not ep.label.routed_correct:
                continue
            b_weights[sl] = w * unclipped_old[sl] / len(episodes)
        b = nn.grad_weighted_log_prob(head, batch.x, batch.masks, batch.actions,
                                      b_weights)

        hvp = lambda v: nn.fisher_vector_product(head, batch.x, v,
                                                 damping=cfg.damping,
                                                 mask=batch.masks)
        x, case, lam, nu = solve_constrained_step(g, b, e, hvp, cfg)
    except nn.NumericError as err:
        return head, StepReport(accepted=False, case="numeric-failure",
                                jbar_before=est, jbar_after=est,
                                empirical_coverage=cov, message=str(err))

    surr_before = _cost_surrogate(probs_old, batch, adv_flat, rho_bar)
    report = StepReport(accepted=False, case=case, lam=lam, nu=nu,
                        surrogate_before=surr_before, surrogate_after=surr_before,
                        jbar_before=est, jbar_after=est, empirical_coverage=cov)
    if case == "no-op":
        report.accepted = True
        report.message = "gradients vanish; parameters unchanged"
        return head, report

    flat = nn.flatten(head.params)
    scale = 1.0
    for j in range(cfg.max_backtracks + 1):
        cand = nn.PolicyHead(nn.unflatten(head.params, flat + scale * x))
        probs_new = _smooth_probs_batch(cand, batch)
        filtered_new = filtered_rows(probs_new, batch.masks, kappa)
        kl = nn.kl_categorical(filtered_new, filtered_old)
        if kl <= cfg.delta + 1e-9:
            surr_after = _cost_surrogate(probs_new, batch, adv_flat, rho_bar)
            jbar_after = report.jbar_before
            if case in ("binding", "recovery"):
                w_new, _ = _pool_weights(filtered_new, batch, rho_bar)
                jbar_after = _jbar_from_weights(w_new, episodes, p_large_wrong)
            # slack and binding steps must not worsen the cost surrogate;
            # binding and recovery steps must not worsen the coverage surrogate
            ok = True
            if case in ("slack", "binding"):
                ok = surr_after <= report.surrogate_before + 1e-12
            if ok and case in ("binding", "recovery"):
                ok = jbar_after >= report.jbar_before - 1e-12
            if ok:
                report.accepted = True
                report.kl = kl
                report.surrogate_after = surr_after
                report.jbar_after = jbar_after
                report.backtracks = j
                return cand, report
        scale *= cfg.backtrack_coeff
    report.message = "line search exhausted; parameters unchanged"
    report.backtracks = cfg.max_backtracks + 1
    return head, report
