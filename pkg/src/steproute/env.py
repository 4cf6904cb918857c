"""Routing environments.

Both environments present the same episode protocol: ``reset()`` yields the
first Observation, ``step(action)`` advances one reasoning step. At every
node the current model has already drafted the next step; that draft is what
the observation describes. Continuing accepts the draft at the drafting
model's cost; escalating additionally pays the larger model to regenerate
the step, and routing stays at the larger model afterwards.

The synthetic environment draws every latent up front from the episode seed,
so an episode is a pure function of (seed, action sequence) and closed-form
expectations exist. The replay environment walks pre-recorded trace trees
and never calls a model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import costs as costs_mod
from . import features
from . import policy as policy_mod
from .features import Observation, RunningStats
from .trace import (Action, StepRecord, TerminalLabel, TraceNode, TraceTree,
                    ModelId, ApiPricing, T_MAX_DEFAULT, validate_flops_pool)


class EnvError(RuntimeError):
    pass


class InvalidActionError(EnvError):
    pass


class MissingBranchError(EnvError):
    """A replayed episode requested a branch the trace never recorded."""


class TraceExhaustedError(EnvError):
    pass


class EnumerationError(ValueError):
    """Exact enumeration refused: the latent space is too large."""


@dataclass
class EnvStep:
    observation: Optional[Observation]
    cost: float
    verifier_bit: Optional[bool]
    terminal: bool
    terminal_label: Optional[TerminalLabel]

    def __post_init__(self) -> None:
        if self.terminal != (self.terminal_label is not None):
            raise ValueError("terminal_label must be present exactly at terminal steps")
        if self.terminal != (self.observation is None):
            raise ValueError("observation must be absent exactly at terminal steps")


@dataclass
class SyntheticEnvConfig:
    num_states: int = 2
    # p_success[k][s]: chance model k's step is correct in hidden state s
    p_success: tuple = ((1.0, 0.8176), (0.99361, 0.99361))
    step_costs: tuple = (1.0, 5.0)
    horizon: int = 8
    unc_mean_correct: float = 2.0
    unc_mean_wrong: float = 0.0
    unc_std: float = 0.7
    verifier_accuracy: float = 0.9
    seed: int = 0
    tokens_per_step: int = 64

    def __post_init__(self) -> None:
        self.p_success = tuple(tuple(float(p) for p in row) for row in self.p_success)
        self.step_costs = tuple(float(c) for c in self.step_costs)
        if self.num_states < 1:
            raise ValueError("num_states must be positive")
        if len(self.p_success) != len(self.step_costs) or not self.step_costs:
            raise ValueError("p_success and step_costs must cover the same models")
        for row in self.p_success:
            if len(row) != self.num_states:
                raise ValueError("p_success rows must have one entry per state")
            if any(not 0.0 <= p <= 1.0 for p in row):
                raise ValueError("success probabilities must lie in [0, 1]")
        if any(c <= 0.0 for c in self.step_costs):
            raise ValueError("step costs must be positive")
        if not 1 <= self.horizon <= T_MAX_DEFAULT:
            raise ValueError(f"horizon must lie in [1, {T_MAX_DEFAULT}]")
        if not 0.0 <= self.verifier_accuracy <= 1.0:
            raise ValueError("verifier_accuracy must lie in [0, 1]")
        if self.unc_std <= 0.0:
            raise ValueError("unc_std must be positive")
        if self.tokens_per_step < 1:
            raise ValueError("tokens_per_step must be positive")

    @property
    def num_models(self) -> int:
        return len(self.step_costs)

    def difficulty_value(self, state: int) -> float:
        return (state + 0.5) / self.num_states


class SyntheticRoutingEnv:
    def __init__(self, config: SyntheticEnvConfig,
                 stats: Optional[RunningStats] = None,
                 t_max: int = T_MAX_DEFAULT):
        self.config = config
        self.stats = stats
        self.t_max = t_max
        self._master = np.random.default_rng(config.seed)
        self._active = False

    @property
    def num_models(self) -> int:
        return self.config.num_models

    def set_normalizer(self, stats: Optional[RunningStats]) -> None:
        self.stats = stats

    def reset(self, seed: Optional[int] = None) -> Observation:
        cfg = self.config
        if seed is None:
            seed = int(self._master.integers(2 ** 63))
        rng = np.random.default_rng(seed)
        self._state = int(rng.integers(cfg.num_states))
        p = np.array([cfg.p_success[k][self._state] for k in range(cfg.num_models)])
        # one correctness bit per (model, step); the top model's row doubles
        # as the reference rollout, so escalated steps and the coverage
        # reference share draws
        self._correct = rng.random((cfg.num_models, cfg.horizon)) < p[:, None]
        self._unc_noise = rng.standard_normal(cfg.horizon)
        self._ver_flip = rng.random(cfg.horizon) >= cfg.verifier_accuracy
        self._model = 0
        self._t = 0
        self._routed_alive = True
        self._active = True
        return self._observation()

    def _raw_uncertainty(self, model: int, t: int) -> float:
        cfg = self.config
        mean = cfg.unc_mean_correct if self._correct[model][t] else cfg.unc_mean_wrong
        return float(mean + cfg.unc_std * self._unc_noise[t])

    def _observation(self) -> Observation:
        cfg = self.config
        raw = self._raw_uncertainty(self._model, self._t)
        unc = self.stats.standardize(raw) if self.stats is not None else raw
        frac = 0.0 if cfg.num_models == 1 else self._model / (cfg.num_models - 1)
        return Observation(
            uncertainty=unc,
            step_index_norm=self._t / self.t_max,
            difficulty=cfg.difficulty_value(self._state),
            is_final_answer=1.0 if self._t == cfg.horizon - 1 else 0.0,
            step_len_norm=min(cfg.tokens_per_step / features.STEP_LEN_CAP, 1.0),
            current_model_frac=frac,
        )

    def step(self, action: Action) -> EnvStep:
        if not self._active:
            raise EnvError("episode is not active; call reset first")
        cfg = self.config
        t = self._t
        if action.kind == "continue":
            cost = cfg.step_costs[self._model]
            executed = bool(self._correct[self._model][t])
        else:
            target = action.target
            if target is None or not self._model < target < cfg.num_models:
                raise InvalidActionError(
                    f"cannot escalate from model {self._model} to {action.target}")
            cost = cfg.step_costs[self._model] + cfg.step_costs[target]
            executed = bool(self._correct[target][t])
            self._model = target
        self._routed_alive = self._routed_alive and executed
        verifier_bit = executed != bool(self._ver_flip[t])
        self._t += 1
        if self._t >= cfg.horizon:
            self._active = False
            large_ok = bool(np.all(self._correct[cfg.num_models - 1]))
            label = TerminalLabel(routed_correct=self._routed_alive,
                                  large_model_correct=large_ok)
            return EnvStep(None, cost, verifier_bit, True, label)
        return EnvStep(self._observation(), cost, verifier_bit, False, None)


class TraceReplayEnv:
    """Replays recorded trace trees; missing branches abort loudly."""

    def __init__(self, trees: list, cost_basis: str = "api",
                 stats: Optional[RunningStats] = None,
                 t_max: int = T_MAX_DEFAULT):
        if cost_basis not in ("api", "flops"):
            raise ValueError("cost_basis must be 'api' or 'flops'")
        if cost_basis == "flops" and trees:
            validate_flops_pool(trees[0].model_pool)
        self.trees = trees
        self.cost_basis = cost_basis
        self.stats = stats
        self.t_max = t_max
        self._cursor = 0
        self._active = False
        self.aborted_count = 0

    @property
    def num_models(self) -> int:
        if not self.trees:
            raise TraceExhaustedError("no trace trees loaded")
        return len(self.trees[0].model_pool)

    def remaining(self) -> int:
        return len(self.trees) - self._cursor

    def set_normalizer(self, stats: Optional[RunningStats]) -> None:
        self.stats = stats

    def reset(self, seed: Optional[int] = None) -> Observation:
        del seed  # replay order is the file order
        if self._cursor >= len(self.trees):
            raise TraceExhaustedError("all trace trees consumed")
        self._tree = self.trees[self._cursor]
        self._cursor += 1
        self._node = self._tree.root
        self._model = 0
        self._t = 0
        self._active = True
        if self._node.terminal is not None:
            self._abort("tree is terminal at the root")
        return self._observation()

    def _abort(self, why: str):
        self._active = False
        self.aborted_count += 1
        raise MissingBranchError(f"{self._tree.problem_id}: {why}")

    def _draft(self) -> StepRecord:
        child = self._node.children.get(Action.cont())
        if child is None:
            self._abort(f"no drafted continuation at depth {self._t}")
        return child[0]

    def _observation(self) -> Observation:
        stats = self.stats if self.stats is not None else RunningStats()
        return features.build_observation(
            self._draft(), self._t, self._tree.difficulty, self._model,
            stats, len(self._tree.model_pool), self.t_max)

    def _step_cost(self, step: StepRecord, model_index: int) -> float:
        model = self._tree.model_pool[model_index]
        if self.cost_basis == "flops":
            return costs_mod.flops_cost(model.param_count, step.text_len_tokens)
        if model.pricing is None:
            raise EnvError(f"model {model_index} has no pricing for api costing")
        return costs_mod.api_cost(model.pricing, (step.input_tokens_billed,
                                                  step.cached_tokens_billed,
                                                  step.output_tokens_billed))

    def step(self, action: Action) -> EnvStep:
        if not self._active:
            raise EnvError("episode is not active; call reset first")
        K = len(self._tree.model_pool)
        if action.kind != "continue":
            if action.target is None or not self._model < action.target < K:
                raise InvalidActionError(
                    f"cannot escalate from model {self._model} to {action.target}")
        child = self._node.children.get(action)
        if child is None:
            self._abort(f"branch {action.key()} absent at depth {self._t}")
        step_rec, next_node = child
        cost = self._step_cost(self._draft(), self._model)
        if action.kind != "continue":
            cost += self._step_cost(step_rec, action.target)
            self._model = action.target
        self._node = next_node
        self._t += 1
        if next_node.terminal is not None:
            self._active = False
            return EnvStep(None, cost, step_rec.verifier_bit, True, next_node.terminal)
        return EnvStep(self._observation(), cost, step_rec.verifier_bit, False, None)


def env_reset(env, seed: Optional[int] = None) -> Observation:
    return env.reset(seed)


def env_step(env, action: Action) -> EnvStep:
    return env.step(action)


# ---------------------------------------------------------------------------
# Exact enumeration oracle


@dataclass
class BruteForceResult:
    expected_cost: float
    coverage: float
    p_routed_correct: float
    p_large_correct: float
    per_state: list = field(default_factory=list)


def _check_policy_vector(pa: np.ndarray, model: int, K: int) -> np.ndarray:
    pa = np.asarray(pa, dtype=np.float64)
    if pa.shape != (K,):
        raise ValueError(f"policy vector must have length {K}")
    if np.any(pa < -1e-12):
        raise ValueError("policy probabilities must be nonnegative")
    invalid = [j for j in range(1, K) if j <= model]
    if any(pa[j] > 1e-12 for j in invalid):
        raise ValueError("policy puts mass on an invalid escalation")
    if abs(pa.sum() - 1.0) > 1e-9:
        raise ValueError("policy vector must sum to 1")
    return pa


def brute_force_values(config: SyntheticEnvConfig, policy_fn: Callable) -> BruteForceResult:
    """Exact expected cost and coverage under a stepwise policy.

    policy_fn(state, t, model_index, draft_correct) -> length-K probability
    vector over [continue, escalate_to_1, ...]. The draft bit is the latent
    correctness of the current model's drafted step, which is all the
    observation can reveal beyond (state, t, model).
    """
    S, T, K = config.num_states, config.horizon, config.num_models
    size = S * T * K * K * 8
    if size > 1_000_000:
        raise EnumerationError(
            f"enumeration would visit ~{size} weighted branches (limit 1e6)")
    top = K - 1
    per_state = []
    for s in range(S):
        p = [config.p_success[k][s] for k in range(K)]
        # value[t][k] = (expected cost-to-go, joint[r][m] chance the routed
        # path and the reference rollout both survive steps t..T-1)
        value = [[None] * K for _ in range(T + 1)]
        base = np.zeros((2, 2))
        base[1, 1] = 1.0
        for k in range(K):
            value[T][k] = (0.0, base)

        def push(joint: np.ndarray, exec_bit: int, ref_bit: int) -> np.ndarray:
            out = np.zeros((2, 2))
            for r in (0, 1):
                for m in (0, 1):
                    out[r & exec_bit, m & ref_bit] += joint[r, m]
            return out

        for t in range(T - 1, -1, -1):
            for k in range(K):
                cost_acc = 0.0
                joint_acc = np.zeros((2, 2))
                ref_opts = ((1, p[top]), (0, 1.0 - p[top]))
                if k == top:
                    draft_of_ref = lambda ref: ((ref, 1.0),)
                else:
                    draft_of_ref = lambda ref: ((1, p[k]), (0, 1.0 - p[k]))
                for ref, p_ref in ref_opts:
                    if p_ref == 0.0:
                        continue
                    for draft, p_draft in draft_of_ref(ref):
                        if p_draft == 0.0:
                            continue
                        w0 = p_ref * p_draft
                        pa = _check_policy_vector(policy_fn(s, t, k, bool(draft)), k, K)
                        for a in range(K):
                            if pa[a] <= 0.0:
                                continue
                            if a == 0:
                                branches = (((draft, 1.0), k, config.step_costs[k]),)
                            elif a == top:
                                branches = (((ref, 1.0), a,
                                             config.step_costs[k] + config.step_costs[a]),)
                            else:
                                branches = (((1, p[a]), a,
                                             config.step_costs[k] + config.step_costs[a]),
                                            ((0, 1.0 - p[a]), a,
                                             config.step_costs[k] + config.step_costs[a]))
                            for (exec_bit, p_exec), k2, c_step in branches:
                                if p_exec == 0.0:
                                    continue
                                w = w0 * pa[a] * p_exec
                                c_child, j_child = value[t + 1][k2]
                                cost_acc += w * (c_step + c_child)
                                joint_acc += w * push(j_child, exec_bit, ref)
                value[t][k] = (cost_acc, joint_acc)

        cost_s, joint_s = value[0][0]
        per_state.append({
            "state": s,
            "expected_cost": cost_s,
            "coverage": 1.0 - joint_s[0, 1],
            "p_routed_correct": joint_s[1, 0] + joint_s[1, 1],
            "p_large_correct": joint_s[0, 1] + joint_s[1, 1],
        })
    agg = {key: float(np.mean([row[key] for row in per_state]))
           for key in ("expected_cost", "coverage", "p_routed_correct",
                       "p_large_correct")}
    return BruteForceResult(expected_cost=agg["expected_cost"],
                            coverage=agg["coverage"],
                            p_routed_correct=agg["p_routed_correct"],
                            p_large_correct=agg["p_large_correct"],
                            per_state=per_state)


# --- policy adapters for the oracle ---------------------------------------


def uniform_policy_fn(config: SyntheticEnvConfig) -> Callable:
    K = config.num_models

    def fn(s, t, k, draft):
        pa = np.zeros(K)
        valid = [0] + list(range(k + 1, K))
        pa[valid] = 1.0 / len(valid)
        return pa

    return fn


def always_continue_policy_fn(config: SyntheticEnvConfig) -> Callable:
    K = config.num_models

    def fn(s, t, k, draft):
        pa = np.zeros(K)
        pa[0] = 1.0
        return pa

    return fn


def always_escalate_policy_fn(config: SyntheticEnvConfig) -> Callable:
    """Jump straight to the top model, then continue there."""
    K = config.num_models

    def fn(s, t, k, draft):
        pa = np.zeros(K)
        pa[K - 1 if k < K - 1 else 0] = 1.0
        return pa

    return fn


def _phi(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def uncertainty_threshold_policy_fn(config: SyntheticEnvConfig, tau: float) -> Callable:
    """Escalate to the top whenever the raw draft score falls at or below tau."""
    K = config.num_models

    def fn(s, t, k, draft):
        pa = np.zeros(K)
        if k == K - 1:
            pa[0] = 1.0
            return pa
        mean = config.unc_mean_correct if draft else config.unc_mean_wrong
        p_esc = _phi((tau - mean) / config.unc_std)
        pa[0] = 1.0 - p_esc
        pa[K - 1] = p_esc
        return pa

    return fn


def gamma_policy_fn(tp, config: SyntheticEnvConfig,
                    stats: Optional[RunningStats] = None,
                    t_max: int = T_MAX_DEFAULT,
                    grid_points: int = 513) -> Callable:
    """Adapter for the deterministic neural routing rule.

    The decision depends on the continuous score only; its regions are found
    by scanning a wide grid and bisecting each boundary, then converted to
    exact Gaussian masses. Mass beyond 8 sigma is negligible by construction.
    """
    K = config.num_models

    def decision(s, t, k, u_raw) -> int:
        unc = stats.standardize(u_raw) if stats is not None else u_raw
        frac = 0.0 if K == 1 else k / (K - 1)
        obs = Observation(
            uncertainty=unc,
            step_index_norm=t / t_max,
            difficulty=config.difficulty_value(s),
            is_final_answer=1.0 if t == config.horizon - 1 else 0.0,
            step_len_norm=min(config.tokens_per_step / features.STEP_LEN_CAP, 1.0),
            current_model_frac=frac,
        )
        return policy_mod.route_inference(tp, obs).index

    def fn(s, t, k, draft):
        if k == K - 1:
            pa = np.zeros(K)
            pa[0] = 1.0
            return pa
        mean = config.unc_mean_correct if draft else config.unc_mean_wrong
        lo, hi = mean - 8.0 * config.unc_std, mean + 8.0 * config.unc_std
        grid = np.linspace(lo, hi, grid_points)
        decs = [decision(s, t, k, u) for u in grid]
        pa = np.zeros(K)
        seg_start = lo
        for i in range(1, grid_points):
            if decs[i] != decs[i - 1]:
                a, b = grid[i - 1], grid[i]
                for _ in range(60):
                    mid = 0.5 * (a + b)
                    if decision(s, t, k, mid) == decs[i - 1]:
                        a = mid
                    else:
                        b = mid
                cut = 0.5 * (a + b)
                pa[decs[i - 1]] += _phi((cut - mean) / config.unc_std) - \
                    _phi((seg_start - mean) / config.unc_std)
                seg_start = cut
        pa[decs[-1]] += 1.0 - _phi((seg_start - mean) / config.unc_std)
        pa[decs[0]] += _phi((lo - mean) / config.unc_std)
        return pa / pa.sum()

    return fn


# ---------------------------------------------------------------------------
# Synthetic trace generation (full branching, for the simulate command)


def sample_trace_tree(config: SyntheticEnvConfig, rng: np.random.Generator,
                      problem_id: str) -> TraceTree:
    """One fully branched trace tree from the synthetic generative process.

    Every node records the current model's draft (the continue edge) and one
    regeneration edge per larger model; correctness latents are drawn once
    per (model, depth) so all paths stay mutually consistent.
    """
    K, T = config.num_models, config.horizon
    if K * (2 ** T) > 1_000_000:
        raise EnumerationError(
            f"tree would hold ~{K * 2 ** T} leaves (limit 1e6)")
    state = int(rng.integers(config.num_states))
    p = np.array([config.p_success[k][state] for k in range(K)])
    correct = rng.random((K, T)) < p[:, None]
    noise = rng.standard_normal(T)
    flips = rng.random(T) >= config.verifier_accuracy
    large_ok = bool(np.all(correct[K - 1]))
    toks = config.tokens_per_step

    def step_record(model: int, depth: int) -> StepRecord:
        ok = bool(correct[model][depth])
        mean = config.unc_mean_correct if ok else config.unc_mean_wrong
        return StepRecord(
            text_len_tokens=toks,
            uncertainty=float(mean + config.unc_std * noise[depth]),
            is_final_answer=depth == T - 1,
            input_tokens_billed=toks * depth + 16,
            cached_tokens_billed=0,
            output_tokens_billed=toks,
            verifier_bit=bool(ok != bool(flips[depth])),
        )

    def build(depth: int, model: int, routed_alive: bool) -> TraceNode:
        if depth == T:
            return TraceNode(depth=depth, children={},
                             terminal=TerminalLabel(routed_correct=routed_alive,
                                                    large_model_correct=large_ok))
        children = {}
        ok_cont = bool(correct[model][depth])
        children[Action.cont()] = (step_record(model, depth),
                                   build(depth + 1, model, routed_alive and ok_cont))
        for j in range(model + 1, K):
            ok_esc = bool(correct[j][depth])
            children[Action.escalate(j)] = (step_record(j, depth),
                                            build(depth + 1, j, routed_alive and ok_esc))
        return TraceNode(depth=depth, children=children, terminal=None)

    pool = _default_model_pool(K)
    return TraceTree(problem_id=problem_id, root=build(0, 0, True),
                     model_pool=pool, difficulty=config.difficulty_value(state))


def _default_model_pool(K: int) -> list:
    pool = []
    for k in range(K):
        scale = 10 ** k
        pool.append(ModelId(index=k, param_count=int(7e9) * scale,
                            pricing=ApiPricing(4.0 * scale, 1.0 * scale,
                                               16.0 * scale)))
    return pool
