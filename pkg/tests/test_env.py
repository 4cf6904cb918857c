"""Synthetic and replay environments: protocol, determinism, exact oracles."""

import math

import numpy as np
import pytest

from steproute import costs
from steproute.env import (
    BruteForceResult,
    EnumerationError,
    EnvError,
    EnvStep,
    InvalidActionError,
    MissingBranchError,
    SyntheticEnvConfig,
    SyntheticRoutingEnv,
    TraceExhaustedError,
    TraceReplayEnv,
    always_continue_policy_fn,
    always_escalate_policy_fn,
    brute_force_values,
    sample_trace_tree,
    uncertainty_threshold_policy_fn,
    uniform_policy_fn,
)
from steproute.features import RunningStats
from steproute.trace import (
    Action,
    ApiPricing,
    ModelId,
    StepRecord,
    TerminalLabel,
    TraceNode,
    TraceTree,
    validate_tree,
)

CONT = Action.cont()
ESC = Action.escalate(1)


def _config(**kw) -> SyntheticEnvConfig:
    return SyntheticEnvConfig(**kw)


def _run(env, seed, decide):
    """Roll one episode; decide(obs, t) -> Action. Returns (cost, label, steps)."""
    obs = env.reset(seed)
    total = 0.0
    t = 0
    while True:
        out = env.step(decide(obs, t))
        total += out.cost
        t += 1
        if out.terminal:
            return total, out.terminal_label, t
        obs = out.observation


class TestConfigValidation:
    def test_defaults_are_consistent(self):
        cfg = _config()
        assert cfg.num_models == 2
        assert cfg.difficulty_value(0) == 0.25 and cfg.difficulty_value(1) == 0.75

    def test_rejects_mismatched_models(self):
        with pytest.raises(ValueError):
            _config(p_success=((1.0, 1.0),), step_costs=(1.0, 5.0))

    def test_rejects_short_success_rows(self):
        with pytest.raises(ValueError):
            _config(num_states=3)

    def test_rejects_bad_probability(self):
        with pytest.raises(ValueError):
            _config(p_success=((1.2, 0.5), (0.9, 0.9)))

    def test_rejects_nonpositive_cost(self):
        with pytest.raises(ValueError):
            _config(step_costs=(0.0, 5.0))

    def test_rejects_horizon_out_of_range(self):
        with pytest.raises(ValueError):
            _config(horizon=0)
        with pytest.raises(ValueError):
            _config(horizon=33)

    def test_envstep_label_exactly_at_terminal(self):
        with pytest.raises(ValueError):
            EnvStep(None, 1.0, None, True, None)
        with pytest.raises(ValueError):
            EnvStep(None, 1.0, None, False, None)


class TestEpisodeProtocol:
    def test_episode_runs_horizon_steps(self):
        env = SyntheticRoutingEnv(_config(horizon=4))
        _, label, steps = _run(env, 0, lambda obs, t: CONT)
        assert steps == 4
        assert isinstance(label, TerminalLabel)

    def test_step_before_reset_rejected(self):
        env = SyntheticRoutingEnv(_config())
        with pytest.raises(EnvError):
            env.step(CONT)

    def test_step_after_terminal_rejected(self):
        env = SyntheticRoutingEnv(_config(horizon=1))
        env.reset(0)
        out = env.step(CONT)
        assert out.terminal
        with pytest.raises(EnvError):
            env.step(CONT)

    def test_invalid_escalations_rejected(self):
        env = SyntheticRoutingEnv(_config())
        env.reset(0)
        with pytest.raises(InvalidActionError):
            env.step(Action.escalate(2))  # no third model
        env.reset(1)
        env.step(ESC)  # now at the top model
        with pytest.raises(InvalidActionError):
            env.step(ESC)

    def test_observation_fields(self):
        cfg = _config(horizon=3, tokens_per_step=128)
        env = SyntheticRoutingEnv(cfg)
        obs = env.reset(5)
        assert obs.step_index_norm == 0.0
        assert obs.current_model_frac == 0.0
        assert obs.is_final_answer == 0.0
        assert obs.step_len_norm == 128 / 512
        assert obs.difficulty in (0.25, 0.75)
        out = env.step(ESC)
        assert out.observation.current_model_frac == 1.0
        out = env.step(CONT)
        assert out.observation.is_final_answer == 1.0  # t = horizon-1

    def test_normalizer_applied_to_uncertainty(self):
        stats = RunningStats()
        for v in (1.0, 3.0):  # mean 2, population variance 1
            stats.update(v)
        env = SyntheticRoutingEnv(_config())
        raw = env.reset(9).uncertainty
        env.set_normalizer(stats)
        std = env.reset(9).uncertainty
        assert std == pytest.approx(raw - 2.0, abs=1e-12)


class TestDeterminism:
    def test_same_seed_same_episode(self):
        env = SyntheticRoutingEnv(_config())
        acts = [CONT, ESC, CONT, CONT, CONT, CONT, CONT, CONT]
        runs = []
        for _ in range(2):
            obs = env.reset(123)
            rec = [tuple(obs.vector())]
            for a in acts:
                out = env.step(a)
                rec.append((out.cost, out.verifier_bit, out.terminal))
                if out.observation is not None:
                    rec.append(tuple(out.observation.vector()))
            rec.append((out.terminal_label.routed_correct,
                        out.terminal_label.large_model_correct))
            runs.append(rec)
        assert runs[0] == runs[1]

    def test_distinct_seeds_vary(self):
        env = SyntheticRoutingEnv(_config())
        seen = {env.reset(s).uncertainty for s in range(8)}
        assert len(seen) > 1

    def test_unseeded_resets_follow_master_stream(self):
        a = SyntheticRoutingEnv(_config(seed=7))
        b = SyntheticRoutingEnv(_config(seed=7))
        for _ in range(3):
            assert a.reset().uncertainty == b.reset().uncertainty


class TestEscalationAlignment:
    def test_escalating_at_start_matches_reference(self):
        # the top model's correctness row doubles as the reference rollout,
        # so a fully escalated episode agrees with it bit for bit
        env = SyntheticRoutingEnv(_config())
        for seed in range(150):
            _, label, _ = _run(env, seed, lambda obs, t: ESC if t == 0 else CONT)
            assert label.routed_correct == label.large_model_correct

    def test_full_escalation_cost_is_closed_form(self):
        cfg = _config()
        env = SyntheticRoutingEnv(cfg)
        # 1 + 5 at the escalation step, then 5 for each of the 7 remaining
        expect = (cfg.step_costs[0] + cfg.step_costs[1]) \
            + (cfg.horizon - 1) * cfg.step_costs[1]
        for seed in range(20):
            total, _, _ = _run(env, seed, lambda obs, t: ESC if t == 0 else CONT)
            assert total == expect == 41.0


class TestBruteForceOracle:
    def test_always_continue_cost_exact(self):
        cfg = _config()
        res = brute_force_values(cfg, always_continue_policy_fn(cfg))
        assert res.expected_cost == pytest.approx(8.0, abs=1e-12)

    def test_always_continue_coverage_formula(self):
        # coverage = 1 - (1 - prod p_small) * prod p_large, averaged over states
        cfg = _config()
        res = brute_force_values(cfg, always_continue_policy_fn(cfg))
        per_state = []
        for s in range(cfg.num_states):
            ps = cfg.p_success[0][s] ** cfg.horizon
            pl = cfg.p_success[1][s] ** cfg.horizon
            per_state.append(1.0 - (1.0 - ps) * pl)
        assert res.coverage == pytest.approx(np.mean(per_state), abs=1e-12)

    def test_always_escalate_closed_form(self):
        cfg = _config()
        res = brute_force_values(cfg, always_escalate_policy_fn(cfg))
        assert res.expected_cost == pytest.approx(41.0, abs=1e-12)
        assert res.coverage == pytest.approx(1.0, abs=1e-12)

    def test_threshold_limits_recover_pure_policies(self):
        cfg = _config()
        low = brute_force_values(cfg, uncertainty_threshold_policy_fn(cfg, -50.0))
        cont = brute_force_values(cfg, always_continue_policy_fn(cfg))
        assert low.expected_cost == pytest.approx(cont.expected_cost, abs=1e-9)
        assert low.coverage == pytest.approx(cont.coverage, abs=1e-9)
        high = brute_force_values(cfg, uncertainty_threshold_policy_fn(cfg, 50.0))
        assert high.expected_cost == pytest.approx(41.0, abs=1e-9)
        assert high.coverage == pytest.approx(1.0, abs=1e-9)

    def test_threshold_tradeoff_is_monotone(self):
        cfg = _config()
        taus = (-1.0, 0.5, 1.5, 2.5)
        rows = [brute_force_values(cfg, uncertainty_threshold_policy_fn(cfg, t))
                for t in taus]
        for lo, hi in zip(rows, rows[1:]):
            assert hi.expected_cost > lo.expected_cost
            assert hi.coverage > lo.coverage

    def test_rejects_invalid_policy_mass(self):
        cfg = _config()

        def bad(s, t, k, draft):
            return np.array([0.5, 0.5])  # mass on escalate while at the top

        with pytest.raises(ValueError):
            brute_force_values(cfg, bad)

    def test_refuses_oversized_enumeration(self):
        # 2 states * 32 steps * 50^2 model pairs * 8 > 1e6 weighted branches
        cfg = _config(num_states=2,
                      p_success=tuple((0.9,) * 2 for _ in range(50)),
                      step_costs=tuple(float(k + 1) for k in range(50)),
                      horizon=32)
        with pytest.raises(EnumerationError):
            brute_force_values(cfg, always_continue_policy_fn(cfg))


class TestMonteCarloAgreement:
    def test_uniform_policy_matches_enumeration(self):
        cfg = _config(seed=99)
        oracle = brute_force_values(cfg, uniform_policy_fn(cfg))
        env = SyntheticRoutingEnv(cfg)
        rng = np.random.default_rng(17)

        def decide(obs, t):
            frac = obs.current_model_frac
            if frac == 1.0:
                return CONT
            return CONT if rng.random() < 0.5 else ESC

        n = 4000
        total_costs = np.empty(n)
        misses = np.empty(n)
        for i in range(n):
            cost, label, _ = _run(env, None, decide)
            total_costs[i] = cost
            misses[i] = (not label.routed_correct) and label.large_model_correct
        se_cost = total_costs.std(ddof=1) / math.sqrt(n)
        assert abs(total_costs.mean() - oracle.expected_cost) < 3.0 * se_cost
        p = 1.0 - oracle.coverage
        se_cov = math.sqrt(p * (1.0 - p) / n)
        assert abs(misses.mean() - p) < 3.0 * se_cov


def _mini_tree(horizon=3) -> TraceTree:
    return sample_trace_tree(_config(horizon=horizon),
                             np.random.default_rng(4), "prob-0")


class TestSampledTrees:
    def test_sampled_tree_validates(self):
        tree = _mini_tree()
        validate_tree(tree, t_max=3)

    def test_sampling_is_deterministic(self):
        a = sample_trace_tree(_config(horizon=3), np.random.default_rng(8), "p")
        b = sample_trace_tree(_config(horizon=3), np.random.default_rng(8), "p")
        sa = a.root.children[CONT][0]
        sb = b.root.children[CONT][0]
        assert sa == sb and a.difficulty == b.difficulty

    def test_refuses_oversized_tree(self):
        with pytest.raises(EnumerationError):
            sample_trace_tree(_config(horizon=20), np.random.default_rng(0), "p",)


class TestTraceReplay:
    def test_replay_costs_match_recorded_tokens(self):
        tree = _mini_tree()
        env = TraceReplayEnv([tree], cost_basis="api")
        env.reset()
        rec = tree.root.children[CONT][0]
        out = env.step(CONT)
        # draft billed at the small model's pricing
        assert out.cost == pytest.approx(
            costs.api_cost(tree.model_pool[0].pricing,
                           (rec.input_tokens_billed, rec.cached_tokens_billed,
                            rec.output_tokens_billed)), abs=1e-15)

    def test_escalation_pays_draft_plus_regeneration(self):
        tree = _mini_tree()
        env = TraceReplayEnv([tree], cost_basis="api")
        env.reset()
        draft = tree.root.children[CONT][0]
        regen = tree.root.children[ESC][0]
        out = env.step(ESC)
        expect = costs.api_cost(tree.model_pool[0].pricing,
                                (draft.input_tokens_billed, draft.cached_tokens_billed,
                                 draft.output_tokens_billed)) \
            + costs.api_cost(tree.model_pool[1].pricing,
                             (regen.input_tokens_billed, regen.cached_tokens_billed,
                              regen.output_tokens_billed))
        assert out.cost == pytest.approx(expect, abs=1e-15)
        assert out.observation.current_model_frac == 1.0

    def test_flops_basis_hand_value(self):
        # 7e9-parameter draft, 64 tokens: 2 * 7e9 * 64 / 1e12 = 0.896
        tree = _mini_tree()
        env = TraceReplayEnv([tree], cost_basis="flops")
        env.reset()
        assert env.step(CONT).cost == pytest.approx(0.896, abs=1e-12)

    def test_terminal_label_comes_from_the_tree(self):
        tree = _mini_tree(horizon=2)
        env = TraceReplayEnv([tree])
        env.reset()
        env.step(CONT)
        out = env.step(CONT)
        assert out.terminal
        node = tree.root.children[CONT][1].children[CONT][1]
        assert out.terminal_label == node.terminal

    def test_missing_branch_aborts_loudly(self):
        label = TerminalLabel(routed_correct=True, large_model_correct=True)
        leaf = TraceNode(depth=1, children={}, terminal=label)
        rec = StepRecord(text_len_tokens=4, uncertainty=0.0, is_final_answer=True,
                         input_tokens_billed=4, cached_tokens_billed=0,
                         output_tokens_billed=4)
        root = TraceNode(depth=0, children={CONT: (rec, leaf)}, terminal=None)
        pool = [ModelId(0, 7_000_000_000, ApiPricing(4.0, 1.0, 16.0)),
                ModelId(1, 70_000_000_000, ApiPricing(40.0, 10.0, 160.0))]
        env = TraceReplayEnv([TraceTree("p", root, pool)])
        env.reset()
        with pytest.raises(MissingBranchError):
            env.step(ESC)
        assert env.aborted_count == 1
        with pytest.raises(EnvError):
            env.step(CONT)  # episode went inactive on abort

    def test_trees_consumed_in_order_then_exhausted(self):
        trees = [_mini_tree(horizon=1), _mini_tree(horizon=1)]
        env = TraceReplayEnv(trees)
        assert env.remaining() == 2
        for _ in range(2):
            env.reset()
            env.step(CONT)
        with pytest.raises(TraceExhaustedError):
            env.reset()

    def test_rejects_unknown_cost_basis(self):
        with pytest.raises(ValueError):
            TraceReplayEnv([], cost_basis="watts")
