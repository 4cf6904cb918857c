"""Command-line pipelines: train, evaluate, calibrate, simulate.

One YAML config file describes a run; --seed/--out override the file. Every
command is deterministic given the seed: logs and checkpoints are written
with sorted keys and repr-exact floats so reruns are byte-identical.

Exit codes: 0 success, 2 configuration problems, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from collections import deque
from typing import Callable, Optional

import numpy as np
import yaml

from . import calibrate as calibrate_mod
from . import costs as costs_mod
from . import env as env_mod
from . import nn
from . import policy as policy_mod
from . import trace as trace_mod
from . import vtrace as vtrace_mod
from .cpo import CpoConfig, cpo_update, empirical_coverage, estimate_constraint
from .features import FEATURE_DIM, Observation, RunningStats
from .trace import Action

CHECKPOINT_VERSION = 1


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# Configuration

_DEFAULTS = {
    "seed": 0,
    "out_dir": "runs/out",
    "checkpoint": None,
    "env": {
        "type": "synthetic",
        "num_states": 2,
        "p_success": [[1.0, 0.8176], [0.99361, 0.99361]],
        "step_costs": [1.0, 5.0],
        "horizon": 8,
        "unc_mean_correct": 2.0,
        "unc_mean_wrong": 0.0,
        "unc_std": 0.7,
        "verifier_accuracy": 0.9,
        "tokens_per_step": 64,
        "seed": 0,
        # trace-type keys
        "path": None,
        "cost_basis": "api",
        "t_max": trace_mod.T_MAX_DEFAULT,
        "train_frac": 0.8,
    },
    "cpo": {
        "delta": 0.01,
        "alpha": 0.02,
        "cg_iters": 20,
        "cg_tol": 1e-10,
        "backtrack_coeff": 0.5,
        "max_backtracks": 15,
        "damping": 0.1,
    },
    "vtrace": {"rho_bar": 2.0, "c_bar": 1.0, "discount": 1.0},
    "calibrate": {
        "kappa0": 0.5,
        "alpha": 0.02,
        "step_base": 0.1,
        "schedule": "fixed",
        "use_verifier": True,
        "episodes": 2000,
    },
    "train": {
        "iterations": 1000,
        "batch_size": 5,
        "pool_episodes": 40,
        "critic_lr": 1e-3,
        "critic_steps": 25,
        "warmup_episodes": 512,
        "use_verifier": True,
    },
    "evaluate": {"episodes": 2000, "threshold_grid": 41},
    "simulate": {"num_problems": 100, "out_file": "traces.jsonl"},
    "metrics": {"cost_basis": "flops", "accuracy_scale": "percent"},
}


def _merge(defaults: dict, override: dict, path: str = "") -> dict:
    out = dict(defaults)
    for key, val in override.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(defaults[key], dict) and defaults[key]:
            if not isinstance(val, dict):
                raise ConfigError(f"{where} must be a mapping")
            out[key] = _merge(defaults[key], val, where)
        else:
            out[key] = val
    return out


def load_config(path: str, seed: Optional[int] = None,
                out_dir: Optional[str] = None) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
    except FileNotFoundError as err:
        raise ConfigError(f"config file not found: {path}") from err
    except yaml.YAMLError as err:
        raise ConfigError(f"config file is not valid YAML: {err}") from err
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    cfg = _merge(_DEFAULTS, raw)
    if seed is not None:
        cfg["seed"] = seed
    if out_dir is not None:
        cfg["out_dir"] = out_dir
    if not isinstance(cfg["seed"], int):
        raise ConfigError("seed must be an integer")
    alpha = cfg["calibrate"]["alpha"]
    if not 0.0 < alpha < 1.0:
        raise ConfigError("calibrate.alpha must lie in (0, 1)")
    if cfg["env"]["type"] not in ("synthetic", "trace"):
        raise ConfigError("env.type must be 'synthetic' or 'trace'")
    if cfg["env"]["type"] == "trace":
        p = cfg["env"]["path"]
        if not p or not os.path.exists(p):
            raise ConfigError(f"trace file does not exist: {p}")
    return cfg


def _derived_seed(*parts) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _synth_config(cfg: dict, run_seed: int, salt: int) -> env_mod.SyntheticEnvConfig:
    section = cfg["env"]
    try:
        return env_mod.SyntheticEnvConfig(
            num_states=section["num_states"],
            p_success=tuple(tuple(row) for row in section["p_success"]),
            step_costs=tuple(section["step_costs"]),
            horizon=section["horizon"],
            unc_mean_correct=section["unc_mean_correct"],
            unc_mean_wrong=section["unc_mean_wrong"],
            unc_std=section["unc_std"],
            verifier_accuracy=section["verifier_accuracy"],
            seed=_derived_seed(run_seed, section["seed"], salt),
            tokens_per_step=section["tokens_per_step"],
        )
    except ValueError as err:
        raise ConfigError(f"invalid synthetic env config: {err}") from err


def _load_trees(cfg: dict) -> list:
    try:
        return trace_mod.load_trace_file(cfg["env"]["path"], cfg["env"]["t_max"])
    except (trace_mod.TraceParseError, trace_mod.TraceValidationError) as err:
        raise ConfigError(f"trace file rejected: {err}") from err


def build_env(cfg: dict, salt: int, trees: Optional[list] = None,
              stats: Optional[RunningStats] = None):
    if cfg["env"]["type"] == "synthetic":
        return env_mod.SyntheticRoutingEnv(_synth_config(cfg, cfg["seed"], salt),
                                           stats=stats)
    assert trees is not None
    return env_mod.TraceReplayEnv(trees, cost_basis=cfg["env"]["cost_basis"],
                                  stats=stats, t_max=cfg["env"]["t_max"])


# ---------------------------------------------------------------------------
# Checkpoints

def save_checkpoint(path: str, head: nn.PolicyHead, cost_critic: nn.CriticHead,
                    coverage_critic: nn.CriticHead, state: calibrate_mod.CalibratorState,
                    stats: RunningStats, p_large_wrong: float) -> None:
    obj = {
        "version": CHECKPOINT_VERSION,
        "feature_dim": FEATURE_DIM,
        "num_models": head.n_actions,
        "policy": nn.params_to_obj(head.params),
        "cost_critic": nn.params_to_obj(cost_critic.params),
        "coverage_critic": nn.params_to_obj(coverage_critic.params),
        "kappa": float(state.kappa),
        "calibrator": {
            "alpha": float(state.alpha),
            "step_base": float(state.step_base),
            "schedule": state.schedule,
            "iteration": int(state.iteration),
        },
        "stats": stats.to_obj(),
        "p_large_wrong": float(p_large_wrong),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(obj, sort_keys=True, separators=(",", ":")))
        fh.write("\n")


def load_checkpoint(path: str, expect_models: Optional[int] = None) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except FileNotFoundError as err:
        raise ConfigError(f"checkpoint not found: {path}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"checkpoint is not valid JSON: {err}") from err
    if obj.get("feature_dim") != FEATURE_DIM:
        raise ConfigError(
            f"checkpoint feature dim {obj.get('feature_dim')} != {FEATURE_DIM}")
    if expect_models is not None and obj.get("num_models") != expect_models:
        raise ConfigError(
            f"checkpoint covers {obj.get('num_models')} models, env has {expect_models}")
    cal = obj["calibrator"]
    return {
        "head": nn.PolicyHead(nn.params_from_obj(obj["policy"])),
        "cost_critic": nn.CriticHead(nn.params_from_obj(obj["cost_critic"])),
        "coverage_critic": nn.CriticHead(nn.params_from_obj(obj["coverage_critic"])),
        "state": calibrate_mod.CalibratorState(
            kappa=float(obj["kappa"]), alpha=float(cal["alpha"]),
            step_base=float(cal["step_base"]), schedule=cal["schedule"],
            iteration=int(cal["iteration"])),
        "stats": RunningStats.from_obj(obj["stats"]),
        "p_large_wrong": float(obj["p_large_wrong"]),
    }


# ---------------------------------------------------------------------------
# Rollouts and warmup

def rollout_episode(env, head: nn.PolicyHead, rng: np.random.Generator) -> vtrace_mod.EpisodeLog:
    obs = env.reset()
    steps = []
    while True:
        action, prob = policy_mod.behavior_sample(head, obs, rng)
        out = env.step(action)
        steps.append(vtrace_mod.StepSample(obs, action, prob, out.cost,
                                           out.verifier_bit))
        if out.terminal:
            return vtrace_mod.EpisodeLog(steps, out.terminal_label)
        obs = out.observation


def warmup_pass(env, episodes: int) -> tuple:
    """Always-continue probe: fits the uncertainty normalizer and the
    policy-independent chance that the top model alone fails."""
    stats = RunningStats()
    wrong = 0
    seen = 0
    for _ in range(episodes):
        try:
            obs = env.reset()
        except env_mod.TraceExhaustedError:
            break
        try:
            while True:
                stats.update(obs.uncertainty)
                out = env.step(Action.cont())
                if out.terminal:
                    seen += 1
                    wrong += 0 if out.terminal_label.large_model_correct else 1
                    break
                obs = out.observation
        except env_mod.MissingBranchError:
            continue
    if seen == 0:
        raise ConfigError("warmup saw no complete episodes")
    return stats, wrong / seen


# ---------------------------------------------------------------------------
# Deterministic evaluation

def _route_always_small(obs: Observation, num_models: int) -> Action:
    del obs, num_models
    return Action.cont()


def _route_always_large(obs: Observation, num_models: int) -> Action:
    cur = policy_mod.model_index_of(obs, num_models)
    if cur < num_models - 1:
        return Action.escalate(num_models - 1)
    return Action.cont()


def _route_threshold(tau: float) -> Callable:
    def fn(obs: Observation, num_models: int) -> Action:
        cur = policy_mod.model_index_of(obs, num_models)
        if cur < num_models - 1 and obs.uncertainty <= tau:
            return Action.escalate(num_models - 1)
        return Action.cont()

    return fn


def _route_gamma(tp: policy_mod.ThresholdPolicy) -> Callable:
    def fn(obs: Observation, num_models: int) -> Action:
        del num_models
        return policy_mod.route_inference(tp, obs)

    return fn


def run_routed_episodes(make_env: Callable, route_fn: Callable, episodes: int,
                        ep_seeds, collect_unc: Optional[list] = None) -> tuple:
    """Deterministically route episodes; returns (rows, aborted count)."""
    env = make_env()
    rows = []
    aborted = 0
    for i in range(episodes):
        seed = int(ep_seeds[i]) if ep_seeds is not None else None
        try:
            obs = env.reset(seed)
        except env_mod.TraceExhaustedError:
            break
        except env_mod.MissingBranchError:
            aborted += 1
            continue
        total = 0.0
        nsteps = 0
        try:
            while True:
                if collect_unc is not None:
                    collect_unc.append(obs.uncertainty)
                out = env.step(route_fn(obs, env.num_models))
                total += out.cost
                nsteps += 1
                if out.terminal:
                    label = out.terminal_label
                    rows.append({
                        "cost": float(total),
                        "routed_correct": bool(label.routed_correct),
                        "covered": bool(label.routed_correct
                                        or not label.large_model_correct),
                        "steps": nsteps,
                    })
                    break
                obs = out.observation
        except env_mod.MissingBranchError:
            aborted += 1
    return rows, aborted


def summarize_rows(rows: list, aborted: int, accuracy_scale: str) -> dict:
    if not rows:
        return {"n": 0, "aborted": aborted, "accuracy": None, "avg_cost": None,
                "ac_ratio": None, "coverage": None, "accuracy_scale": accuracy_scale}
    acc = float(np.mean([r["routed_correct"] for r in rows]))
    cost = float(np.mean([r["cost"] for r in rows]))
    return {
        "n": len(rows),
        "aborted": aborted,
        "accuracy": acc,
        "avg_cost": cost,
        "ac_ratio": costs_mod.ac_ratio(acc, cost, accuracy_scale),
        "coverage": float(np.mean([r["covered"] for r in rows])),
        "accuracy_scale": accuracy_scale,
    }


# ---------------------------------------------------------------------------
# Commands

def _filtered_cache(head: nn.PolicyHead, kappa: float, episodes: list,
                    num_models: int) -> dict:
    """Threshold-filtered action distribution for every distinct observation
    in the episode pool, computed in one batched forward pass."""
    index = {}
    for ep in episodes:
        for s in ep.steps:
            if s.obs not in index:
                index[s.obs] = len(index)
    obs_list = list(index)
    x = np.stack([o.vector() for o in obs_list])
    masks = np.stack([policy_mod.valid_action_mask(
        policy_mod.model_index_of(o, num_models), num_models) for o in obs_list])
    logits, _ = nn.forward(head.params, x)
    probs = nn.masked_softmax(logits, masks)
    rows = policy_mod.filtered_rows(probs, masks, kappa)
    return {o: rows[i] for o, i in index.items()}


def cmd_train(cfg: dict) -> int:
    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    tr = cfg["train"]
    rng_init = np.random.default_rng([cfg["seed"], 0])
    rng_act = np.random.default_rng([cfg["seed"], 2])

    trees = None
    warm_trees = None
    if cfg["env"]["type"] == "trace":
        trees = _load_trees(cfg)
        n_train = max(1, int(len(trees) * cfg["env"]["train_frac"]))
        warm_trees = trees[n_train:] or trees
        trees = trees[:n_train]
        num_models = len(trees[0].model_pool)
    else:
        num_models = _synth_config(cfg, cfg["seed"], 1).num_models

    head = nn.PolicyHead(nn.init_mlp(FEATURE_DIM, num_models, rng_init))
    cost_critic = nn.CriticHead(nn.init_mlp(FEATURE_DIM, 1, rng_init))
    cov_critic = nn.CriticHead(nn.init_mlp(FEATURE_DIM, 1, rng_init))

    warm_env = build_env(cfg, 1, warm_trees)
    stats, p_large_wrong = warmup_pass(warm_env, tr["warmup_episodes"])
    env = build_env(cfg, 1, trees, stats=stats)

    cal = cfg["calibrate"]
    state = calibrate_mod.CalibratorState(
        kappa=cal["kappa0"], alpha=cal["alpha"], step_base=cal["step_base"],
        schedule=cal["schedule"])
    cpo_cfg = CpoConfig(**cfg["cpo"])
    vcfg = vtrace_mod.VTraceConfig(**cfg["vtrace"])
    use_verifier = bool(tr["use_verifier"])

    log_path = os.path.join(out_dir, "train_log.jsonl")
    exhausted = False
    pool: deque = deque(maxlen=int(tr["pool_episodes"]))
    with open(log_path, "w", encoding="utf-8") as log:
        for it in range(tr["iterations"]):
            fresh = []
            try:
                while len(fresh) < tr["batch_size"]:
                    try:
                        fresh.append(rollout_episode(env, head, rng_act))
                    except env_mod.MissingBranchError:
                        continue
            except env_mod.TraceExhaustedError:
                exhausted = True
            if exhausted:
                log.write(json.dumps({"iteration": it, "event": "env_exhausted"},
                                     sort_keys=True) + "\n")
                break
            pool.extend(fresh)
            episodes = list(pool)

            cache = _filtered_cache(head, state.kappa, episodes, num_models)
            target_probs = cache.__getitem__
            try:
                cost_critic, cov_critic, losses = vtrace_mod.fit_critics(
                    episodes, cost_critic, cov_critic, target_probs, vcfg,
                    use_verifier, lr=tr["critic_lr"], steps=tr["critic_steps"])
                adv_cost = vtrace_mod.advantages(episodes, cost_critic,
                                                 target_probs, vcfg, "cost",
                                                 use_verifier)
                adv_cov = vtrace_mod.advantages(episodes, cov_critic,
                                                target_probs, vcfg, "coverage",
                                                use_verifier)
                head, report = cpo_update(head, episodes, adv_cost, adv_cov,
                                          cpo_cfg, state.kappa, p_large_wrong,
                                          rho_bar=vcfg.rho_bar)
            except nn.NumericError as err:
                log.write(json.dumps({"iteration": it, "event": "numeric_failure",
                                      "message": str(err)}, sort_keys=True) + "\n")
                raise

            tp_new = policy_mod.ThresholdPolicy(head, state.kappa)
            gamma_costs, gamma_bits = [], []
            try:
                for _ in range(tr["batch_size"]):
                    try:
                        ev, total, _ = calibrate_mod.episode_event(env, tp_new)
                    except env_mod.MissingBranchError:
                        continue
                    gamma_costs.append(total)
                    gamma_bits.append(calibrate_mod.coverage_bit(ev, use_verifier))
                    state = calibrate_mod.update_kappa(state, ev, use_verifier)
            except env_mod.TraceExhaustedError:
                exhausted = True

            row = {
                "iteration": it,
                "accepted": bool(report.accepted),
                "case": report.case,
                "kl": float(report.kl),
                "surrogate_before": float(report.surrogate_before),
                "surrogate_after": float(report.surrogate_after),
                "j_bar": float(report.jbar_before),
                "batch_coverage": float(report.empirical_coverage),
                "kappa": float(state.kappa),
                "batch_cost": float(np.mean([ep.total_cost() for ep in fresh])),
                "gamma_cost": float(np.mean(gamma_costs)) if gamma_costs else None,
                "gamma_coverage": float(np.mean(gamma_bits)) if gamma_bits else None,
                "critic_loss_cost": float(losses["cost_after"]),
                "critic_loss_coverage": float(losses["coverage_after"]),
            }
            log.write(json.dumps(row, sort_keys=True) + "\n")
            if exhausted:
                break

    save_checkpoint(os.path.join(out_dir, "checkpoint.json"), head, cost_critic,
                    cov_critic, state, stats, p_large_wrong)
    return 0


def _eval_env_factory(cfg: dict, trees: Optional[list], stats: RunningStats,
                      salt: int) -> Callable:
    if cfg["env"]["type"] == "synthetic":
        return lambda: build_env(cfg, salt, None, stats=stats)
    return lambda: build_env(cfg, salt, list(trees), stats=stats)


def cmd_evaluate(cfg: dict, recalibrate: bool = False) -> int:
    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    if not cfg["checkpoint"]:
        raise ConfigError("evaluate needs a checkpoint path")
    trees = _load_trees(cfg) if cfg["env"]["type"] == "trace" else None
    probe_env = build_env(cfg, 3, trees)
    ck = load_checkpoint(cfg["checkpoint"], expect_models=probe_env.num_models)
    stats = ck["stats"]
    state = ck["state"]

    ev = cfg["evaluate"]
    episodes = ev["episodes"]
    if trees is not None:
        episodes = min(episodes, len(trees))
    ep_seeds = None
    if cfg["env"]["type"] == "synthetic":
        ep_seeds = np.random.default_rng([cfg["seed"], 3]).integers(
            2 ** 63, size=episodes)

    if recalibrate:
        cal_env = build_env(cfg, 4, list(trees) if trees else None, stats=stats)
        tp = policy_mod.ThresholdPolicy(ck["head"], state.kappa)
        state, _ = calibrate_mod.run_calibration(
            cal_env, tp, state, cfg["calibrate"]["episodes"],
            bool(cfg["calibrate"]["use_verifier"]))
        save_checkpoint(os.path.join(out_dir, "checkpoint.json"), ck["head"],
                        ck["cost_critic"], ck["coverage_critic"], state, stats,
                        ck["p_large_wrong"])

    factory = _eval_env_factory(cfg, trees, stats, 3)
    scale = cfg["metrics"]["accuracy_scale"]
    tp = policy_mod.ThresholdPolicy(ck["head"], state.kappa)

    uncs: list = []
    rows_small, ab_small = run_routed_episodes(factory, _route_always_small,
                                               episodes, ep_seeds, uncs)
    rows_large, ab_large = run_routed_episodes(factory, _route_always_large,
                                               episodes, ep_seeds)
    rows_gamma, ab_gamma = run_routed_episodes(factory, _route_gamma(tp),
                                               episodes, ep_seeds)

    taus = np.quantile(np.array(uncs), np.linspace(0.01, 0.99,
                                                   ev["threshold_grid"])) \
        if uncs else np.array([])
    thresholds = []
    for tau in taus:
        rows_t, ab_t = run_routed_episodes(factory, _route_threshold(float(tau)),
                                           episodes, ep_seeds)
        summary = summarize_rows(rows_t, ab_t, scale)
        summary["tau"] = float(tau)
        thresholds.append(summary)

    report = {
        "policy": summarize_rows(rows_gamma, ab_gamma, scale),
        "kappa": float(state.kappa),
        "baselines": {
            "always_small": summarize_rows(rows_small, ab_small, scale),
            "always_large": summarize_rows(rows_large, ab_large, scale),
            "thresholds": thresholds,
        },
    }
    with open(os.path.join(out_dir, "eval_report.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(report, sort_keys=True, separators=(",", ":")))
        fh.write("\n")
    with open(os.path.join(out_dir, "eval_rows.jsonl"), "w", encoding="utf-8") as fh:
        for i, row in enumerate(rows_gamma):
            fh.write(json.dumps({"index": i, **row}, sort_keys=True) + "\n")
    return 0


def cmd_calibrate(cfg: dict) -> int:
    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    if not cfg["checkpoint"]:
        raise ConfigError("calibrate needs a checkpoint path")
    trees = _load_trees(cfg) if cfg["env"]["type"] == "trace" else None
    env = build_env(cfg, 4, trees)
    ck = load_checkpoint(cfg["checkpoint"], expect_models=env.num_models)
    env.set_normalizer(ck["stats"])
    tp = policy_mod.ThresholdPolicy(ck["head"], ck["state"].kappa)
    log_path = os.path.join(out_dir, "calib_log.tsv")
    with open(log_path, "w", encoding="utf-8") as log:
        log.write("iteration\tkappa\tcovered\trunning_miscoverage\n")
        try:
            state, bits = calibrate_mod.run_calibration(
                env, tp, ck["state"], cfg["calibrate"]["episodes"],
                bool(cfg["calibrate"]["use_verifier"]), trace_out=log)
        except env_mod.TraceExhaustedError as err:
            raise ConfigError(f"calibration ran out of episodes: {err}") from err
    save_checkpoint(os.path.join(out_dir, "checkpoint.json"), ck["head"],
                    ck["cost_critic"], ck["coverage_critic"], state,
                    ck["stats"], ck["p_large_wrong"])
    return 0


def cmd_simulate(cfg: dict) -> int:
    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    sim = cfg["simulate"]
    out_file = sim["out_file"]
    if not os.path.isabs(out_file):
        out_file = os.path.join(out_dir, out_file)
    synth = _synth_config(cfg, cfg["seed"], 5)
    rng = np.random.default_rng([cfg["seed"], 5])
    trees = [env_mod.sample_trace_tree(synth, rng, f"synthetic-{i:05d}")
             for i in range(sim["num_problems"])]
    trace_mod.save_trace_file(trees, out_file)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="steproute",
        description="Train and evaluate stepwise model-routing policies.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("train", "evaluate", "calibrate", "simulate"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        if name == "evaluate":
            p.add_argument("--recalibrate", action="store_true")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed, args.out)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, recalibrate=args.recalibrate)
        if args.command == "calibrate":
            return cmd_calibrate(cfg)
        return cmd_simulate(cfg)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except nn.NumericError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
