"""Command line entry point: collect trace trees from a problems file.

    tracecollect collect --config cfg.yaml --out outdir

The config names the problem file, the model endpoints (smallest first),
an optional verifier endpoint, and collection budgets. Relative paths in
the config resolve against the config file's directory. Outputs land in
--out: traces.jsonl (the routing trace contract) and collection_report.json
(per-call usage, step text, and flags).

Endpoint entries with ``mode: demo`` run against the built-in seeded fake
model, so the whole pipeline can be exercised with no server and no
credentials; reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Optional

import yaml

from .collect import (CollectSettings, collect_problems, read_problems,
                      write_report, write_trace_file)
from .endpoint import (DemoEndpoint, EndpointConfig, HttpEndpoint, Pricing,
                       RateLimiter)

_ENDPOINT_KEYS = {"kind", "mode", "model", "param_count", "temperature",
                  "top_logprobs", "pricing", "base_url", "api_key_env",
                  "accuracy", "verify_accuracy", "steps_before_answer"}
_COLLECT_KEYS = {"depth_budget", "full_branch_depth", "reference_rollouts",
                 "max_step_tokens", "retry_attempts", "retry_backoff"}
_TOP_KEYS = {"problems", "endpoints", "verifier", "collect", "workers",
             "rate_limit_rps", "seed", "out_file"}


class ConfigError(ValueError):
    pass


def _check_keys(obj: dict, allowed: set, where: str) -> None:
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"unknown config key: {where}{key}")


def _build_endpoint(entry: dict, answer_key: dict, seed: int, where: str):
    if not isinstance(entry, dict):
        raise ConfigError(f"{where} must be a mapping")
    _check_keys(entry, _ENDPOINT_KEYS, where + ".")
    pricing = entry.get("pricing")
    try:
        config = EndpointConfig(
            kind=entry.get("kind", "hosted"),
            model=entry.get("model", ""),
            param_count=float(entry.get("param_count", 0.0)),
            temperature=float(entry.get("temperature", 0.7)),
            top_logprobs=int(entry.get("top_logprobs", 5)),
            pricing=None if pricing is None else Pricing(**pricing),
            base_url=entry.get("base_url"),
            api_key_env=entry.get("api_key_env", "TRACECOLLECT_API_KEY"),
        )
        if entry.get("mode", "live") == "demo":
            return DemoEndpoint(
                config, answer_key,
                accuracy=float(entry.get("accuracy", 0.9)),
                verify_accuracy=float(entry.get("verify_accuracy", 1.0)),
                steps_before_answer=int(entry.get("steps_before_answer", 2)),
                seed=seed)
        if entry.get("mode", "live") != "live":
            raise ConfigError(f"{where}.mode must be live or demo")
        return HttpEndpoint(config)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    _check_keys(cfg, _TOP_KEYS, "")
    if "problems" not in cfg:
        raise ConfigError("config needs a problems file path")
    if not cfg.get("endpoints"):
        raise ConfigError("config needs at least one endpoint")
    _check_keys(cfg.get("collect") or {}, _COLLECT_KEYS, "collect.")
    base = os.path.dirname(os.path.abspath(path))
    cfg["problems"] = os.path.join(base, cfg["problems"])
    return cfg


def cmd_collect(config_path: str, out_dir: str) -> int:
    cfg = load_config(config_path)
    try:
        problems = read_problems(cfg["problems"])
    except (OSError, ValueError) as exc:
        raise ConfigError(f"problems file: {exc}") from exc
    if not problems:
        raise ConfigError("problems file is empty")
    answer_key = {p.question: p.gold_answer for p in problems}
    seed = int(cfg.get("seed", 0))
    endpoints = [_build_endpoint(e, answer_key, seed, f"endpoints[{i}]")
                 for i, e in enumerate(cfg["endpoints"])]
    verifier = None
    if cfg.get("verifier") is not None:
        verifier = _build_endpoint(cfg["verifier"], answer_key, seed + 1,
                                   "verifier")
    try:
        settings = CollectSettings(**(cfg.get("collect") or {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"collect: {exc}") from exc
    rate = float(cfg.get("rate_limit_rps", 0.0))
    limiter = RateLimiter(rate) if rate > 0 else None
    workers = int(cfg.get("workers", 1))

    records, reports = collect_problems(problems, endpoints, settings,
                                        verifier=verifier, limiter=limiter,
                                        workers=workers)
    os.makedirs(out_dir, exist_ok=True)
    write_trace_file(records, os.path.join(out_dir, cfg.get("out_file", "traces.jsonl")))
    write_report(reports, os.path.join(out_dir, "collection_report.json"))
    return 0


def main(argv: Optional[list] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="tracecollect",
        description="Collect stepwise LLM reasoning traces into routing trace files.")
    sub = parser.add_subparsers(dest="command", required=True)
    p_collect = sub.add_parser("collect", help="collect trees for a problems file")
    p_collect.add_argument("--config", required=True, help="YAML config path")
    p_collect.add_argument("--out", required=True, help="output directory")
    args = parser.parse_args(argv)
    try:
        return cmd_collect(args.config, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
