"""Command line runs against the offline demo config."""

import json
import os

from steproute.trace import is_verifier_labeled, load_trace_file

from tracecollect.cli import main

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")
DEMO_CONFIG = os.path.join(FIXTURES, "demo_config.yaml")


def run_demo(out_dir) -> int:
    return main(["collect", "--config", DEMO_CONFIG, "--out", str(out_dir)])


def test_demo_collection_end_to_end(tmp_path):
    assert run_demo(tmp_path) == 0
    trees = load_trace_file(tmp_path / "traces.jsonl")
    assert [t.problem_id for t in trees] == [f"pilot-{i:03d}" for i in range(10)]
    for tree in trees:
        assert [m.param_count for m in tree.model_pool] == [7e9, 7.2e10]
        assert tree.model_pool[1].pricing.input_per_mtok == 40.0
        assert is_verifier_labeled(tree)  # the demo config wires a verifier
    assert trees[5].difficulty == 0.25
    assert trees[7].difficulty == 0.75

    with open(tmp_path / "collection_report.json", encoding="utf-8") as fh:
        report = json.load(fh)
    assert len(report["problems"]) == 10
    assert report["totals"]["calls"] > 0
    assert report["totals"]["cached_tokens"] == 0


def test_demo_rerun_is_byte_identical(tmp_path):
    first = tmp_path / "a"
    second = tmp_path / "b"
    assert run_demo(first) == 0
    assert run_demo(second) == 0
    for name in ("traces.jsonl", "collection_report.json"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def write_config(tmp_path, text: str) -> str:
    path = tmp_path / "cfg.yaml"
    path.write_text(text, encoding="utf-8")
    return str(path)


MINIMAL = """\
problems: {problems}
endpoints:
  - {{mode: demo, model: m0, param_count: 1.0}}
  - {{mode: demo, model: m1, param_count: 2.0}}
"""


def minimal_config(tmp_path, extra: str = "") -> str:
    problems = os.path.join(FIXTURES, "pilot_problems.jsonl")
    return write_config(tmp_path, MINIMAL.format(problems=problems) + extra)


def test_minimal_config_collects(tmp_path):
    cfg = minimal_config(tmp_path, "collect: {depth_budget: 2}\n")
    assert main(["collect", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    assert len(load_trace_file(tmp_path / "o" / "traces.jsonl")) == 10


def test_unknown_top_level_key_exits_2(tmp_path, capsys):
    cfg = minimal_config(tmp_path, "verbosity: 3\n")
    assert main(["collect", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "unknown config key: verbosity" in capsys.readouterr().err


def test_unknown_collect_key_exits_2(tmp_path, capsys):
    cfg = minimal_config(tmp_path, "collect: {max_depth: 3}\n")
    assert main(["collect", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "unknown config key: collect.max_depth" in capsys.readouterr().err


def test_unknown_endpoint_key_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, (
        "problems: " + os.path.join(FIXTURES, "pilot_problems.jsonl") + "\n"
        "endpoints:\n"
        "  - {mode: demo, model: m0, param_count: 1.0, top_k: 3}\n"))
    assert main(["collect", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "unknown config key: endpoints[0].top_k" in capsys.readouterr().err


def test_missing_problems_file_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, MINIMAL.format(problems="absent.jsonl"))
    assert main(["collect", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "problems file" in capsys.readouterr().err


def test_config_without_endpoints_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, "problems: p.jsonl\n")
    assert main(["collect", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "at least one endpoint" in capsys.readouterr().err


def test_bad_endpoint_mode_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, (
        "problems: " + os.path.join(FIXTURES, "pilot_problems.jsonl") + "\n"
        "endpoints:\n"
        "  - {mode: remote, model: m0, param_count: 1.0}\n"))
    assert main(["collect", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "mode must be live or demo" in capsys.readouterr().err
