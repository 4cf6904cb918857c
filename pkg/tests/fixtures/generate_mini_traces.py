"""Regenerates mini_traces.jsonl, the committed 10-problem trace fixture.

Run from the repository root:

    python3 tests/fixtures/generate_mini_traces.py

The output is deterministic; tests pin label counts from this exact file,
so regenerate only when the trace schema itself changes.
"""

import numpy as np

from steproute.env import SyntheticEnvConfig, sample_trace_tree
from steproute.trace import save_trace_file


def build_trees() -> list:
    cfg = SyntheticEnvConfig(
        num_states=2,
        p_success=((0.9, 0.55), (0.98, 0.97)),
        step_costs=(1.0, 5.0),
        horizon=4,
        seed=0,
    )
    rng = np.random.default_rng([424242, 7])
    return [sample_trace_tree(cfg, rng, f"mini-{i:03d}") for i in range(10)]


if __name__ == "__main__":
    save_trace_file(build_trees(), "tests/fixtures/mini_traces.jsonl")
