"""Feature extraction: pinned arithmetic plus streaming-statistics properties."""

from __future__ import annotations

import math

import numpy as np
import pytest

from steproute.features import (
    FEATURE_DIM,
    STEP_LEN_CAP,
    Observation,
    RunningStats,
    build_observation,
    score_api,
    score_open,
)
from steproute.trace import StepRecord


def _step(unc: float = 0.0, tokens: int = 64, final: bool = False) -> StepRecord:
    return StepRecord(
        text_len_tokens=tokens,
        uncertainty=unc,
        is_final_answer=final,
        input_tokens_billed=0,
        cached_tokens_billed=0,
        output_tokens_billed=tokens,
    )


class TestScores:
    def test_open_mean_all_positions(self):
        assert score_open([2.0, 3.0, 4.0], [True, True, True]) == 3.0

    def test_open_mean_masked_subset(self):
        assert score_open([2.0, 3.0, 5.0], [False, True, True]) == 4.0

    def test_open_empty_mask_falls_back_to_all(self):
        assert score_open([1.0, 2.0], [False, False]) == 1.5

    def test_api_min_masked(self):
        assert score_api([0.9, 0.2, 0.7], [True, False, True]) == 0.7

    def test_api_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            score_api([1.2], [True])

    def test_both_reject_empty_token_list(self):
        with pytest.raises(ValueError):
            score_open([], [])
        with pytest.raises(ValueError):
            score_api([], [])

    def test_both_reject_mask_length_mismatch(self):
        with pytest.raises(ValueError):
            score_open([1.0], [True, False])
        with pytest.raises(ValueError):
            score_api([0.5], [])


class TestRunningStats:
    def test_matches_numpy_on_random_stream(self):
        rng = np.random.default_rng(7)
        xs = rng.normal(3.0, 2.0, size=257)
        st = RunningStats()
        for x in xs:
            st.update(float(x))
        assert st.count == 257
        assert st.mean == pytest.approx(float(np.mean(xs)), rel=1e-12)
        assert st.variance == pytest.approx(float(np.var(xs)), rel=1e-10)

    def test_standardize_pinned_example(self):
        # mean 1.0, population std 0.5 -> (1.7 - 1.0) / 0.5 = 1.4
        st = RunningStats()
        for x in (0.5, 1.0, 1.5, 1.0):
            st.update(x)
        assert st.mean == pytest.approx(1.0)
        assert st.std == pytest.approx(0.3535533905932738)
        st2 = RunningStats(count=4, mean=1.0, m2=1.0)  # variance 0.25
        assert st2.standardize(1.7) == pytest.approx(1.4)

    def test_empty_stats_pass_through(self):
        assert RunningStats().standardize(2.25) == 2.25

    def test_single_sample_uses_unit_variance(self):
        st = RunningStats()
        st.update(10.0)
        assert st.variance == 1.0
        assert st.standardize(11.0) == pytest.approx(1.0)

    def test_round_trip_obj(self):
        st = RunningStats()
        for x in (1.0, 4.0, -2.0):
            st.update(x)
        clone = RunningStats.from_obj(st.to_obj())
        assert clone == st


class TestObservation:
    def test_vector_layout(self):
        obs = Observation(uncertainty=1.0, step_index_norm=0.25, difficulty=0.5,
                          is_final_answer=1.0, step_len_norm=0.125,
                          current_model_frac=1.0)
        v = obs.vector()
        assert v.shape == (FEATURE_DIM,)
        assert v.tolist() == [1.0, 0.25, 0.5, 1.0, 0.125, 1.0]

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            Observation(math.nan, 0.0, 0.0, 0.0, 0.0, 0.0)

    def test_build_first_step_defaults(self):
        obs = build_observation(_step(unc=0.7), t=0, difficulty=None,
                                model_index=0, stats=RunningStats(),
                                num_models=2, t_max=8)
        assert obs.step_index_norm == 0.0
        assert obs.difficulty == 0.5  # unknown difficulty sits mid-scale
        assert obs.current_model_frac == 0.0
        assert obs.uncertainty == 0.7  # unfitted stats pass raw values through

    def test_build_standardizes_uncertainty(self):
        stats = RunningStats(count=100, mean=1.0, m2=25.0)  # std 0.5
        obs = build_observation(_step(unc=1.7), t=2, difficulty=0.75,
                                model_index=1, stats=stats, num_models=2,
                                t_max=8)
        assert obs.uncertainty == pytest.approx(1.4)
        assert obs.step_index_norm == pytest.approx(0.25)
        assert obs.current_model_frac == 1.0

    def test_step_length_saturates_at_cap(self):
        obs = build_observation(_step(tokens=STEP_LEN_CAP * 3), t=0,
                                difficulty=0.5, model_index=0,
                                stats=RunningStats(), num_models=2)
        assert obs.step_len_norm == 1.0
        half = build_observation(_step(tokens=STEP_LEN_CAP // 2), t=0,
                                 difficulty=0.5, model_index=0,
                                 stats=RunningStats(), num_models=2)
        assert half.step_len_norm == 0.5

    def test_single_model_pool_uses_zero_frac(self):
        obs = build_observation(_step(), t=0, difficulty=0.5, model_index=0,
                                stats=RunningStats(), num_models=1)
        assert obs.current_model_frac == 0.0

    def test_rejects_bad_indices(self):
        with pytest.raises(ValueError):
            build_observation(_step(), t=-1, difficulty=0.5, model_index=0,
                              stats=RunningStats(), num_models=2)
        with pytest.raises(ValueError):
            build_observation(_step(), t=0, difficulty=0.5, model_index=2,
                              stats=RunningStats(), num_models=2)
