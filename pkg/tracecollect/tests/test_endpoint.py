"""Endpoint config invariants, mocks, retries, rate limiting, HTTP mapping."""

import math

import pytest

from tracecollect import (Completion, DemoEndpoint, EndpointConfig,
                          EndpointError, MockEndpoint, Pricing, RateLimiter,
                          TokenInfo, Usage, generation_prompt, with_retries)
from tracecollect.endpoint import HttpEndpoint, parse_generation_prompt


def cfg(**over):
    base = dict(kind="hosted", model="m", param_count=7e9)
    base.update(over)
    return EndpointConfig(**base)


class TestEndpointConfig:
    def test_defaults(self):
        c = cfg()
        assert c.temperature == 0.7
        assert c.top_logprobs == 5

    @pytest.mark.parametrize("bad", [
        dict(kind="ftp"), dict(model=""), dict(param_count=0),
        dict(temperature=0.0), dict(temperature=-1.0), dict(top_logprobs=0),
    ])
    def test_invariants_rejected(self, bad):
        with pytest.raises(ValueError):
            cfg(**bad)

    def test_pricing_validation(self):
        with pytest.raises(ValueError):
            Pricing(input_per_mtok=-1, cached_input_per_mtok=0, output_per_mtok=0)


class TestParseGenerationPrompt:
    def test_round_trip(self):
        q, steps = parse_generation_prompt(generation_prompt("Why?", ["a", "b"]))
        assert q == "Why?"
        assert steps == ["a", "b"]

    def test_empty_prefix(self):
        q, steps = parse_generation_prompt(generation_prompt("Why?"))
        assert (q, steps) == ("Why?", [])

    def test_non_generation_prompt_rejected(self):
        with pytest.raises(ValueError):
            parse_generation_prompt("just some text")


class TestWithRetries:
    def test_returns_first_success(self):
        calls = []

        def fn():
            calls.append(1)
            return "ok"

        assert with_retries(fn, attempts=3, sleep=lambda s: None) == "ok"
        assert len(calls) == 1

    def test_backoff_doubles_between_attempts(self):
        slept = []
        attempts = {"n": 0}

        def fn():
            attempts["n"] += 1
            if attempts["n"] < 3:
                raise EndpointError("down")
            return "ok"

        assert with_retries(fn, attempts=3, backoff=0.5, sleep=slept.append) == "ok"
        assert slept == [0.5, 1.0]

    def test_exhaustion_reraises(self):
        def fn():
            raise EndpointError("down")

        with pytest.raises(EndpointError, match="gave up after 2"):
            with_retries(fn, attempts=2, sleep=lambda s: None)


class TestRateLimiter:
    def test_zero_rate_never_sleeps(self):
        slept = []
        rl = RateLimiter(0.0, clock=lambda: 0.0, sleep=slept.append)
        for _ in range(5):
            rl.acquire()
        assert slept == []

    def test_spacing_at_fixed_clock(self):
        # with a frozen clock every acquire books the next slot one
        # interval later, so waits grow linearly
        slept = []
        rl = RateLimiter(2.0, clock=lambda: 100.0, sleep=slept.append)
        rl.acquire()
        rl.acquire()
        rl.acquire()
        assert slept == [pytest.approx(0.5), pytest.approx(1.0)]


class TestMockEndpoint:
    def test_scripted_step_by_prefix_length(self):
        script = {"Q": [
            {"text": "one", "tokens": [TokenInfo("one", -0.1)]},
            {"text": "two", "tokens": [TokenInfo("two", -0.1)]},
        ]}
        ep = MockEndpoint(cfg(), script)
        first = ep.complete(generation_prompt("Q"), "\n\n", 64)
        second = ep.complete(generation_prompt("Q", ["one"]), "\n\n", 64)
        assert (first.text, second.text) == ("one", "two")
        assert len(ep.calls) == 2
        assert ep.calls[0].usage.output_tokens == 1

    def test_exhausted_script_raises(self):
        ep = MockEndpoint(cfg(), {"Q": []})
        with pytest.raises(EndpointError, match="exhausted"):
            ep.complete(generation_prompt("Q"), "\n\n", 64)

    def test_fail_first_injects_failures(self):
        script = {"Q": [{"text": "one", "tokens": [TokenInfo("one", -0.1)]}]}
        ep = MockEndpoint(cfg(), script, fail_first=2)
        for _ in range(2):
            with pytest.raises(EndpointError, match="injected"):
                ep.complete(generation_prompt("Q"), "\n\n", 64)
        assert ep.complete(generation_prompt("Q"), "\n\n", 64).text == "one"

    def test_verdict_replies_consumed_in_order(self):
        ep = MockEndpoint(cfg(), replies=["correct", "incorrect"])
        from tracecollect import verification_prompt
        p = verification_prompt("Q", [], "step")
        assert ep.complete(p, None, 8).text == "correct"
        assert ep.complete(p, None, 8).text == "incorrect"


class TestDemoEndpoint:
    def test_deterministic_across_instances(self):
        a = DemoEndpoint(cfg(), {"Q": "4"}, seed=3)
        b = DemoEndpoint(cfg(), {"Q": "4"}, seed=3)
        pa = a.complete(generation_prompt("Q"), "\n\n", 64)
        pb = b.complete(generation_prompt("Q"), "\n\n", 64)
        assert pa.text == pb.text
        assert [t.logprob for t in pa.tokens] == [t.logprob for t in pb.tokens]

    def test_answers_after_configured_steps(self):
        ep = DemoEndpoint(cfg(), {"Q": "4"}, accuracy=1.0,
                          steps_before_answer=1, seed=0)
        s0 = ep.complete(generation_prompt("Q"), "\n\n", 64)
        s1 = ep.complete(generation_prompt("Q", [s0.text]), "\n\n", 64)
        assert "\\boxed{4}" in s1.text

    def test_accuracy_zero_answers_wrong(self):
        ep = DemoEndpoint(cfg(), {"Q": "4"}, accuracy=0.0,
                          steps_before_answer=0, seed=0)
        out = ep.complete(generation_prompt("Q"), "\n\n", 64)
        assert "\\boxed{4}" not in out.text
        assert "\\boxed{" in out.text

    def test_tokens_carry_both_score_sources(self):
        ep = DemoEndpoint(cfg(), {"Q": "4"}, seed=0)
        out = ep.complete(generation_prompt("Q"), "\n\n", 64)
        assert all(t.top for t in out.tokens)
        assert all(t.max_logit is not None for t in out.tokens)


class TestHttpEndpoint:
    def _response(self):
        return {
            "choices": [{
                "text": "2+2 = 4",
                "finish_reason": "stop",
                "logprobs": {
                    "tokens": ["2+2", " =", " 4"],
                    "token_logprobs": [-0.2, -0.1, -0.3],
                    "top_logprobs": [
                        {"2+2": -0.2, "2": -1.5},
                        {" =": -0.1},
                        {" 5": -0.25, " 4": -0.3},
                    ],
                },
            }],
            "usage": {"prompt_tokens": 50, "completion_tokens": 3,
                      "prompt_tokens_details": {"cached_tokens": 20}},
        }

    def test_request_payload_and_response_mapping(self, monkeypatch):
        seen = {}

        def transport(payload, headers):
            seen.update(payload=payload, headers=headers)
            return self._response()

        monkeypatch.setenv("TRACECOLLECT_API_KEY", "sk-test")
        ep = HttpEndpoint(cfg(model="small-1", temperature=0.7), transport=transport)
        comp = ep.complete("PROMPT", "\n\n", 128)

        assert seen["payload"] == {
            "model": "small-1", "prompt": "PROMPT", "temperature": 0.7,
            "max_tokens": 128, "logprobs": 5, "stop": ["\n\n"],
        }
        assert seen["headers"] == {"Authorization": "Bearer sk-test"}
        assert comp.text == "2+2 = 4"
        assert comp.stopped is True
        # billed input excludes the cached share, which is billed separately
        assert comp.usage == Usage(input_tokens=30, cached_tokens=20,
                                   output_tokens=3)

    def test_top_lists_sorted_best_first(self, monkeypatch):
        monkeypatch.delenv("TRACECOLLECT_API_KEY", raising=False)
        ep = HttpEndpoint(cfg(), transport=lambda p, h: self._response())
        comp = ep.complete("PROMPT", None, 8)
        assert comp.tokens[2].top == ((" 5", -0.25), (" 4", -0.3))
        assert comp.tokens[0].max_logit is None

    def test_local_kind_maps_max_logits(self):
        resp = self._response()
        resp["choices"][0]["logprobs"]["max_logits"] = [7.5, 6.0, 8.25]
        ep = HttpEndpoint(cfg(kind="local"), transport=lambda p, h: resp)
        comp = ep.complete("PROMPT", None, 8)
        assert [t.max_logit for t in comp.tokens] == [7.5, 6.0, 8.25]

    def test_malformed_response_becomes_endpoint_error(self):
        ep = HttpEndpoint(cfg(), transport=lambda p, h: {"nope": 1})
        with pytest.raises(EndpointError, match="malformed"):
            ep.complete("PROMPT", None, 8)

    def test_missing_key_sends_no_auth_header(self, monkeypatch):
        monkeypatch.delenv("TRACECOLLECT_API_KEY", raising=False)
        seen = {}

        def transport(payload, headers):
            seen["headers"] = headers
            return self._response()

        HttpEndpoint(cfg(), transport=transport).complete("P", None, 8)
        assert seen["headers"] == {}

    def test_needs_url_or_transport(self):
        with pytest.raises(ValueError, match="base_url"):
            HttpEndpoint(cfg())
