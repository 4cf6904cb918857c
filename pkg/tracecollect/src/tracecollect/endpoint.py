"""Completion endpoints: config, response schema, retries, rate limiting.

Three implementations share one interface: an HTTP adapter for real servers
(hosted APIs and local inference servers), a scripted mock for tests, and a
seeded demo model so the full pipeline runs offline. An endpoint returns one
completion per call together with the usage numbers the server reported;
those numbers flow into trace step records unchanged.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import threading
import time
import urllib.request
from dataclasses import dataclass, field
from typing import Callable, Optional

GENERATION_SYSTEM_MARKER = "<|im_start|>user\n"
GENERATION_ASSISTANT_MARKER = "<|im_start|>assistant\n"
VERIFICATION_MARKER = "Task: Determine whether the final step is correct"


class EndpointError(RuntimeError):
    """A completion call failed after exhausting its retries."""


@dataclass(frozen=True)
class Pricing:
    """Billing rates in US cents per 10^6 tokens; keys match the trace format."""

    input_per_mtok: float
    cached_input_per_mtok: float
    output_per_mtok: float

    def __post_init__(self):
        for name in ("input_per_mtok", "cached_input_per_mtok", "output_per_mtok"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be a finite nonnegative number")

    def to_obj(self) -> dict:
        return {
            "input_per_mtok": float(self.input_per_mtok),
            "cached_input_per_mtok": float(self.cached_input_per_mtok),
            "output_per_mtok": float(self.output_per_mtok),
        }


@dataclass(frozen=True)
class EndpointConfig:
    """Identity and sampling settings for one model endpoint.

    ``kind`` is "local" for servers that expose raw logits (confidence is the
    mean top logit over math tokens) or "hosted" for APIs that only return
    top-k log-probabilities (confidence is the weakest top-1 probability).
    ``param_count`` feeds the trace model pool and must be positive even for
    hosted models; use the provider's published or estimated size.
    """

    kind: str
    model: str
    param_count: float
    temperature: float = 0.7
    top_logprobs: int = 5
    pricing: Optional[Pricing] = None
    base_url: Optional[str] = None
    api_key_env: str = "TRACECOLLECT_API_KEY"

    def __post_init__(self):
        if self.kind not in ("local", "hosted"):
            raise ValueError(f"unknown endpoint kind {self.kind!r}")
        if not self.model:
            raise ValueError("model name must be nonempty")
        if not self.param_count > 0:
            raise ValueError("param_count must be positive")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.top_logprobs < 1:
            raise ValueError("top_logprobs must be at least 1")


@dataclass(frozen=True)
class TokenInfo:
    """One generated token with the confidence data the server exposed.

    ``top`` holds the returned (token, logprob) list, best first; it may be
    shorter than requested. ``max_logit`` is the pre-softmax maximum at this
    position and is only present on local endpoints.
    """

    text: str
    logprob: float
    top: tuple = ()
    max_logit: Optional[float] = None


@dataclass(frozen=True)
class Usage:
    """Billed token counts as reported by the endpoint for one call."""

    input_tokens: int
    cached_tokens: int
    output_tokens: int

    def __post_init__(self):
        for name in ("input_tokens", "cached_tokens", "output_tokens"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise ValueError(f"{name} must be a nonnegative integer")


@dataclass(frozen=True)
class Completion:
    text: str
    tokens: tuple
    usage: Usage
    stopped: bool  # True when generation hit the stop string, False on EOS/length


class Endpoint:
    """Interface: one text completion per call."""

    config: EndpointConfig

    def complete(self, prompt: str, stop: Optional[str],
                 max_tokens: int) -> Completion:
        raise NotImplementedError


def with_retries(fn: Callable[[], Completion], attempts: int = 3,
                 backoff: float = 0.5,
                 sleep: Callable[[float], None] = time.sleep) -> Completion:
    """Run ``fn`` with exponential backoff; re-raise after the last attempt."""
    if attempts < 1:
        raise ValueError("attempts must be at least 1")
    last: Optional[Exception] = None
    for i in range(attempts):
        if i:
            sleep(backoff * (2 ** (i - 1)))
        try:
            return fn()
        except EndpointError as exc:
            last = exc
    raise EndpointError(f"gave up after {attempts} attempts: {last}") from last


class RateLimiter:
    """Global minimum-interval limiter shared across workers.

    ``acquire`` blocks until the next request slot; with rate 0 it is a
    no-op. Clock and sleep are injectable so tests run without waiting.
    """

    def __init__(self, requests_per_second: float,
                 clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        if requests_per_second < 0:
            raise ValueError("rate must be nonnegative")
        self._interval = 1.0 / requests_per_second if requests_per_second else 0.0
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._next_free = 0.0

    def acquire(self) -> None:
        if not self._interval:
            return
        with self._lock:
            now = self._clock()
            wait = self._next_free - now
            self._next_free = max(self._next_free, now) + self._interval
        if wait > 0:
            self._sleep(wait)


def parse_generation_prompt(prompt: str):
    """Recover (question, prefix steps) from a generation prompt.

    The scripted and demo endpoints key their behavior on the question and on
    how many steps the prompt already contains, so they stay correct when the
    prefix mixes steps from different models.
    """
    try:
        after_user = prompt.split(GENERATION_SYSTEM_MARKER, 1)[1]
        question = after_user.split("\n<|im_end|>", 1)[0]
        output = prompt.split(GENERATION_ASSISTANT_MARKER, 1)[1]
    except IndexError as exc:
        raise ValueError("not a generation prompt") from exc
    steps = [s for s in output.split("\n\n") if s]
    return question, steps


# ---------------------------------------------------------------------------
# scripted mock


@dataclass
class CallRecord:
    """One completion call as seen by a mock, kept for test assertions."""

    prompt: str
    stop: Optional[str]
    text: str
    usage: Usage


class MockEndpoint(Endpoint):
    """Deterministic endpoint driven by explicit scripts.

    ``script`` maps a question to the list of steps the model produces, one
    per call, indexed by how many steps the prompt's prefix already holds.
    Each step is a dict with ``text`` and a ``tokens`` list of TokenInfo.
    ``replies`` is a queue of raw reply texts consumed by verification
    prompts. ``fail_first`` makes the first N calls raise, for retry tests.

    Usage numbers are fabricated deterministically: whitespace token count of
    the prompt as input (never cached), token count of the reply as output.
    Every call is appended to ``calls``.
    """

    def __init__(self, config: EndpointConfig, script: Optional[dict] = None,
                 replies: Optional[list] = None, fail_first: int = 0):
        self.config = config
        self._script = script or {}
        self._replies = list(replies or [])
        self._fail_remaining = fail_first
        self._lock = threading.Lock()
        self.calls: list = []

    def complete(self, prompt: str, stop: Optional[str],
                 max_tokens: int) -> Completion:
        with self._lock:
            if self._fail_remaining > 0:
                self._fail_remaining -= 1
                raise EndpointError("injected failure")
            if prompt.startswith(VERIFICATION_MARKER):
                if not self._replies:
                    raise EndpointError("mock has no verdict replies left")
                text = self._replies.pop(0)
                tokens = (TokenInfo(text=text, logprob=-0.1),)
            else:
                question, prefix = parse_generation_prompt(prompt)
                steps = self._script.get(question)
                if steps is None:
                    raise EndpointError(f"mock has no script for {question!r}")
                if len(prefix) >= len(steps):
                    raise EndpointError(
                        f"mock script for {question!r} exhausted at step {len(prefix)}")
                entry = steps[len(prefix)]
                text = entry["text"]
                tokens = tuple(entry["tokens"])
            usage = Usage(input_tokens=len(prompt.split()), cached_tokens=0,
                          output_tokens=len(tokens))
            comp = Completion(text=text, tokens=tokens, usage=usage,
                              stopped=stop is not None)
            self.calls.append(CallRecord(prompt=prompt, stop=stop, text=text,
                                         usage=usage))
            return comp


# ---------------------------------------------------------------------------
# seeded demo model


def _unit_hash(*parts) -> float:
    """Deterministic hash of the parts mapped into [0, 1)."""
    digest = hashlib.blake2b("|".join(str(p) for p in parts).encode("utf-8"),
                             digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2 ** 64


class DemoEndpoint(Endpoint):
    """Offline stand-in for a model so the pipeline runs with no server.

    Produces ``steps_before_answer`` filler steps and then a boxed final
    answer, correct with probability ``accuracy`` (seeded per question and
    model, so reruns are identical). ``answer_key`` maps question text to the
    gold answer; a wrong final answer is the gold with a marker appended.
    Verification prompts get a "correct" verdict with probability
    ``verify_accuracy``. Tokens carry both a top-logprob list and a fake max
    logit so either endpoint kind can score them.
    """

    def __init__(self, config: EndpointConfig, answer_key: dict,
                 accuracy: float = 0.9, verify_accuracy: float = 1.0,
                 steps_before_answer: int = 2, seed: int = 0):
        if not 0.0 <= accuracy <= 1.0 or not 0.0 <= verify_accuracy <= 1.0:
            raise ValueError("accuracies must lie in [0, 1]")
        self.config = config
        self._answers = dict(answer_key)
        self._accuracy = accuracy
        self._verify_accuracy = verify_accuracy
        self._steps = steps_before_answer
        self._seed = seed
        self._lock = threading.Lock()
        self.calls: list = []

    def _tokens(self, words, question: str, step_index: int) -> tuple:
        out = []
        for j, w in enumerate(words):
            p = 0.5 + 0.49 * _unit_hash(self._seed, self.config.model,
                                        question, step_index, j)
            out.append(TokenInfo(text=w, logprob=math.log(p),
                                 top=((w, math.log(p)),),
                                 max_logit=10.0 * p))
        return tuple(out)

    def complete(self, prompt: str, stop: Optional[str],
                 max_tokens: int) -> Completion:
        if prompt.startswith(VERIFICATION_MARKER):
            ok = _unit_hash(self._seed, "verify", prompt) < self._verify_accuracy
            text = "correct" if ok else "incorrect"
            tokens = (TokenInfo(text=text, logprob=-0.05),)
        else:
            question, prefix = parse_generation_prompt(prompt)
            step_index = len(prefix)
            if question not in self._answers:
                raise EndpointError(f"demo endpoint has no answer for {question!r}")
            if step_index < self._steps:
                # keep one standalone math token so confidence scoring
                # never needs its all-positions fallback
                text = (f"Step {step_index + 1} : narrowing the problem "
                        f"down to {step_index + 1} parts .")
            else:
                gold = self._answers[question]
                correct = _unit_hash(self._seed, self.config.model,
                                     question) < self._accuracy
                answer = gold if correct else f"{gold}?1"
                text = f"So the final answer is \\boxed{{{answer}}} ."
            tokens = self._tokens(text.split(), question, step_index)
        usage = Usage(input_tokens=len(prompt.split()), cached_tokens=0,
                      output_tokens=len(tokens))
        comp = Completion(text=text, tokens=tokens, usage=usage,
                          stopped=stop is not None)
        with self._lock:
            self.calls.append(CallRecord(prompt=prompt, stop=stop, text=text,
                                         usage=usage))
        return comp


# ---------------------------------------------------------------------------
# HTTP adapter


def _default_transport(url: str, payload: dict, headers: dict) -> dict:
    data = json.dumps(payload).encode("utf-8")
    req = urllib.request.Request(url, data=data, method="POST",
                                 headers={"Content-Type": "application/json",
                                          **headers})
    try:
        with urllib.request.urlopen(req, timeout=120) as resp:
            return json.loads(resp.read().decode("utf-8"))
    except Exception as exc:  # urllib raises several unrelated types
        raise EndpointError(f"request to {url} failed: {exc}") from exc


class HttpEndpoint(Endpoint):
    """Completions-style HTTP endpoint for hosted APIs and local servers.

    Sends one POST per call; the response must carry ``choices[0].text``,
    aligned ``logprobs.tokens`` / ``token_logprobs`` / ``top_logprobs``
    lists, and a ``usage`` object. Local servers may add a ``max_logits``
    list. Credentials come from the environment variable named in the
    config and are sent as a bearer header, never stored.
    """

    def __init__(self, config: EndpointConfig, transport=None):
        if config.base_url is None and transport is None:
            raise ValueError("HttpEndpoint needs a base_url or a transport")
        self.config = config
        self._transport = transport or (
            lambda payload, headers: _default_transport(config.base_url, payload, headers))

    def _headers(self) -> dict:
        key = os.environ.get(self.config.api_key_env, "")
        return {"Authorization": f"Bearer {key}"} if key else {}

    def complete(self, prompt: str, stop: Optional[str],
                 max_tokens: int) -> Completion:
        payload = {
            "model": self.config.model,
            "prompt": prompt,
            "temperature": self.config.temperature,
            "max_tokens": max_tokens,
            "logprobs": self.config.top_logprobs,
        }
        if stop is not None:
            payload["stop"] = [stop]
        try:
            obj = self._transport(payload, self._headers())
            choice = obj["choices"][0]
            lp = choice.get("logprobs") or {}
            texts = lp.get("tokens", [])
            lps = lp.get("token_logprobs", [])
            tops = lp.get("top_logprobs", [{}] * len(texts))
            maxes = lp.get("max_logits", [None] * len(texts))
            tokens = []
            for text, logprob, top, mx in zip(texts, lps, tops, maxes):
                # ties broken by token text so reruns parse identically
                ordered = tuple(sorted((top or {}).items(),
                                       key=lambda kv: (-kv[1], kv[0])))
                tokens.append(TokenInfo(text=text, logprob=float(logprob),
                                        top=ordered,
                                        max_logit=None if mx is None else float(mx)))
            usage = obj.get("usage", {})
            prompt_tokens = int(usage.get("prompt_tokens", 0))
            cached = int(usage.get("prompt_tokens_details", {}).get("cached_tokens", 0))
            billed = Usage(input_tokens=prompt_tokens - cached,
                           cached_tokens=cached,
                           output_tokens=int(usage.get("completion_tokens", 0)))
            return Completion(text=choice["text"], tokens=tuple(tokens),
                              usage=billed,
                              stopped=choice.get("finish_reason") == "stop")
        except EndpointError:
            raise
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise EndpointError(f"malformed endpoint response: {exc}") from exc
