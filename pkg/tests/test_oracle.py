from __future__ import annotations

import json
import threading
import time

import httpx
import numpy as np
import pytest

from persona_align.data import Alternative
from persona_align.errors import ConfigError, OracleError, ResponseFormatError, TransportError
from persona_align.oracle.base import Prompt, cache_key, fan_out, parse_choice_response, simulate_choice
from persona_align.oracle.cache import CachedOracle
from persona_align.oracle.http import HttpChatOracle, OracleConfig
from persona_align.oracle.synthetic import SyntheticChoiceOracle, SyntheticOracleParams, utilities
from persona_align.prompts import build_context_prompt, build_simulation_prompt

from _factories import DEMO, context, persona


# --- response parsing ------------------------------------------------------


@pytest.mark.parametrize(
    "text, expected",
    [
        ("Answer: CAR", Alternative.CAR),
        ("I choose the Swissmetro.", Alternative.SWISSMETRO),
        ("Final answer: Train", Alternative.TRAIN),
        ("The train is slow and the car is pricey.\nFinal answer: Swissmetro", Alternative.SWISSMETRO),
        ("final answer - swiss-metro", Alternative.SWISSMETRO),
        ("They would drive.", Alternative.CAR),
    ],
)
def test_parse_choice(text, expected):
    assert parse_choice_response(text) == expected


@pytest.mark.parametrize("text", ["maybe train or car", "", "   ", "I cannot say."])
def test_parse_choice_rejects(text):
    with pytest.raises(ResponseFormatError):
        parse_choice_response(text)


def test_last_final_answer_wins():
    assert parse_choice_response("Final answer: Car\nOn reflection...\nFinal answer: Train") == Alternative.TRAIN


class _Scripted:
    identity = {"model_name": "scripted", "temperature": 0.0}
    deterministic = True

    def __init__(self, replies):
        self.replies = list(replies)
        self.prompts = []

    def complete(self, prompt):
        self.prompts.append(prompt)
        return self.replies.pop(0)


def test_format_retry_appends_corrective_instruction():
    o = _Scripted(["hmm", "Final answer: Car"])
    p = Prompt("sys", "user")
    assert simulate_choice(o, p) == Alternative.CAR
    assert o.prompts[1].user_text.startswith("user") and "Final answer" in o.prompts[1].user_text


def test_format_retry_budget_exhausted():
    o = _Scripted(["hmm", "still unsure"])
    with pytest.raises(ResponseFormatError):
        simulate_choice(o, Prompt("sys", "user"))


def test_cache_key_ignores_metadata_and_payload():
    a = Prompt("s", "u", {"record_id": 1}, object())
    b = Prompt("s", "u", {"record_id": 2}, None)
    assert cache_key("m", 0.0, a) == cache_key("m", 0.0, b)
    assert cache_key("m", 0.0, a) != cache_key("m", 0.5, a)
    assert cache_key("m", 0.0, a) != cache_key("m2", 0.0, a)


def test_fan_out_preserves_order_and_captures_oracle_errors():
    def fn(x):
        if x == 3:
            raise OracleError("boom")
        return x * 2

    for workers in (1, 4):
        out = fan_out(fn, range(6), workers)
        assert out[:3] == [0, 2, 4] and isinstance(out[3], OracleError) and out[4:] == [8, 10]


# --- synthetic oracle ------------------------------------------------------


def test_synthetic_hand_utilities():
    ctx = context(train=(50, 100, 30), sm=(60, 60, 20), car=(40, 90))
    ratings = (10, 10, 10, 10, 10, 10)
    v = utilities(SyntheticOracleParams(), ratings, DEMO, ctx)
    # time, cost, headway are per 100 units; habitual mode of a train user is Train
    expected = [-(1.00 + 0.50 + 0.30) + 1.0, -(0.60 + 0.60 + 0.20) + 0.5, -(0.90 + 0.40)]
    np.testing.assert_allclose(v, expected, rtol=0, atol=1e-12)


def test_synthetic_picks_dominant_alternative():
    ctx = context(train=(90, 200, 60), sm=(80, 180, 60), car=(10, 30))
    oracle = SyntheticChoiceOracle(SyntheticOracleParams(habit_bonus=0.0, comfort_bonus=0.0))
    for ratings in [(1, 10, 1, 1, 1, 1), (10, 1, 1, 1, 1, 1), (5, 5, 5, 5, 5, 5)]:
        p = build_simulation_prompt(DEMO, ctx, persona(ratings=ratings))
        assert simulate_choice(oracle, p) == Alternative.CAR


def test_synthetic_persona_changes_choice():
    # Car is cheap but slow; Swissmetro fast but dear
    ctx = context(train=(150, 250, 60), sm=(150, 40, 10), car=(20, 250))
    oracle = SyntheticChoiceOracle(SyntheticOracleParams(habit_bonus=0.0, comfort_bonus=0.0))
    cost_driven = build_simulation_prompt(DEMO, ctx, persona(ratings=(1, 10, 1, 1, 1, 1)))
    time_driven = build_simulation_prompt(DEMO, ctx, persona(ratings=(10, 1, 1, 1, 1, 1)))
    assert simulate_choice(oracle, cost_driven) == Alternative.CAR
    assert simulate_choice(oracle, time_driven) == Alternative.SWISSMETRO


def test_noisy_synthetic_is_repeatable_per_prompt():
    oracle = SyntheticChoiceOracle(SyntheticOracleParams(noise_scale=2.0, seed=5))
    assert not oracle.deterministic
    p = build_context_prompt(DEMO, context())
    assert len({oracle.complete(p) for _ in range(5)}) == 1


def test_synthetic_rejects_prompt_without_payload():
    with pytest.raises(OracleError):
        SyntheticChoiceOracle().complete(Prompt("s", "u"))


# --- cache -----------------------------------------------------------------


class _Counting:
    identity = {"model_name": "counting", "temperature": 0.0}
    deterministic = False

    def __init__(self):
        self.calls = 0

    def complete(self, prompt):
        self.calls += 1
        return f"Final answer: Train #{self.calls}"


def test_cache_hit_skips_inner_and_persists(tmp_path):
    inner = _Counting()
    path = tmp_path / "c.jsonl"
    c = CachedOracle(inner, path)
    p = Prompt("s", "u")
    first = c.complete(p)
    assert c.complete(p) == first and inner.calls == 1 and c.hits == 1 and c.misses == 1
    reopened = CachedOracle(_Counting(), path)
    assert reopened.complete(p) == first and reopened.inner.calls == 0


def test_cache_tolerates_torn_last_line(tmp_path):
    path = tmp_path / "c.jsonl"
    c = CachedOracle(_Counting(), path)
    c.complete(Prompt("s", "u"))
    with open(path, "a") as fh:
        fh.write('{"key": "abc", "respo')
    again = CachedOracle(_Counting(), path)
    assert len(again) == 1


def test_unwritable_cache_path_is_config_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ConfigError):
        CachedOracle(_Counting(), blocker / "sub" / "c.jsonl")


# --- HTTP oracle -----------------------------------------------------------

SECRET = "sk-test-0123456789abcdef"


def _completion(text):
    return httpx.Response(200, json={"choices": [{"message": {"content": text}}]})


def _oracle(handler, monkeypatch, **kw):
    monkeypatch.setenv("PERSONA_ALIGN_API_KEY", SECRET)
    cfg = OracleConfig(endpoint_url="https://example.invalid/v1/chat", backoff_seconds=0.0, **kw)
    return HttpChatOracle(cfg, transport=httpx.MockTransport(handler))


def test_http_sends_messages_and_key(monkeypatch):
    seen = {}

    def handler(request):
        seen["auth"] = request.headers.get("authorization")
        seen["body"] = json.loads(request.content)
        return _completion("Final answer: Car")

    o = _oracle(handler, monkeypatch, temperature=0.3, model_name="m1")
    assert o.complete(Prompt("sys", "usr")) == "Final answer: Car"
    assert seen["auth"] == f"Bearer {SECRET}"
    assert seen["body"]["model"] == "m1" and seen["body"]["temperature"] == 0.3
    assert [m["role"] for m in seen["body"]["messages"]] == ["system", "user"]
    assert SECRET not in json.dumps(o.identity)


def test_http_retries_then_succeeds(monkeypatch):
    replies = [httpx.Response(503), httpx.Response(429), _completion("Final answer: Train")]
    o = _oracle(lambda r: replies.pop(0), monkeypatch, max_retries=3)
    assert o.complete(Prompt("s", "u")).endswith("Train")
    assert o.request_count == 3


def test_http_retry_budget(monkeypatch, caplog):
    o = _oracle(lambda r: httpx.Response(500), monkeypatch, max_retries=2)
    with pytest.raises(TransportError) as exc:
        o.complete(Prompt("s", "u"))
    assert o.request_count == 3
    assert SECRET not in str(exc.value) and SECRET not in caplog.text


def test_http_client_error_not_retried(monkeypatch):
    o = _oracle(lambda r: httpx.Response(401, text="bad key"), monkeypatch, max_retries=3)
    with pytest.raises(TransportError, match="401"):
        o.complete(Prompt("s", "u"))
    assert o.request_count == 1


def test_http_network_error_retried(monkeypatch):
    def handler(request):
        raise httpx.ConnectError("refused", request=request)

    o = _oracle(handler, monkeypatch, max_retries=1)
    with pytest.raises(TransportError):
        o.complete(Prompt("s", "u"))
    assert o.request_count == 2


def test_http_malformed_body_is_format_error(monkeypatch):
    o = _oracle(lambda r: httpx.Response(200, json={"nope": 1}), monkeypatch)
    with pytest.raises(ResponseFormatError):
        o.complete(Prompt("s", "u"))


def test_http_concurrency_bound(monkeypatch):
    def handler(request):
        time.sleep(0.02)
        return _completion("Final answer: Car")

    o = _oracle(handler, monkeypatch, max_parallel_requests=2)
    out = fan_out(lambda i: o.complete(Prompt("s", f"u{i}")), range(12), max_workers=8)
    assert len(out) == 12 and o.max_in_flight <= 2


@pytest.mark.parametrize("kw", [{"temperature": -1}, {"max_retries": -1}, {"request_timeout": 0}, {"max_parallel_requests": 0}])
def test_oracle_config_validation(kw):
    with pytest.raises(ConfigError):
        OracleConfig(**kw)
