from __future__ import annotations

import json
import logging
import re
from collections import Counter
from dataclasses import replace

import httpx
import pytest

from dpaf.inference import (FAILED, OK, ChatCompletionClient, ClientConfig, MockModel, MockParams,
                            PermanentRequestError, TransientRequestError, backoff_delay, execute_batch,
                            failed_ids, load_log, mock_linear_predictor, run_one)
from dpaf.parsing import parse_outcome

NO_SLEEP = lambda _s: None  # noqa: E731


def flat_params(intercept: float = 0.0) -> MockParams:
    return MockParams(tier_intercepts={"Tier1": intercept, "Tier2": intercept, "Tier3": intercept},
                      beta_perf=0, beta_fee=0, beta_firstgen=0, beta_zip=0, beta_school=0,
                      sigma2_institution=0, sigma2_prompt=0, sigma2_seed=0)


# -- mock model ---------------------------------------------------------------------

def test_mock_half_probability(s1_trials):
    model = MockModel(flat_params(0.0), master_seed=3)
    assert all(mock_linear_predictor(t, model.params, 3) == 0.0 for t in s1_trials[:50])
    counts = Counter(model(t) for t in s1_trials)
    share = counts["admit"] / len(s1_trials)
    n = len(s1_trials)
    assert abs(share - 0.5) < 4 * (0.25 / n) ** 0.5


@pytest.mark.parametrize("intercept,expected", [(40.0, "admit"), (-40.0, "reject")])
def test_mock_saturation(s1_trials, intercept, expected):
    model = MockModel(flat_params(intercept), master_seed=1)
    assert {model(t) for t in s1_trials[:500]} == {expected}


def test_mock_is_deterministic_and_parseable(s1_trials, s2_trials):
    a, b = MockModel(master_seed=11), MockModel(master_seed=11)
    assert [a(t) for t in s1_trials[:300]] == [b(t) for t in s1_trials[:300]]
    for t in s2_trials[:300]:
        out = parse_outcome(t.trial_id, a(t), "S2")
        assert out.decision in ("admit", "reject") and out.explanation
        assert len(re.findall(r"\.(?:\s|$)", out.explanation)) <= 5


def test_mock_tier_gradient(s1_trials):
    model = MockModel(master_seed=5)
    rates = {}
    for tier in ("Tier1", "Tier2", "Tier3"):
        ts = [t for t in s1_trials if t.institution.tier.value == tier]
        rates[tier] = sum(model(t) == "admit" for t in ts) / len(ts)
    assert rates["Tier1"] < rates["Tier2"] < rates["Tier3"]


def test_mock_params_roundtrip():
    p = MockParams()
    assert MockParams.from_dict(json.loads(json.dumps(p.to_dict()))) == p
    with pytest.raises(ValueError):
        MockParams.from_dict({"beta_bogus": 1})


# -- retries ----------------------------------------------------------------------

class Flaky:
    def __init__(self, failures: int, exc: Exception):
        self.failures, self.exc, self.calls = failures, exc, 0

    def __call__(self, item):
        self.calls += 1
        if self.calls <= self.failures:
            raise self.exc
        return "admit"


def test_retry_then_success(s1_trials):
    cfg = ClientConfig(retry_budget=2)
    res = run_one(s1_trials[0], Flaky(2, TransientRequestError("503")), cfg, NO_SLEEP)
    assert (res.status, res.attempt_count, res.raw_text) == (OK, 3, "admit")


def test_budget_exhausted(s1_trials):
    cfg = ClientConfig(retry_budget=2)
    client = Flaky(10, TransientRequestError("down"))
    res = run_one(s1_trials[0], client, cfg, NO_SLEEP)
    assert res.status == FAILED and res.attempt_count == 3 == client.calls
    assert res.raw_text == "" and "down" in res.error


def test_permanent_error_not_retried(s1_trials):
    client = Flaky(10, PermanentRequestError("HTTP 400"))
    res = run_one(s1_trials[0], client, ClientConfig(retry_budget=4), NO_SLEEP)
    assert res.status == FAILED and res.attempt_count == 1 == client.calls


def test_backoff_bounded_and_seeded():
    cfg = ClientConfig(backoff_base=1.0, backoff_cap=5.0)
    for attempt in range(1, 8):
        d = backoff_delay("x", attempt, cfg)
        assert 0.0 <= d <= min(5.0, 2 ** (attempt - 1))
        assert d == backoff_delay("x", attempt, cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        ClientConfig(retry_budget=-1)
    with pytest.raises(ValueError):
        ClientConfig(max_in_flight=0)


# -- HTTP client --------------------------------------------------------------------

def _reply(content: str) -> httpx.Response:
    return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": content}}]})


def test_client_request_shape(s1_trials, monkeypatch):
    monkeypatch.setenv("DPAF_TEST_TOKEN", "sekret-123")
    seen = {}

    def handler(request: httpx.Request) -> httpx.Response:
        seen["auth"] = request.headers.get("authorization")
        seen["body"] = json.loads(request.content)
        return _reply("Reject")

    cfg = ClientConfig(endpoint="http://test/v1/chat/completions", model="m", token_env="DPAF_TEST_TOKEN")
    client = ChatCompletionClient(cfg, http=httpx.Client(transport=httpx.MockTransport(handler)))
    assert client(s1_trials[0]) == "Reject"
    assert seen["auth"] == "Bearer sekret-123"
    body = seen["body"]
    assert body["model"] == "m" and body["temperature"] == 0.0 and body["max_tokens"] == 512
    assert [m["role"] for m in body["messages"]] == ["system", "user"]


@pytest.mark.parametrize("status,kind", [(429, TransientRequestError), (500, TransientRequestError),
                                         (503, TransientRequestError), (400, PermanentRequestError),
                                         (404, PermanentRequestError)])
def test_client_status_mapping(s1_trials, status, kind):
    client = ChatCompletionClient(ClientConfig(), http=httpx.Client(
        transport=httpx.MockTransport(lambda r: httpx.Response(status, text="nope"))))
    with pytest.raises(kind):
        client(s1_trials[0])


def test_client_malformed_body_is_transient(s1_trials):
    client = ChatCompletionClient(ClientConfig(), http=httpx.Client(
        transport=httpx.MockTransport(lambda r: httpx.Response(200, json={"choices": []}))))
    with pytest.raises(TransientRequestError):
        client(s1_trials[0])


def test_unreachable_endpoint_exhausts_budget(s1_trials, tmp_path):
    def handler(request):
        raise httpx.ConnectError("refused", request=request)

    cfg = ClientConfig(retry_budget=3, max_in_flight=2)
    client = ChatCompletionClient(cfg, http=httpx.Client(transport=httpx.MockTransport(handler)))
    items = s1_trials[:5]
    results = execute_batch(items, client, cfg, tmp_path / "log.jsonl", sleep=NO_SLEEP)
    assert all(r.status == FAILED and r.attempt_count == cfg.retry_budget + 1 for r in results)
    assert failed_ids(results) == [t.trial_id for t in items]


def test_token_never_logged(s1_trials, tmp_path, monkeypatch, caplog):
    monkeypatch.setenv("DPAF_TEST_TOKEN", "sekret-xyz")
    calls = {"n": 0}

    def handler(request):
        calls["n"] += 1
        if calls["n"] % 2:
            return httpx.Response(500, text="server error")
        return _reply("admit")

    cfg = ClientConfig(token_env="DPAF_TEST_TOKEN", max_in_flight=1)
    client = ChatCompletionClient(cfg, http=httpx.Client(transport=httpx.MockTransport(handler)))
    with caplog.at_level(logging.DEBUG):
        execute_batch(s1_trials[:4], client, cfg, tmp_path / "log.jsonl", sleep=NO_SLEEP)
    assert "sekret-xyz" not in (tmp_path / "log.jsonl").read_text()
    assert "sekret-xyz" not in caplog.text
    assert "sekret-xyz" not in repr(cfg)


# -- batch log -------------------------------------------------------------------------

class Crash(BaseException):
    pass


class CrashAfter:
    def __init__(self, inner, n):
        self.inner, self.n, self.calls = inner, n, 0

    def __call__(self, item):
        self.calls += 1
        if self.calls > self.n:
            raise Crash()
        return self.inner(item)


def test_batch_order_and_idempotence(s1_trials, tmp_path):
    cfg = ClientConfig(max_in_flight=4)
    items = s1_trials[:100]
    path = tmp_path / "log.jsonl"
    model = MockModel(master_seed=2)
    first = execute_batch(items, model, cfg, path, sleep=NO_SLEEP)
    assert [r.trial_id for r in first] == [t.trial_id for t in items]
    assert [json.loads(line)["trial_id"] for line in path.read_text().splitlines()] == [t.trial_id for t in items]
    size = path.stat().st_size
    again = execute_batch(items, CrashAfter(model, 0), cfg, path, sleep=NO_SLEEP)
    assert path.stat().st_size == size
    assert [r.raw_text for r in again] == [r.raw_text for r in first]


def test_resume_after_crash(s1_trials, tmp_path):
    cfg = ClientConfig(max_in_flight=1, fsync_every=1)
    items = s1_trials[:120]
    model = MockModel(master_seed=9)
    reference = execute_batch(items, model, cfg, tmp_path / "ref.jsonl", sleep=NO_SLEEP)

    path = tmp_path / "log.jsonl"
    with pytest.raises(Crash):
        execute_batch(items, CrashAfter(model, 45), cfg, path, sleep=NO_SLEEP)
    partial = load_log(path)
    assert 0 < len(partial) < len(items)
    with open(path, "ab") as fh:  # a torn record left by the crash
        fh.write(b'{"trial_id": "half')
    resumed = execute_batch(items, model, cfg, path, sleep=NO_SLEEP)
    assert [r.raw_text for r in resumed] == [r.raw_text for r in reference]
    lines = path.read_text().splitlines()
    assert len(lines) == len(items)
    assert len({json.loads(x)["trial_id"] for x in lines}) == len(items)


def test_torn_tail_strict_mode(tmp_path):
    path = tmp_path / "log.jsonl"
    path.write_text('{"trial_id": "a", "raw_text": "admit", "latency_ms": 1.0, "attempt_count": 1, '
                    '"status": "ok", "timestamp": "t", "error": ""}\n{"trial')
    with pytest.raises(ValueError):
        load_log(path, repair=False)
    assert list(load_log(path)) == ["a"]
    assert path.read_text().endswith("}\n")


def test_duplicate_ids_rejected(s1_trials, tmp_path):
    dup = [s1_trials[0], replace(s1_trials[0])]
    with pytest.raises(ValueError):
        execute_batch(dup, MockModel(), ClientConfig(), tmp_path / "x.jsonl", sleep=NO_SLEEP)
