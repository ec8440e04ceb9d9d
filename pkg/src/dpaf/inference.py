"""Run trials against a chat-completions endpoint or the built-in mock model.

Results go to an append-only JSONL log keyed by ``trial_id``. A rerun against
the same log skips finished trials, so an interrupted batch resumes where it
stopped. Requests fan out over a bounded thread pool; only the calling thread
writes to the log.
"""

from __future__ import annotations

import json
import logging
import math
import os
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import httpx

from .design import TrialSpec, chat_messages
from .rng import stream

log = logging.getLogger(__name__)

OK = "ok"
FAILED = "failed"


class TransientRequestError(Exception):
    """Retryable failure: transport error, timeout, HTTP 429 or 5xx."""


class PermanentRequestError(Exception):
    """Non-retryable failure such as an HTTP 4xx."""


@dataclass(frozen=True)
class ClientConfig:
    endpoint: str = "http://localhost:8000/v1/chat/completions"
    model: str = "default"
    token_env: str | None = "OPENAI_API_KEY"
    max_tokens: int = 512
    temperature: float = 0.0
    timeout: float = 60.0
    retry_budget: int = 2
    max_in_flight: int = 4
    backoff_base: float = 1.0
    backoff_cap: float = 30.0
    merge_system: bool = False
    fsync_every: int = 256

    def __post_init__(self):
        if self.retry_budget < 0:
            raise ValueError("retry_budget must be >= 0")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")


@dataclass(frozen=True)
class TrialResult:
    trial_id: str
    raw_text: str
    latency_ms: float
    attempt_count: int
    status: str
    timestamp: str
    error: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False, separators=(",", ":"))


class ChatCompletionClient:
    """Minimal client for the common ``/chat/completions`` JSON shape.

    ``render`` turns an item into the ``messages`` list; by default items are
    TrialSpecs rendered with :func:`dpaf.design.chat_messages`.
    """

    def __init__(self, config: ClientConfig, render: Callable[[Any], list[dict]] | None = None,
                 http: httpx.Client | None = None):
        self.config = config
        self.render = render or (lambda t: chat_messages(t, merge_system=config.merge_system))
        self._http = http or httpx.Client(timeout=config.timeout)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.config.token_env) if self.config.token_env else None
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def __call__(self, item: Any) -> str:
        body = {
            "model": self.config.model,
            "messages": self.render(item),
            "max_tokens": self.config.max_tokens,
            "temperature": self.config.temperature,
        }
        try:
            resp = self._http.post(self.config.endpoint, json=body, headers=self._headers(),
                                   timeout=self.config.timeout)
        except httpx.TransportError as exc:
            raise TransientRequestError(f"{type(exc).__name__}: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientRequestError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise PermanentRequestError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransientRequestError(f"malformed response body: {exc!r}") from exc
        return content or ""

    def close(self) -> None:
        self._http.close()


# -- mock model -------------------------------------------------------------------

@dataclass(frozen=True)
class MockParams:
    """Planted logistic model used by the offline mock decision-maker."""

    tier_intercepts: dict = field(default_factory=lambda: {"Tier1": -5.0, "Tier2": -3.9, "Tier3": -1.2})
    beta_perf: float = 1.0
    beta_fee: float = 0.8
    beta_firstgen: float = math.log(2.0)
    beta_zip: float = 0.06
    beta_school: float = -0.05
    sigma2_institution: float = 0.37
    sigma2_prompt: float = 0.02
    sigma2_seed: float = 0.05

    @classmethod
    def from_dict(cls, d: dict) -> "MockParams":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown mock parameters: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def random_intercept(master_seed: int, factor: str, level: Any, variance: float) -> float:
    if variance <= 0:
        return 0.0
    z = stream(master_seed, "mock_random_intercept", factor, str(level)).standard_normal()
    return math.sqrt(variance) * float(z)


def mock_linear_predictor(trial: TrialSpec, params: MockParams, master_seed: int) -> float:
    p = trial.profile
    eta = params.tier_intercepts[trial.institution.tier.value]
    eta += params.beta_perf * p.perf_quintile
    eta += params.beta_fee * p.fee_waiver
    eta += params.beta_firstgen * p.first_gen
    eta += params.beta_zip * p.zip_quintile
    eta += params.beta_school * (p.school_type == "Public")
    eta += random_intercept(master_seed, "institution", trial.institution.name, params.sigma2_institution)
    eta += random_intercept(master_seed, "prompt", trial.prompt_variant, params.sigma2_prompt)
    eta += random_intercept(master_seed, "attr_seed", trial.attr_seed, params.sigma2_seed)
    return eta


def logistic(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def mock_explanation(trial: TrialSpec, decision: str) -> str:
    p = trial.profile
    strong = (p.perf_quintile or 0) >= 3
    parts = []
    if strong:
        parts.append(f"The applicant's GPA of {p.gpa:.2f} and SAT score of {p.sat} are strong academic credentials.")
    else:
        parts.append(f"The applicant's GPA of {p.gpa:.2f} and SAT score of {p.sat} are below the competitive range.")
    if p.activity >= 7:
        parts.append(f"With {p.activity} extracurricular activities, {p.leadership} leadership roles and "
                     f"{p.award} awards, the applicant shows strong engagement.")
    else:
        parts.append(f"Only {p.activity} extracurricular activities, {p.leadership} leadership roles and "
                     f"{p.award} awards raise concerns about engagement.")
    if p.first_gen:
        parts.append("As a first-generation college student, the applicant brings a perspective that supports admission.")
    elif decision == "reject":
        parts.append("The applicant is not a first-generation student, which weakens the case.")
    if p.fee_waiver:
        parts.append("Eligibility for a fee waiver indicates financial hardship, which supports the case.")
    elif decision == "reject":
        parts.append("The applicant does not qualify for a fee waiver, which weakens the case.")
    if decision == "admit" and not strong and (p.first_gen or p.fee_waiver):
        parts.append("These socioeconomic circumstances outweigh the weaker record and show resilience.")
    return " ".join(parts[:5])


def mock_decide(trial: TrialSpec, params: MockParams, master_seed: int) -> str:
    """Bernoulli decision under the planted model, keyed by trial_id for reproducibility."""
    prob = logistic(mock_linear_predictor(trial, params, master_seed))
    u = stream(master_seed, "mock_decision", trial.trial_id).random()
    decision = "admit" if u < prob else "reject"
    if trial.system == "S1":
        return decision
    return json.dumps({"EXPLANATION": mock_explanation(trial, decision), "DECISION": decision})


class MockModel:
    def __init__(self, params: MockParams | None = None, master_seed: int = 0):
        self.params = params or MockParams()
        self.master_seed = master_seed

    def __call__(self, trial: TrialSpec) -> str:
        return mock_decide(trial, self.params, self.master_seed)


# -- batch execution ------------------------------------------------------------------

def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def load_log(path: str | Path, repair: bool = True) -> dict[str, TrialResult]:
    """Read a result log; a torn final line from a crash is truncated away."""
    path = Path(path)
    if not path.exists():
        return {}
    data = path.read_bytes()
    good_end = 0
    results: dict[str, TrialResult] = {}
    pos = 0
    while pos < len(data):
        nl = data.find(b"\n", pos)
        if nl < 0:
            break
        line = data[pos:nl]
        try:
            rec = TrialResult(**json.loads(line))
        except (ValueError, TypeError):
            break
        results.setdefault(rec.trial_id, rec)
        pos = good_end = nl + 1
    if good_end < len(data):
        if not repair:
            raise ValueError(f"{path}: corrupt record at byte {good_end}")
        log.warning("%s: truncating %d bytes of torn log tail", path, len(data) - good_end)
        with open(path, "r+b") as fh:
            fh.truncate(good_end)
    return results


def backoff_delay(trial_id: str, attempt: int, config: ClientConfig) -> float:
    """Full-jitter exponential backoff, seeded per (trial, attempt)."""
    ceiling = min(config.backoff_cap, config.backoff_base * (2 ** (attempt - 1)))
    return random.Random(f"{trial_id}:{attempt}").uniform(0.0, ceiling)


def run_one(item: Any, client: Callable[[Any], str], config: ClientConfig,
            sleep: Callable[[float], None] = time.sleep) -> TrialResult:
    trial_id = item.trial_id
    error = ""
    attempt = 0
    start = time.perf_counter()
    while attempt <= config.retry_budget:
        attempt += 1
        try:
            text = client(item)
        except PermanentRequestError as exc:
            error = f"PermanentRequestError: {exc}"
            break
        except Exception as exc:  # anything else is retried; a batch never aborts
            error = f"{type(exc).__name__}: {exc}"
            if attempt <= config.retry_budget:
                sleep(backoff_delay(trial_id, attempt, config))
            continue
        latency = (time.perf_counter() - start) * 1000.0
        return TrialResult(trial_id, text, round(latency, 3), attempt, OK, _now())
    latency = (time.perf_counter() - start) * 1000.0
    return TrialResult(trial_id, "", round(latency, 3), attempt, FAILED, _now(), error)


def execute_batch(items: Iterable[Any], client: Callable[[Any], str], config: ClientConfig,
                  log_path: str | Path, sleep: Callable[[float], None] = time.sleep,
                  progress: Callable[[int, int], None] | None = None) -> list[TrialResult]:
    """Run every item not already in the log; return one result per item, in input order.

    Items need a ``trial_id`` attribute. Results are appended in input order,
    flushed after each chunk and fsynced every ``config.fsync_every`` records.
    """
    items = list(items)
    ids = [it.trial_id for it in items]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate trial_id in batch")
    log_path = Path(log_path)
    log_path.parent.mkdir(parents=True, exist_ok=True)
    done = load_log(log_path)
    pending = [it for it in items if it.trial_id not in done]
    chunk = max(32, 8 * config.max_in_flight)
    written_since_sync = 0
    with open(log_path, "a", encoding="utf-8", newline="\n") as fh, \
            ThreadPoolExecutor(max_workers=config.max_in_flight) as pool:
        for start in range(0, len(pending), chunk):
            batch = pending[start:start + chunk]
            for res in pool.map(lambda it: run_one(it, client, config, sleep), batch):
                fh.write(res.to_json() + "\n")
                done[res.trial_id] = res
                written_since_sync += 1
            fh.flush()
            if written_since_sync >= config.fsync_every:
                os.fsync(fh.fileno())
                written_since_sync = 0
            if progress:
                progress(min(start + chunk, len(pending)), len(pending))
        fh.flush()
        os.fsync(fh.fileno())
    return [done[i] for i in ids]


def failed_ids(results: Sequence[TrialResult]) -> list[str]:
    return [r.trial_id for r in results if r.status == FAILED]
