"""Decisions and explanations from raw model text.

Parsing is total: every input maps to a ParsedOutcome, and failures are
recorded as ``Unparseable`` with a category note instead of raising.
"""

from __future__ import annotations

import json
import re
import string
from dataclasses import asdict, dataclass
from typing import Iterable

from .errors import EmptyInput

ADMIT = "admit"
REJECT = "reject"
UNPARSEABLE = "unparseable"
DECISIONS = (ADMIT, REJECT, UNPARSEABLE)

_STRIP = string.whitespace + string.punctuation + "“”‘’"
_ADMIT_RE = re.compile(r"\badmit\b")
_REJECT_RE = re.compile(r"\breject\b")


@dataclass(frozen=True)
class ParsedOutcome:
    trial_id: str
    decision: str
    explanation: str | None = None
    parse_note: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "ParsedOutcome":
        return cls(**json.loads(line))


def parse_decision_s1(raw_text: str) -> tuple[str, str]:
    """Return ``(decision, note)`` for a decision-only response."""
    text = (raw_text or "").lower()
    token = text.strip(_STRIP)
    if token in (ADMIT, REJECT):
        return token, ""
    has_admit = bool(_ADMIT_RE.search(text))
    has_reject = bool(_REJECT_RE.search(text))
    if has_admit and has_reject:
        return UNPARSEABLE, "both-keywords"
    if has_admit:
        return ADMIT, "keyword-scan"
    if has_reject:
        return REJECT, "keyword-scan"
    return UNPARSEABLE, "no-keyword"


def first_brace_block(text: str) -> str | None:
    """The first balanced ``{...}`` block, honoring JSON string quoting.

    Returns None when there is no opening brace, and raises ValueError when
    the first block never closes.
    """
    start = text.find("{")
    if start < 0:
        return None
    depth = 0
    in_str = False
    escaped = False
    for k in range(start, len(text)):
        ch = text[k]
        if in_str:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_str = False
        elif ch == '"':
            in_str = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[start:k + 1]
    raise ValueError("unbalanced braces")


def extract_json_s2(raw_text: str) -> tuple[str | None, str, str]:
    """Return ``(explanation, decision, note)`` for an explanation-augmented response.

    Failure notes are one of ``no-json``, ``bad-json``, ``missing-key`` and
    ``bad-decision``; a tolerated success may carry ``extra-keys``.
    """
    try:
        block = first_brace_block(raw_text or "")
    except ValueError:
        return None, UNPARSEABLE, "bad-json: unbalanced braces"
    if block is None:
        return None, UNPARSEABLE, "no-json"
    try:
        doc = json.loads(block)
    except json.JSONDecodeError as exc:
        return None, UNPARSEABLE, f"bad-json: {exc.msg}"
    if not isinstance(doc, dict):
        return None, UNPARSEABLE, "bad-json: not an object"
    explanation = doc.get("EXPLANATION")
    if "DECISION" not in doc or "EXPLANATION" not in doc:
        missing = [k for k in ("EXPLANATION", "DECISION") if k not in doc]
        return None, UNPARSEABLE, f"missing-key: {','.join(missing)}"
    if not isinstance(explanation, str) or not explanation.strip():
        return None, UNPARSEABLE, "missing-key: EXPLANATION empty or not a string"
    decision = doc["DECISION"]
    if not isinstance(decision, str) or decision.strip().lower() not in (ADMIT, REJECT):
        return None, UNPARSEABLE, f"bad-decision: {decision!r}"
    extra = sorted(k for k in doc if k not in ("EXPLANATION", "DECISION"))
    note = f"extra-keys: {','.join(extra)}" if extra else ""
    return explanation, decision.strip().lower(), note


def parse_outcome(trial_id: str, raw_text: str, system: str) -> ParsedOutcome:
    if system == "S1":
        decision, note = parse_decision_s1(raw_text)
        return ParsedOutcome(trial_id, decision, None, note)
    if system == "S2":
        explanation, decision, note = extract_json_s2(raw_text)
        return ParsedOutcome(trial_id, decision, explanation, note)
    raise ValueError(f"unknown system {system!r}")


def failed_outcome(trial_id: str) -> ParsedOutcome:
    """Outcome for a trial whose request never produced text."""
    return ParsedOutcome(trial_id, UNPARSEABLE, None, "request-failed")


def unparseable_rate(outcomes: Iterable[ParsedOutcome | str]) -> float:
    """Fraction of outcomes (or bare decision strings) that are Unparseable."""
    total = bad = 0
    for o in outcomes:
        decision = o if isinstance(o, str) else o.decision
        total += 1
        bad += decision == UNPARSEABLE
    if total == 0:
        raise EmptyInput("no outcomes")
    return bad / total
