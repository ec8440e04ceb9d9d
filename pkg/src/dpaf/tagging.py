"""Judge prompts, tag parsing, composite markers and inter-rater agreement."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Any, Hashable, Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .design import _load_template, fill
from .errors import DegenerateData, EmptyExplanation, EmptyInput, TagParseError

TAG_FEATURES = ("fee_waiver", "first_gen", "academic", "extracurricular", "zip", "school_type", "holistic")
TAG_VALUES = ("null", "discount", "support", "penalize")
FLAGS = ("ses_compensates", "performance_context")
TAG_KEYS = TAG_FEATURES + FLAGS

_FENCE = re.compile(r"```(?:json)?", re.IGNORECASE)


@dataclass(frozen=True)
class TagRecord:
    trial_id: str
    fee_waiver: str = "null"
    first_gen: str = "null"
    academic: str = "null"
    extracurricular: str = "null"
    zip: str = "null"
    school_type: str = "null"
    holistic: str = "null"
    ses_compensates: bool | None = None
    performance_context: bool | None = None
    parse_note: str = ""

    def __post_init__(self):
        for k in TAG_FEATURES:
            if getattr(self, k) not in TAG_VALUES:
                raise ValueError(f"{k}={getattr(self, k)!r} is outside the tag vocabulary")
        for k in FLAGS:
            if getattr(self, k) not in (True, None):
                raise ValueError(f"{k} must be true or null")

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "TagRecord":
        return cls(**json.loads(line))


@dataclass(frozen=True)
class CompositeTags:
    aca_support: bool
    ses_support: bool
    aca_penalize: bool
    ses_penalize: bool


@dataclass(frozen=True)
class JudgeRequest:
    """One explanation queued for the judge; ``trial_id`` keys the result log."""

    trial_id: str
    explanation: str


def render_tag_prompt(explanation: str, template_dir: str | None = None) -> str:
    if explanation is None or not explanation.strip():
        raise EmptyExplanation("cannot tag an empty explanation")
    return fill(_load_template("tagging", template_dir), explanation=explanation)


def judge_messages(request: JudgeRequest, template_dir: str | None = None) -> list[dict]:
    return [{"role": "user", "content": render_tag_prompt(request.explanation, template_dir)}]


def _load_judge_json(raw: str) -> Any:
    text = _FENCE.sub("", raw or "")
    starts = [i for i in (text.find("["), text.find("{")) if i >= 0]
    if not starts:
        raise TagParseError("no-json", "no JSON object or list found")
    try:
        doc, _ = json.JSONDecoder().raw_decode(text, min(starts))
    except json.JSONDecodeError as exc:
        raise TagParseError("bad-json", exc.msg) from exc
    return doc


def _tag_value(key: str, value: Any) -> str:
    if value is None:
        return "null"
    if not isinstance(value, str):
        raise TagParseError("bad-value", f"{key}={value!r}")
    v = value.strip().lower()
    if v not in TAG_VALUES:
        raise TagParseError("bad-value", f"{key}={value!r}")
    return v


def _flag_value(key: str, value: Any) -> bool | None:
    if value is True:
        return True
    if value is None or value is False:
        return None
    if isinstance(value, str) and value.strip().lower() in ("true", "false", "null"):
        return True if value.strip().lower() == "true" else None
    raise TagParseError("bad-flag", f"{key}={value!r}")


def parse_tag_record(judge_raw_text: str, trial_id: str) -> TagRecord:
    """Validate one judge answer against the closed tag vocabulary.

    A bare object or a one-element list is accepted. Missing keys become null
    and are listed in ``parse_note``; anything outside the vocabulary raises
    :class:`TagParseError` so the record can be excluded and counted.
    """
    doc = _load_judge_json(judge_raw_text)
    if isinstance(doc, list):
        if len(doc) != 1:
            raise TagParseError("list-length", f"expected one dictionary, got {len(doc)}")
        doc = doc[0]
    if not isinstance(doc, dict):
        raise TagParseError("not-object", f"got {type(doc).__name__}")
    fields: dict[str, Any] = {}
    for k in TAG_FEATURES:
        fields[k] = _tag_value(k, doc.get(k))
    for k in FLAGS:
        fields[k] = _flag_value(k, doc.get(k))
    notes = []
    missing = [k for k in TAG_KEYS if k not in doc]
    if missing:
        notes.append("missing: " + ",".join(missing))
    extra = sorted(k for k in doc if k not in TAG_KEYS)
    if extra:
        notes.append("extra-keys: " + ",".join(extra))
    return TagRecord(trial_id=trial_id, parse_note="; ".join(notes), **fields)


def parse_tag_records(raw: Iterable[tuple[str, str]]) -> tuple[list[TagRecord], Counter]:
    """Parse ``(trial_id, judge_text)`` pairs; failures are tallied by category."""
    records, excluded = [], Counter()
    for trial_id, text in raw:
        try:
            records.append(parse_tag_record(text, trial_id))
        except TagParseError as exc:
            excluded[exc.category] += 1
    return records, excluded


def derive_composite(tags: TagRecord) -> CompositeTags:
    return CompositeTags(
        aca_support=tags.academic == "support" or tags.extracurricular == "support",
        ses_support=tags.fee_waiver == "support" or tags.first_gen == "support",
        aca_penalize=tags.academic == "penalize" or tags.extracurricular == "penalize",
        ses_penalize=tags.fee_waiver == "penalize" or tags.first_gen == "penalize",
    )


def krippendorff_alpha(labels: Sequence[Sequence[Hashable | None]]) -> float:
    """Nominal Krippendorff's alpha for a raters x items matrix (None = missing).

    Items with fewer than two labels are not pairable and are dropped.
    """
    if len(labels) < 2:
        raise EmptyInput("need at least two raters")
    n_items = len(labels[0])
    if any(len(row) != n_items for row in labels):
        raise ValueError("ragged label matrix")
    if n_items < 2:
        raise EmptyInput("need at least two items")
    cats = sorted({v for row in labels for v in row if v is not None}, key=repr)
    index = {c: i for i, c in enumerate(cats)}
    o = np.zeros((len(cats), len(cats)))
    for u in range(n_items):
        vals = [index[row[u]] for row in labels if row[u] is not None]
        m = len(vals)
        if m < 2:
            continue
        counts = np.bincount(vals, minlength=len(cats)).astype(float)
        o += (np.outer(counts, counts) - np.diag(counts)) / (m - 1)
    n_c = o.sum(axis=1)
    n = n_c.sum()
    if n == 0:
        raise EmptyInput("no pairable values")
    disagree_obs = o.sum() - np.trace(o)
    disagree_exp = (n_c.sum() ** 2 - (n_c ** 2).sum()) / (n - 1)
    if disagree_exp == 0:
        raise DegenerateData("expected disagreement is zero; alpha undefined")
    return float(1.0 - disagree_obs / disagree_exp)


def tag_distribution(records: Sequence[TagRecord], feature: str,
                     groups: Mapping[str, Any] | None = None, normalize: str = "all",
                     decimals: int | None = 1) -> pd.DataFrame:
    """Percentage table of one tag's values, optionally crossed with a grouping.

    ``groups`` maps trial_id to a group label (e.g. first_gen Yes/No).
    ``normalize="all"`` makes every cell a share of all records; ``"row"``
    makes each row sum to 100.
    """
    if not records:
        raise EmptyInput("no tag records")
    if normalize not in ("all", "row"):
        raise ValueError("normalize must be 'all' or 'row'")
    if feature in FLAGS:
        columns = ["null", "true"]
        values = ["true" if getattr(r, feature) else "null" for r in records]
    elif feature in TAG_FEATURES:
        columns = list(TAG_VALUES)
        values = [getattr(r, feature) for r in records]
    else:
        raise ValueError(f"unknown tag {feature!r}")
    group = [groups[r.trial_id] for r in records] if groups is not None else ["all"] * len(records)
    frame = pd.DataFrame({"group": group, "value": pd.Categorical(values, categories=columns)})
    counts = pd.crosstab(frame["group"], frame["value"], dropna=False).reindex(columns=columns, fill_value=0)
    denom = counts.to_numpy().sum() if normalize == "all" else counts.sum(axis=1).to_numpy()[:, None]
    table = counts.astype(float) * 100.0 / denom
    table.columns.name = feature
    table.index.name = "group"
    return table.round(decimals) if decimals is not None else table


# -- rule-based mock judge ---------------------------------------------------------------

_FEATURE_CUES = {
    "fee_waiver": ("fee waiver", "financial hardship", "financial aid", "economic hardship", "low-income"),
    "first_gen": ("first-generation", "first generation", "first in their family", "first-gen"),
    "academic": ("gpa", "sat score", "academic", "grades", "test score"),
    "extracurricular": ("extracurricular", "leadership", "award", "volunteer"),
    "zip": ("zip code", "neighborhood", "rural", "underserved", "geographic"),
    "school_type": ("public school", "private school", "public high school", "private high school",
                    "charter", "boarding"),
    "holistic": ("resilience", "adversity", "nontraditional", "deserves", "equity", "fairness"),
}
_DISCOUNT_CUES = ("no effect", "does not affect", "irrelevant", "regardless", "not a factor", "not considered")
_SUPPORT_CUES = ("support", "strong", "outweigh", "impressive", "excellent", "favorabl", "brings", "demonstrat")
_PENALIZE_CUES = ("weak", "below", "concern", "lack", "insufficient", "not competitive", "not a ",
                  "does not", "limited")
_COMPENSATE_CUES = ("outweigh", "despite", "compensate", "offset")
_CONTEXT_CUES = ("competitive", "below average", "benchmark", "meets expectations", "admissions standard",
                 "applicant pool")
_SENTENCE = re.compile(r"(?<=[.!?])\s+")


def _polarity(sentence: str) -> str:
    if any(c in sentence for c in _DISCOUNT_CUES):
        return "discount"
    if any(c in sentence for c in _SUPPORT_CUES):
        return "support"
    if any(c in sentence for c in _PENALIZE_CUES):
        return "penalize"
    return "support"


def rule_tags(explanation: str) -> dict:
    """Keyword-rule tagging of an explanation, in the judge's output shape."""
    text = explanation.lower()
    tags: dict[str, Any] = {k: None for k in TAG_FEATURES}
    for sentence in _SENTENCE.split(text):
        pol = _polarity(sentence)
        for feature, cues in _FEATURE_CUES.items():
            if tags[feature] is None and any(c in sentence for c in cues):
                tags[feature] = pol
    ses_support = any(tags[k] == "support" for k in ("fee_waiver", "first_gen", "zip", "school_type"))
    weak = "penalize" in (tags["academic"], tags["extracurricular"]) or "weak" in text
    compensates = ses_support and weak and any(c in text for c in _COMPENSATE_CUES)
    tags["ses_compensates"] = True if compensates else None
    tags["performance_context"] = True if any(c in text for c in _CONTEXT_CUES) else None
    return tags


class MockJudge:
    """Offline stand-in for the judge endpoint; answers with a one-element JSON list."""

    def __call__(self, request: JudgeRequest) -> str:
        return json.dumps([rule_tags(request.explanation)])
