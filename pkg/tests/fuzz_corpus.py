"""Enumerated parser inputs with the outcome each should produce."""

from __future__ import annotations

import itertools
import json

from dpaf.parsing import ADMIT, REJECT, UNPARSEABLE

PREFIXES = ["", "Sure! Here is my answer: ", "```json\n", "RESPONSE:\n"]
SUFFIXES = ["", "\n```", " Let me know if you need more."]


def build_corpus() -> list[tuple[str, str, str, str]]:
    """``(system, raw, expected decision, expected note category)``; 200 cases."""
    cases = []
    # S1: casing x punctuation x wrapper
    for word, casing, punct, wrap in itertools.product(
            ["admit", "reject"], [str.lower, str.upper, str.title], ["", ".", "!", "'"],
            ["{}", " {} \n", "Decision: {}"]):
        token = casing(word)
        raw = wrap.format(f"{punct}{token}{punct}" if punct == "'" else f"{token}{punct}")
        cat = "keyword-scan" if wrap.startswith("Decision") else ""
        cases.append(("S1", raw, word, cat))
    for raw in ["admit or reject", "ADMIT? REJECT?", "I cannot decide", "", "admission", "rejected",
                "Maybe admit... or reject", "n/a"]:
        cat = "both-keywords" if "or" in raw.lower().split() or "?" in raw else "no-keyword"
        cases.append(("S1", raw, UNPARSEABLE, cat))
    # S2: valid objects under wrappers and decision casings
    for (pre, suf), dec in itertools.product(itertools.product(PREFIXES, SUFFIXES), ["admit", "Reject", "ADMIT"]):
        body = json.dumps({"EXPLANATION": "Strong record {with braces}.", "DECISION": dec})
        cases.append(("S2", pre + body + suf, dec.lower(), ""))
    # S2: malformed inputs, each repeated under every wrapper
    broken = [
        ('{"EXPLANATION": "a", "DECISION": "admit"', "bad-json"),
        ("{'EXPLANATION': 'a', 'DECISION': 'admit'}", "bad-json"),
        ('{"EXPLANATION": "a", "DECISION": "admit",}', "bad-json"),
        ('{"DECISION": "admit"}', "missing-key"),
        ('{"EXPLANATION": "a"}', "missing-key"),
        ('{"explanation": "a", "decision": "admit"}', "missing-key"),
        ('{"EXPLANATION": "a", "DECISION": "maybe"}', "bad-decision"),
        ('{"EXPLANATION": "a", "DECISION": null}', "bad-decision"),
        ("admit", "no-json"),
    ]
    for (raw, cat), (pre, suf) in itertools.product(broken, itertools.product(PREFIXES, SUFFIXES[::2])):
        cases.append(("S2", pre + raw + suf, UNPARSEABLE, cat))
    extra = '{"EXPLANATION": "a", "DECISION": "reject", "CONFIDENCE": 0.9}'
    for pre, suf in itertools.product(PREFIXES, SUFFIXES):
        cases.append(("S2", pre + extra + suf, REJECT, "extra-keys"))
    return cases


CORPUS = build_corpus()
