"""Institutions, selectivity tiers, factorial run plans and prompt rendering."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .config import asset_path
from .errors import OutOfScopeRate, ParseError, TierError, UnknownVariant
from .profilegen import Profile
from .rng import stream

log = logging.getLogger(__name__)


class Tier(str, Enum):
    TIER1 = "Tier1"
    TIER2 = "Tier2"
    TIER3 = "Tier3"


TIER_DESCRIPTIONS = {
    Tier.TIER1: ("highly selective", "less than 15%"),
    Tier.TIER2: ("selective", "between 15% and 30%"),
    Tier.TIER3: ("moderately selective", "between 30% and 50%"),
}

SYSTEMS = ("S1", "S2")
MODES = ("omitted", "specified")


def tier_of(acceptance_rate: float) -> Tier:
    """Map an acceptance rate to a tier: [0.15, 0.30) is Tier2, [0.30, 0.50] is Tier3."""
    rate = float(acceptance_rate)
    if not 0.0 < rate <= 0.5:
        raise OutOfScopeRate(f"acceptance rate {rate} outside (0, 0.5]")
    if rate < 0.15:
        return Tier.TIER1
    if rate < 0.30:
        return Tier.TIER2
    return Tier.TIER3


@dataclass(frozen=True)
class Institution:
    name: str
    acceptance_rate: float
    tier: Tier

    @classmethod
    def from_rate(cls, name: str, acceptance_rate: float) -> "Institution":
        return cls(name, float(acceptance_rate), tier_of(acceptance_rate))


def load_institutions(path: str | Path | None = None) -> list[Institution]:
    """Read a ``name,acceptance_rate`` CSV; the bundled default has 60 rows."""
    path = Path(path) if path is not None else asset_path("institutions.csv")
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        log.warning("institutions file %s is empty", path)
        return []
    reader = csv.reader(text.splitlines())
    header = [h.strip() for h in next(reader)]
    if header != ["name", "acceptance_rate"]:
        raise ParseError(f"expected header 'name,acceptance_rate', got {header!r}", line=1)
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row or not "".join(row).strip():
            continue
        if len(row) != 2:
            raise ParseError(f"expected 2 fields, got {len(row)}", line=lineno)
        name, raw_rate = row[0].strip(), row[1].strip()
        try:
            rate = float(raw_rate)
        except ValueError:
            raise ParseError(f"acceptance_rate {raw_rate!r} is not a number", line=lineno) from None
        try:
            out.append(Institution.from_rate(name, rate))
        except OutOfScopeRate as exc:
            raise TierError(f"line {lineno}: {name}: {exc}") from None
    if not out:
        log.warning("institutions file %s has no rows", path)
    return out


@dataclass(frozen=True)
class Assignment:
    institution: Institution
    cohort_id: int
    prompt_variant: int
    attr_seed: int


@dataclass(frozen=True)
class RunPlan:
    experiment_id: str
    system_mode: str
    system: str
    master_seed: int
    assignments: tuple[Assignment, ...]
    profile_fraction: float = 1.0

    def with_system(self, system: str, system_mode: str, experiment_id: str | None = None,
                    profile_fraction: float | None = None) -> "RunPlan":
        """Same assignments, different system/mode; keeps S1 and S2 pairable."""
        _check_system(system, system_mode)
        return replace(
            self, system=system, system_mode=system_mode,
            experiment_id=experiment_id or f"{system.lower()}-{system_mode}",
            profile_fraction=self.profile_fraction if profile_fraction is None else profile_fraction,
        )

    def to_json(self) -> str:
        doc = asdict(self)
        for a in doc["assignments"]:
            a["institution"]["tier"] = Tier(a["institution"]["tier"]).value
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RunPlan":
        doc = json.loads(text)
        assignments = tuple(
            Assignment(
                institution=Institution(a["institution"]["name"], a["institution"]["acceptance_rate"],
                                        Tier(a["institution"]["tier"])),
                cohort_id=a["cohort_id"], prompt_variant=a["prompt_variant"], attr_seed=a["attr_seed"],
            )
            for a in doc["assignments"]
        )
        return cls(doc["experiment_id"], doc["system_mode"], doc["system"], doc["master_seed"],
                   assignments, doc.get("profile_fraction", 1.0))


def _check_system(system: str, system_mode: str) -> None:
    if system not in SYSTEMS:
        raise ValueError(f"system must be one of {SYSTEMS}, got {system!r}")
    if system_mode not in MODES:
        raise ValueError(f"system_mode must be one of {MODES}, got {system_mode!r}")


def make_plan(institutions: Sequence[Institution], n_cohorts: int = 3, n_variants: int = 3,
              n_seeds: int = 3, master_seed: int = 0, system_mode: str = "omitted",
              system: str = "S1", experiment_id: str | None = None,
              profile_fraction: float = 1.0) -> RunPlan:
    """Assign each institution a cohort, prompt variant and attribute-order seed.

    Draws depend only on ``master_seed`` and institution order, never on the
    system or mode, so plans for S1 and S2 share their assignments.
    """
    if min(n_cohorts, n_variants, n_seeds) < 1:
        raise ValueError("counts must be >= 1")
    if not 0.0 < profile_fraction <= 1.0:
        raise ValueError("profile_fraction must lie in (0, 1]")
    _check_system(system, system_mode)
    names = [i.name for i in institutions]
    if len(set(names)) != len(names):
        raise ValueError("institution names must be unique")
    rng = stream(master_seed, "plan")
    assignments = []
    for inst in institutions:
        cohort = int(rng.integers(1, n_cohorts + 1))
        variant = int(rng.integers(1, n_variants + 1))
        seed = int(rng.integers(1, n_seeds + 1))
        assignments.append(Assignment(inst, cohort, variant, seed))
    return RunPlan(experiment_id or f"{system.lower()}-{system_mode}", system_mode, system,
                   int(master_seed), tuple(assignments), float(profile_fraction))


@dataclass(frozen=True)
class TrialSpec:
    trial_id: str
    institution: Institution = field(repr=False)
    profile: Profile = field(repr=False)
    prompt_variant: int
    attr_seed: int
    system_mode: str
    system: str
    cohort_id: int

    def to_record(self) -> dict:
        return {
            "trial_id": self.trial_id,
            "institution": self.institution.name,
            "tier": self.institution.tier.value,
            "acceptance_rate": self.institution.acceptance_rate,
            "profile_id": self.profile.profile_id,
            "cohort_id": self.cohort_id,
            "prompt_variant": self.prompt_variant,
            "attr_seed": self.attr_seed,
            "system_mode": self.system_mode,
            "system": self.system,
        }


def selected_profiles(plan: RunPlan, cohort_id: int, profiles: Sequence[Profile]) -> list[Profile]:
    """Profiles of a cohort used by ``plan``; a fraction < 1 picks a seeded subset."""
    ordered = sorted(profiles, key=lambda p: p.profile_id)
    if plan.profile_fraction >= 1.0:
        return ordered
    k = max(1, int(round(plan.profile_fraction * len(ordered))))
    rng = stream(plan.master_seed, "profile_fraction", cohort_id)
    keep = np.sort(rng.choice(len(ordered), size=k, replace=False))
    return [ordered[i] for i in keep]


def expand_trials(plan: RunPlan, cohorts: Mapping[int, Sequence[Profile]]) -> Iterator[TrialSpec]:
    """Yield every TrialSpec of the plan in (institution, profile_id) order."""
    chosen: dict[int, list[Profile]] = {}
    for a in plan.assignments:
        if a.cohort_id not in chosen:
            if a.cohort_id not in cohorts:
                raise KeyError(f"plan references cohort {a.cohort_id}, which was not provided")
            chosen[a.cohort_id] = selected_profiles(plan, a.cohort_id, cohorts[a.cohort_id])
        for p in chosen[a.cohort_id]:
            yield TrialSpec(
                trial_id=f"{plan.experiment_id}/{a.institution.name}/{p.profile_id}",
                institution=a.institution, profile=p, prompt_variant=a.prompt_variant,
                attr_seed=a.attr_seed, system_mode=plan.system_mode, system=plan.system,
                cohort_id=a.cohort_id,
            )


# -- rendering ------------------------------------------------------------------

def _yes_no(flag: bool) -> str:
    return "Yes" if flag else "No"


# The "HIGH SHOOL" spelling reproduces the original rendering verbatim.
PROFILE_LINES = (
    ("GPA", lambda p: f"{p.gpa:.2f}"),
    ("SAT", lambda p: str(int(p.sat))),
    ("NUMBER OF EXTRACURRICULAR ACTIVITIES REPORTED", lambda p: str(p.activity)),
    ("NUMBER OF LEADERSHIP ROLES IN EXTRACURRICULAR ACTIVITIES", lambda p: str(p.leadership)),
    ("NUMBER OF AWARDS RECEIVED IN EXTRACURRICULAR ACTIVITIES", lambda p: str(p.award)),
    ("FIRST-GENERATION STUDENT STATUS", lambda p: _yes_no(p.first_gen)),
    ("ELIGIBLE FOR FEE WAIVER", lambda p: _yes_no(p.fee_waiver)),
    ("HIGH SHOOL TYPE", lambda p: p.school_type),
    ("ZIP CODE", lambda p: p.zip),
)

_LABEL_TO_FIELD = {
    "GPA": ("gpa", float),
    "SAT": ("sat", int),
    "NUMBER OF EXTRACURRICULAR ACTIVITIES REPORTED": ("activity", int),
    "NUMBER OF LEADERSHIP ROLES IN EXTRACURRICULAR ACTIVITIES": ("leadership", int),
    "NUMBER OF AWARDS RECEIVED IN EXTRACURRICULAR ACTIVITIES": ("award", int),
    "FIRST-GENERATION STUDENT STATUS": ("first_gen", lambda s: s == "Yes"),
    "ELIGIBLE FOR FEE WAIVER": ("fee_waiver", lambda s: s == "Yes"),
    "HIGH SHOOL TYPE": ("school_type", str),
    "ZIP CODE": ("zip", str),
}


@lru_cache(maxsize=None)
def attribute_order(attr_seed: int) -> tuple[int, ...]:
    return tuple(int(i) for i in stream(attr_seed, "attribute_order").permutation(len(PROFILE_LINES)))


def render_profile_text(profile: Profile, attr_seed: int) -> str:
    lines = [f"{label}: {fmt(profile)}" for label, fmt in PROFILE_LINES]
    return "\n".join(lines[i] for i in attribute_order(attr_seed))


def parse_profile_text(text: str) -> dict:
    """Inverse of :func:`render_profile_text` for the nine visible attributes."""
    out = {}
    for line in text.strip().splitlines():
        label, _, value = line.partition(": ")
        name, conv = _LABEL_TO_FIELD[label]
        out[name] = conv(value.strip())
    return out


@lru_cache(maxsize=None)
def _load_template(name: str, template_dir: str | None) -> str:
    for base in ([Path(template_dir)] if template_dir else []) + [asset_path("prompts")]:
        path = base / f"{name}.txt"
        if path.is_file():
            return path.read_text(encoding="utf-8").rstrip("\n")
    raise UnknownVariant(f"no prompt template named {name!r}")


def fill(template: str, **slots: str) -> str:
    # plain replacement: templates contain literal JSON braces
    for key, value in slots.items():
        template = template.replace("{" + key + "}", value)
    return template


def format_rate(rate: float) -> str:
    return f"{rate * 100:.10g}%"


def system_text(institution: Institution, system_mode: str, template_dir: str | None = None) -> str:
    if system_mode == "omitted":
        label, rng_desc = TIER_DESCRIPTIONS[institution.tier]
        return fill(_load_template("system_omitted", template_dir), institute=institution.name,
                    selectivity_tier=label, range_description=rng_desc)
    if system_mode == "specified":
        return fill(_load_template("system_specified", template_dir), institute=institution.name,
                    acceptance_rate=format_rate(institution.acceptance_rate))
    raise ValueError(f"unknown system_mode {system_mode!r}")


def render_prompt(trial: TrialSpec, template_dir: str | None = None) -> tuple[str, str]:
    """Return ``(system_text, user_text)`` for a trial."""
    name = f"{trial.system.lower()}_variant{trial.prompt_variant}"
    user = fill(_load_template(name, template_dir),
                profile=render_profile_text(trial.profile, trial.attr_seed))
    return system_text(trial.institution, trial.system_mode, template_dir), user


def chat_messages(trial: TrialSpec, merge_system: bool = False,
                  template_dir: str | None = None) -> list[dict]:
    """Chat-completion messages; ``merge_system`` folds the system text into the user turn."""
    system, user = render_prompt(trial, template_dir)
    if merge_system:
        return [{"role": "user", "content": f"{system}\n\n{user}"}]
    return [{"role": "system", "content": system}, {"role": "user", "content": user}]
