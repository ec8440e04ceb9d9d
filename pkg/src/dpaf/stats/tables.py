"""Rate tables, flip analysis, composite-tag trends and benchmark comparison.

Every function takes a joined-records DataFrame (one row per trial) built by
:func:`join_records`. Unparseable rows are dropped from rates and counted in an
``excluded`` column so every table discloses what it left out.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from ..design import TrialSpec
from ..errors import EmptyInput, InsufficientOverlap, NoPairs, ParseError
from ..parsing import ADMIT, REJECT, UNPARSEABLE, ParsedOutcome
from ..tagging import FLAGS, TAG_FEATURES, TagRecord, derive_composite

PROFILE_COLUMNS = ("profile_id", "income_quintile", "household_income", "gpa", "sat", "activity",
                   "leadership", "award", "school_type", "fee_waiver", "first_gen", "zip_quintile",
                   "perf_quintile", "ses_quintile")
COMPOSITES = ("aca_support", "ses_support", "aca_penalize", "ses_penalize")


def join_records(trials: Iterable[TrialSpec], outcomes: Iterable[ParsedOutcome],
                 tags: Iterable[TagRecord] | None = None) -> pd.DataFrame:
    """One row per trial: design fields, profile fields, decision and optional tags."""
    by_id = {o.trial_id: o for o in outcomes}
    rows = []
    for t in trials:
        o = by_id.get(t.trial_id)
        if o is None:
            raise KeyError(f"no outcome for trial {t.trial_id}")
        row = t.to_record()
        for c in PROFILE_COLUMNS:
            row[c] = getattr(t.profile, c)
        row.update(decision=o.decision, explanation=o.explanation, parse_note=o.parse_note)
        rows.append(row)
    df = pd.DataFrame(rows)
    if tags is not None:
        tag_rows = []
        for r in tags:
            d = {"trial_id": r.trial_id}
            d.update({k: getattr(r, k) for k in TAG_FEATURES})
            d.update({k: bool(getattr(r, k)) for k in FLAGS})
            d.update(asdict(derive_composite(r)))
            tag_rows.append(d)
        tag_df = pd.DataFrame(tag_rows, columns=["trial_id", *TAG_FEATURES, *FLAGS, *COMPOSITES])
        df = df.merge(tag_df.add_prefix("tag_").rename(columns={"tag_trial_id": "trial_id"}),
                      on="trial_id", how="left")
    return df


def _resolved(df: pd.DataFrame) -> pd.DataFrame:
    return df[df["decision"].isin([ADMIT, REJECT])]


def admit_rate_table(df: pd.DataFrame, by: Sequence[str] = ("tier",)) -> pd.DataFrame:
    """Admit fraction per cell of ``by``; cells with no resolved decisions are absent."""
    if df.empty:
        raise EmptyInput("no records")
    by = list(by)
    grouped = df.assign(_admit=(df["decision"] == ADMIT), _resolved=df["decision"].isin([ADMIT, REJECT]),
                        _excluded=(df["decision"] == UNPARSEABLE))
    if by:
        agg = grouped.groupby(by, sort=True)[["_admit", "_resolved", "_excluded"]].sum()
    else:
        agg = grouped[["_admit", "_resolved", "_excluded"]].sum().to_frame().T
    agg = agg.rename(columns={"_admit": "admits", "_resolved": "n", "_excluded": "excluded"})
    agg = agg[agg["n"] > 0].astype(int)
    agg["admit_rate"] = agg["admits"] / agg["n"]
    return agg.reset_index(drop=not by)[[*by, "n", "admits", "admit_rate", "excluded"]]


def heatmap_table(df: pd.DataFrame) -> pd.DataFrame:
    """Long-format SES x performance quintile admit rates."""
    return admit_rate_table(df, ("ses_quintile", "perf_quintile"))


def pair_systems(s1: pd.DataFrame, s2: pd.DataFrame) -> pd.DataFrame:
    """Pair S1 and S2 trials on (institution, profile_id); unresolved pairs are dropped."""
    keys = ["institution", "profile_id"]
    keep = ["tier", "ses_quintile", "perf_quintile", "first_gen", "fee_waiver"]
    left = s1[keys + keep + ["decision"]].rename(columns={"decision": "decision_s1"})
    right = s2[keys + ["decision"]].rename(columns={"decision": "decision_s2"})
    pairs = left.merge(right, on=keys, how="inner", validate="one_to_one")
    ok = pairs["decision_s1"].isin([ADMIT, REJECT]) & pairs["decision_s2"].isin([ADMIT, REJECT])
    return pairs[ok].sort_values(keys).reset_index(drop=True)


@dataclass(frozen=True)
class FlipStats:
    pairs: int
    s1_admits: int
    s1_rejects: int
    admit_to_reject: int
    reject_to_admit: int

    @property
    def flips(self) -> int:
        return self.admit_to_reject + self.reject_to_admit

    @property
    def flip_rate(self) -> float:
        return self.flips / self.pairs

    @property
    def admit_to_reject_rate(self) -> float:
        return self.admit_to_reject / self.s1_admits if self.s1_admits else math.nan

    @property
    def reject_to_admit_rate(self) -> float:
        return self.reject_to_admit / self.s1_rejects if self.s1_rejects else math.nan


def flip_stats(decision_s1: Sequence[str], decision_s2: Sequence[str]) -> FlipStats:
    a = np.asarray(decision_s1)
    b = np.asarray(decision_s2)
    if a.shape != b.shape:
        raise ValueError("decision vectors differ in length")
    if a.size == 0:
        raise NoPairs("no paired decisions")
    return FlipStats(
        pairs=int(a.size),
        s1_admits=int(np.sum(a == ADMIT)),
        s1_rejects=int(np.sum(a == REJECT)),
        admit_to_reject=int(np.sum((a == ADMIT) & (b == REJECT))),
        reject_to_admit=int(np.sum((a == REJECT) & (b == ADMIT))),
    )


def flip_rates(pairs: pd.DataFrame, by: Sequence[str] = ("tier", "ses_quintile")) -> pd.DataFrame:
    """Overall and directional S1 -> S2 flip rates per cell of ``by``."""
    if pairs.empty:
        raise NoPairs("no paired decisions")
    by = list(by)
    groups = pairs.groupby(by, sort=True) if by else [((), pairs)]
    rows = []
    for key, g in groups:
        key = key if isinstance(key, tuple) else (key,)
        s = flip_stats(g["decision_s1"].to_numpy(), g["decision_s2"].to_numpy())
        rows.append({**dict(zip(by, key)), "pairs": s.pairs, "s1_admits": s.s1_admits,
                     "s1_rejects": s.s1_rejects, "admit_to_reject": s.admit_to_reject,
                     "reject_to_admit": s.reject_to_admit, "flips": s.flips, "flip_rate": s.flip_rate,
                     "admit_to_reject_rate": s.admit_to_reject_rate,
                     "reject_to_admit_rate": s.reject_to_admit_rate})
    return pd.DataFrame(rows)


def composite_trend_table(df: pd.DataFrame, by: str = "ses_quintile") -> pd.DataFrame:
    """Share of each composite marker per (decision, ``by``) cell of tagged records."""
    tagged = _resolved(df)
    if "tag_aca_support" not in tagged:
        raise EmptyInput("records carry no tags")
    tagged = tagged[tagged["tag_aca_support"].notna()]
    if tagged.empty:
        raise EmptyInput("no tagged records")
    cols = [f"tag_{c}" for c in COMPOSITES]
    frame = tagged[["decision", by] + cols].copy()
    frame[cols] = frame[cols].astype(float)
    out = frame.groupby(["decision", by], sort=True).agg(n=(cols[0], "size"), **{
        c: (f"tag_{c}", "mean") for c in COMPOSITES})
    return out.reset_index()


def ses_compensates_share(df: pd.DataFrame, by: str = "perf_quintile") -> pd.DataFrame:
    """Share of tagged records flagged ``ses_compensates`` per (decision, ``by``)."""
    tagged = _resolved(df)
    if "tag_ses_compensates" not in tagged:
        raise EmptyInput("records carry no tags")
    tagged = tagged[tagged["tag_ses_compensates"].notna()]
    if tagged.empty:
        raise EmptyInput("no tagged records")
    frame = tagged[["decision", by]].assign(flag=tagged["tag_ses_compensates"].astype(float))
    out = frame.groupby(["decision", by], sort=True).agg(n=("flag", "size"), share=("flag", "mean"))
    return out.reset_index()


def first_gen_admit_share(df: pd.DataFrame) -> dict[str, float]:
    """Per institution, the percentage of admitted applicants who are first-generation."""
    admits = df[df["decision"] == ADMIT]
    share = admits.groupby("institution")["first_gen"].mean() * 100.0
    return {k: float(v) for k, v in share.items()}


@dataclass(frozen=True)
class BenchmarkResult:
    n_matched: int
    mae: float
    r: float

    def formatted(self) -> dict[str, str]:
        return {"n": str(self.n_matched), "MAE": f"{self.mae:.1f}", "r": f"{self.r:.1f}"}


def benchmark_compare(predicted: Mapping[str, float], observed: Mapping[str, float]) -> BenchmarkResult:
    """MAE (percentage points) and Pearson r over institutions present in both maps."""
    common = sorted(set(predicted) & set(observed))
    if len(common) < 2:
        raise InsufficientOverlap(f"only {len(common)} institutions in common")
    p = np.array([predicted[k] for k in common], float)
    o = np.array([observed[k] for k in common], float)
    mae = float(np.mean(np.abs(p - o)))
    if np.ptp(p) == 0 or np.ptp(o) == 0:
        r = math.nan
    else:
        r = float(np.corrcoef(p, o)[0, 1])
    return BenchmarkResult(len(common), mae, r)


def load_benchmark_csv(path: str | Path) -> dict[str, float]:
    """Read ``institution,first_gen_share`` rows (shares in percent)."""
    out: dict[str, float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["institution", "first_gen_share"]:
            raise ParseError("expected header 'institution,first_gen_share'", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            if len(row) != 2:
                raise ParseError("expected 2 columns", line=lineno)
            try:
                out[row[0].strip()] = float(row[1])
            except ValueError:
                raise ParseError(f"bad share {row[1]!r}", line=lineno) from None
    return out
