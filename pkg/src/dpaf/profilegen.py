"""Synthetic applicant cohorts with controlled marginals and correlations.

Pipeline per cohort: draw raw profiles one id at a time from named streams,
rank-align GPA to income quintile and SAT to household income, compute the
performance and SES indices, assign quintiles within the cohort, subsample
with a floor on every SES x performance cell, and summarize.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .config import PROFILE_ID_STRIDE, GenConfig
from .errors import InsufficientCohort, NonConvergence, WeightError
from .rng import Streams

PERF_WEIGHTS = (0.35, 0.35, 0.2, 0.1, 0.1)
FOOTNOTE_SES_WEIGHTS = (0.35, 0.15, 0.25, 0.25)


@dataclass(frozen=True)
class Profile:
    profile_id: int
    cohort_id: int
    income_quintile: int
    household_income: float
    gpa: float
    sat: int
    activity: int
    leadership: int
    award: int
    first_gen: bool
    fee_waiver: bool
    school_type: str
    zip: str
    zip_quintile: int
    perf_index: float | None = None
    ses_index: float | None = None
    perf_quintile: int | None = None
    ses_quintile: int | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "Profile":
        return cls(**{f.name: d[f.name] for f in fields(cls)})


@dataclass
class CohortStats:
    n: int
    marginals: dict
    correlation: dict
    occupancy: list[list[int]]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


# -- primitive samplers ------------------------------------------------------

def sample_income(quintile: int, config: GenConfig, rng: np.random.Generator) -> float:
    low, high, mode = config.income_brackets[quintile - 1]
    if high == low:
        return float(low)
    return float(rng.triangular(low, mode, high))


def sample_gpa(config: GenConfig, rng: np.random.Generator) -> float:
    weights = np.asarray(config.gpa_bin_weights, dtype=float)
    edges = config.gpa_bin_edges
    b = int(rng.choice(len(weights), p=weights / weights.sum()))
    return round(float(rng.uniform(edges[b], edges[b + 1])), 2)


def sample_sat(quintile: int, config: GenConfig, rng: np.random.Generator) -> int:
    mean = config.sat_mean_by_quintile[quintile - 1]
    sd = config.sat_sd_by_quintile[quintile - 1]
    # rejection sampling keeps the truncated shape rather than piling mass on the bounds
    for _ in range(1000):
        x = rng.normal(mean, sd)
        if config.sat_low <= x <= config.sat_high:
            return int(round(x))
    return int(round(min(max(mean, config.sat_low), config.sat_high)))


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xc = x - x.mean()
    yc = y - y.mean()
    return float(xc @ yc / np.sqrt((xc @ xc) * (yc @ yc)))


def rank_align(driver_std: np.ndarray, noise: np.ndarray, sorted_draws: np.ndarray,
               weight: float) -> np.ndarray:
    """Reorder ``sorted_draws`` by the rank of ``w*driver + sqrt(1-w^2)*noise``."""
    latent = weight * driver_std + np.sqrt(max(0.0, 1.0 - weight * weight)) * noise
    order = np.argsort(latent, kind="stable")
    aligned = np.empty_like(sorted_draws)
    aligned[order] = sorted_draws
    return aligned


def calibrate_correlation(
    driver: Sequence[float],
    target_marginal: Callable[[int, np.random.Generator], np.ndarray] | Sequence[float],
    target_corr: float,
    tolerance: float,
    rng: np.random.Generator,
    max_iter: int = 60,
) -> tuple[float, np.ndarray]:
    """Find a mixing weight whose rank-aligned output hits ``target_corr``.

    ``target_marginal`` is either a sampler ``(n, rng) -> draws`` or the draws
    themselves. The returned vector is always a permutation of those draws, so
    the marginal is preserved exactly; only the pairing with ``driver`` changes.
    The weight is found by bisection on a fixed noise vector.
    """
    d = np.asarray(driver, dtype=float)
    if abs(target_corr) > 1:
        raise ValueError("target_corr must lie in [-1, 1]")
    if d.size < 100:
        raise ValueError("driver needs at least 100 entries")
    if d.std() == 0:
        raise ValueError("driver has zero variance")
    draws = (target_marginal(d.size, rng) if callable(target_marginal)
             else np.array(target_marginal))
    if draws.shape != d.shape:
        raise ValueError("marginal draws must match the driver length")
    sorted_draws = np.sort(draws, kind="stable")
    d_std = (d - d.mean()) / d.std()
    noise = rng.standard_normal(d.size)

    def corr_at(w: float) -> tuple[float, np.ndarray]:
        aligned = rank_align(d_std, noise, sorted_draws, w)
        return pearson(d, aligned), aligned

    r, aligned = corr_at(0.0)
    if abs(r - target_corr) <= tolerance:
        return 0.0, aligned
    lo, hi = (0.0, 1.0) if target_corr > r else (-1.0, 0.0)
    r_end, aligned_end = corr_at(hi if target_corr > r else lo)
    if abs(r_end - target_corr) <= tolerance:
        return (hi if target_corr > r else lo), aligned_end
    if (target_corr > r and r_end < target_corr) or (target_corr < r and r_end > target_corr):
        raise NonConvergence(
            f"target correlation {target_corr} unreachable; extreme weight gives {r_end:.4f}")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        r, aligned = corr_at(mid)
        if abs(r - target_corr) <= tolerance:
            return mid, aligned
        if r < target_corr:
            lo = mid
        else:
            hi = mid
    raise NonConvergence(
        f"bisection did not reach {target_corr}±{tolerance} in {max_iter} steps (last {r:.4f})")


def sample_profile(profile_id: int, config: GenConfig, streams: Streams,
                   cohort_id: int = 0) -> Profile:
    """Draw one profile's raw attributes; indices and quintiles stay unset.

    GPA and SAT are raw marginal draws here. Cohort generation later permutes
    them across profiles to install the target correlations.
    """
    q = int(streams["income_quintile"].integers(1, 6))
    income = round(sample_income(q, config, streams["household_income"]), 2)
    gpa = sample_gpa(config, streams["gpa"])
    sat = sample_sat(q, config, streams["sat"])

    private = bool(streams["school_type"].random() < config.school_private_prob_by_quintile[q - 1])

    p_act = config.activity_base_prob_by_quintile[q - 1] + (config.activity_private_bonus if private else 0.0)
    activity = int(streams["activity"].binomial(config.activity_max, p_act))
    mult = config.rate_multiplier_by_quintile[q - 1] * (config.private_rate_multiplier if private else 1.0)
    leadership = int(streams["leadership"].binomial(activity, min(1.0, config.leadership_rate * mult)))
    award = int(streams["award"].binomial(activity, min(1.0, config.award_rate * mult)))

    lo, hi = config.household_size_range
    household = int(streams["household_size"].integers(lo, hi + 1))
    eligible = income <= config.usda_thresholds[household]
    if streams["fee_waiver_flip"].random() < config.fee_waiver_flip_prob:
        eligible = not eligible

    first_gen = bool(streams["first_gen"].random() < config.first_gen_prob_by_quintile[q - 1])

    zrng = streams["zip"]
    if zrng.random() < config.zip_match_prob:
        zq = q
    else:
        others = [k for k in range(1, 6) if k != q]
        zq = others[int(zrng.integers(0, 4))]
    pool = config.zip_pools[zq]
    zip_code = pool[int(zrng.integers(0, len(pool)))]

    return Profile(
        profile_id=profile_id, cohort_id=cohort_id, income_quintile=q,
        household_income=income, gpa=gpa, sat=sat, activity=activity,
        leadership=leadership, award=award, first_gen=first_gen,
        fee_waiver=bool(eligible), school_type="Private" if private else "Public",
        zip=zip_code, zip_quintile=zq,
    )


# -- composite indices ----------------------------------------------------------

def compute_perf_index(gpa_pct, sat_pct, activity_norm, leadership_norm, award_norm):
    w_gpa, w_sat, w_act, w_lead, w_award = PERF_WEIGHTS
    return (w_gpa * (gpa_pct + sat_pct) + w_act * activity_norm
            + w_lead * leadership_norm + w_award * award_norm)


def compute_ses_index(zip_rank, school_rank, fee_rank, firstgen_rank,
                      weights: Sequence[float] = FOOTNOTE_SES_WEIGHTS):
    """Weighted sum of SES percentile ranks.

    Fee-waiver and first-gen ranks must already be inverted so that a higher
    rank means higher SES.
    """
    w = tuple(float(x) for x in weights)
    if len(w) != 4 or any(x < 0 for x in w):
        raise WeightError(f"need 4 non-negative weights, got {weights!r}")
    if abs(sum(w) - 1.0) > 1e-9:
        raise WeightError(f"weights sum to {sum(w)!r}, not 1")
    return w[0] * zip_rank + w[1] * school_rank + w[2] * fee_rank + w[3] * firstgen_rank


def percentile_rank(values) -> np.ndarray:
    """Average-tie rank divided by n, so values lie in (0, 1]."""
    v = np.asarray(values, dtype=float)
    return rankdata(v, method="average") / v.size


def zscore(values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    sd = v.std()
    return (v - v.mean()) / sd if sd > 0 else np.zeros_like(v)


def ses_components(profiles: Sequence[Profile]) -> np.ndarray:
    """Columns oriented so that larger means higher SES: zip q, private, no waiver, not first-gen."""
    return np.array([[p.zip_quintile, p.school_type == "Private", not p.fee_waiver, not p.first_gen]
                     for p in profiles], dtype=float)


def correlation_ses_weights(profiles: Sequence[Profile]) -> tuple[float, ...]:
    comps = ses_components(profiles)
    iq = np.array([p.income_quintile for p in profiles], dtype=float)
    raw = []
    for j in range(4):
        col = comps[:, j]
        raw.append(abs(pearson(col, iq)) if col.std() > 0 else 0.0)
    total = sum(raw)
    if total == 0:
        raise WeightError("all SES components are constant; correlation weights undefined")
    w = [r / total for r in raw]
    w[-1] = 1.0 - sum(w[:-1])
    return tuple(w)


def assign_quintiles(values: Sequence[float], ids: Sequence[int]) -> np.ndarray:
    """Balanced rank partition into 1..5; ties broken by ascending id."""
    v = np.asarray(values, dtype=float)
    i = np.asarray(ids)
    if v.shape != i.shape:
        raise ValueError("values and ids must have the same length")
    n = v.size
    if n < 5:
        raise ValueError("need at least 5 values")
    order = np.lexsort((i, v))
    labels = np.empty(n, dtype=int)
    labels[order] = (5 * np.arange(n)) // n + 1
    return labels


def add_indices(profiles: Sequence[Profile], config: GenConfig) -> list[Profile]:
    gpa_pct = percentile_rank([p.gpa for p in profiles])
    sat_pct = percentile_rank([p.sat for p in profiles])
    perf = compute_perf_index(
        gpa_pct, sat_pct,
        zscore([p.activity for p in profiles]),
        zscore([p.leadership for p in profiles]),
        zscore([p.award for p in profiles]),
    )
    comps = ses_components(profiles)
    ranks = [percentile_rank(comps[:, j]) for j in range(4)]
    weights = (correlation_ses_weights(profiles) if config.ses_weight_mode == "correlation"
               else config.ses_weights)
    ses = compute_ses_index(*ranks, weights=weights)
    ids = [p.profile_id for p in profiles]
    perf_q = assign_quintiles(perf, ids)
    ses_q = assign_quintiles(ses, ids)
    return [replace(p, perf_index=float(perf[k]), ses_index=float(ses[k]),
                    perf_quintile=int(perf_q[k]), ses_quintile=int(ses_q[k]))
            for k, p in enumerate(profiles)]


# -- cohort assembly ------------------------------------------------------------

def subsample_with_coverage(cohort: Sequence[Profile], target_n: int, min_cell: int,
                            rng: np.random.Generator) -> list[Profile]:
    """Keep ``min(min_cell, population)`` from every SES x perf cell, fill the rest uniformly.

    Output is sorted by profile_id.
    """
    if len(cohort) < target_n:
        raise InsufficientCohort(f"cohort has {len(cohort)} profiles, need {target_n}")
    if 25 * min_cell > target_n:
        raise ValueError("25*min_cell exceeds target_n")
    ordered = sorted(cohort, key=lambda p: p.profile_id)
    chosen = np.zeros(len(ordered), dtype=bool)
    for sq in range(1, 6):
        for pq in range(1, 6):
            idx = np.array([k for k, p in enumerate(ordered)
                            if p.ses_quintile == sq and p.perf_quintile == pq], dtype=int)
            take = min(min_cell, idx.size)
            if take:
                chosen[rng.choice(idx, size=take, replace=False)] = True
    rest = np.flatnonzero(~chosen)
    remaining = target_n - int(chosen.sum())
    if remaining > 0:
        chosen[rng.choice(rest, size=remaining, replace=False)] = True
    return [p for k, p in enumerate(ordered) if chosen[k]]


def sample_cohort(cohort_id: int, config: GenConfig) -> list[Profile]:
    """Full-size cohort with correlations installed, indices and quintiles set."""
    streams = Streams(config.master_seed, "cohort", cohort_id)
    base = cohort_id * PROFILE_ID_STRIDE
    raw = [sample_profile(base + k, config, streams, cohort_id) for k in range(config.cohort_size)]

    iq = np.array([p.income_quintile for p in raw], dtype=float)
    income = np.array([p.household_income for p in raw], dtype=float)
    _, gpa = calibrate_correlation(iq, np.array([p.gpa for p in raw]),
                                   config.gpa_quintile_target_corr, config.corr_tolerance,
                                   streams["gpa_align"], config.corr_max_iter)
    _, sat = calibrate_correlation(income, np.array([p.sat for p in raw]),
                                   config.sat_income_target_corr, config.corr_tolerance,
                                   streams["sat_align"], config.corr_max_iter)
    aligned = [replace(p, gpa=float(gpa[k]), sat=int(sat[k])) for k, p in enumerate(raw)]
    return add_indices(aligned, config)


STAT_VARIABLES = ("income_quintile", "household_income", "gpa", "sat", "activity",
                  "leadership", "award", "first_gen", "fee_waiver", "private_school",
                  "zip_quintile", "perf_index", "ses_index")


def _column(profiles: Sequence[Profile], name: str) -> np.ndarray:
    if name == "private_school":
        return np.array([p.school_type == "Private" for p in profiles], dtype=float)
    return np.array([getattr(p, name) for p in profiles], dtype=float)


def cohort_stats(profiles: Sequence[Profile]) -> CohortStats:
    marginals: dict = {}
    cols = {}
    for name in STAT_VARIABLES:
        col = _column(profiles, name)
        cols[name] = col
        entry: dict = {"mean": float(col.mean()), "std": float(col.std())}
        if name in ("first_gen", "fee_waiver", "private_school"):
            entry["fraction_true"] = float(col.mean())
        elif name in ("income_quintile", "activity", "leadership", "award", "zip_quintile"):
            values, counts = np.unique(col.astype(int), return_counts=True)
            entry["histogram"] = {str(int(v)): int(c) for v, c in zip(values, counts)}
        else:
            counts, edges = np.histogram(col, bins=10)
            entry["histogram"] = {"edges": [float(e) for e in edges],
                                  "counts": [int(c) for c in counts]}
        marginals[name] = entry
    mat = np.corrcoef(np.vstack([cols[n] for n in STAT_VARIABLES]))
    mat = np.clip(np.nan_to_num(mat, nan=0.0), -1.0, 1.0)
    mat = 0.5 * (mat + mat.T)
    np.fill_diagonal(mat, 1.0)
    occupancy = [[0] * 5 for _ in range(5)]
    for p in profiles:
        if p.ses_quintile is not None and p.perf_quintile is not None:
            occupancy[p.ses_quintile - 1][p.perf_quintile - 1] += 1
    return CohortStats(
        n=len(profiles), marginals=marginals,
        correlation={"variables": list(STAT_VARIABLES),
                     "matrix": [[float(x) for x in row] for row in mat]},
        occupancy=occupancy,
    )


def generate_cohort(cohort_id: int, config: GenConfig) -> tuple[list[Profile], CohortStats]:
    full = sample_cohort(cohort_id, config)
    rng = Streams(config.master_seed, "cohort", cohort_id)["subsample"]
    sub = subsample_with_coverage(full, config.subsample_size, config.min_cell, rng)
    return sub, cohort_stats(sub)


def write_cohort(profiles: Iterable[Profile], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in profiles:
            fh.write(p.to_json() + "\n")


def read_cohort(path: str | Path) -> list[Profile]:
    with open(path, encoding="utf-8") as fh:
        return [Profile.from_dict(json.loads(line)) for line in fh if line.strip()]
