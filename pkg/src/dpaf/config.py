"""Generator configuration: loading, merging over bundled defaults, validation."""

from __future__ import annotations

import csv
import hashlib
import sys
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

ASSETS = resources.files("dpaf") / "assets"


def asset_path(name: str) -> Path:
    return Path(str(ASSETS / name))


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_zip_pools(path: str | Path) -> dict[int, tuple[str, ...]]:
    """Read a ``quintile,zip`` CSV into ``{quintile: (zip, ...)}``."""
    pools: dict[int, list[str]] = {q: [] for q in range(1, 6)}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["quintile", "zip"]:
            raise ConfigError(f"{path}: expected header 'quintile,zip'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                q = int(row[0])
            except (ValueError, IndexError):
                raise ConfigError(f"{path}: line {lineno}: bad quintile {row!r}") from None
            if q not in pools:
                raise ConfigError(f"{path}: line {lineno}: quintile {q} outside 1..5")
            pools[q].append(row[1].strip())
    return {q: tuple(z) for q, z in pools.items()}


@dataclass(frozen=True)
class GenConfig:
    cohort_size: int = 15000
    subsample_size: int = 10000
    min_cell: int = 100
    n_cohorts: int = 3
    master_seed: int = 20240501
    income_brackets: tuple[tuple[float, float, float], ...] = ()
    sat_income_target_corr: float = 0.40
    gpa_quintile_target_corr: float = 0.15
    corr_tolerance: float = 0.01
    corr_max_iter: int = 60
    gpa_bin_edges: tuple[float, ...] = ()
    gpa_bin_weights: tuple[float, ...] = ()
    sat_mean_by_quintile: tuple[float, ...] = ()
    sat_sd_by_quintile: tuple[float, ...] = ()
    sat_low: int = 800
    sat_high: int = 1600
    school_private_prob_by_quintile: tuple[float, ...] = ()
    activity_max: int = 10
    activity_base_prob_by_quintile: tuple[float, ...] = ()
    activity_private_bonus: float = 0.03
    leadership_rate: float = 0.15
    award_rate: float = 0.22
    rate_multiplier_by_quintile: tuple[float, ...] = (1.0,) * 5
    private_rate_multiplier: float = 1.0
    fee_waiver_flip_prob: float = 0.05
    household_size_range: tuple[int, int] = (2, 6)
    usda_thresholds: Mapping[int, float] = field(default_factory=dict)
    first_gen_prob_by_quintile: tuple[float, ...] = ()
    zip_match_prob: float = 0.5
    zip_pools: Mapping[int, tuple[str, ...]] = field(default_factory=dict)
    ses_weight_mode: str = "footnote"
    ses_weights: tuple[float, float, float, float] = (0.35, 0.15, 0.25, 0.25)

    @classmethod
    def default(cls) -> "GenConfig":
        return load_config(None)

    def with_overrides(self, **kwargs: Any) -> "GenConfig":
        cfg = replace(self, **kwargs)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        def prob(name: str, value: float) -> None:
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name}={value} is not a probability")

        def prob5(name: str, values: tuple[float, ...]) -> None:
            if len(values) != 5:
                raise ConfigError(f"{name} must have 5 entries, got {len(values)}")
            for v in values:
                prob(name, v)

        if self.cohort_size < 1 or self.subsample_size < 1:
            raise ConfigError("cohort_size and subsample_size must be positive")
        if self.subsample_size > self.cohort_size:
            raise ConfigError("subsample_size exceeds cohort_size")
        if self.cohort_size >= PROFILE_ID_STRIDE:
            raise ConfigError(f"cohort_size must be below {PROFILE_ID_STRIDE}")
        if self.min_cell < 0 or 25 * self.min_cell > self.subsample_size:
            raise ConfigError("min_cell must satisfy 0 <= 25*min_cell <= subsample_size")
        if len(self.income_brackets) != 5:
            raise ConfigError("income_brackets needs one (low, high, mode) triple per quintile")
        prev_high = None
        for q, (low, high, mode) in enumerate(self.income_brackets, start=1):
            if not low <= mode <= high:
                raise ConfigError(f"income bracket {q}: need low <= mode <= high")
            if prev_high is not None and low <= prev_high:
                raise ConfigError(f"income bracket {q} overlaps bracket {q - 1}")
            prev_high = high
        for name in ("sat_income_target_corr", "gpa_quintile_target_corr"):
            if abs(getattr(self, name)) > 1:
                raise ConfigError(f"{name} must lie in [-1, 1]")
        if self.corr_tolerance <= 0:
            raise ConfigError("corr_tolerance must be positive")
        if len(self.gpa_bin_edges) != len(self.gpa_bin_weights) + 1:
            raise ConfigError("gpa histogram needs len(edges) == len(weights) + 1")
        if any(b <= a for a, b in zip(self.gpa_bin_edges, self.gpa_bin_edges[1:])):
            raise ConfigError("gpa bin edges must be strictly increasing")
        if self.gpa_bin_edges[0] < 1.0 or self.gpa_bin_edges[-1] > 5.0:
            raise ConfigError("gpa histogram must lie within [1, 5]")
        if any(w < 0 for w in self.gpa_bin_weights) or sum(self.gpa_bin_weights) <= 0:
            raise ConfigError("gpa bin weights must be non-negative with positive sum")
        if len(self.sat_mean_by_quintile) != 5 or len(self.sat_sd_by_quintile) != 5:
            raise ConfigError("sat parameters need 5 entries")
        if not 800 <= self.sat_low < self.sat_high <= 1600:
            raise ConfigError("sat bounds must satisfy 800 <= low < high <= 1600")
        prob5("school_private_prob_by_quintile", self.school_private_prob_by_quintile)
        prob5("activity_base_prob_by_quintile", self.activity_base_prob_by_quintile)
        prob5("first_gen_prob_by_quintile", self.first_gen_prob_by_quintile)
        for name in ("fee_waiver_flip_prob", "zip_match_prob", "leadership_rate",
                     "award_rate", "activity_private_bonus"):
            prob(name, getattr(self, name))
        if len(self.rate_multiplier_by_quintile) != 5:
            raise ConfigError("rate_multiplier_by_quintile must have 5 entries")
        for q in range(5):
            top = max(1.0, self.private_rate_multiplier) * self.rate_multiplier_by_quintile[q]
            prob("leadership probability", self.leadership_rate * top)
            prob("award probability", self.award_rate * top)
            prob("activity probability",
                 self.activity_base_prob_by_quintile[q] + self.activity_private_bonus)
        lo, hi = self.household_size_range
        if not 1 <= lo <= hi:
            raise ConfigError("household_size_range must be an interval of positive sizes")
        missing = [s for s in range(lo, hi + 1) if s not in self.usda_thresholds]
        if missing:
            raise ConfigError(f"usda_thresholds missing household sizes {missing}")
        if sorted(self.zip_pools) != [1, 2, 3, 4, 5]:
            raise ConfigError("zip_pools needs quintiles 1..5")
        for q, pool in self.zip_pools.items():
            if not pool:
                raise ConfigError(f"zip pool for quintile {q} is empty")
            for z in pool:
                if len(z) != 5 or not z.isdigit():
                    raise ConfigError(f"zip {z!r} in quintile {q} is not 5 digits")
        if self.ses_weight_mode not in ("footnote", "correlation"):
            raise ConfigError("ses weight_mode must be 'footnote' or 'correlation'")
        if len(self.ses_weights) != 4 or any(w < 0 for w in self.ses_weights):
            raise ConfigError("ses weights must be 4 non-negative numbers")
        if abs(sum(self.ses_weights) - 1.0) > 1e-9:
            raise ConfigError("ses weights must sum to 1")


PROFILE_ID_STRIDE = 1_000_000


def _merge(base: dict, override: Mapping) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), Mapping):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _tuple5(values) -> tuple[float, ...]:
    return tuple(float(v) for v in values)


def config_from_mapping(doc: Mapping[str, Any], base_dir: Path | None = None) -> GenConfig:
    """Build a GenConfig from a parsed TOML document (defaults already merged)."""
    try:
        cohort, income, corr = doc["cohort"], doc["income"], doc["correlation"]
        gpa, sat, school = doc["gpa"], doc["sat"], doc["school"]
        act, fee, fg = doc["activity"], doc["fee_waiver"], doc["first_gen"]
        zp, ses = doc["zip"], doc["ses_index"]
        pool_csv = zp.get("pool_csv") or ""
        if pool_csv:
            pool_path = Path(pool_csv)
            if not pool_path.is_absolute() and base_dir is not None:
                pool_path = base_dir / pool_path
        else:
            pool_path = asset_path("zip_pools.csv")
        cfg = GenConfig(
            cohort_size=int(cohort["cohort_size"]),
            subsample_size=int(cohort["subsample_size"]),
            min_cell=int(cohort["min_cell"]),
            n_cohorts=int(cohort["n_cohorts"]),
            master_seed=int(cohort["master_seed"]),
            income_brackets=tuple(tuple(float(x) for x in b) for b in income["brackets"]),
            sat_income_target_corr=float(corr["sat_income_target_corr"]),
            gpa_quintile_target_corr=float(corr["gpa_quintile_target_corr"]),
            corr_tolerance=float(corr["tolerance"]),
            corr_max_iter=int(corr["max_iter"]),
            gpa_bin_edges=_tuple5(gpa["bin_edges"]),
            gpa_bin_weights=_tuple5(gpa["bin_weights"]),
            sat_mean_by_quintile=_tuple5(sat["mean_by_quintile"]),
            sat_sd_by_quintile=_tuple5(sat["sd_by_quintile"]),
            sat_low=int(sat["low"]),
            sat_high=int(sat["high"]),
            school_private_prob_by_quintile=_tuple5(school["private_prob_by_quintile"]),
            activity_max=int(act["max_count"]),
            activity_base_prob_by_quintile=_tuple5(act["base_prob_by_quintile"]),
            activity_private_bonus=float(act["private_bonus"]),
            leadership_rate=float(act["leadership_rate"]),
            award_rate=float(act["award_rate"]),
            rate_multiplier_by_quintile=_tuple5(act["rate_multiplier_by_quintile"]),
            private_rate_multiplier=float(act["private_rate_multiplier"]),
            fee_waiver_flip_prob=float(fee["flip_prob"]),
            household_size_range=tuple(int(x) for x in fee["household_size_range"]),
            usda_thresholds={int(k): float(v) for k, v in fee["usda_thresholds"].items()},
            first_gen_prob_by_quintile=_tuple5(fg["prob_by_quintile"]),
            zip_match_prob=float(zp["match_prob"]),
            zip_pools=load_zip_pools(pool_path),
            ses_weight_mode=str(ses["weight_mode"]),
            ses_weights=tuple(float(w) for w in ses["weights"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed generator config: {exc!r}") from exc
    cfg.validate()
    return cfg


def load_config(path: str | Path | None) -> GenConfig:
    """Load the bundled defaults, overlaid with the TOML file at ``path`` if given."""
    with open(asset_path("default_gen.toml"), "rb") as fh:
        doc = tomllib.load(fh)
    base_dir = None
    if path is not None:
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                doc = _merge(doc, tomllib.load(fh))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        base_dir = path.parent
    return config_from_mapping(doc, base_dir)

