"""Analyses over joined trial records: rates, flips, regressions and tag trends."""

from __future__ import annotations

from .models import (DEFAULT_GROUPS, DEFAULT_TERMS, ModelFit, design_matrix, fit_admit_model,
                     fit_fixed_with_dummies, fit_glmm_laplace, fit_logistic_irls, or_report,
                     score_max_norm, stars, variance_report)
from .tables import (COMPOSITES, BenchmarkResult, FlipStats, admit_rate_table, benchmark_compare,
                     composite_trend_table, first_gen_admit_share, flip_rates, flip_stats, heatmap_table,
                     join_records, load_benchmark_csv, pair_systems, ses_compensates_share)

__all__ = [
    "COMPOSITES", "DEFAULT_GROUPS", "DEFAULT_TERMS", "BenchmarkResult", "FlipStats", "ModelFit",
    "admit_rate_table", "benchmark_compare", "composite_trend_table", "design_matrix", "fit_admit_model",
    "fit_fixed_with_dummies", "fit_glmm_laplace", "fit_logistic_irls", "first_gen_admit_share",
    "flip_rates", "flip_stats", "heatmap_table", "join_records", "load_benchmark_csv", "or_report",
    "pair_systems", "score_max_norm", "ses_compensates_share", "stars", "variance_report",
]
