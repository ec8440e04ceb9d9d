"""Synthetic admissions data under a planted random-intercept logistic model.

Used for recovery studies of the mixed-model fitter. Institutions and tiers
come from the bundled list, covariates from a generated cohort, and prompt
and attribute-seed levels are drawn per row so the three factors are crossed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..config import GenConfig
from ..design import load_institutions
from ..inference import MockParams, random_intercept
from ..profilegen import generate_cohort
from ..rng import stream
from .models import DEFAULT_TERMS


@dataclass
class Simulation:
    data: pd.DataFrame
    planted: dict[str, float]
    conditional: dict[str, float]
    effects: dict[str, dict]


def planted_coefficients(params: MockParams) -> dict[str, float]:
    t = params.tier_intercepts
    return {
        "(Intercept)": t["Tier1"],
        "zip quintile": params.beta_zip,
        "fee waiver: Yes": params.beta_fee,
        "first gen: Yes": params.beta_firstgen,
        "school type: Public": params.beta_school,
        "perf quintile": params.beta_perf,
        "Tier 2": t["Tier2"] - t["Tier1"],
        "Tier 3": t["Tier3"] - t["Tier1"],
    }


def simulate_admissions(n: int, params: MockParams | None = None, seed: int = 0,
                        n_levels: int = 3, config: GenConfig | None = None) -> Simulation:
    params = params or MockParams()
    config = (config or GenConfig.default()).with_overrides(master_seed=seed)
    institutions = load_institutions()
    profiles, _ = generate_cohort(1, config)
    rng = stream(seed, "simulate_admissions")
    inst_idx = rng.integers(0, len(institutions), n)
    prof_idx = rng.integers(0, len(profiles), n)
    prompt = rng.integers(1, n_levels + 1, n)
    attr = rng.integers(1, n_levels + 1, n)

    u_inst = {i.name: random_intercept(seed, "institution", i.name, params.sigma2_institution)
              for i in institutions}
    u_prompt = {k: random_intercept(seed, "prompt", k, params.sigma2_prompt) for k in range(1, n_levels + 1)}
    u_attr = {k: random_intercept(seed, "attr_seed", k, params.sigma2_seed) for k in range(1, n_levels + 1)}

    rows = []
    for i, j, pv, av in zip(inst_idx, prof_idx, prompt, attr):
        inst, p = institutions[i], profiles[j]
        rows.append({"institution": inst.name, "tier": inst.tier.value, "prompt_variant": int(pv),
                     "attr_seed": int(av), "profile_id": p.profile_id, "zip_quintile": p.zip_quintile,
                     "fee_waiver": p.fee_waiver, "first_gen": p.first_gen, "school_type": p.school_type,
                     "perf_quintile": p.perf_quintile, "ses_quintile": p.ses_quintile})
    df = pd.DataFrame(rows)
    eta = (df["tier"].map(params.tier_intercepts).to_numpy(float)
           + params.beta_perf * df["perf_quintile"].to_numpy(float)
           + params.beta_fee * df["fee_waiver"].to_numpy(float)
           + params.beta_firstgen * df["first_gen"].to_numpy(float)
           + params.beta_zip * df["zip_quintile"].to_numpy(float)
           + params.beta_school * (df["school_type"] == "Public").to_numpy(float)
           + df["institution"].map(u_inst).to_numpy(float)
           + df["prompt_variant"].map(u_prompt).to_numpy(float)
           + df["attr_seed"].map(u_attr).to_numpy(float))
    u = rng.random(n)
    df["decision"] = np.where(u < 1.0 / (1.0 + np.exp(-eta)), "admit", "reject")

    planted = planted_coefficients(params)
    # Realized intercepts do not average to zero; fold their means into the
    # intercept and tier contrasts to get the truth conditional on this draw.
    tier_mean = {t: float(np.mean([u_inst[i.name] for i in institutions if i.tier.value == t]))
                 for t in ("Tier1", "Tier2", "Tier3")}
    conditional = dict(planted)
    conditional["(Intercept)"] += tier_mean["Tier1"] + np.mean(list(u_prompt.values())) \
        + np.mean(list(u_attr.values()))
    conditional["Tier 2"] += tier_mean["Tier2"] - tier_mean["Tier1"]
    conditional["Tier 3"] += tier_mean["Tier3"] - tier_mean["Tier1"]
    assert list(planted) == list(DEFAULT_TERMS)
    return Simulation(df, planted, {k: float(v) for k, v in conditional.items()},
                      {"institution": u_inst, "prompt_variant": u_prompt, "attr_seed": u_attr})
