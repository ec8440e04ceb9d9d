from __future__ import annotations

import pytest

from dpaf.config import GenConfig
from dpaf.design import load_institutions, make_plan, expand_trials
from dpaf.profilegen import generate_cohort


@pytest.fixture(scope="session")
def default_config() -> GenConfig:
    return GenConfig.default()


@pytest.fixture(scope="session")
def small_config(default_config) -> GenConfig:
    return default_config.with_overrides(cohort_size=1500, subsample_size=1000, min_cell=10)


@pytest.fixture(scope="session")
def small_cohorts(small_config):
    return {cid: generate_cohort(cid, small_config)[0] for cid in (1, 2, 3)}


@pytest.fixture(scope="session")
def institutions():
    return load_institutions()


@pytest.fixture(scope="session")
def s1_trials(institutions, small_cohorts):
    plan = make_plan(institutions, master_seed=7, system="S1", profile_fraction=0.05)
    return list(expand_trials(plan, small_cohorts))


@pytest.fixture(scope="session")
def s2_trials(institutions, small_cohorts):
    plan = make_plan(institutions, master_seed=7, system="S2", profile_fraction=0.05)
    return list(expand_trials(plan, small_cohorts))
