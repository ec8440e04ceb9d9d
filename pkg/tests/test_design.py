from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpaf.design import (PROFILE_LINES, RunPlan, Tier, chat_messages, expand_trials, load_institutions,
                         make_plan, parse_profile_text, render_profile_text, render_prompt, tier_of)
from dpaf.errors import OutOfScopeRate, ParseError, TierError, UnknownVariant
from dpaf.profilegen import Profile


def _profile(**kw) -> Profile:
    base = dict(profile_id=1, cohort_id=1, income_quintile=3, household_income=70000.0, gpa=4.17, sat=1247,
                activity=8, leadership=2, award=1, first_gen=True, fee_waiver=False, school_type="Public",
                zip="12345", zip_quintile=3, perf_index=0.5, ses_index=0.5, perf_quintile=3, ses_quintile=3)
    base.update(kw)
    return Profile(**base)


@pytest.mark.parametrize("rate,tier", [(0.12, Tier.TIER1), (0.25, Tier.TIER2), (0.46, Tier.TIER3),
                                       (0.15, Tier.TIER2), (0.30, Tier.TIER3), (0.50, Tier.TIER3),
                                       (0.1499, Tier.TIER1)])
def test_tier_of(rate, tier):
    assert tier_of(rate) is tier


@pytest.mark.parametrize("rate", [0.0, -0.1, 0.51, 1.0])
def test_tier_out_of_scope(rate):
    with pytest.raises(OutOfScopeRate):
        tier_of(rate)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-6, 0.5), st.floats(1e-6, 0.5))
def test_tier_monotone(a, b):
    lo, hi = sorted((a, b))
    order = [Tier.TIER1, Tier.TIER2, Tier.TIER3]
    assert order.index(tier_of(lo)) <= order.index(tier_of(hi))


def test_default_institutions(institutions):
    assert len(institutions) == 60
    counts = {t: sum(i.tier is t for i in institutions) for t in Tier}
    assert counts == {Tier.TIER1: 20, Tier.TIER2: 20, Tier.TIER3: 20}
    by_name = {i.name: i for i in institutions}
    assert by_name["Amherst College"].acceptance_rate == 0.12


def test_institution_file_errors(tmp_path, caplog):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert load_institutions(empty) == []
    assert "empty" in caplog.text
    bad = tmp_path / "bad.csv"
    bad.write_text("name,acceptance_rate\nA,0.2\nB,abc\n")
    with pytest.raises(ParseError, match="line 3"):
        load_institutions(bad)
    out = tmp_path / "out.csv"
    out.write_text("name,acceptance_rate\nA,0.7\n")
    with pytest.raises(TierError):
        load_institutions(out)


def test_plan_determinism_and_shape(institutions):
    a = make_plan(institutions, master_seed=42)
    b = make_plan(institutions, master_seed=42)
    assert a == b
    assert [x.institution.name for x in a.assignments] == [i.name for i in institutions]
    assert RunPlan.from_json(a.to_json()) == a
    assert a.with_system("S2", "omitted").assignments == a.assignments
    c = make_plan(institutions, master_seed=43)
    assert c.assignments != a.assignments
    for field in ("cohort_id", "prompt_variant", "attr_seed"):
        assert {getattr(x, field) for x in a.assignments} == {1, 2, 3}


def test_trial_counts(institutions):
    # 10,000-profile cohorts only need ids here, so stand-ins keep the test fast
    cohorts = {c: [_profile(profile_id=c * 1_000_000 + k, cohort_id=c) for k in range(10_000)]
               for c in (1, 2, 3)}
    s1 = make_plan(institutions, master_seed=1)
    assert sum(1 for _ in expand_trials(s1, cohorts)) == 600_000
    s2 = s1.with_system("S2", "omitted", profile_fraction=0.1)
    n2 = sum(1 for _ in expand_trials(s2, cohorts))
    assert n2 == 60_000
    assert 4 * n2 == 240_000


def test_trial_ids_unique_and_stable(s1_trials, institutions, small_cohorts):
    ids = [t.trial_id for t in s1_trials]
    assert len(ids) == len(set(ids))
    again = make_plan(institutions, master_seed=7, system="S1", profile_fraction=0.05)
    assert [t.trial_id for t in expand_trials(again, small_cohorts)] == ids


def test_profile_rendering_example():
    text = render_profile_text(_profile(), 1)
    lines = set(text.splitlines())
    assert {"GPA: 4.17", "SAT: 1247", "FIRST-GENERATION STUDENT STATUS: Yes",
            "ELIGIBLE FOR FEE WAIVER: No", "HIGH SHOOL TYPE: Public", "ZIP CODE: 12345"} <= lines
    assert len(lines) == 9
    assert "income" not in text.lower() and "quintile" not in text.lower()


def test_seed_permutes_lines():
    p = _profile()
    a, b = render_profile_text(p, 1), render_profile_text(p, 2)
    assert sorted(a.splitlines()) == sorted(b.splitlines())
    assert a != b
    assert render_profile_text(p, 1) == a


@settings(max_examples=100, deadline=None)
@given(gpa=st.integers(100, 500), sat=st.integers(800, 1600), act=st.integers(0, 10),
       fg=st.booleans(), fee=st.booleans(), seed=st.integers(1, 3), private=st.booleans())
def test_profile_roundtrip(gpa, sat, act, fg, fee, seed, private):
    p = _profile(gpa=gpa / 100, sat=sat, activity=act, leadership=act // 2, award=act // 3, first_gen=fg,
                 fee_waiver=fee, school_type="Private" if private else "Public")
    got = parse_profile_text(render_profile_text(p, seed))
    for label_field in ("gpa", "sat", "activity", "leadership", "award", "first_gen", "fee_waiver",
                        "school_type", "zip"):
        assert got[label_field] == getattr(p, label_field)
    assert len(got) == len(PROFILE_LINES)


def test_prompts(s1_trials, s2_trials):
    t1 = s1_trials[0]
    system, user = render_prompt(t1)
    assert system.startswith("You are a member of the admissions committee")
    assert user.rstrip().endswith("DECISION:")
    for variant in (1, 2, 3):
        from dataclasses import replace
        _, u2 = render_prompt(replace(s2_trials[0], prompt_variant=variant))
        assert '"EXPLANATION"' in u2 and '"DECISION"' in u2
    from dataclasses import replace
    spec = replace(t1, system_mode="specified")
    s_spec, u_spec = render_prompt(spec)
    assert u_spec == user and s_spec != system
    assert "acceptance rate of" in s_spec
    with pytest.raises(UnknownVariant):
        render_prompt(replace(t1, prompt_variant=9))


def test_merge_system_mode(s1_trials):
    msgs = chat_messages(s1_trials[0], merge_system=True)
    assert len(msgs) == 1 and msgs[0]["role"] == "user"
    system, user = render_prompt(s1_trials[0])
    assert msgs[0]["content"] == f"{system}\n\n{user}"
    assert [m["role"] for m in chat_messages(s1_trials[0])] == ["system", "user"]
