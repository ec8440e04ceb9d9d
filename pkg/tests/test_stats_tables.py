from __future__ import annotations

import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dpaf.errors import EmptyInput, InsufficientOverlap, NoPairs, ParseError
from dpaf.inference import MockModel
from dpaf.parsing import parse_outcome
from dpaf.stats.tables import (admit_rate_table, benchmark_compare, composite_trend_table,
                               first_gen_admit_share, flip_rates, flip_stats, heatmap_table, join_records,
                               load_benchmark_csv, pair_systems, ses_compensates_share)
from dpaf.tagging import JudgeRequest, MockJudge, parse_tag_record

from oracles import flips, pearson_hand


@pytest.fixture(scope="module")
def joined(s1_trials, s2_trials):
    model = MockModel(master_seed=21)
    out1 = [parse_outcome(t.trial_id, model(t), "S1") for t in s1_trials]
    out2 = [parse_outcome(t.trial_id, model(t), "S2") for t in s2_trials]
    judge = MockJudge()
    tags = [parse_tag_record(judge(JudgeRequest(o.trial_id, o.explanation)), o.trial_id) for o in out2]
    return join_records(s1_trials, out1), join_records(s2_trials, out2, tags)


def test_join_records(joined, s1_trials):
    s1, s2 = joined
    assert len(s1) == len(s1_trials)
    assert {"institution", "tier", "ses_quintile", "perf_quintile", "decision"} <= set(s1.columns)
    assert {"tag_first_gen", "tag_ses_compensates", "tag_aca_support"} <= set(s2.columns)
    with pytest.raises(KeyError):
        join_records(s1_trials, [])


def test_admit_rate_table_counts():
    df = pd.DataFrame({"tier": ["Tier1"] * 4 + ["Tier2"] * 3 + ["Tier3"],
                       "decision": ["admit", "reject", "reject", "unparseable", "admit", "admit", "reject",
                                    "unparseable"]})
    table = admit_rate_table(df).set_index("tier")
    assert table.loc["Tier1", "n"] == 3 and table.loc["Tier1", "excluded"] == 1
    assert table.loc["Tier1", "admit_rate"] == pytest.approx(1 / 3)
    assert table.loc["Tier2", "admit_rate"] == pytest.approx(2 / 3)
    assert "Tier3" not in table.index
    overall = admit_rate_table(df, by=())
    assert int(overall["n"].iloc[0]) == 6 and int(overall["excluded"].iloc[0]) == 2
    with pytest.raises(EmptyInput):
        admit_rate_table(df.iloc[:0])


def test_heatmap_long_format(joined):
    s1, _ = joined
    hm = heatmap_table(s1)
    assert list(hm.columns[:2]) == ["ses_quintile", "perf_quintile"]
    assert hm["n"].sum() == (s1["decision"] != "unparseable").sum()


def test_flip_example():
    s1 = ["admit", "admit", "reject", "reject"]
    s2 = ["admit", "reject", "admit", "reject"]
    f = flip_stats(s1, s2)
    want = flips(s1, s2)
    assert f.admit_to_reject_rate == want["a2r"] == 0.5
    assert f.reject_to_admit_rate == want["r2a"] == 0.5
    assert f.flip_rate == want["overall"] == 0.5
    with pytest.raises(NoPairs):
        flip_stats([], [])
    assert math.isnan(flip_stats(["reject"], ["admit"]).admit_to_reject_rate)


@given(st.lists(st.tuples(st.sampled_from(["admit", "reject"]), st.sampled_from(["admit", "reject"])),
                min_size=1, max_size=60))
def test_flip_closure(pairs):
    a, b = zip(*pairs)
    f = flip_stats(a, b)
    assert f.flips == f.admit_to_reject + f.reject_to_admit
    assert f.s1_admits + f.s1_rejects == f.pairs
    # overall rate is the S1-share-weighted mix of the directional rates
    mix = sum(r * n for r, n in ((f.admit_to_reject_rate, f.s1_admits), (f.reject_to_admit_rate, f.s1_rejects))
              if n) / f.pairs
    assert f.flip_rate == pytest.approx(mix, abs=1e-12)
    assert f.flips == sum(x != y for x, y in pairs)


def test_pairing_and_flip_table(joined):
    s1, s2 = joined
    pairs = pair_systems(s1, s2)
    assert len(pairs) == len(s2)
    assert set(pairs["decision_s1"]) | set(pairs["decision_s2"]) <= {"admit", "reject"}
    table = flip_rates(pairs, by=("tier",))
    assert table["pairs"].sum() == len(pairs)
    assert (table["flips"] == table["admit_to_reject"] + table["reject_to_admit"]).all()
    with pytest.raises(NoPairs):
        flip_rates(pairs.iloc[:0])


def test_composite_and_compensation_tables(joined):
    s1, s2 = joined
    comp = composite_trend_table(s2)
    assert set(comp["decision"]) <= {"admit", "reject"}
    for c in ("aca_support", "ses_support", "aca_penalize", "ses_penalize"):
        assert comp[c].between(0, 1).all()
    share = ses_compensates_share(s2)
    assert share["share"].between(0, 1).all() and share["n"].sum() == len(s2)
    with pytest.raises(EmptyInput):
        composite_trend_table(s1)


def test_first_gen_share():
    df = pd.DataFrame({"institution": ["A"] * 4 + ["B"] * 2,
                       "first_gen": [True, False, True, True, False, True],
                       "decision": ["admit", "admit", "reject", "admit", "admit", "reject"]})
    assert first_gen_admit_share(df) == {"A": pytest.approx(200 / 3), "B": 0.0}


def test_benchmark_compare_matches_oracle():
    pred = {"A": 10.0, "B": 20.0, "C": 30.0, "D": 99.0}
    obs = {"A": 12.0, "B": 18.0, "C": 36.0, "E": 1.0}
    res = benchmark_compare(pred, obs)
    assert res.n_matched == 3
    assert res.mae == pytest.approx(10 / 3)
    assert res.r == pytest.approx(pearson_hand([10, 20, 30], [12, 18, 36]), abs=1e-12)
    assert res.r == pytest.approx(0.9607689228305228, abs=1e-12)
    assert res.formatted() == {"n": "3", "MAE": "3.3", "r": "1.0"}
    with pytest.raises(InsufficientOverlap):
        benchmark_compare({"A": 1.0}, {"A": 2.0})
    assert math.isnan(benchmark_compare({"A": 1.0, "B": 1.0}, {"A": 2.0, "B": 3.0}).r)


def test_benchmark_csv(tmp_path):
    f = tmp_path / "b.csv"
    f.write_text("institution,first_gen_share\nAmherst College,17.5\n\nBates College,12\n")
    assert load_benchmark_csv(f) == {"Amherst College": 17.5, "Bates College": 12.0}
    f.write_text("name,share\n")
    with pytest.raises(ParseError):
        load_benchmark_csv(f)
    f.write_text("institution,first_gen_share\nA,x\n")
    with pytest.raises(ParseError, match="line 2"):
        load_benchmark_csv(f)


def test_tables_are_order_invariant(joined):
    s1, _ = joined
    shuffled = s1.sample(frac=1.0, random_state=np.random.RandomState(0))
    pd.testing.assert_frame_equal(admit_rate_table(s1, ("tier", "ses_quintile")),
                                  admit_rate_table(shuffled, ("tier", "ses_quintile")))
