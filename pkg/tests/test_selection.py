from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_ks_d, permutation_pvalue
from wearauth.core import Combo, DomainError, Period
from wearauth.features import FeatureId, FeatureTable, candidate_ids
from wearauth.selection import (
    X_SIGMA_GRID,
    Approach,
    CovConfig,
    EmptySelectionError,
    FeatureSelector,
    KsConfig,
    SelectionResult,
    cov_rank,
    cov_select,
    kolmogorov_q,
    ks_screen,
    ks_two_sample,
    select,
    subject_pairs,
)

H = Combo.parse("H")


def table_from(columns: dict[FeatureId, list[np.ndarray]], period=Period.NON_SEDENTARY) -> FeatureTable:
    """Feature table whose ``columns[fid][k]`` holds subject k's values."""
    ids = tuple(columns)
    per_subject = [len(v) for v in next(iter(columns.values()))]
    subjects = np.array([f"s{k}" for k, n in enumerate(per_subject) for _ in range(n)], dtype=object)
    matrix = np.column_stack([np.concatenate(columns[f]) for f in ids])
    m = len(subjects)
    return FeatureTable(period, subjects, np.full(m, np.datetime64("2016-01-04T00:00", "m")),
                        np.ones(m, dtype=np.int8), ids, matrix)


# ---------------------------------------------------------------- KS


def test_identical_samples():
    a = list(range(1, 11))
    d, p = ks_two_sample(a, a)
    assert d == 0 and p == 1


def test_disjoint_samples():
    d, p = ks_two_sample([1, 2, 3, 4, 5], [10, 11, 12, 13, 14])
    assert d == 1
    assert p < 0.01


def test_undersized_sample():
    with pytest.raises(DomainError):
        ks_two_sample([1, 2, 3, 4], [1, 2, 3, 4, 5])


def test_statistic_matches_brute_force():
    rng = np.random.default_rng(11)
    for _ in range(100):
        na, nb = rng.integers(5, 40, size=2)
        a = np.round(rng.normal(0, 1, na), 1)  # rounding forces ties
        b = np.round(rng.normal(rng.uniform(-1, 1), 1, nb), 1)
        assert ks_two_sample(a, b).D == brute_ks_d(a.tolist(), b.tolist())


def test_pvalue_is_the_corrected_asymptotic_form():
    a = np.arange(50.0)
    b = a + 7.5  # D = 8/50
    lam = (5.0 + 0.12 + 0.11 / 5.0) * 0.16
    expected = 2 * sum((-1) ** (j - 1) * np.exp(-2 * j * j * lam * lam) for j in range(1, 200))
    d, p = ks_two_sample(a, b)
    assert d == pytest.approx(0.16)
    assert p == pytest.approx(expected, abs=1e-12)


def test_pvalue_tail_matches_permutation_oracle():
    # in the decision-relevant tail (p near alpha) the asymptotic form is within 0.02
    rng = np.random.default_rng(5)
    for shift in (0.6, 0.8, 1.0):
        a, b = rng.normal(0, 1, 50), rng.normal(shift, 1, 50)
        oracle = permutation_pvalue(a, b, 10_000, rng)
        assert abs(ks_two_sample(a, b).p - oracle) <= 0.02


def test_kolmogorov_q_branches_agree_and_are_monotone():
    lams = np.linspace(0.05, 3, 300)
    q = [kolmogorov_q(x) for x in lams]
    assert all(0 <= v <= 1 for v in q)
    assert all(x >= y - 1e-15 for x, y in zip(q, q[1:]))
    # both series are valid around the switch point
    series = 2 * sum((-1) ** (j - 1) * np.exp(-2 * j * j * 0.99**2) for j in range(1, 200))
    assert kolmogorov_q(0.99) == pytest.approx(series, abs=1e-12)
    assert kolmogorov_q(0) == 1.0


sample = st.lists(st.integers(-10_000, 10_000).map(lambda k: k / 100), min_size=5, max_size=30)


@given(sample, sample)
@settings(max_examples=100, deadline=None)
def test_ks_symmetry(a, b):
    assert ks_two_sample(a, b) == ks_two_sample(b, a)


@given(sample, sample)
@settings(max_examples=100, deadline=None)
def test_d_invariant_under_increasing_transform(a, b):
    a, b = np.asarray(a), np.asarray(b)
    d = ks_two_sample(a, b).D
    assert ks_two_sample(np.cbrt(a) * 3 + 7, np.cbrt(b) * 3 + 7).D == d
    assert ks_two_sample(np.arctan(a / 200), np.arctan(b / 200)).D == d


# ---------------------------------------------------------------- screening


def test_disjoint_heart_rate_kept_and_constant_feature_dropped():
    rng = np.random.default_rng(0)
    mu, const = FeatureId("H", "mu"), FeatureId("H", "np")
    table = table_from({
        mu: [rng.uniform(50, 60, 20), rng.uniform(70, 80, 20), rng.uniform(90, 100, 20)],
        const: [np.zeros(20)] * 3,
    })
    assert ks_screen(table, KsConfig()) == [mu]


def test_reject_fraction_threshold():
    rng = np.random.default_rng(1)
    f = FeatureId("H", "mu")
    # s0 and s1 share a distribution; s2 is far away: 2 of 3 pairs reject
    table = table_from({f: [rng.normal(0, 1, 40), rng.normal(0, 1, 40), rng.normal(10, 1, 40)]})
    assert ks_screen(table, KsConfig(reject_fraction=0.6)) == [f]
    assert ks_screen(table, KsConfig(reject_fraction=0.7)) == []


def test_pair_sampling_is_seeded_and_capped():
    subjects = [f"s{k}" for k in range(30)]
    assert len(subject_pairs(subjects, 10_000, 0)) == 435
    a = subject_pairs(subjects, 50, 3)
    assert len(a) == 50 and a == subject_pairs(subjects, 50, 3)
    assert a != subject_pairs(subjects, 50, 4)


def test_config_validation():
    for bad in (dict(alpha=0), dict(alpha=1), dict(reject_fraction=0), dict(reject_fraction=1.5)):
        with pytest.raises(DomainError):
            KsConfig(**bad)
    with pytest.raises(DomainError):
        CovConfig(35)


# ---------------------------------------------------------------- COV


def test_cov_of_identical_means_is_zero():
    f = FeatureId("H", "mu")
    table = table_from({f: [np.array([1.0, 3.0] * 5), np.array([2.0] * 10)]})
    assert cov_rank(table, [f]) == {f: 0.0}


def test_cov_uses_sample_std_of_subject_means():
    f = FeatureId("H", "mu")
    table = table_from({f: [np.full(6, 10.0), np.full(6, 20.0), np.array([29.0, 31.0] * 3)]})
    assert cov_rank(table, [f])[f] == pytest.approx(0.5, abs=1e-15)


def test_cov_matches_brute_force_on_cohort(active_table):
    ids = list(active_table.ids[:40])
    covs = cov_rank(active_table, ids)
    for k, fid in enumerate(ids):
        means = []
        for s in sorted(set(active_table.subjects)):
            vals = [active_table.matrix[i, k] for i in range(len(active_table)) if active_table.subjects[i] == s]
            means.append(sum(vals) / len(vals))
        grand = sum(means) / len(means)
        sd = (sum((m - grand) ** 2 for m in means) / (len(means) - 1)) ** 0.5
        assert covs[fid] == pytest.approx(0.0 if grand == 0 else sd / abs(grand), rel=1e-9, abs=1e-12)


def test_cov_select_rule():
    f1, f2, f3 = FeatureId("H", "mu"), FeatureId("H", "max"), FeatureId("H", "min")
    covs = {f3: 2.0, f2: 5.0, f1: 10.0}
    res = cov_select(covs, CovConfig(30))
    assert res.kept == (f1, f2)
    assert cov_select(covs, CovConfig(90)).kept == (f1,)


def test_cov_select_orders_by_descending_cov_then_canonical():
    a, b, c = FeatureId("C", "mu"), FeatureId("H", "mu"), FeatureId("C", "max")
    res = cov_select({b: 1.0, c: 2.0, a: 1.0}, CovConfig(10))
    assert res.kept == (c, a, b)


# ---------------------------------------------------------------- selection


def test_sedentary_steps_have_no_significant_feature(sedentary_table):
    selector = FeatureSelector(sedentary_table)
    assert not [f for f in selector.ks_kept if f.biometric == "S"]
    with pytest.raises(EmptySelectionError, match="no significant feature"):
        selector.select(Approach.KS, Combo.parse("S"))


def test_ks_equals_ks_cov_below_min_cov(active_table):
    selector = FeatureSelector(active_table)
    ks = selector.select(Approach.KS, H)
    cov = selector.select(Approach.KS_COV, H, 10)
    if min(cov.per_feature_cov.values()) > 0.1 * max(cov.per_feature_cov.values()):
        assert set(ks.kept) == set(cov.kept)
    assert set(cov.kept) <= set(ks.kept)


@pytest.mark.parametrize("combo", ["H", "CM", "CSMH"])
def test_threshold_containment(active_table, combo):
    selector = FeatureSelector(active_table)
    kept = [set(selector.select(Approach.KS_COV, Combo.parse(combo), x).kept) for x in X_SIGMA_GRID]
    for wide, narrow in zip(kept, kept[1:]):
        assert narrow <= wide


def test_selection_within_candidates_and_deterministic(active_table):
    a = FeatureSelector(active_table).select(Approach.KS_COV, Combo.parse("CM"), 30)
    b = FeatureSelector(active_table).select(Approach.KS_COV, Combo.parse("CM"), 30)
    assert a == b
    assert set(a.kept) <= set(candidate_ids(Combo.parse("CM"), Period.NON_SEDENTARY))
    assert a.n == len(a.kept)


def test_module_select_matches_selector(active_table):
    via_selector = FeatureSelector(active_table).select(Approach.KS_COV, H, 30)
    direct = select(Approach.KS_COV, Period.NON_SEDENTARY, H, active_table, cov_cfg=CovConfig(30))
    assert direct.kept == via_selector.kept


def test_selection_json_round_trip(active_table):
    res = FeatureSelector(active_table).select(Approach.KS_COV, Combo.parse("CM"), 30)
    back = SelectionResult.from_json(res.to_json())
    assert (back.period, back.combo, back.approach, back.threshold, back.kept) == (
        res.period, res.combo, res.approach, res.threshold, res.kept)
    assert back.to_json() == res.to_json()
