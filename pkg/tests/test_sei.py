from dataclasses import replace

import numpy as np
import pytest

from socmob.errors import DataValidationError
from socmob.ingest import Dataset
from socmob.sei import (
    OccupationScore,
    SeiConfig,
    average_across_cohorts,
    cohort_stability,
    estimate_sei,
    fit_als,
    rescale_scores,
)

from . import oracles
from .conftest import make_record

AGES = [27, 31, 35, 38, 42, 44, 47, 51, 55, 58, 60, 29, 33, 40, 49]

# occupation -> (education years, income); income is deliberately not monotone in education
SEPARABLE = {12: (15, 9000.0), 21: (12, 12000.0), 35: (10, 4000.0), 43: (8, 3000.0), 61: (3, 1500.0), 81: (6, 2600.0)}


def heads_from(table, ages=AGES, jitter=None, income_is_education=False):
    recs = []
    i = 0
    for occ, (edu, inc) in table.items():
        for k, a in enumerate(ages):
            e = edu if jitter is None else edu + jitter[k % len(jitter)]
            y = float(e) if income_is_education else inc
            recs.append(make_record(f"p{i}", 2011 - a, occ=occ, edu=e, income=y, head=True))
            i += 1
    return recs


def arrays(recs):
    return ([r.age for r in recs], [r.education_years for r in recs],
            [r.income_proxy for r in recs], [r.occupation_code for r in recs])


def ordering(scores):
    return sorted(scores, key=lambda c: scores[c])


def test_rescale_examples():
    out = rescale_scores({1: 2.0, 2: 5.0, 3: 11.0})
    assert out[1] == 1.0 and out[3] == 80.0
    assert out[2] == pytest.approx(1 + 79 * 3 / 9)
    assert rescale_scores({7: 0.3}) == {7: 40.5}
    assert rescale_scores({1: 2.0, 2: 2.0}) == {1: 40.5, 2: 40.5}


def test_separable_matches_oracle():
    recs = heads_from(SEPARABLE)
    table = estimate_sei(recs, "t")
    assert table.converged and table.iterations <= 100
    trace = table.beta42_trace
    kept = trace[: table.best_iteration]
    assert all(b <= a + 1e-15 for a, b in zip(kept, kept[1:]))
    ref, ref_trace = oracles.als_scores(*arrays(recs))
    assert ordering(table.raw) == ordering(ref)
    for code in ref:
        assert table.raw[code] == pytest.approx(ref[code], abs=1e-8)
    assert list(trace) == pytest.approx(ref_trace, abs=1e-9)
    assert min(table.rescaled.values()) == 1.0 and max(table.rescaled.values()) == 80.0


def test_rerun_bit_identical():
    recs = heads_from(SEPARABLE, jitter=[-1, 0, 1])
    a = estimate_sei(recs, "t")
    b = estimate_sei(list(recs), "t")
    assert a == b


def test_income_equal_to_education_orders_by_education():
    recs = heads_from(SEPARABLE, jitter=[-1, 0, 1, 2], income_is_education=True)
    sei = estimate_sei(recs, "t")
    by_edu = sorted(SEPARABLE, key=lambda c: SEPARABLE[c][0])
    assert ordering(sei.raw) == by_edu


def test_affine_income_change_leaves_scores():
    recs = heads_from(SEPARABLE, jitter=[0, 1])
    shifted = heads_from({k: (e, 3 * i + 250) for k, (e, i) in SEPARABLE.items()}, jitter=[0, 1])
    a, b = estimate_sei(recs, "t"), estimate_sei(shifted, "t")
    for code in a.raw:
        assert a.raw[code] == pytest.approx(b.raw[code], abs=1e-9)


def test_small_cells_inherit_from_siblings():
    recs = heads_from(SEPARABLE)
    recs += [make_record("x1", 1970, occ=15, edu=9, income=100.0, head=True),
             make_record("x2", 1971, occ=15, edu=9, income=100.0, head=True),
             make_record("y1", 1970, occ=99, edu=1, income=100.0, head=True)]
    t = estimate_sei(recs, "t")
    assert t.scores[15].inherited and t.scores[15].n_heads == 2
    assert t.scores[15].raw == t.scores[12].raw  # only 12 shares leading digit 1
    assert 99 not in t.scores and t.unscored == (99,)
    assert t.score(99) is None


def test_heads_without_income_skipped():
    recs = heads_from(SEPARABLE)
    with_missing = recs + [make_record("n", 1970, occ=12, income=None, head=True)]
    assert estimate_sei(with_missing, "t") == estimate_sei(recs, "t")


def test_needs_two_occupations():
    recs = heads_from({12: (15, 9000.0)})
    with pytest.raises(DataValidationError):
        estimate_sei(recs, "t")
    with pytest.raises(DataValidationError):
        fit_als([1, 2, 3], [1, 2, 3], [3, 1, 2], [5, 5, 5])


def test_weighted_and_log_options_run():
    recs = heads_from(SEPARABLE, jitter=[0, 2])
    t = estimate_sei(recs, "t", SeiConfig(weighted=True, log_income=True))
    assert set(t.scores) == set(SEPARABLE)
    # unit weights reproduce the unweighted fit
    u = estimate_sei(recs, "t", SeiConfig(weighted=True))
    v = estimate_sei(recs, "t")
    for code in u.raw:
        assert u.raw[code] == pytest.approx(v.raw[code], abs=1e-10)


def test_config_from_dict():
    assert SeiConfig.from_dict({"min_cell_size": 3}).min_cell_size == 3
    with pytest.raises(ValueError):
        SeiConfig.from_dict({"bogus": 1})


def _table(cohort, scores):
    base = estimate_sei(heads_from(SEPARABLE), cohort)
    return replace(base, scores={c: OccupationScore(v, v, 10) for c, v in scores.items()})


def test_average_across_cohorts_brute_force():
    t1 = _table("a", {12: 80.0, 21: 40.0, 35: 1.0})
    t2 = _table("b", {12: 60.0, 35: 5.0, 43: 20.0})
    avg = average_across_cohorts([t1, t2])
    assert avg.scores == {12: 70.0, 21: 40.0, 35: 3.0, 43: 20.0}


def test_stability_rows():
    s = {12: 80.0, 21: 40.0, 35: 1.0, 43: 22.0}
    t1, t2 = _table("a", s), _table("b", s)
    t3 = _table("c", {k: -v for k, v in s.items()})
    rows = cohort_stability([t1, t2, t3])
    assert (rows[0].pearson, rows[0].spearman, rows[0].kendall) == (0.0, 0.0, 0.0)
    assert (rows[1].pearson, rows[1].spearman, rows[1].kendall) == pytest.approx((1, 1, 1))
    assert (rows[2].pearson, rows[2].spearman, rows[2].kendall) == pytest.approx((-1, -1, -1))
    assert rows[2].n_common == 4


def test_stability_needs_overlap():
    with pytest.raises(DataValidationError):
        cohort_stability([_table("a", {12: 1.0, 21: 2.0}), _table("b", {35: 1.0, 43: 2.0})])


def test_nss_heads_use_nss_age():
    r = make_record("n", 1950, source=Dataset.NSS43)
    assert r.age == 38


def test_random_fixture_matches_oracle():
    rng = np.random.default_rng(11)
    codes = [12, 21, 35, 43, 61, 81, 95]
    occ = rng.choice(codes, 300).tolist()
    age = rng.integers(25, 65, 300).tolist()
    edu = [int(codes.index(o) * 2 + rng.integers(0, 4)) for o in occ]
    inc = [float(500 * (1 + codes.index(o)) + 40 * e + rng.normal(0, 300)) for o, e in zip(occ, edu)]
    fit = fit_als(age, edu, inc, occ)
    ref, ref_trace = oracles.als_scores(age, edu, inc, occ)
    got = dict(zip(fit.codes.tolist(), fit.scores.tolist()))
    assert ordering(got) == ordering(ref)
    for c in ref:
        assert got[c] == pytest.approx(ref[c], abs=1e-8)
    assert fit.trace == pytest.approx(ref_trace, abs=1e-9)


def test_rescale_symmetric_example():
    assert rescale_scores({"A": -1.0, "B": 0.0, "C": 1.0}) == {"A": 1.0, "B": 40.5, "C": 80.0}


def test_two_occupations_high_scores_higher():
    t = estimate_sei(heads_from({61: (2, 900.0), 21: (14, 9000.0)}, jitter=[-1, 0, 1]), "t")
    assert t.raw[21] > t.raw[61] and t.rescaled == {21: 80.0, 61: 1.0}


def test_iteration_cap_reports_not_converged():
    recs = heads_from(SEPARABLE, jitter=[-2, 0, 1, 3])
    capped = estimate_sei(recs, "t", SeiConfig(max_iters=1))
    assert capped.iterations == 1 and not capped.converged
