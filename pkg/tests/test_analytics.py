import datetime as dt
import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from boe_procurement.analytics import (
    LloydKMeans,
    OneHotOLSRegressor,
    Tier,
    ValueTierer,
    aggregate_geography,
    build_contractor_profiles,
    category_descriptives,
    describe_values,
    elbow_point,
    elbow_scan,
    fit_regression,
    kmeans,
    levene_test,
    mann_whitney,
    shapiro_wilk,
    tier_records,
    yearly_sector_counts,
)
from boe_procurement.analytics.clustering import ContractorProfile, assign_clusters
from boe_procurement.analytics.plots import (
    PlotKind,
    emit_plot_data,
    hexbin,
    log_histogram,
    modal_bin,
    plot_table,
    read_plot_data,
)
from boe_procurement.analytics.regression import adjusted_r2, mae, r2, rmse
from boe_procurement.analytics.report import render_markdown, run_analysis
from boe_procurement.analytics.stattests import (
    mann_whitney_exact_p,
    shapiro_wilk_coefficients,
)
from boe_procurement.errors import (
    DegenerateError,
    EmptyDatasetError,
    InsufficientDataError,
    MissingCategoryError,
    PreconditionError,
    SampleSizeError,
)
from boe_procurement.records import Naturaleza

from conftest import make_record

EUR = 100


# -- oracles ------------------------------------------------------------------------------

def oracle_quantile(values, p):
    """Type-7 quantile straight from its definition, in exact arithmetic."""
    xs = sorted(values)
    h = Fraction(p) * (len(xs) - 1)
    lo = math.floor(h)
    hi = min(lo + 1, len(xs) - 1)
    return xs[lo] + (h - lo) * (xs[hi] - xs[lo])


def half_up(x):
    return math.floor(x + Fraction(1, 2))


def enumerate_mw_p(a, b):
    """Two-sided exact p by listing every assignment of ranks to group a."""
    m, n = len(a), len(b)
    ranks = {v: i + 1 for i, v in enumerate(sorted(a + b))}
    u_obs = sum(ranks[v] for v in a) - m * (m + 1) / 2
    us = [sum(c) - m * (m + 1) / 2 for c in itertools.combinations(range(1, m + n + 1), m)]
    lower = sum(u <= u_obs for u in us)
    upper = sum(u >= u_obs for u in us)
    return u_obs, min(1.0, 2 * min(lower, upper) / len(us))


def blobs(seed=7, per=40, sigma=0.1):
    rng = np.random.default_rng(seed)
    centers = np.array([[0.0, 0.0], [10 * sigma * 3, 0.0], [0.0, 10 * sigma * 3]])
    X = np.concatenate([c + rng.normal(0, sigma, size=(per, 2)) for c in centers])
    return X, np.repeat(np.arange(3), per)


# -- describe_values ------------------------------------------------------------------------

def test_describe_one_to_hundred():
    s = describe_values([i * EUR for i in range(1, 101)])
    assert (s.median, s.q1, s.q3) == (5050, 2575, 7525)
    assert s.mean == 5050 and s.min == 100 and s.max == 10000


def test_describe_single():
    s = describe_values([500])
    assert s.mean == s.median == s.min == s.max == s.q1 == s.q3 == 500


def test_describe_empty():
    with pytest.raises(EmptyDatasetError):
        describe_values([])


def test_describe_rejects_negative_and_float():
    with pytest.raises(PreconditionError):
        describe_values([-1])
    with pytest.raises(PreconditionError):
        describe_values([1.5])


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(0, 10**12), min_size=1, max_size=1000))
def test_describe_matches_sort_oracle(values):
    s = describe_values(values)
    assert s.n == len(values)
    assert s.min == min(values) and s.max == max(values)
    assert s.mean == half_up(Fraction(sum(values), len(values)))
    assert s.median == half_up(oracle_quantile(values, Fraction(1, 2)))
    assert s.q1 == half_up(oracle_quantile(values, Fraction(1, 4)))
    assert s.q3 == half_up(oracle_quantile(values, Fraction(3, 4)))


def test_quantile_agrees_with_numpy_default():
    rng = np.random.default_rng(1)
    xs = rng.integers(0, 10**6, 257).tolist()
    s = describe_values(xs)
    assert s.median == pytest.approx(np.quantile(xs, 0.5), abs=0.5)
    assert s.q3 == pytest.approx(np.quantile(xs, 0.75), abs=0.5)


# -- tiers ----------------------------------------------------------------------------------

def test_four_equal_values_are_standard():
    thresholds, stats = tier_records([700] * 4)
    assert stats[Tier.MICRO] is None and stats[Tier.MACRO] is None
    assert stats[Tier.STANDARD].n == 4


def test_tiers_one_to_twelve():
    values = list(range(1, 13))
    thresholds, stats = tier_records(values)
    q1 = oracle_quantile(values, Fraction(1, 4))
    q3 = oracle_quantile(values, Fraction(3, 4))
    assert stats[Tier.MICRO].n == sum(v < q1 for v in values) == 3
    assert stats[Tier.MACRO].n == sum(v > q3 for v in values) == 3
    assert stats[Tier.STANDARD].n == 6


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 10**6), min_size=4, max_size=200))
def test_tiers_partition(values):
    _, stats = tier_records(values)
    assert sum(s.n for s in stats.values() if s) == len(values)


def test_tier_needs_four():
    with pytest.raises(PreconditionError):
        tier_records([1, 2, 3])


def test_value_tierer_estimator():
    t = ValueTierer().fit([100, 200, 300, 400, 500])
    assert t.transform([50, 300, 900]).tolist() == ["Micro", "Standard", "Macro"]


# -- geography and sectors ------------------------------------------------------------------------

def test_geography_all_madrid():
    recs = [make_record(ambito_geografico="COMUNIDAD DE MADRID")] * 3
    assert aggregate_geography(recs) == [("COMUNIDAD DE MADRID", 3)]


def test_geography_undefined_bucket_and_ties():
    recs = [make_record(ambito_geografico=None), make_record(ambito_geografico="sin definir"),
            make_record(ambito_geografico="B"), make_record(ambito_geografico="A")]
    assert aggregate_geography(recs) == [("Sin definir", 2), ("A", 1), ("B", 1)]


def test_sector_counts():
    sc = yearly_sector_counts([make_record(fecha=dt.date(2020, 3, 1), naturaleza=Naturaleza.OBRAS)])
    assert sc.counts == {(2020, Naturaleza.OBRAS): 1}
    assert sc.share == {2020: 0.0}
    empty = yearly_sector_counts([])
    assert empty.counts == {} and empty.years() == []


def test_category_descriptives():
    recs = [make_record(naturaleza=Naturaleza.OBRAS, valor_oferta_adjudicada=300000),
            make_record(naturaleza=Naturaleza.SERVICIOS, valor_oferta_adjudicada=200000),
            make_record(naturaleza=Naturaleza.SERVICIOS, valor_oferta_adjudicada=400000)]
    out = category_descriptives(recs)
    works = out[Naturaleza.OBRAS]
    assert works.mean == works.median == works.max == 300000
    assert out[Naturaleza.SERVICIOS].median == 300000
    with pytest.raises(MissingCategoryError):
        category_descriptives(recs[:1])


# -- regression -------------------------------------------------------------------------------

def test_metric_definitions():
    y = np.array([1.0, 2.0, 3.0, 6.0])
    assert r2(y, np.full(4, y.mean())) == pytest.approx(0.0, abs=1e-12)
    assert r2(y, y) == 1.0
    assert mae(y, y + 1) == rmse(y, y + 1) == 1.0
    assert math.isnan(r2([2.0, 2.0], [1.0, 3.0]))
    assert adjusted_r2(0.5, 10, 1) < 0.5


@settings(max_examples=1000, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6)), min_size=1, max_size=30))
def test_mae_le_rmse(pairs):
    y, p = np.array(pairs).T
    assert mae(y, p) <= rmse(y, p) * (1 + 1e-12) + 1e-9


def test_estimator_recovers_exact_structure():
    X = np.array([["A"], ["B"], ["A"], ["B"], ["C"], ["C"]], dtype=object)
    y = np.array([100.0, 150.0, 100.0, 150.0, 80.0, 80.0])
    est = OneHotOLSRegressor().fit(X, y)
    assert est.intercept_ == pytest.approx(100, abs=1e-6)
    assert est.coefficient(0, "B") == pytest.approx(50, abs=1e-6)
    assert est.coefficient(0, "C") == pytest.approx(-20, abs=1e-6)
    assert est.coefficient(0, "A") == 0.0
    assert est.score(X, y) == pytest.approx(1.0)


def test_rank_deficiency_noted():
    # Second column duplicates the first, so the design is collinear.
    X = np.array([["A", "x"], ["B", "y"], ["A", "x"], ["B", "y"]], dtype=object)
    est = OneHotOLSRegressor().fit(X, np.array([1.0, 3.0, 1.0, 3.0]))
    assert est.notes_ and est.rank_ == 2
    assert est.predict(X) == pytest.approx([1, 3, 1, 3])


def synthetic_records(n=200, seed=3):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        nat = Naturaleza.OBRAS if rng.random() < 0.5 else Naturaleza.SERVICIOS
        value = 100 + 50 * (nat is Naturaleza.SERVICIOS)
        out.append(make_record(naturaleza=nat, valor_oferta_adjudicada=value * EUR * 1000,
                               expediente=f"E{i}"))
    return out


def test_fit_regression_noise_free():
    fit = fit_regression(synthetic_records(), predictors=["Naturaleza"], split=0.7, seed=1)
    (coef,) = fit.coefficients
    assert coef == pytest.approx(50_000, abs=1e-6)
    assert fit.metrics["r2"] == pytest.approx(1.0, abs=1e-12)
    assert fit.metrics["mae"] <= fit.metrics["rmse"]
    assert (fit.n_train, fit.n_test) == (140, 60)


def test_fit_regression_deterministic_and_harmonised():
    recs = synthetic_records(50)
    a = fit_regression(recs, predictors=["Naturaleza", "Ano"], seed=9)
    b = fit_regression(recs, predictors=["Naturaleza", "Ano"], seed=9)
    assert np.array_equal(a.coefficients, b.coefficients) and a.metrics == b.metrics
    assert list(a.level_maps[0]) == ["Servicios"]


def test_adjusted_r2_not_above_r2():
    rng = np.random.default_rng(0)
    recs = [make_record(naturaleza=rng.choice(list(Naturaleza)),
                        valor_oferta_adjudicada=int(rng.integers(10**5, 10**9))) for _ in range(300)]
    fit = fit_regression(recs, predictors=["Naturaleza"])
    assert fit.metrics["adj_r2"] <= fit.metrics["r2"] <= 1


def test_fit_regression_preconditions():
    recs = synthetic_records(10)
    with pytest.raises(InsufficientDataError):
        fit_regression(recs[:3])
    with pytest.raises(PreconditionError):
        fit_regression(recs, predictors=["Objeto"])
    with pytest.raises(PreconditionError):
        fit_regression(recs, split=1.0)


# -- clustering -------------------------------------------------------------------------------

def test_profiles_aggregate_by_name():
    recs = [make_record(nombre_adjudicatario="X SA", valor_oferta_adjudicada=100000)] * 2
    (p,) = build_contractor_profiles(recs)
    assert (p.n_contracts, p.total_value) == (2, 200000)


def test_profiles_exclude_flagged():
    from dataclasses import replace
    recs = [replace(make_record(nombre_adjudicatario="T"), non_contractor=True), make_record()]
    assert [p.name for p in build_contractor_profiles(recs)] == ["ACME SL"]
    assert len(build_contractor_profiles(recs, exclude_non_contractors=False)) == 2


def test_log_value():
    assert ContractorProfile("A", 1, 1_000_000).log_value == 4.0
    assert ContractorProfile("A", 100, 1_000_000).log_n == 2.0


def adjusted_rand(labels_a, labels_b):
    from sklearn.metrics import adjusted_rand_score
    return adjusted_rand_score(labels_a, labels_b)


def test_planted_blobs_recovered():
    X, truth = blobs()
    res = kmeans(X, 3, seed=11)
    assert adjusted_rand(truth, res.assignments) == 1.0
    hist = res.inertia_history
    assert all(b <= a + 1e-9 for a, b in zip(hist, hist[1:]))


def test_relabel_by_descending_value():
    X, _ = blobs()
    res = kmeans(X, 3, seed=2)
    assert list(res.centroids[:, -1]) == sorted(res.centroids[:, -1], reverse=True)


def test_k_equals_n_and_k_one():
    X, _ = blobs(per=5)
    assert kmeans(X, len(X), seed=1).inertia == pytest.approx(0.0, abs=1e-12)
    assert kmeans(X, 1, seed=1).inertia == pytest.approx(2 * len(X), rel=1e-12)


def test_elbow_on_blobs():
    X, _ = blobs()
    scan = elbow_scan(X, list(range(1, 9)), seed=5)
    inertia = [v for _, v in scan]
    assert inertia[1] <= inertia[0]
    assert elbow_point(scan) == 3
    with pytest.raises(PreconditionError):
        elbow_point(scan[:2])


def test_kmeans_preconditions():
    with pytest.raises(PreconditionError):
        kmeans(np.zeros((2, 2)), 3)
    with pytest.raises(PreconditionError):
        LloydKMeans(n_clusters=0).fit(np.zeros((2, 2)))


def test_kmeans_on_profiles_is_seeded():
    profiles = [ContractorProfile(f"C{i}", 1 + i % 5, 10**5 * (1 + i)) for i in range(30)]
    a = kmeans(profiles, 3, seed=4)
    b = kmeans(profiles, 3, seed=4)
    assert np.array_equal(a.assignments, b.assignments)
    assigned = assign_clusters(profiles, a.assignments)
    assert {p.cluster for p in assigned} == {0, 1, 2}


# -- Mann-Whitney -----------------------------------------------------------------------------

def test_mw_two_vs_two():
    res = mann_whitney([1, 2], [3, 4])
    assert res.statistic == 0 and res.p_value == pytest.approx(1 / 3, abs=1e-15)


def test_mw_identical_samples():
    res = mann_whitney([1, 2, 3], [1, 2, 3])
    assert res.statistic == 4.5 and res.p_value == 1.0


def test_mw_degenerate():
    res = mann_whitney([5, 5], [5])
    assert res.p_value == 1.0 and "degenerate" in res.notes


def test_mw_exact_refuses_ties():
    with pytest.raises(PreconditionError):
        mann_whitney([1, 2], [2, 3], method="exact")


@pytest.mark.parametrize("m, n", [(m, n) for m in range(1, 10) for n in range(1, 10) if m + n <= 10])
def test_mw_exact_matches_enumeration(m, n):
    rng = np.random.default_rng(m * 100 + n)
    pooled = rng.permutation(m + n).tolist()
    for shift in range(3):
        pooled = pooled[1:] + pooled[:1]
        a, b = pooled[:m], pooled[m:]
        u, p = enumerate_mw_p(a, b)
        res = mann_whitney(a, b)
        assert res.statistic == u
        assert abs(res.p_value - p) <= 1e-12


def test_mw_matches_scipy_exact_and_normal():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=5).tolist(), rng.normal(1, 1, size=6).tolist()
    ref = scipy.stats.mannwhitneyu(a, b, method="exact")
    assert mann_whitney(a, b).p_value == pytest.approx(ref.pvalue, abs=1e-12)
    a, b = rng.integers(0, 20, 40).tolist(), rng.integers(5, 25, 50).tolist()
    ref = scipy.stats.mannwhitneyu(a, b, method="asymptotic", use_continuity=True)
    res = mann_whitney(a, b)
    assert res.statistic == ref.statistic
    assert res.p_value == pytest.approx(ref.pvalue, rel=1e-9)


def test_mw_symmetry_and_scale_invariance():
    rng = np.random.default_rng(2025)
    for _ in range(1000):
        m, n = int(rng.integers(1, 15)), int(rng.integers(1, 15))
        a = rng.integers(0, 30, m).astype(float)
        b = rng.integers(0, 30, n).astype(float)
        ab, ba = mann_whitney(a, b), mann_whitney(b, a)
        assert ab.statistic + ba.statistic == m * n
        assert ab.p_value == pytest.approx(ba.p_value, abs=1e-12)
        c = float(rng.uniform(0.01, 1000))
        scaled = mann_whitney(a * c, b * c)
        assert scaled.statistic == ab.statistic
        assert scaled.p_value == pytest.approx(ab.p_value, abs=1e-12)


def test_mw_exact_and_normal_agree_at_twelve():
    rng = np.random.default_rng(12)
    for _ in range(50):
        pooled = rng.permutation(24).astype(float)
        a, b = pooled[:12], pooled[12:]
        exact = mann_whitney(a, b, method="exact").p_value
        normal = mann_whitney(a, b, method="normal").p_value
        assert abs(exact - normal) <= 0.05


def test_mw_exact_p_bounds():
    for u in range(0, 26):
        assert 0 < mann_whitney_exact_p(u, 5, 5) <= 1


# -- Shapiro-Wilk -------------------------------------------------------------------------------

def normal_scores(n):
    return scipy.stats.norm.ppf([(i - 3 / 8) / (n + 1 / 4) for i in range(1, n + 1)])


def test_shapiro_normal_scores():
    x = normal_scores(50)
    res = shapiro_wilk(x)
    assert res.statistic >= 0.99
    a = shapiro_wilk_coefficients(50)
    direct = (a @ np.sort(x)) ** 2 / ((x - x.mean()) ** 2).sum()
    assert res.statistic == pytest.approx(direct, abs=1e-12)


def test_shapiro_uniform_rejects():
    x = np.random.default_rng(12345).uniform(0, 1, 500)
    assert shapiro_wilk(x).p_value < 0.01


@pytest.mark.parametrize("n", [3, 4, 7, 11, 12, 30, 200, 2000])
def test_shapiro_matches_scipy(n):
    x = np.random.default_rng(n).lognormal(size=n)
    ref = scipy.stats.shapiro(x)
    res = shapiro_wilk(x)
    assert res.statistic == pytest.approx(ref.statistic, abs=1e-4)
    assert res.p_value == pytest.approx(ref.pvalue, abs=1e-3)


def test_shapiro_small_and_degenerate():
    with pytest.raises(SampleSizeError):
        shapiro_wilk([1.0, 2.0])
    with pytest.raises(DegenerateError):
        shapiro_wilk([1.0, 1.0, 1.0])


def test_shapiro_subsamples_large_input():
    x = np.random.default_rng(0).normal(size=6000)
    res = shapiro_wilk(x, seed=1)
    assert res.sizes == (6000,) and "5000" in res.notes
    assert shapiro_wilk(x, seed=1) == res


# -- Levene -------------------------------------------------------------------------------------

def test_levene_hand_example():
    # Medians are both 2.5. Deviations: {1.5,.5,.5,1.5} (mean 1) and {1.5}*4 (mean 1.5).
    # Between SS = 4*.25^2*2 = 0.5 on 1 df; within SS = 1 on 6 df; F = 0.5 / (1/6) = 3.
    res = levene_test([[1, 2, 3, 4], [1, 1, 4, 4]])
    assert abs(res.statistic - 3.0) <= 1e-9
    assert res.df == (1, 6)
    assert res.p_value == pytest.approx(scipy.stats.levene([1, 2, 3, 4], [1, 1, 4, 4]).pvalue, abs=1e-12)


def test_levene_identical_groups():
    res = levene_test([[1, 5, 2, 8], [8, 2, 5, 1]])
    assert res.statistic == 0.0 and res.p_value == 1.0


def test_levene_matches_scipy():
    rng = np.random.default_rng(8)
    groups = [rng.normal(0, 1, 30), rng.normal(0, 3, 45), rng.normal(1, 2, 12)]
    ref = scipy.stats.levene(*groups, center="median")
    res = levene_test(groups)
    assert res.statistic == pytest.approx(ref.statistic, rel=1e-10)
    assert res.p_value == pytest.approx(ref.pvalue, rel=1e-8)
    assert res.df == (2, 84)


def test_levene_errors():
    with pytest.raises(PreconditionError):
        levene_test([[1, 2, 3]])
    with pytest.raises(PreconditionError):
        levene_test([[1], [2, 3]])
    with pytest.raises(DegenerateError):
        levene_test([[1, 1], [2, 2]])


# -- plot data ----------------------------------------------------------------------------------

def test_histogram_single_value():
    _, rows = log_histogram([12345 * EUR])
    assert sum(r[2] > 0 for r in rows) == 1


def test_histogram_decade_edges():
    _, rows = log_histogram([10**5 * EUR, 5 * 10**5 * EUR, 9 * 10**5 * EUR, 10**6 * EUR - 1])
    assert rows[0][:2] == [5.0, 5.25]
    assert sum(r[2] for r in rows) == 4


def test_hexbin_diagonal():
    y = np.random.default_rng(0).lognormal(12, 2, 500)
    _, rows = hexbin((y, y))
    assert all((r[0], r[1]) == (r[2], r[3]) for r in rows)
    assert sum(r[4] for r in rows) == 500


def test_emit_and_read(tmp_path):
    path = emit_plot_data(PlotKind.LOG_HISTOGRAM, [10**5 * EUR, 2 * 10**5 * EUR, 3 * 10**5 * EUR],
                          tmp_path / "h.tsv")
    header, rows = read_plot_data(path)
    assert header == ["bin_lo", "bin_hi", "count"]
    assert modal_bin(rows) == (5.25, 5.5)


def test_plot_kinds_dispatch():
    header, rows = plot_table("violin_pair", {"Obras": [100000, 200000], "Servicios": [300000, 400000]})
    assert header[0] == "group" and len(rows) == 42
    header, rows = plot_table("category_box", {"Obras": [100000, 200000, 300000]})
    assert rows[0][4] == pytest.approx(math.log10(2000))
    profiles = assign_clusters([ContractorProfile("A", 1, 10**5)], [0])
    assert plot_table("cluster_scatter", profiles)[1] == [["A", 0.0, 3.0, 0]]
    with pytest.raises(PreconditionError):
        log_histogram([0])


# -- end-to-end analysis -----------------------------------------------------------------------

def test_run_analysis_and_render():
    rng = np.random.default_rng(1)
    recs = []
    for i in range(120):
        nat = Naturaleza.OBRAS if i % 3 == 0 else Naturaleza.SERVICIOS
        recs.append(make_record(naturaleza=nat, expediente=f"E{i}",
                                nombre_adjudicatario=f"C{i % 40}",
                                valor_oferta_adjudicada=int(rng.lognormal(12, 1.5)) * EUR + 100000,
                                ambito_geografico=["Madrid", "Andalucía", None][i % 3]))
    res = run_analysis(recs, seed=3, n_init=2)
    assert not res.errors
    assert res.tests.rank_sum.sizes == (40, 80)
    assert [c.cluster for c in res.cluster_summary] == [0, 1, 2]
    text = render_markdown(res)
    assert "Wilcoxon rank-sum" in text and "Levene" in text
    assert render_markdown(run_analysis(recs, seed=3, n_init=2)) == text
