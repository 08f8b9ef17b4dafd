"""Run every analysis over the analytical subset and render a markdown report."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..clean import CleaningReport
from ..errors import ProcurementError
from ..records import Naturaleza, ProcurementRecord
from . import plots
from .clustering import (
    DEFAULT_SEED,
    KMeansResult,
    assign_clusters,
    build_contractor_profiles,
    elbow_point,
    elbow_scan,
    kmeans,
)
from .descriptive import (
    aggregate_geography,
    awarded_values,
    category_descriptives,
    describe_values,
    quantile,
    round_half_up,
    tier_records,
    yearly_sector_counts,
)
from .regression import DEFAULT_SPLIT, PREDICTORS, fit_regression
from .stattests import levene_test, mann_whitney, shapiro_wilk

logger = logging.getLogger(__name__)

DEFAULT_GROUPS = (Naturaleza.OBRAS, Naturaleza.SERVICIOS)
CLUSTER_NAMES = ("High-value operators", "Standard operators", "Microoperators")


@dataclass
class ClusterSummary:
    cluster: int
    size: int
    median_contracts: Fraction
    median_value: int  # cents


@dataclass
class HypothesisTests:
    groups: tuple
    rank_sum: object
    shapiro: dict
    levene: object
    categories: dict


@dataclass
class AnalysisResults:
    n_records: int
    seed: int
    descriptive: object = None
    tiers: object = None
    geography: list = None
    sectors: object = None
    regression: object = None
    n_contractors_all: int = 0
    profiles: list = None
    clusters: Optional[KMeansResult] = None
    cluster_summary: list = None
    elbow: list = None
    elbow_k: Optional[int] = None
    tests: Optional[HypothesisTests] = None
    errors: dict = field(default_factory=dict)


def summarize_clusters(profiles, k: int) -> list[ClusterSummary]:
    out = []
    for c in range(k):
        members = [p for p in profiles if p.cluster == c]
        if not members:
            out.append(ClusterSummary(c, 0, Fraction(0), 0))
            continue
        counts = sorted(p.n_contracts for p in members)
        totals = sorted(p.total_value for p in members)
        out.append(ClusterSummary(c, len(members), quantile(counts, Fraction(1, 2)),
                                  round_half_up(quantile(totals, Fraction(1, 2)))))
    return out


def hypothesis_tests(records: Sequence[ProcurementRecord], groups=DEFAULT_GROUPS,
                     seed: int = DEFAULT_SEED) -> HypothesisTests:
    """Rank-sum test on awarded values plus the parametric assumption checks.

    Shapiro-Wilk and Levene run on log10 euros; the rank-sum statistic is
    invariant to that transform.
    """
    a_label, b_label = groups
    categories = category_descriptives(records, (a_label, b_label))
    a = awarded_values(records, a_label)
    b = awarded_values(records, b_label)
    log_a = np.log10(np.asarray(a, dtype=float) / 100)
    log_b = np.log10(np.asarray(b, dtype=float) / 100)
    shapiro = {}
    for label, logs in ((a_label, log_a), (b_label, log_b)):
        try:
            shapiro[label] = shapiro_wilk(logs, seed=seed)
        except ProcurementError as exc:
            shapiro[label] = exc
    try:
        levene = levene_test([log_a, log_b])
    except ProcurementError as exc:
        levene = exc
    return HypothesisTests((a_label, b_label), mann_whitney(a, b), shapiro, levene, categories)


def _attempt(results: AnalysisResults, name: str, fn):
    try:
        return fn()
    except (ProcurementError, ValueError) as exc:
        logger.warning("%s skipped: %s", name, exc)
        results.errors[name] = str(exc)
        return None


def run_analysis(records: Sequence[ProcurementRecord], *, seed: int = DEFAULT_SEED, k: int = 3,
                 split: float = DEFAULT_SPLIT, groups=DEFAULT_GROUPS,
                 k_range: Sequence[int] = tuple(range(1, 9)), n_init: int = 10) -> AnalysisResults:
    res = AnalysisResults(n_records=len(records), seed=seed)
    values = awarded_values(records)
    res.descriptive = _attempt(res, "descriptive", lambda: describe_values(values))
    res.tiers = _attempt(res, "tiers", lambda: tier_records(values))
    res.geography = aggregate_geography(records)
    res.sectors = yearly_sector_counts(records)
    res.regression = _attempt(res, "regression",
                              lambda: fit_regression(records, PREDICTORS, split=split, seed=seed))

    res.n_contractors_all = len(build_contractor_profiles(records, exclude_non_contractors=False))
    profiles = build_contractor_profiles(records)
    res.clusters = _attempt(res, "clusters", lambda: kmeans(profiles, k, seed=seed, n_init=n_init))
    if res.clusters is not None:
        res.profiles = assign_clusters(profiles, res.clusters.assignments)
        res.cluster_summary = summarize_clusters(res.profiles, k)
    ks = [kk for kk in k_range if kk <= len(profiles)]
    res.elbow = _attempt(res, "elbow", lambda: elbow_scan(profiles, ks, seed=seed, n_init=n_init))
    if res.elbow:
        res.elbow_k = _attempt(res, "elbow", lambda: elbow_point(res.elbow))
    res.tests = _attempt(res, "tests", lambda: hypothesis_tests(records, groups, seed))
    return res


def emit_all_plot_data(records, results: AnalysisResults, out_dir, tender_records=None) -> list[Path]:
    """Write every plot-data table that the available results support.

    ``tender_records`` supplies the estimated-vs-awarded pairs when
    ``records`` comes from a view without estimated values.
    """
    out_dir = Path(out_dir)
    written = []
    values = [v for v in awarded_values(records) if v > 0]

    def emit(kind, inputs, name):
        try:
            written.append(plots.emit_plot_data(kind, inputs, out_dir / name))
        except (ProcurementError, ValueError) as exc:
            logger.warning("plot data %s skipped: %s", name, exc)

    if values:
        emit("log_histogram", values, "awarded_log_histogram.tsv")
    pairs = [(r.valor_estimado_licitacion, r.valor_oferta_adjudicada)
             for r in (records if tender_records is None else tender_records)
             if r.valor_estimado_licitacion and r.valor_oferta_adjudicada]
    if pairs:
        emit("violin_pair", {"estimated": [e for e, _ in pairs], "awarded": [a for _, a in pairs]},
             "estimated_vs_awarded_violin.tsv")
    fit = results.regression
    if fit is not None:
        emit("hexbin", (fit.y_pred, fit.y_test), "regression_hexbin.tsv")
    if results.profiles:
        emit("cluster_scatter", results.profiles, "contractor_clusters.tsv")
    if results.tests is not None:
        a, b = results.tests.groups
        emit("category_box", {a.value: [v for v in awarded_values(records, a) if v > 0],
                              b.value: [v for v in awarded_values(records, b) if v > 0]},
             "category_box.tsv")
    return written


# -- rendering -------------------------------------------------------------------

def format_euros(cents) -> str:
    if cents is None:
        return "n/a"
    euros = round_half_up(Fraction(cents, 100))
    return f"{euros:,}"


def _num(x, digits=4) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "n/a"
    return f"{x:.{digits}g}"


def _pvalue(p: float) -> str:
    return "< 1e-300" if p == 0 else f"{p:.3g}"


def _table(header, rows) -> list[str]:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(str(c) for c in row) + " |" for row in rows]
    return lines


def render_markdown(results: AnalysisResults, cleaning: Optional[CleaningReport] = None,
                    subset_size: Optional[int] = None) -> str:
    out = ["# Procurement analysis report", ""]
    out.append(f"Records analysed: {results.n_records}. Seed: {results.seed}.")
    out.append("")

    if cleaning is not None:
        out += ["## Cleaning ledger", "", "```", cleaning.to_text(), "```", ""]
        if subset_size is not None:
            out += [f"Analytical subset: {subset_size} award records.", ""]

    out += ["## Awarded values", ""]
    d = results.descriptive
    if d is not None:
        out += _table(["Statistic", "EUR"], [
            ["N", d.n], ["Mean", format_euros(d.mean)], ["Median", format_euros(d.median)],
            ["Min", format_euros(d.min)], ["Max", format_euros(d.max)], ["Q1", format_euros(d.q1)], ["Q3", format_euros(d.q3)],
        ])
        out.append("")
    if results.tiers is not None:
        thresholds, tiers = results.tiers
        out += [f"Tiers by quartile (Q1 = {format_euros(thresholds.q1)} EUR, Q3 = {format_euros(thresholds.q3)} EUR):", ""]
        out += _table(["Tier", "N", "Median EUR"], [
            [t.value, s.n if s else 0, format_euros(s.median) if s else "n/a"] for t, s in tiers.items()
        ])
        out.append("")

    out += ["## Geographic scope (top 5)", ""]
    top = results.geography[:5]
    undefined = dict(results.geography).get("Sin definir")
    out += _table(["Scope", "Awards"], [[name, n] for name, n in top])
    if undefined is not None:
        out += ["", f"Sin definir: {undefined}"]
    out.append("")

    out += ["## Services and supplies share by year", ""]
    sec = results.sectors
    out += _table(["Year", "Share"], [[y, f"{sec.share[y]:.3f}"] for y in sec.years()])
    out.append("")

    out += ["## Linear regression", ""]
    fit = results.regression
    if fit is None:
        out += [f"Not available: {results.errors.get('regression')}", ""]
    else:
        m = fit.metrics
        out += [f"Predictors: {', '.join(fit.predictors)}. Train share {fit.train_fraction:g}, "
                f"{fit.n_train} train / {fit.n_test} test rows, seed {fit.seed}.", ""]
        out += _table(["Metric", "Value"], [
            ["MAE (EUR)", f"{m['mae']:,.0f}"], ["RMSE (EUR)", f"{m['rmse']:,.0f}"],
            ["R2", _num(m["r2"])], ["Adjusted R2", _num(m["adj_r2"])],
        ])
        out += [""] + [f"Note: {n}" for n in fit.notes]
        out.append("")

    out += ["## Contractor clusters", ""]
    out += [f"Contractors: {results.n_contractors_all} (all names), "
            f"{len(results.profiles or [])} after excluding non-contractors.", ""]
    if results.cluster_summary is None:
        out += [f"Not available: {results.errors.get('clusters')}", ""]
    else:
        names = CLUSTER_NAMES if len(results.cluster_summary) == 3 else ()
        out += _table(["Cluster", "Profile", "N", "Median contracts", "Median value EUR"], [
            [s.cluster + 1, names[s.cluster] if names else "", s.size,
             f"{float(s.median_contracts):g}", format_euros(s.median_value)]
            for s in results.cluster_summary
        ])
        out.append("")
    if results.elbow:
        out += ["Elbow scan (standardized inertia): "
                + ", ".join(f"k={k}: {v:.4g}" for k, v in results.elbow)]
        if results.elbow_k is not None:
            out.append(f"Largest second difference at k = {results.elbow_k}.")
        out.append("")

    out += ["## Category comparison", ""]
    t = results.tests
    if t is None:
        out += [f"Not available: {results.errors.get('tests')}", ""]
    else:
        out += _table(["Category", "N", "Median EUR", "Mean EUR", "Max EUR"], [
            [c.value, s.n, format_euros(s.median), format_euros(s.mean), format_euros(s.max)] for c, s in t.categories.items()
        ])
        out.append("")
        rs = t.rank_sum
        out.append(f"Wilcoxon rank-sum: W = {rs.statistic:,.1f}, p = {_pvalue(rs.p_value)} ({rs.notes}).")
        for label, r in t.shapiro.items():
            if isinstance(r, Exception):
                out.append(f"Shapiro-Wilk on log10 {label.value}: not available ({r}).")
            else:
                extra = f"; {r.notes}" if r.notes else ""
                out.append(f"Shapiro-Wilk on log10 {label.value}: W = {r.statistic:.4f}, "
                           f"p = {_pvalue(r.p_value)}{extra}.")
        lv = t.levene
        if isinstance(lv, Exception):
            out.append(f"Levene (median-centred) on log10 values: not available ({lv}).")
        else:
            out.append(f"Levene (median-centred) on log10 values: F = {lv.statistic:.2f}, "
                       f"df = ({lv.df[0]}, {lv.df[1]}), p = {_pvalue(lv.p_value)}.")
        out.append("")
    return "\n".join(out)


__all__ = [
    "AnalysisResults", "ClusterSummary", "HypothesisTests", "run_analysis", "render_markdown",
    "emit_all_plot_data", "hypothesis_tests", "summarize_clusters", "format_euros",
]
