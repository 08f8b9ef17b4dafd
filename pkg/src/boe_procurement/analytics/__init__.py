"""Descriptive statistics, regression, clustering and hypothesis tests."""
from .clustering import (
    ContractorProfile,
    KMeansResult,
    LloydKMeans,
    build_contractor_profiles,
    elbow_point,
    elbow_scan,
    kmeans,
)
from .descriptive import (
    DescriptiveStats,
    Tier,
    TierThresholds,
    ValueTierer,
    aggregate_geography,
    category_descriptives,
    describe_values,
    tier_records,
    yearly_sector_counts,
)
from .plots import PlotKind, emit_plot_data
from .regression import OneHotOLSRegressor, RegressionFit, fit_regression
from .report import render_markdown, run_analysis
from .stattests import TestResult, levene_test, mann_whitney, shapiro_wilk

__all__ = [
    "ContractorProfile", "KMeansResult", "LloydKMeans", "build_contractor_profiles",
    "elbow_point", "elbow_scan", "kmeans",
    "DescriptiveStats", "Tier", "TierThresholds", "ValueTierer", "aggregate_geography",
    "category_descriptives", "describe_values", "tier_records", "yearly_sector_counts",
    "PlotKind", "emit_plot_data",
    "OneHotOLSRegressor", "RegressionFit", "fit_regression",
    "render_markdown", "run_analysis",
    "TestResult", "levene_test", "mann_whitney", "shapiro_wilk",
]
