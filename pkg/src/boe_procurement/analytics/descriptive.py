"""Exploratory statistics over awarded values.

Quantiles use linear interpolation between order statistics (Hyndman and
Fan type 7, the default in R and numpy), evaluated in exact rational
arithmetic over integer cents.
"""
from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ..errors import EmptyDatasetError, MissingCategoryError, PreconditionError
from ..records import Naturaleza, ProcurementRecord
from ._validation import check_money

UNDEFINED_SCOPE = "Sin definir"


def quantile(sorted_values: Sequence[int], p) -> Fraction:
    """Type-7 quantile of already sorted values, exact."""
    n = len(sorted_values)
    if n == 0:
        raise EmptyDatasetError("no values")
    h = Fraction(p) * (n - 1)
    j = h.numerator // h.denominator
    lo = sorted_values[j]
    if j + 1 >= n:
        return Fraction(lo)
    return lo + (h - j) * (sorted_values[j + 1] - lo)


def round_half_up(x: Fraction) -> int:
    return (x + Fraction(1, 2)).__floor__()


@dataclass(frozen=True)
class DescriptiveStats:
    """Summary of a set of amounts, all in integer cents."""

    n: int
    mean: int
    median: int
    min: int
    max: int
    q1: int
    q3: int

    def euros(self, name: str) -> float:
        return getattr(self, name) / 100


def describe_values(values: Iterable[int]) -> DescriptiveStats:
    xs = sorted(check_money(values))
    n = len(xs)
    return DescriptiveStats(
        n=n,
        mean=round_half_up(Fraction(sum(xs), n)),
        median=round_half_up(quantile(xs, Fraction(1, 2))),
        min=xs[0],
        max=xs[-1],
        q1=round_half_up(quantile(xs, Fraction(1, 4))),
        q3=round_half_up(quantile(xs, Fraction(3, 4))),
    )


class Tier(str, enum.Enum):
    MICRO = "Micro"
    STANDARD = "Standard"
    MACRO = "Macro"


@dataclass(frozen=True)
class TierThresholds:
    """Quartile cut points, kept exact so ties at the boundary classify correctly."""

    q1: Fraction
    q3: Fraction

    def tier_of(self, value) -> Tier:
        if value < self.q1:
            return Tier.MICRO
        if value > self.q3:
            return Tier.MACRO
        return Tier.STANDARD


def tier_thresholds(values: Iterable[int]) -> TierThresholds:
    xs = sorted(check_money(values))
    return TierThresholds(quantile(xs, Fraction(1, 4)), quantile(xs, Fraction(3, 4)))


def tier_records(values: Iterable[int]) -> tuple[TierThresholds, dict]:
    """Split values into micro / standard / macro tiers by quartile.

    Returns the thresholds and, per tier, its :class:`DescriptiveStats`
    (``None`` for an empty tier).
    """
    xs = check_money(values)
    if len(xs) < 4:
        raise PreconditionError("tiering needs at least 4 values")
    thresholds = tier_thresholds(xs)
    groups = {tier: [] for tier in Tier}
    for v in xs:
        groups[thresholds.tier_of(v)].append(v)
    return thresholds, {tier: describe_values(g) if g else None for tier, g in groups.items()}


class ValueTierer(TransformerMixin, BaseEstimator):
    """Learns quartile tiers from training amounts and labels new ones.

    >>> ValueTierer().fit([100, 200, 300, 400, 500]).transform([50, 300, 900]).tolist()
    ['Micro', 'Standard', 'Macro']
    """

    def fit(self, X, y=None):
        values = np.asarray(X).ravel().tolist()
        self.thresholds_ = tier_thresholds(values)
        self.n_features_in_ = 1
        return self

    def transform(self, X):
        check_is_fitted(self, "thresholds_")
        return np.array([self.thresholds_.tier_of(v).value for v in np.asarray(X).ravel().tolist()],
                        dtype=object)


def aggregate_geography(records: Iterable[ProcurementRecord]) -> list[tuple[str, int]]:
    """Contract count per geographic scope, largest first (ties alphabetical)."""
    counts = Counter()
    for r in records:
        scope = r.ambito_geografico
        if not scope or scope.strip().upper() == UNDEFINED_SCOPE.upper():
            scope = UNDEFINED_SCOPE
        counts[scope] += 1
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))


@dataclass(frozen=True)
class SectorCounts:
    counts: dict      # (year, Naturaleza) -> int
    share: dict       # year -> share of Services + Supplies

    def years(self) -> list[int]:
        return sorted(self.share)


def yearly_sector_counts(records: Iterable[ProcurementRecord]) -> SectorCounts:
    counts = Counter()
    per_year = Counter()
    for r in records:
        counts[(r.year, r.naturaleza)] += 1
        per_year[r.year] += 1
    share = {
        year: (counts[(year, Naturaleza.SERVICIOS)] + counts[(year, Naturaleza.SUMINISTROS)]) / total
        for year, total in per_year.items()
    }
    return SectorCounts(dict(counts), share)


def category_descriptives(records: Iterable[ProcurementRecord],
                          categories: Sequence[Naturaleza] = (Naturaleza.OBRAS, Naturaleza.SERVICIOS)
                          ) -> dict:
    groups = {c: [] for c in categories}
    for r in records:
        if r.naturaleza in groups and r.valor_oferta_adjudicada is not None:
            groups[r.naturaleza].append(r.valor_oferta_adjudicada)
    for cat, vals in groups.items():
        if not vals:
            raise MissingCategoryError(f"no awarded values for {cat.value}")
    return {cat: describe_values(vals) for cat, vals in groups.items()}


def awarded_values(records: Iterable[ProcurementRecord], naturaleza: Optional[Naturaleza] = None) -> list[int]:
    return [
        r.valor_oferta_adjudicada for r in records
        if r.valor_oferta_adjudicada is not None
        and (naturaleza is None or r.naturaleza is naturaleza)
    ]
