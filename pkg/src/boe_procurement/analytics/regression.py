"""Least-squares regression of awarded value on one-hot categorical predictors."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ..errors import InsufficientDataError, PreconditionError
from ..records import ProcurementRecord
from ._validation import check_categorical, check_real_1d

logger = logging.getLogger(__name__)

PREDICTORS = (
    "Institucion",
    "Naturaleza",
    "Ambito_geografico",
    "Procedimiento",
    "Organismo_responsable",
    "Ano",
)
DEFAULT_SEED = 20250401
DEFAULT_SPLIT = 0.7


# -- metrics -------------------------------------------------------------------

def mae(y_true, y_pred) -> float:
    return float(np.mean(np.abs(np.asarray(y_true) - np.asarray(y_pred))))


def rmse(y_true, y_pred) -> float:
    return float(np.sqrt(np.mean((np.asarray(y_true) - np.asarray(y_pred)) ** 2)))


def r2(y_true, y_pred) -> float:
    """``1 - SSE/SST``; NaN when the targets are constant."""
    y_true = np.asarray(y_true, dtype=float)
    resid = y_true - np.asarray(y_pred, dtype=float)
    centred = y_true - y_true.mean()
    sst = float(centred @ centred)
    if sst == 0:
        return float("nan")
    return 1.0 - float(resid @ resid) / sst


def adjusted_r2(r2_value: float, n: int, p: int) -> float:
    if n - p - 1 <= 0:
        return float("nan")
    return 1.0 - (1.0 - r2_value) * (n - 1) / (n - p - 1)


# -- estimator -----------------------------------------------------------------

class OneHotOLSRegressor(RegressorMixin, BaseEstimator):
    """Ordinary least squares on reference-coded categorical columns.

    Each input column is expanded into indicator columns for every level
    but its first (the reference). ``categories`` fixes the level order per
    column; pass the levels of the full dataset to harmonise train and test
    splits. With ``"auto"`` the sorted levels seen in ``fit`` are used.

    Rank-deficient designs (nested or collinear factors) are solved with
    the minimum-norm pseudo-inverse solution; ``rank_`` and ``notes_``
    record when that happened.
    """

    def __init__(self, categories="auto", rcond=None):
        self.categories = categories
        self.rcond = rcond

    def _levels(self, X):
        if isinstance(self.categories, str):
            if self.categories != "auto":
                raise PreconditionError(f"categories must be 'auto' or a list, got {self.categories!r}")
            return [sorted(set(X[:, j])) for j in range(X.shape[1])]
        if len(self.categories) != X.shape[1]:
            raise PreconditionError(
                f"{len(self.categories)} category lists for {X.shape[1]} columns"
            )
        return [list(levels) for levels in self.categories]

    def _design(self, X) -> sp.csr_matrix:
        n = X.shape[0]
        rows, cols = [np.arange(n)], [np.zeros(n, dtype=np.int64)]
        for j, level_map in enumerate(self.level_maps_):
            idx = np.array([level_map.get(v, -1) for v in X[:, j]], dtype=np.int64)
            hit = idx >= 0
            rows.append(np.nonzero(hit)[0])
            cols.append(idx[hit])
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        return sp.csr_matrix((np.ones(len(r)), (r, c)), shape=(n, self.n_columns_ + 1))

    def fit(self, X, y):
        X = check_categorical(X)
        y = check_real_1d(y, "y")
        if len(y) != X.shape[0]:
            raise PreconditionError(f"X has {X.shape[0]} rows but y has {len(y)}")
        levels = self._levels(X)
        for j, lv in enumerate(levels):
            unseen = set(X[:, j]) - set(lv)
            if unseen:
                raise PreconditionError(f"column {j} has levels outside categories: {sorted(unseen)[:5]}")

        self.categories_ = levels
        self.level_maps_ = []
        col = 1
        for lv in levels:
            self.level_maps_.append({level: col + i for i, level in enumerate(lv[1:])})
            col += max(len(lv) - 1, 0)
        self.n_columns_ = col - 1
        self.n_features_in_ = X.shape[1]

        A = self._design(X)
        gram = (A.T @ A).toarray()
        rhs = A.T @ y
        beta, _, rank, _ = scipy.linalg.lstsq(gram, rhs, cond=self.rcond, lapack_driver="gelsd")
        self.rank_ = int(rank)
        self.intercept_ = float(beta[0])
        self.coef_ = np.asarray(beta[1:], dtype=float)
        self.notes_ = []
        if self.rank_ < self.n_columns_ + 1:
            msg = (f"design is rank deficient ({self.rank_} of {self.n_columns_ + 1} columns); "
                   "minimum-norm pseudo-inverse solution used")
            logger.info(msg)
            self.notes_.append(msg)
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_categorical(X)
        if X.shape[1] != self.n_features_in_:
            raise PreconditionError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        A = self._design(X)
        return A @ np.concatenate(([self.intercept_], self.coef_))

    def coefficient(self, column: int, level: str) -> float:
        """Coefficient of ``level`` in input column ``column`` (0 for the reference)."""
        check_is_fitted(self, "coef_")
        idx = self.level_maps_[column].get(level)
        return 0.0 if idx is None else float(self.coef_[idx - 1])


# -- workflow ------------------------------------------------------------------

@dataclass
class RegressionFit:
    predictors: tuple
    level_maps: list
    coefficients: np.ndarray
    intercept: float
    metrics: dict
    train_fraction: float
    n_train: int
    n_test: int
    seed: int
    y_test: np.ndarray = field(repr=False, default=None)
    y_pred: np.ndarray = field(repr=False, default=None)
    notes: list = field(default_factory=list)

    def top_coefficients(self, n: int = 10) -> list[tuple[str, str, float]]:
        named = []
        for pred, level_map in zip(self.predictors, self.level_maps):
            for level, idx in level_map.items():
                named.append((pred, level, float(self.coefficients[idx - 1])))
        return sorted(named, key=lambda t: -abs(t[2]))[:n]


def predictor_table(records: Sequence[ProcurementRecord], predictors: Sequence[str]) -> np.ndarray:
    rows = []
    for r in records:
        row = []
        for p in predictors:
            v = r.column(p)
            row.append("NA" if v is None or v == "" else str(getattr(v, "value", v)))
        rows.append(row)
    return np.array(rows, dtype=object).reshape(len(records), len(predictors))


def regression_metrics(y_true, y_pred, n_predictor_columns: int) -> dict:
    value = r2(y_true, y_pred)
    return {
        "mae": mae(y_true, y_pred),
        "rmse": rmse(y_true, y_pred),
        "r2": value,
        "adj_r2": adjusted_r2(value, len(y_true), n_predictor_columns),
    }


def fit_regression(records: Sequence[ProcurementRecord], predictors: Sequence[str] = PREDICTORS,
                   split: float = DEFAULT_SPLIT, seed: int = DEFAULT_SEED) -> RegressionFit:
    """Fit on a seeded ``split`` share of the records and score on the rest.

    Target is the awarded value in euros. Factor levels come from the
    whole record set, so levels present only in the test rows still get a
    column (with a zero coefficient under the minimum-norm solution).
    """
    allowed = set(PREDICTORS)
    if not predictors or not set(predictors) <= allowed:
        raise PreconditionError(f"predictors must be a non-empty subset of {sorted(allowed)}")
    if not 0 < split < 1:
        raise PreconditionError("split must lie strictly between 0 and 1")
    records = [r for r in records if r.valor_oferta_adjudicada is not None]
    n = len(records)
    n_train = int(round(split * n))
    if n - n_train < 2:
        raise InsufficientDataError(f"test split would have {n - n_train} rows; need at least 2")
    if n_train < 1:
        raise InsufficientDataError("training split is empty")

    X = predictor_table(records, predictors)
    y = np.array([r.valor_oferta_adjudicada / 100 for r in records])
    order = np.random.default_rng(seed).permutation(n)
    train, test = order[:n_train], order[n_train:]

    categories = [sorted(set(X[:, j])) for j in range(X.shape[1])]
    est = OneHotOLSRegressor(categories=categories).fit(X[train], y[train])
    y_pred = est.predict(X[test])
    return RegressionFit(
        predictors=tuple(predictors),
        level_maps=est.level_maps_,
        coefficients=est.coef_,
        intercept=est.intercept_,
        metrics=regression_metrics(y[test], y_pred, est.n_columns_),
        train_fraction=split,
        n_train=len(train),
        n_test=len(test),
        seed=seed,
        y_test=y[test],
        y_pred=y_pred,
        notes=list(est.notes_),
    )
