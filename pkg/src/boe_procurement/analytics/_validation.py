"""Input checks shared by the estimators and statistical routines."""
from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_array

from ..errors import EmptyDatasetError, PreconditionError


def check_money(values, name="values") -> list[int]:
    """Non-empty sequence of non-negative integer cents."""
    out = []
    for v in values:
        if isinstance(v, bool) or not isinstance(v, numbers.Integral):
            raise PreconditionError(f"{name} must hold integer cents, got {v!r}")
        if v < 0:
            raise PreconditionError(f"{name} must be non-negative, got {v}")
        out.append(int(v))
    if not out:
        raise EmptyDatasetError(f"{name} is empty")
    return out


def check_real_1d(values, name="values", min_size=1) -> np.ndarray:
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size < min_size:
        raise PreconditionError(f"{name} needs at least {min_size} values, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise PreconditionError(f"{name} contains NaN or infinite values")
    return arr


def check_categorical(X) -> np.ndarray:
    """2-D array of category labels (as strings); missing values become ``"NA"``."""
    arr = np.asarray(X, dtype=object)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise PreconditionError(f"expected a 2-D table of categories, got {arr.ndim}-D")
    if arr.shape[0] == 0:
        raise EmptyDatasetError("no rows")
    out = np.empty(arr.shape, dtype=object)
    for idx, v in np.ndenumerate(arr):
        out[idx] = "NA" if v is None else str(v)
    return out


def check_features(X, min_samples=1) -> np.ndarray:
    return check_array(X, dtype=np.float64, ensure_min_samples=min_samples)
