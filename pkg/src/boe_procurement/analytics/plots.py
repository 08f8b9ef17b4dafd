"""Plot-data tables for external rendering.

Every kind is written as tab-separated text with one header line. All
value axes are log10 of euros.

``log_histogram``
    ``bin_lo  bin_hi  count``; bins are 0.25 wide in log10 units, aligned
    to multiples of 0.25 and spanning the data range. Input: amounts in
    cents.
``violin_pair`` / ``category_box``
    ``group  n  prob  log10_value`` quantile ladder (probabilities 0, 0.05,
    ..., 1, type-7 interpolation) for violins; ``group  n  min  q1
    median  q3  max  whisker_lo  whisker_hi`` for boxes (Tukey 1.5 IQR
    whiskers). Input: mapping of group name to amounts in cents.
``hexbin``
    ``x_lo  x_hi  y_lo  y_hi  count`` for non-empty cells of a square grid
    shared by both axes (``gridsize`` cells per side). Input: pair of
    ``(predicted, real)`` euro arrays; pairs with a non-positive member are
    dropped, since they have no logarithm.
``cluster_scatter``
    ``name  log_n  log_value  cluster``. Input: contractor profiles.
"""
from __future__ import annotations

import csv
import enum
import logging
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..errors import PreconditionError
from .clustering import ContractorProfile
from ._validation import check_money, check_real_1d

logger = logging.getLogger(__name__)

HIST_BIN_WIDTH = 0.25
LADDER = tuple(i / 20 for i in range(21))


class PlotKind(str, enum.Enum):
    LOG_HISTOGRAM = "log_histogram"
    VIOLIN_PAIR = "violin_pair"
    HEXBIN = "hexbin"
    CLUSTER_SCATTER = "cluster_scatter"
    CATEGORY_BOX = "category_box"


def _log_euros(cents) -> np.ndarray:
    xs = np.asarray(check_money(cents), dtype=float) / 100
    if (xs <= 0).any():
        raise PreconditionError("log scale needs strictly positive amounts")
    return np.log10(xs)


def log_histogram(cents) -> tuple[list, list]:
    logs = _log_euros(cents)
    # Round before flooring so 10^k lands in the bin that starts at k.
    idx = np.floor(np.round(logs / HIST_BIN_WIDTH, 9)).astype(int)
    lo, hi = int(idx.min()), int(idx.max())
    counts = np.bincount(idx - lo, minlength=hi - lo + 1)
    rows = [[round((lo + i) * HIST_BIN_WIDTH, 2), round((lo + i + 1) * HIST_BIN_WIDTH, 2), int(c)]
            for i, c in enumerate(counts)]
    return ["bin_lo", "bin_hi", "count"], rows


def _groups(inputs: Mapping[str, Sequence[int]]) -> list[tuple[str, np.ndarray]]:
    if not isinstance(inputs, Mapping) or not inputs:
        raise PreconditionError("expected a non-empty mapping of group name to amounts")
    return [(str(name), _log_euros(vals)) for name, vals in inputs.items()]


def violin_pair(inputs: Mapping[str, Sequence[int]]) -> tuple[list, list]:
    rows = []
    for name, logs in _groups(inputs):
        qs = np.quantile(logs, LADDER)
        rows += [[name, len(logs), p, round(float(q), 6)] for p, q in zip(LADDER, qs)]
    return ["group", "n", "prob", "log10_value"], rows


def category_box(inputs: Mapping[str, Sequence[int]]) -> tuple[list, list]:
    rows = []
    for name, logs in _groups(inputs):
        q1, med, q3 = np.quantile(logs, [0.25, 0.5, 0.75])
        reach = 1.5 * (q3 - q1)
        inside = logs[(logs >= q1 - reach) & (logs <= q3 + reach)]
        vals = [logs.min(), q1, med, q3, logs.max(), inside.min(), inside.max()]
        rows.append([name, len(logs)] + [round(float(v), 6) for v in vals])
    return ["group", "n", "min", "q1", "median", "q3", "max", "whisker_lo", "whisker_hi"], rows


def hexbin(inputs, gridsize: int = 30) -> tuple[list, list]:
    try:
        predicted, real = inputs
    except (TypeError, ValueError):
        raise PreconditionError("hexbin expects a (predicted, real) pair") from None
    x = check_real_1d(predicted, "predicted")
    y = check_real_1d(real, "real")
    if len(x) != len(y):
        raise PreconditionError("predicted and real differ in length")
    ok = (x > 0) & (y > 0)
    if not ok.all():
        logger.info("hexbin: dropped %d pairs with a non-positive value", int((~ok).sum()))
    if not ok.any():
        raise PreconditionError("no pair with both values positive")
    lx, ly = np.log10(x[ok]), np.log10(y[ok])
    lo = float(min(lx.min(), ly.min()))
    hi = float(max(lx.max(), ly.max()))
    width = (hi - lo) / gridsize or 1.0
    ix = np.minimum(((lx - lo) / width).astype(int), gridsize - 1)
    iy = np.minimum(((ly - lo) / width).astype(int), gridsize - 1)
    cells, counts = np.unique(np.stack([ix, iy], axis=1), axis=0, return_counts=True)
    rows = [[round(lo + i * width, 6), round(lo + (i + 1) * width, 6),
             round(lo + j * width, 6), round(lo + (j + 1) * width, 6), int(c)]
            for (i, j), c in zip(cells.tolist(), counts.tolist())]
    return ["x_lo", "x_hi", "y_lo", "y_hi", "count"], rows


def cluster_scatter(profiles: Sequence[ContractorProfile]) -> tuple[list, list]:
    rows = []
    for p in profiles:
        if p.cluster is None:
            raise PreconditionError(f"profile {p.name!r} has no cluster assignment")
        rows.append([p.name, round(p.log_n, 6), round(p.log_value, 6), p.cluster])
    return ["name", "log_n", "log_value", "cluster"], rows


_BUILDERS = {
    PlotKind.LOG_HISTOGRAM: log_histogram,
    PlotKind.VIOLIN_PAIR: violin_pair,
    PlotKind.HEXBIN: hexbin,
    PlotKind.CLUSTER_SCATTER: cluster_scatter,
    PlotKind.CATEGORY_BOX: category_box,
}


def plot_table(kind, inputs) -> tuple[list, list]:
    return _BUILDERS[PlotKind(kind)](inputs)


def emit_plot_data(kind, inputs, path) -> Path:
    """Write the table for ``kind`` to ``path`` and return the path."""
    header, rows = plot_table(kind, inputs)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def read_plot_data(path) -> tuple[list, list]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    return rows[0], rows[1:]


def modal_bin(rows) -> tuple[float, float]:
    """``(bin_lo, bin_hi)`` of the fullest histogram bin."""
    best = max(rows, key=lambda r: int(r[2]))
    return float(best[0]), float(best[1])


__all__ = [
    "PlotKind", "emit_plot_data", "plot_table", "read_plot_data", "modal_bin",
    "log_histogram", "violin_pair", "category_box", "hexbin", "cluster_scatter",
    "HIST_BIN_WIDTH", "LADDER",
]
