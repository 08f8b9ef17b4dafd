"""Contractor profiles and K-Means (Lloyd iterations, k-means++ seeding)."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from ..errors import PreconditionError
from ..records import ProcurementRecord
from ._validation import check_features

DEFAULT_SEED = 20250401


@dataclass(frozen=True)
class ContractorProfile:
    name: str
    n_contracts: int
    total_value: int  # cents
    cluster: Optional[int] = None

    @property
    def log_n(self) -> float:
        return math.log10(self.n_contracts)

    @property
    def log_value(self) -> float:
        return math.log10(self.total_value / 100)


def build_contractor_profiles(records: Iterable[ProcurementRecord],
                              exclude_non_contractors: bool = True) -> list[ContractorProfile]:
    """Aggregate awards per contractor name, sorted by name."""
    counts = defaultdict(int)
    totals = defaultdict(int)
    for r in records:
        if not r.nombre_adjudicatario or r.valor_oferta_adjudicada is None:
            continue
        if exclude_non_contractors and r.non_contractor:
            continue
        counts[r.nombre_adjudicatario] += 1
        totals[r.nombre_adjudicatario] += r.valor_oferta_adjudicada
    return [ContractorProfile(name, counts[name], totals[name]) for name in sorted(counts)]


def profile_features(profiles: Sequence[ContractorProfile]) -> np.ndarray:
    return np.array([[p.log_n, p.log_value] for p in profiles], dtype=float).reshape(-1, 2)


def standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Zero mean, unit (population) variance per column; constant columns are only centred."""
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    return (X - mean) / scale, mean, scale


def _sq_dist(X, centers):
    return ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def _kmeans_pp(X, k, rng):
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers[i] = X[idx]
        d2 = np.minimum(d2, ((X - centers[i]) ** 2).sum(axis=1))
    return centers


def _lloyd(X, centers, max_iter):
    d2 = _sq_dist(X, centers)
    labels = d2.argmin(axis=1)
    history = [float(d2[np.arange(len(X)), labels].sum())]
    n_iter = 0
    reseeds = 0
    for n_iter in range(1, max_iter + 1):
        centers = centers.copy()
        for c in range(len(centers)):
            members = labels == c
            if members.any():
                centers[c] = X[members].mean(axis=0)
        empty = [c for c in range(len(centers)) if not (labels == c).any()]
        for c in empty:
            # Reseed at the point farthest from its own centroid.
            own = ((X - centers[labels]) ** 2).sum(axis=1)
            far = int(own.argmax())
            centers[c] = X[far]
            labels = labels.copy()
            labels[far] = c
            reseeds += 1
        d2 = _sq_dist(X, centers)
        new_labels = d2.argmin(axis=1)
        history.append(float(d2[np.arange(len(X)), new_labels].sum()))
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    return labels, centers, history, n_iter, reseeds


class LloydKMeans(ClusterMixin, BaseEstimator):
    """K-Means with k-means++ seeding and best-of-``n_init`` restarts.

    ``inertia_history_`` holds the within-cluster sum of squares after every
    assignment step of the winning run; it never increases.
    """

    def __init__(self, n_clusters=3, max_iter=300, n_init=1, random_state=None):
        self.n_clusters = n_clusters
        self.max_iter = max_iter
        self.n_init = n_init
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_features(X)
        k = int(self.n_clusters)
        if k < 1:
            raise PreconditionError("n_clusters must be >= 1")
        if X.shape[0] < k:
            raise PreconditionError(f"{X.shape[0]} samples for {k} clusters")
        if self.max_iter < 1 or self.n_init < 1:
            raise PreconditionError("max_iter and n_init must be >= 1")
        rng = np.random.default_rng(self.random_state)
        best = None
        for _ in range(self.n_init):
            run = _lloyd(X, _kmeans_pp(X, k, rng), self.max_iter)
            if best is None or run[2][-1] < best[2][-1]:
                best = run
        labels, centers, history, n_iter, reseeds = best
        self.labels_ = labels
        self.cluster_centers_ = centers
        self.inertia_ = history[-1]
        self.inertia_history_ = history
        self.n_iter_ = n_iter
        self.n_reseeds_ = reseeds
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        return _sq_dist(check_features(X), self.cluster_centers_).argmin(axis=1)


def _as_features(data) -> np.ndarray:
    if len(data) and isinstance(data[0], ContractorProfile):
        return profile_features(data)
    return check_features(data)


@dataclass(frozen=True)
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray  # original feature units, relabelled order
    inertia: float         # in standardized units
    inertia_history: tuple

    def __iter__(self):
        return iter((self.assignments, self.centroids, self.inertia))


def kmeans(data, k: int, seed: int = DEFAULT_SEED, max_iter: int = 300, n_init: int = 10) -> KMeansResult:
    """Cluster standardized features; labels ordered by descending last-feature centroid.

    ``data`` is a sequence of :class:`ContractorProfile` (features
    ``log_n, log_value``) or a 2-D array. Cluster 0 is therefore the group
    with the highest centroid ``log_value``.
    """
    X = _as_features(data)
    Z, mean, scale = standardize(X)
    est = LloydKMeans(n_clusters=k, max_iter=max_iter, n_init=n_init, random_state=seed).fit(Z)
    centroids = est.cluster_centers_ * scale + mean
    order = np.argsort(-centroids[:, -1], kind="stable")
    relabel = np.empty(k, dtype=int)
    relabel[order] = np.arange(k)
    return KMeansResult(
        assignments=relabel[est.labels_],
        centroids=centroids[order],
        inertia=est.inertia_,
        inertia_history=tuple(est.inertia_history_),
    )


def assign_clusters(profiles: Sequence[ContractorProfile], labels) -> list[ContractorProfile]:
    return [replace(p, cluster=int(c)) for p, c in zip(profiles, labels)]


def elbow_scan(data, k_range: Sequence[int], seed: int = DEFAULT_SEED, n_init: int = 10,
               max_iter: int = 300) -> list[tuple[int, float]]:
    """Best-of-``n_init`` inertia for every k, on standardized features."""
    if not k_range:
        raise PreconditionError("k_range is empty")
    Z, _, _ = standardize(_as_features(data))
    out = []
    for k in k_range:
        est = LloydKMeans(n_clusters=k, max_iter=max_iter, n_init=n_init, random_state=seed).fit(Z)
        out.append((k, est.inertia_))
    return out


def elbow_point(scan: Sequence[tuple[int, float]]) -> int:
    """k with the largest second difference of inertia (needs consecutive ks)."""
    ks = [k for k, _ in scan]
    if len(scan) < 3 or ks != list(range(ks[0], ks[0] + len(ks))):
        raise PreconditionError("elbow detection needs at least three consecutive k values")
    inertia = [v for _, v in scan]
    second = [inertia[i - 1] - 2 * inertia[i] + inertia[i + 1] for i in range(1, len(inertia) - 1)]
    return ks[1 + int(np.argmax(second))]
