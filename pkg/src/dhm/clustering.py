"""Resolution-driven clustering of occupied and free points into hinge features."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .core import ClusterSet, Frame, covariance_floor, floor_covariances
from .spatial import SpatialHash

__all__ = ["QuickMeans", "cluster_points", "greedy_assign", "sample_free_points"]


def sample_free_points(frame: Frame, spacing: float) -> np.ndarray:
    """Points spaced ``spacing`` apart along every beam, starting at the origin.

    Beams that hit something stop short of the hit by a guard interval of
    ``spacing / 2``; max-range beams are sampled over their full length.
    Zero-length beams contribute nothing.
    """
    if not spacing > 0:
        raise ValueError("spacing must be > 0")
    origins, hits = frame.origins, frame.hits
    delta = hits - origins
    length = np.linalg.norm(delta, axis=1)
    n = np.where(frame.max_range,
                 np.floor(length / spacing + 1e-9) + 1,
                 np.ceil((length - 0.5 * spacing) / spacing - 1e-9))
    n = np.where(length > 0, np.maximum(n, 0), 0).astype(np.int64)
    if n.sum() == 0:
        return np.zeros((0, frame.dim))
    beam = np.repeat(np.arange(len(n)), n)
    starts = np.cumsum(n) - n
    step = np.arange(n.sum()) - np.repeat(starts, n)
    direction = delta[beam] / length[beam, None]
    return origins[beam] + direction * (step * spacing)[:, None]


def greedy_assign(points: np.ndarray, radius: float) -> np.ndarray:
    """Single pass leader assignment.

    Points are scanned in input order; each joins the nearest existing seed
    within ``radius`` (ties go to the older seed) or becomes a new seed.
    Returns integer labels numbered in seed order.
    """
    n, dim = points.shape
    labels = [0] * n
    # each cell lists the seeds in its 3^D neighbourhood, so a point needs one lookup
    keys = list(map(tuple, np.floor(points / radius).astype(np.int64).tolist()))
    offsets = SpatialHash(radius, dim)._offsets
    nearby = {}
    seeds = []
    r2 = radius * radius * (1 + 1e-12)
    coords = points.tolist()
    for i in range(n):
        p = coords[i]
        key = keys[i]
        best, best_d2 = -1, r2
        for j in nearby.get(key, ()):
            q = seeds[j]
            d2 = 0.0
            for a, b in zip(p, q):
                d2 += (a - b) * (a - b)
            if d2 < best_d2 or (d2 == best_d2 and (best < 0 or j < best)):
                best, best_d2 = j, d2
        if best < 0:
            best = len(seeds)
            seeds.append(p)
            for off in offsets:
                nearby.setdefault(tuple([k + o for k, o in zip(key, off)]), []).append(best)
        labels[i] = best
    return np.asarray(labels, dtype=np.int64)


def _moments(points: np.ndarray, labels: np.ndarray, m: int):
    dim = points.shape[1]
    counts = np.bincount(labels, minlength=m)
    means = np.stack([np.bincount(labels, weights=points[:, d], minlength=m) for d in range(dim)], axis=1)
    means /= counts[:, None]
    centred = points - means[labels]
    outer = centred[:, :, None] * centred[:, None, :]
    covs = np.zeros((m, dim, dim))
    np.add.at(covs, labels, outer)
    denom = np.maximum(counts - 1, 1).astype(float)
    covs /= denom[:, None, None]
    return means, covs, counts


def _finalize(points, labels, radius):
    """Compute moments; split off points farther than ``radius`` from their mean.

    The member closest to each mean always stays, so every pass that finds a
    violation creates at least one new cluster and the loop terminates.
    """
    m = int(labels.max()) + 1
    while True:
        means, covs, counts = _moments(points, labels, m)
        dist = np.linalg.norm(points - means[labels], axis=1)
        bad = dist > radius * (1 + 1e-12)
        if not bad.any():
            return labels, means, covs, counts
        order = np.lexsort((np.arange(len(points)), dist, labels))
        _, first = np.unique(labels[order], return_index=True)
        bad[order[first]] = False
        if not bad.any():
            return labels, means, covs, counts
        idx = np.flatnonzero(bad)
        labels = labels.copy()
        labels[idx] = greedy_assign(points[idx], radius) + m
        m = int(labels.max()) + 1


def cluster_points(points, resolution: float, occupied: bool = True,
                   floor_fraction: float = 0.1) -> ClusterSet:
    """Cluster ``points`` at resolution ``r_c``.

    Every input point ends up within ``r_c`` of the mean of the cluster that
    owns it.  Covariances are sample covariances with eigenvalues floored at
    ``(floor_fraction * r_c)**2``; singletons get the floor times identity.
    """
    if not resolution > 0:
        raise ValueError("resolution must be > 0")
    points = np.asarray(points, dtype=float)
    if points.size == 0:
        dim = points.shape[1] if points.ndim == 2 else 2
        return ClusterSet.empty(dim, resolution)
    labels = greedy_assign(points, resolution)
    labels, means, covs, counts = _finalize(points, labels, resolution)
    floor = covariance_floor(resolution, floor_fraction)
    covs = floor_covariances(covs, floor)
    covs[counts == 1] = floor * np.eye(points.shape[1])
    m = len(means)
    return ClusterSet(means, covs, np.ones(m), np.full(m, bool(occupied)), counts, resolution)


class QuickMeans(ClusterMixin, BaseEstimator):
    """Greedy resolution clustering with an sklearn interface.

    Parameters
    ----------
    resolution : float
        Cluster radius ``r_c``; every sample lies within it of its cluster mean.
    floor_fraction : float
        Covariance eigenvalues are floored at ``(floor_fraction * resolution)**2``.

    Attributes
    ----------
    cluster_centers_ : ndarray of shape (n_clusters, n_features)
    covariances_ : ndarray of shape (n_clusters, n_features, n_features)
    counts_ : ndarray of shape (n_clusters,)
    labels_ : ndarray of shape (n_samples,)
    """

    def __init__(self, resolution=0.25, floor_fraction=0.1):
        self.resolution = resolution
        self.floor_fraction = floor_fraction

    def fit(self, X, y=None):
        X = check_array(X)
        if not self.resolution > 0:
            raise ValueError("resolution must be > 0")
        labels = greedy_assign(X, self.resolution)
        labels, means, covs, counts = _finalize(X, labels, self.resolution)
        floor = covariance_floor(self.resolution, self.floor_fraction)
        covs = floor_covariances(covs, floor)
        covs[counts == 1] = floor * np.eye(X.shape[1])
        self.cluster_centers_ = means
        self.covariances_ = covs
        self.counts_ = counts
        self.labels_ = labels
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        """Index of the nearest cluster mean for each sample."""
        check_is_fitted(self)
        X = check_array(X)
        _, idx = cKDTree(self.cluster_centers_).query(X)
        return idx

    def to_cluster_set(self, occupied=True) -> ClusterSet:
        check_is_fitted(self)
        m = len(self.cluster_centers_)
        return ClusterSet(self.cluster_centers_, self.covariances_, np.ones(m),
                          np.full(m, bool(occupied)), self.counts_, self.resolution)
