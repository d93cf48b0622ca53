"""Object segmentation: connected components of occupied clusters under r_c proximity."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .core import ClusterSet
from .spatial import SpatialHash

__all__ = ["ObjectSegment", "build_neighbor_graph", "segment_objects"]


@dataclass(frozen=True)
class ObjectSegment:
    """A group of occupied clusters; ``clusters`` indexes the frame's occupied set."""

    object_id: int
    clusters: tuple

    def __post_init__(self):
        if not self.clusters:
            raise ValueError("an object needs at least one cluster")
        object.__setattr__(self, "clusters", tuple(int(c) for c in self.clusters))

    def __len__(self):
        return len(self.clusters)

    def means(self, cluster_set: ClusterSet) -> np.ndarray:
        return cluster_set.means[list(self.clusters)]

    def centroid(self, cluster_set: ClusterSet) -> np.ndarray:
        return self.means(cluster_set).mean(axis=0)


def build_neighbor_graph(clusters, resolution: float) -> List[List[int]]:
    """Adjacency lists: ``j in N[i]`` iff ``i != j`` and ``|mu_i - mu_j| < r_c``."""
    means = clusters.means if isinstance(clusters, ClusterSet) else np.asarray(clusters, dtype=float)
    if len(means) == 0:
        return []
    grid = SpatialHash(resolution, means.shape[1])
    pts = means.tolist()
    for p in pts:
        grid.insert(p)
    return [grid.neighbors_strict(p, resolution, exclude=i) for i, p in enumerate(pts)]


def segment_objects(clusters, resolution: float, min_clusters: int = 3) -> List[ObjectSegment]:
    """Label connected components of the neighbour graph and drop small ones.

    Components are discovered by scanning clusters in input order, so object
    ids are deterministic for a given ordering.  The traversal uses an explicit
    stack rather than recursion so large components (long walls) are safe.
    """
    graph = build_neighbor_graph(clusters, resolution)
    m = len(graph)
    label = np.zeros(m, dtype=np.int64)
    next_label = 1
    for i in range(m):
        if label[i]:
            continue
        label[i] = next_label
        stack = [i]
        while stack:
            k = stack.pop()
            for j in graph[k]:
                if label[j] != label[k]:
                    label[j] = label[k]
                    stack.append(j)
        next_label += 1

    objects = []
    order = np.argsort(label, kind="stable")
    bounds = np.searchsorted(label[order], np.arange(1, next_label + 1))
    for lab in range(next_label - 1):
        members = order[bounds[lab]:bounds[lab + 1]]
        if len(members) >= min_clusters:
            objects.append(ObjectSegment(len(objects), tuple(members.tolist())))
    return objects
