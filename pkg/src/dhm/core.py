"""Geometric and probabilistic primitives shared by every stage of the pipeline.

Everything here is dimension generic over D in {2, 3}.  Points are plain
``numpy`` arrays; clusters are stored column-wise in :class:`ClusterSet` so the
hot paths (feature projection, incorporation, training) stay vectorised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "Cluster",
    "ClusterSet",
    "Config",
    "Frame",
    "RigidTransform",
    "apply_transform",
    "covariance_floor",
    "eigenvalues_spd",
    "floor_covariances",
    "gaussian_kernel",
    "rotation_2d",
    "rotation_about_z",
    "wrap_angle",
]


def wrap_angle(theta):
    """Wrap angles to the half-open interval (-pi, pi]."""
    wrapped = np.mod(-np.asarray(theta, dtype=float) + np.pi, 2.0 * np.pi)
    wrapped = np.pi - wrapped
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


def rotation_2d(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def rotation_about_z(theta: float, dim: int) -> np.ndarray:
    """Planar rotation by ``theta``; in 3D the rotation axis is z."""
    if dim == 2:
        return rotation_2d(theta)
    R = np.eye(dim)
    R[:2, :2] = rotation_2d(theta)
    return R


@dataclass(frozen=True)
class RigidTransform:
    """Rigid motion ``p -> R p + t``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float).reshape(-1)
        if R.shape != (t.size, t.size):
            raise ValueError(f"rotation {R.shape} does not match translation of size {t.size}")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls, dim: int) -> "RigidTransform":
        return cls(np.eye(dim), np.zeros(dim))

    @classmethod
    def about_pivot(cls, rotation, translation, pivot) -> "RigidTransform":
        """Rotate about ``pivot`` then translate: ``p -> R (p - c) + c + t``."""
        R = np.asarray(rotation, dtype=float)
        c = np.asarray(pivot, dtype=float)
        return cls(R, c + np.asarray(translation, dtype=float) - R @ c)

    @property
    def dim(self) -> int:
        return self.translation.size

    @property
    def angle(self) -> float:
        """Planar rotation angle read from the (x, y) block."""
        return math.atan2(self.rotation[1, 0], self.rotation[0, 0])

    def apply(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Return ``self o other`` (apply ``other`` first)."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def is_identity(self, atol: float = 0.0) -> bool:
        return (np.allclose(self.rotation, np.eye(self.dim), rtol=0.0, atol=atol)
                and np.allclose(self.translation, 0.0, rtol=0.0, atol=atol))


def apply_transform(transform: RigidTransform, point) -> np.ndarray:
    return transform.apply(point)


def eigenvalues_spd(m) -> np.ndarray:
    """Eigenvalues of a symmetric matrix, sorted descending.

    Raises
    ------
    ValueError
        If ``m`` is not square or not symmetric (relative tolerance 1e-9).
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    scale = max(1.0, float(np.abs(m).max(initial=0.0)))
    if not np.allclose(m, m.T, rtol=0.0, atol=1e-9 * scale):
        raise ValueError("matrix is not symmetric")
    return np.linalg.eigvalsh(0.5 * (m + m.T))[::-1]


def covariance_floor(resolution: float, fraction: float = 0.1) -> float:
    """Minimum eigenvalue allowed in a cluster covariance, ``(fraction * r_c)**2``."""
    return (fraction * resolution) ** 2


def floor_covariances(covs: np.ndarray, floor: float) -> np.ndarray:
    """Symmetrise a stack of covariances and clamp their eigenvalues at ``floor``."""
    covs = np.asarray(covs, dtype=float)
    single = covs.ndim == 2
    if single:
        covs = covs[None]
    sym = 0.5 * (covs + np.swapaxes(covs, -1, -2))
    vals, vecs = np.linalg.eigh(sym)
    vals = np.maximum(vals, floor)
    out = np.einsum("mij,mj,mkj->mik", vecs, vals, vecs)
    out = 0.5 * (out + np.swapaxes(out, -1, -2))
    return out[0] if single else out


@dataclass(frozen=True)
class Cluster:
    """One Gaussian hinge feature: mean, covariance and contribution scale."""

    mean: np.ndarray
    covariance: np.ndarray
    weight_scale: float = 1.0
    occupied: bool = True

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.covariance, dtype=float)
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean of size {mean.size}")
        if not np.all(np.isfinite(mean)):
            raise ValueError("cluster mean must be finite")
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise ValueError("cluster covariance must be symmetric")
        if np.linalg.eigvalsh(cov).min() <= 0.0:
            raise ValueError("cluster covariance must be positive definite")
        if not 0.0 < self.weight_scale <= 1.0:
            raise ValueError(f"weight_scale must lie in (0, 1], got {self.weight_scale}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", 0.5 * (cov + cov.T))


def gaussian_kernel(query, cluster: Cluster) -> float:
    """``exp(-0.5 (x - mu)^T Sigma^-1 (x - mu))``."""
    d = np.asarray(query, dtype=float) - cluster.mean
    return float(math.exp(-0.5 * d @ np.linalg.solve(cluster.covariance, d)))


@dataclass
class ClusterSet:
    """Column-wise storage for a set of clusters.

    ``counts`` holds the number of raw points behind each cluster; it is 0 for
    clusters whose origin is not a clustering pass (e.g. loaded snapshots).
    """

    means: np.ndarray
    covariances: np.ndarray
    weight_scales: np.ndarray
    occupied: np.ndarray
    counts: np.ndarray
    resolution: float

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=float)
        if self.means.ndim != 2:
            raise ValueError("means must be an (M, D) array")
        self.covariances = np.asarray(self.covariances, dtype=float)
        self.weight_scales = np.asarray(self.weight_scales, dtype=float)
        self.occupied = np.asarray(self.occupied, dtype=bool)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        m = len(self.means)
        if not (len(self.covariances) == len(self.weight_scales) == len(self.occupied)
                == len(self.counts) == m):
            raise ValueError("ClusterSet column lengths differ")

    @classmethod
    def empty(cls, dim: int, resolution: float) -> "ClusterSet":
        return cls(np.zeros((0, dim)), np.zeros((0, dim, dim)), np.zeros(0),
                   np.zeros(0, dtype=bool), np.zeros(0, dtype=np.int64), resolution)

    @classmethod
    def from_clusters(cls, clusters: Sequence[Cluster], resolution: float,
                      dim: Optional[int] = None) -> "ClusterSet":
        if not clusters:
            if dim is None:
                raise ValueError("dim is required for an empty cluster list")
            return cls.empty(dim, resolution)
        return cls(np.stack([c.mean for c in clusters]),
                   np.stack([c.covariance for c in clusters]),
                   np.array([c.weight_scale for c in clusters]),
                   np.array([c.occupied for c in clusters]),
                   np.ones(len(clusters), dtype=np.int64), resolution)

    @classmethod
    def concatenate(cls, sets: Iterable["ClusterSet"]) -> "ClusterSet":
        sets = list(sets)
        if not sets:
            raise ValueError("nothing to concatenate")
        return cls(np.concatenate([s.means for s in sets]),
                   np.concatenate([s.covariances for s in sets]),
                   np.concatenate([s.weight_scales for s in sets]),
                   np.concatenate([s.occupied for s in sets]),
                   np.concatenate([s.counts for s in sets]),
                   sets[0].resolution)

    def __len__(self) -> int:
        return len(self.means)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def __getitem__(self, i: int) -> Cluster:
        return Cluster(self.means[i], self.covariances[i], float(self.weight_scales[i]),
                       bool(self.occupied[i]))

    def subset(self, index) -> "ClusterSet":
        return ClusterSet(self.means[index], self.covariances[index], self.weight_scales[index],
                          self.occupied[index], self.counts[index], self.resolution)

    def copy(self) -> "ClusterSet":
        return ClusterSet(self.means.copy(), self.covariances.copy(), self.weight_scales.copy(),
                          self.occupied.copy(), self.counts.copy(), self.resolution)


@dataclass(frozen=True)
class Frame:
    """One timestamped sensor sweep.

    ``origins`` and ``hits`` are ``(B, D)`` arrays; ``max_range[b]`` marks beams
    that returned nothing, whose endpoint only bounds free space.
    """

    timestamp: int
    origins: np.ndarray
    hits: np.ndarray
    max_range: np.ndarray

    def __post_init__(self):
        origins = np.asarray(self.origins, dtype=float)
        hits = np.asarray(self.hits, dtype=float)
        if origins.ndim == 1:
            origins = np.broadcast_to(origins, hits.shape).copy()
        max_range = np.asarray(self.max_range, dtype=bool).reshape(-1)
        if origins.shape != hits.shape or hits.ndim != 2 or len(max_range) != len(hits):
            raise ValueError("origins, hits and max_range must describe the same beams")
        if hits.shape[1] not in (2, 3):
            raise ValueError(f"frames must be 2D or 3D, got D={hits.shape[1]}")
        if int(self.timestamp) < 0:
            raise ValueError("timestamp must be non-negative")
        if not (np.all(np.isfinite(origins)) and np.all(np.isfinite(hits))):
            raise ValueError("beam coordinates must be finite")
        object.__setattr__(self, "timestamp", int(self.timestamp))
        object.__setattr__(self, "origins", origins)
        object.__setattr__(self, "hits", hits)
        object.__setattr__(self, "max_range", max_range)

    @property
    def dim(self) -> int:
        return self.hits.shape[1]

    def __len__(self) -> int:
        return len(self.hits)

    @property
    def occupied_points(self) -> np.ndarray:
        return self.hits[~self.max_range]


NOISE_DIVISOR = 250.0


@dataclass(frozen=True)
class Config:
    """Pipeline configuration.

    ``free_sample_spacing``, ``segmentation_radius``, ``process_noise`` and
    ``observation_noise`` default to values derived from ``resolution`` when
    left as ``None``.
    """

    resolution: float = 0.25
    min_object_clusters: int = 3
    association_threshold: float = 1.0
    segmentation_radius: Optional[float] = None
    free_sample_spacing: Optional[float] = None
    l2: float = 1e-4
    l1: float = 1e-4
    learning_rate: float = 0.5
    epochs: int = 10
    batch_size: int = 32
    bias: float = -1.0
    feature_cutoff: float = 1e-3
    loss: str = "log"
    delta_t: float = 0.1
    dynamic_enabled: bool = True
    process_noise: Optional[float] = None
    observation_noise: Optional[float] = None
    covariance_floor_fraction: float = 0.3
    trim_fraction: float = 0.7
    icp_max_iterations: int = 50
    icp_tolerance: float = 1e-4
    max_coast: int = 20
    log_depth: int = 100
    seed: int = 0

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError("resolution must be > 0")
        if not self.association_threshold > 0:
            raise ValueError("association_threshold must be > 0")
        if not self.delta_t > 0:
            raise ValueError("delta_t must be > 0")
        if self.free_sample_spacing is not None and not self.free_sample_spacing > 0:
            raise ValueError("free_sample_spacing must be > 0")
        if self.l1 < 0 or self.l2 < 0:
            raise ValueError("regularisation weights must be >= 0")
        if self.min_object_clusters < 1:
            raise ValueError("min_object_clusters must be >= 1")
        if not 0 < self.trim_fraction <= 1:
            raise ValueError("trim_fraction must lie in (0, 1]")
        if self.loss not in ("log", "exponential"):
            raise ValueError(f"unknown loss {self.loss!r}")
        for name in ("process_noise", "observation_noise", "segmentation_radius"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ValueError(f"{name} must be > 0")

    @property
    def free_spacing(self) -> float:
        return self.free_sample_spacing if self.free_sample_spacing is not None else self.resolution

    @property
    def seg_radius(self) -> float:
        """Object connectivity radius; two touching r_c-balls have means within 2 r_c."""
        return self.segmentation_radius if self.segmentation_radius is not None else 2.0 * self.resolution

    @property
    def noise_default(self) -> float:
        """``(resolution / 250)^2``: scales like cluster covariances, so decay is scale free."""
        return (self.resolution / NOISE_DIVISOR) ** 2

    @property
    def q(self) -> float:
        return self.process_noise if self.process_noise is not None else self.noise_default

    @property
    def r(self) -> float:
        return self.observation_noise if self.observation_noise is not None else self.noise_default

    @property
    def cov_floor(self) -> float:
        return covariance_floor(self.resolution, self.covariance_floor_fraction)

    def replace(self, **changes) -> "Config":
        return replace(self, **changes)

    @classmethod
    def field_names(cls) -> list:
        return [f.name for f in fields(cls)]
