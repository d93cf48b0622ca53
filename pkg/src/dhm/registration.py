"""Object association across frames and rigid motion estimation with trimmed ICP."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .core import ClusterSet, RigidTransform
from .segmentation import ObjectSegment

__all__ = ["Association", "IcpResult", "associate", "best_fit_transform", "icp_align"]

_BRUTE_FORCE_LIMIT = 64


@dataclass(frozen=True)
class Association:
    prev_object_id: int
    curr_object_id: int
    closest_pair_distance: float


@dataclass(frozen=True)
class IcpResult:
    transform: RigidTransform
    mean_residual: float
    iterations: int
    converged: bool
    residual_history: tuple = field(default=(), repr=False)


def associate(prev_objects: Sequence[ObjectSegment], prev_clusters: ClusterSet,
              curr_objects: Sequence[ObjectSegment], curr_clusters: ClusterSet,
              threshold: float) -> Tuple[List[Association], List[int], List[int]]:
    """Match each previous object to the current object holding its closest cluster.

    Pairs farther apart than ``threshold`` are not associated.  When several
    previous objects pick the same current object the closest pair wins and
    the others are reported unmatched.

    Returns
    -------
    associations, unmatched_prev, new_objects
        ``unmatched_prev`` and ``new_objects`` hold object ids.
    """
    if not curr_objects:
        return [], [o.object_id for o in prev_objects], []
    owner_list, member_list = [], []
    for obj in curr_objects:
        owner_list.extend([obj.object_id] * len(obj))
        member_list.extend(obj.clusters)
    owner = np.asarray(owner_list)
    tree = cKDTree(curr_clusters.means[member_list])

    candidates = []
    for obj in prev_objects:
        dist, idx = tree.query(prev_clusters.means[list(obj.clusters)])
        k = int(np.argmin(dist))
        if dist[k] <= threshold:
            candidates.append(Association(obj.object_id, int(owner[idx[k]]), float(dist[k])))

    best = {}
    for a in sorted(candidates, key=lambda a: (a.closest_pair_distance, a.prev_object_id)):
        best.setdefault(a.curr_object_id, a)
    associations = sorted(best.values(), key=lambda a: a.prev_object_id)
    matched_prev = {a.prev_object_id for a in associations}
    matched_curr = set(best)
    unmatched = [o.object_id for o in prev_objects if o.object_id not in matched_prev]
    new = [o.object_id for o in curr_objects if o.object_id not in matched_curr]
    return associations, unmatched, new


def best_fit_transform(source: np.ndarray, target: np.ndarray) -> RigidTransform:
    """Least-squares rigid transform mapping ``source`` rows onto ``target`` rows.

    Uses the SVD of the cross-covariance with a determinant correction so the
    rotation is proper (det = +1).
    """
    a_mean = source.mean(axis=0)
    b_mean = target.mean(axis=0)
    H = (source - a_mean).T @ (target - b_mean)
    U, _, Vt = np.linalg.svd(H)
    V = Vt.T
    if np.linalg.det(V @ U.T) < 0:
        V[:, -1] *= -1
    R = V @ U.T
    return RigidTransform(R, b_mean - R @ a_mean)


def _fit(source: np.ndarray, target: np.ndarray):
    """Raw (R, t) least-squares fit; closed-form angle in 2D, SVD otherwise."""
    a_mean = source.mean(axis=0)
    b_mean = target.mean(axis=0)
    a = source - a_mean
    b = target - b_mean
    if source.shape[1] == 2:
        sin = float(np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]))
        cos = float(np.sum(a[:, 0] * b[:, 0] + a[:, 1] * b[:, 1]))
        theta = math.atan2(sin, cos)
        c, s = math.cos(theta), math.sin(theta)
        R = np.array([[c, -s], [s, c]])
    else:
        U, _, Vt = np.linalg.svd(a.T @ b)
        V = Vt.T
        if np.linalg.det(V @ U.T) < 0:
            V[:, -1] *= -1
        R = V @ U.T
    return R, b_mean - R @ a_mean


def _rotation_change(Ra: np.ndarray, Rb: np.ndarray) -> float:
    c = (np.trace(Ra @ Rb.T) - (len(Ra) - 2)) / 2.0
    return math.acos(max(-1.0, min(1.0, c)))


def _principal_axes(points: np.ndarray) -> np.ndarray:
    centred = points - points.mean(axis=0)
    _, vecs = np.linalg.eigh(centred.T @ centred)
    return vecs[:, ::-1]


def _axis_starts(source: np.ndarray, target: np.ndarray, max_angle: float) -> list:
    """Proper rotations mapping the source principal axes onto the target's.

    Axis signs are ambiguous, so every sign pattern with det = +1 is tried;
    candidates rotating by more than ``max_angle`` are dropped.
    """
    dim = source.shape[1]
    A, B = _principal_axes(source), _principal_axes(target)
    starts = []
    for signs in np.array(np.meshgrid(*[[1.0, -1.0]] * dim)).T.reshape(-1, dim):
        R = (B * signs) @ A.T
        if np.linalg.det(R) < 0:
            continue
        if _rotation_change(R, np.eye(dim)) <= max_angle:
            starts.append(R)
    return starts


def _trimmed_centroid(points: np.ndarray, keep_n: int, iterations: int = 5) -> np.ndarray:
    """Centroid of the ``keep_n`` points nearest to it, refined from the median."""
    centre = np.median(points, axis=0)
    keep_n = min(keep_n, len(points))
    for _ in range(iterations):
        d = np.linalg.norm(points - centre, axis=1)
        centre = points[np.argpartition(d, keep_n - 1)[:keep_n]].mean(axis=0)
    return centre


def _starts(source, target, src_mean, tgt_mean, keep_n, max_start_angle):
    dim = source.shape[1]
    for R in _axis_starts(source, target, max_start_angle):
        yield R, tgt_mean - R @ src_mean
    yield np.eye(dim), tgt_mean - src_mean
    yield np.eye(dim), _trimmed_centroid(target, keep_n) - src_mean


def _run(source, target, nearest, R, t, keep_n, max_iterations, tolerance):
    n = len(source)
    history = []
    converged = False
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        dist, idx = nearest(source @ R.T + t)
        keep = np.argpartition(dist, keep_n - 1)[:keep_n] if keep_n < n else slice(None)
        history.append(math.sqrt(float(np.mean(dist[keep] ** 2))))
        R_new, t_new = _fit(source[keep], target[idx[keep]])
        d_rot = _rotation_change(R_new, R)
        d_trans = float(np.linalg.norm(t_new - t))
        R, t = R_new, t_new
        if d_trans < tolerance and d_rot < tolerance:
            converged = True
            break
    dist, _ = nearest(source @ R.T + t)
    if keep_n < n:
        dist = np.partition(dist, keep_n - 1)[:keep_n]
    history.append(math.sqrt(float(np.mean(dist ** 2))))
    return R, t, iterations, converged, history


def icp_align(source, target, trim_fraction: float = 0.7, max_iterations: int = 50,
              tolerance: float = 1e-4, initial: RigidTransform = None,
              max_start_angle: float = math.pi / 4) -> IcpResult:
    """Trimmed point-to-point ICP aligning ``source`` onto ``target``.

    Each iteration matches every transformed source point to its nearest
    target point, keeps the best ``trim_fraction`` of the pairs and refits the
    rigid transform in closed form.  Stops once both the translation change
    and the rotation change drop below ``tolerance`` (metres / radians).

    Without an explicit ``initial`` guess the alignment is started from the
    centroid offset with identity rotation and, additionally, from the
    principal-axis rotations within ``max_start_angle`` and from an
    outlier-trimmed target centroid; the run with the lowest
    final residual wins.  Trimming makes single starts prone to locking
    onto a well-matched subset, which the extra starts guard against.

    ``mean_residual`` is the RMS distance over the trimmed pairs; within the
    winning run it never increases between iterations.  With fewer than D
    points on either side the identity is returned with ``converged=False``.
    """
    source = np.asarray(source, dtype=float)
    target = np.asarray(target, dtype=float)
    dim = source.shape[1] if source.ndim == 2 else target.shape[1]
    if len(source) < dim or len(target) < dim:
        return IcpResult(RigidTransform.identity(dim), math.inf, 0, False)

    if len(target) > _BRUTE_FORCE_LIMIT:
        tree = cKDTree(target)

        def nearest(p):
            return tree.query(p)
    else:
        def nearest(p):
            d2 = ((p[:, None, :] - target[None, :, :]) ** 2).sum(axis=2)
            idx = d2.argmin(axis=1)
            return np.sqrt(d2[np.arange(len(p)), idx]), idx

    n = len(source)
    keep_n = min(n, max(dim, int(math.ceil(trim_fraction * n))))
    src_mean, tgt_mean = source.mean(axis=0), target.mean(axis=0)
    if initial is not None:
        starts = iter([(np.array(initial.rotation), np.array(initial.translation))])
    else:
        starts = _starts(source, target, src_mean, tgt_mean, keep_n, max_start_angle)

    best = None
    for R0, t0 in starts:
        run = _run(source, target, nearest, R0, t0, keep_n, max_iterations, tolerance)
        if best is None or run[4][-1] < best[4][-1]:
            best = run
        if best[4][-1] <= 1e-12:
            break
    R, t, iterations, converged, history = best
    return IcpResult(RigidTransform(R, t), history[-1], iterations, converged, tuple(history))
