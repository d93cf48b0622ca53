"""Dynamic Hilbert map: an accumulated occupancy map whose hinges move with tracked objects.

Each frame is clustered and segmented into objects, objects are associated
with the previous frame's and aligned by ICP, and a constant-velocity Kalman
filter per object drives the motion of that object's clusters in the
accumulated map.  Positional uncertainty of a track widens and fades its
clusters at query time.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import expit
from sklearn.base import BaseEstimator

from .clustering import cluster_points, sample_free_points
from .core import ClusterSet, Config, Frame, RigidTransform, rotation_about_z
from .hilbert_map import HilbertMap, feature_matrix
from .registration import associate, icp_align
from .segmentation import ObjectSegment, segment_objects
from .spatial import SpatialHash
from .tracking import (MotionObservation, TrackState, aggregate_covariance, init_track,
                       predict, propagate_to, step_transform, transition_matrix, update)

__all__ = [
    "DhmObjectRecord",
    "DynamicHilbertMap",
    "GridError",
    "HistoryError",
    "decay_ratio",
    "transform_clusters",
]

MAX_GRID_CELLS = 4_000_000
_STILL_FRACTION = 0.02
_STILL_TURN = 0.02
_STILL_FRAMES = 5


class HistoryError(ValueError):
    """A query time lies outside the map's available history."""


class GridError(ValueError):
    """A render grid has zero area or too many cells."""


def decay_ratio(covariances, position_covariance) -> np.ndarray:
    """``det(Sigma) / det(Sigma + P)`` with the planar ``P`` embedded in the x-y block.

    ``covariances`` is (D, D) or (M, D, D); ``position_covariance`` is (2, 2)
    or (M, 2, 2).  Equals 1 exactly when ``P`` is zero.
    """
    covs = np.asarray(covariances, dtype=float)
    P = np.asarray(position_covariance, dtype=float)
    inflated = covs.copy()
    inflated[..., :2, :2] += P
    ratio = np.linalg.det(covs) / np.linalg.det(inflated)
    if P.ndim == 2:
        return np.where(np.all(P == 0), 1.0, ratio)
    return np.where(np.all(P == 0, axis=(1, 2)), 1.0, ratio)


def transform_clusters(clusters: ClusterSet, index, transform: RigidTransform,
                       position_covariance=None) -> ClusterSet:
    """Move the clusters at ``index`` rigidly; optionally decay their scale.

    Means map through ``transform``, covariances become ``R Sigma R^T`` and,
    if a positional covariance is given, scales are multiplied by
    ``decay_ratio``.  Returns a new set; the input is untouched.
    """
    out = clusters.copy()
    index = np.asarray(index, dtype=np.int64)
    if len(index) == 0:
        return out
    R = transform.rotation
    out.means[index] = transform.apply(clusters.means[index])
    cov = R @ clusters.covariances[index] @ R.T
    out.covariances[index] = 0.5 * (cov + np.swapaxes(cov, 1, 2))
    if position_covariance is not None:
        out.weight_scales[index] = clusters.weight_scales[index] * decay_ratio(
            out.covariances[index], position_covariance)
    return out


@dataclass
class DhmObjectRecord:
    """A tracked object: its filter, map-relative uncertainty and coasting state.

    ``map_covariance`` is the track covariance with the position block reset
    whenever the object is re-observed; its position block is the spatial
    uncertainty of the object's clusters relative to where they were last
    seen.
    """

    object_id: int
    track: TrackState
    map_covariance: np.ndarray
    coast: int = 0
    still_frames: int = 0

    @property
    def is_static(self) -> bool:
        return self.still_frames >= _STILL_FRAMES

    @property
    def position_covariance(self) -> np.ndarray:
        return self.map_covariance[:2, :2]


def _anchor(P: np.ndarray) -> np.ndarray:
    A = P.copy()
    A[:2, :] = 0.0
    A[:, :2] = 0.0
    return A


@dataclass
class _LogEntry:
    frame: int
    transforms: Dict[int, RigidTransform] = field(default_factory=dict)
    position_covariances: Dict[int, np.ndarray] = field(default_factory=dict)


class DynamicHilbertMap(BaseEstimator):
    """Spatiotemporal occupancy map over a stream of frames.

    Parameters
    ----------
    config : Config, optional
        Pipeline settings; defaults to ``Config()``.

    Attributes
    ----------
    hmap_ : HilbertMap
        The accumulated map (clusters of both classes and their weights).
    owner_ : ndarray of int
        Live record id per cluster, -1 for static clusters.
    track_id_ : ndarray of int
        Last record id that owned each cluster (kept after retirement).
    records_ : dict
        Live object records by id.
    frame_index_ : int
        Timestamp of the last ingested frame.
    """

    def __init__(self, config: Optional[Config] = None):
        self.config = config

    # -- setup ---------------------------------------------------------------
    @property
    def cfg(self) -> Config:
        return self.config if self.config is not None else Config()

    @classmethod
    def from_config(cls, config: Config) -> "DynamicHilbertMap":
        return cls(config)

    @property
    def is_initialized(self) -> bool:
        return hasattr(self, "hmap_")

    def _init_state(self, dim: int):
        cfg = self.cfg
        self.hmap_ = HilbertMap.from_config(cfg).set_clusters(ClusterSet.empty(dim, cfg.resolution))
        self.owner_ = np.zeros(0, dtype=np.int64)
        self.track_id_ = np.zeros(0, dtype=np.int64)
        self.records_: Dict[int, DhmObjectRecord] = {}
        self.next_record_id_ = 0
        self.prev_clusters_ = ClusterSet.empty(dim, cfg.resolution)
        self.prev_objects_: List[ObjectSegment] = []
        self.prev_record_of_: Dict[int, int] = {}
        self.prev_points_: Dict[int, np.ndarray] = {}
        self.frame_index_ = -1
        self.first_frame_ = -1
        self.log_ = deque(maxlen=cfg.log_depth)
        self.dim_ = dim
        self.timings_: Dict[str, float] = {}

    @property
    def clusters_(self) -> ClusterSet:
        return self.hmap_.clusters_

    @property
    def _Q(self) -> np.ndarray:
        return self.cfg.q * np.eye(6)

    @property
    def _R(self) -> np.ndarray:
        return self.cfg.r * np.eye(3)

    def members(self, record_id: int) -> np.ndarray:
        return np.flatnonzero(self.owner_ == record_id)

    # -- geometry helpers ----------------------------------------------------
    def _record_transform(self, record_id: int, transform: RigidTransform):
        idx = self.members(record_id)
        if len(idx):
            moved = transform_clusters(self.hmap_.clusters_, idx, transform)
            self.hmap_.clusters_ = moved

    def _centroid(self, record_id: int) -> Optional[np.ndarray]:
        idx = self.members(record_id)
        if len(idx) == 0:
            return None
        return self.hmap_.clusters_.means[idx].mean(axis=0)

    @staticmethod
    def _pivot_track(track: TrackState, centroid) -> TrackState:
        """Copy of ``track`` positioned at ``centroid`` so rotations pivot there."""
        x = track.state.copy()
        x[:2] = centroid[:2]
        return TrackState(x, track.covariance, track.last_observed)

    def _planar_transform(self, R_full: np.ndarray, t: np.ndarray, pivot: np.ndarray) -> RigidTransform:
        yaw = math.atan2(R_full[1, 0], R_full[0, 0])
        return RigidTransform.about_pivot(rotation_about_z(yaw, self.dim_), t, pivot)

    def _effective_clusters(self, clusters: ClusterSet, owner: np.ndarray,
                            position_covs: Dict[int, np.ndarray]) -> ClusterSet:
        """Hinges with ``Sigma' = Sigma + P`` and scales decayed by ``rho``."""
        if not position_covs or len(clusters) == 0:
            return clusters
        P = np.zeros((len(clusters), 2, 2))
        for rid, Pr in position_covs.items():
            if np.any(Pr):
                P[owner == rid] = Pr
        touched = np.flatnonzero(np.any(P != 0, axis=(1, 2)))
        if len(touched) == 0:
            return clusters
        out = clusters.copy()
        covs = clusters.covariances[touched]
        out.weight_scales[touched] = clusters.weight_scales[touched] * decay_ratio(covs, P[touched])
        inflated = covs.copy()
        inflated[:, :2, :2] += P[touched]
        out.covariances[touched] = inflated
        return out

    def _current_position_covs(self) -> Dict[int, np.ndarray]:
        return {rid: rec.position_covariance for rid, rec in self.records_.items()}

    # -- the per-frame pipeline ---------------------------------------------
    def step(self, frame: Frame) -> "DynamicHilbertMap":
        """Ingest the next frame (timestamps must be consecutive)."""
        cfg = self.cfg
        if not self.is_initialized:
            self._init_state(frame.dim)
        elif frame.dim != self.dim_:
            raise ValueError(f"frame dimension {frame.dim} differs from map dimension {self.dim_}")
        elif frame.timestamp != self.frame_index_ + 1:
            raise ValueError(f"expected frame {self.frame_index_ + 1}, got {frame.timestamp}")
        timer = _StageTimer()
        first = self.frame_index_ < 0
        if first:
            self.first_frame_ = frame.timestamp
        self.frame_index_ = frame.timestamp
        entry = _LogEntry(frame.timestamp)

        with timer("cluster"):
            occ_pts = frame.occupied_points
            free_pts = sample_free_points(frame, cfg.free_spacing) if len(frame) else np.zeros((0, frame.dim))
            occ = cluster_points(occ_pts, cfg.resolution, True, cfg.covariance_floor_fraction) \
                if len(occ_pts) else ClusterSet.empty(frame.dim, cfg.resolution)
            free = cluster_points(free_pts, cfg.resolution, False, cfg.covariance_floor_fraction) \
                if len(free_pts) else ClusterSet.empty(frame.dim, cfg.resolution)

        segments: List[ObjectSegment] = []
        record_of: Dict[int, int] = {}
        if cfg.dynamic_enabled:
            with timer("segment"):
                segments = segment_objects(occ, cfg.seg_radius, cfg.min_object_clusters) if len(occ) else []
            seg_points = self._segment_points(occ_pts, occ, segments)
            if not first:
                record_of = self._track_objects(occ, segments, seg_points, entry, timer)
            new_ids = [s.object_id for s in segments if s.object_id not in record_of]
            for sid in new_ids:
                seg = segments[sid]
                means = seg.means(occ)
                track = init_track(means.mean(axis=0), aggregate_covariance(means, occ.covariances[list(seg.clusters)]),
                                   frame.timestamp)
                rid = self.next_record_id_
                self.next_record_id_ += 1
                self.records_[rid] = DhmObjectRecord(rid, track, np.zeros((6, 6)))
                record_of[sid] = rid

        with timer("incorporate"):
            self._incorporate(occ, free, segments, record_of)
            self._retire()

        with timer("train"):
            X = np.vstack([occ_pts, free_pts])
            y = np.r_[np.ones(len(occ_pts)), -np.ones(len(free_pts))]
            if len(X):
                effective = self._effective_clusters(self.hmap_.clusters_, self.owner_,
                                                     self._current_position_covs())
                base = self.hmap_.clusters_
                self.hmap_.clusters_ = effective
                try:
                    self.hmap_.train_on(X, y, warm_start=True)
                finally:
                    self.hmap_.clusters_ = base

        entry.position_covariances = {rid: rec.position_covariance.copy()
                                      for rid, rec in self.records_.items()}
        self.log_.append(entry)
        self.prev_clusters_ = occ
        self.prev_objects_ = segments
        self.prev_record_of_ = record_of
        self.prev_points_ = seg_points if cfg.dynamic_enabled else {}
        self.timings_ = timer.times
        return self

    @staticmethod
    def _segment_points(points, occ: ClusterSet, segments) -> Dict[int, np.ndarray]:
        """Hits of each segment, each hit going to the segment of its nearest cluster."""
        if not segments or len(points) == 0:
            return {}
        seg_of = np.full(len(occ), -1, dtype=np.int64)
        for seg in segments:
            seg_of[list(seg.clusters)] = seg.object_id
        _, nearest = cKDTree(occ.means).query(points)
        labels = seg_of[nearest]
        return {seg.object_id: points[labels == seg.object_id] for seg in segments}

    def _track_objects(self, occ: ClusterSet, segments, seg_points, entry: _LogEntry,
                       timer) -> Dict[int, int]:
        """Associate, align and filter; move every live record's clusters one frame."""
        cfg = self.cfg
        with timer("icp"):
            assoc, _, new_ids = associate(self.prev_objects_, self.prev_clusters_, segments, occ,
                                          cfg.association_threshold)
            groups = self._fragment_groups(assoc, new_ids, occ, segments)
            observed: Dict[int, Tuple[List[int], RigidTransform, MotionObservation]] = {}
            for a in assoc:
                rid = self.prev_record_of_.get(a.prev_object_id)
                if rid is None or rid not in self.records_:
                    continue
                prev_seg = self.prev_objects_[a.prev_object_id]
                sids = groups[a.prev_object_id]
                # register the objects' hits; their cluster means are a coarse fallback
                src = self.prev_points_.get(a.prev_object_id, np.zeros((0, self.dim_)))
                tgt = np.vstack([seg_points.get(j, np.zeros((0, self.dim_))) for j in sids])
                if min(len(src), len(tgt)) < 2 * self.dim_:
                    src = prev_seg.means(self.prev_clusters_)
                    tgt = np.vstack([segments[j].means(occ) for j in sids])
                c = src.mean(axis=0)
                T_local = self._align(src - c, tgt - c, self.records_[rid].track)
                if T_local is None:
                    continue
                motion = self._planar_transform(T_local.rotation, T_local.translation, c)
                observed[rid] = (sids, motion, MotionObservation.from_transform(T_local))

        record_of: Dict[int, int] = {}
        with timer("kf"):
            for rid, rec in list(self.records_.items()):
                centroid = self._centroid(rid)
                pre = rec.track
                rec.track = predict(rec.track, self._Q)
                if rid in observed:
                    sids, motion, obs = observed[rid]
                    rec.track = update(rec.track, obs, self._R, self.frame_index_)
                    rec.map_covariance = _anchor(rec.track.covariance)
                    rec.coast = 0
                    record_of.update({sid: rid for sid in sids})
                else:
                    if centroid is None:
                        continue
                    motion = step_transform(self._pivot_track(pre, centroid), self.dim_)
                    F = transition_matrix()
                    rec.map_covariance = F @ rec.map_covariance @ F.T + self._Q
                    rec.coast += 1
                still = (float(np.linalg.norm(rec.track.velocity)) < _STILL_FRACTION * cfg.resolution
                         and abs(rec.track.angular_velocity) < _STILL_TURN)
                rec.still_frames = rec.still_frames + 1 if still else 0
                self._record_transform(rid, motion)
                entry.transforms[rid] = motion
        return record_of

    def _align(self, source, target, track: TrackState):
        """ICP seeded by the track's predicted motion, with a multi-start fallback.

        Both trimmed solutions are polished by untrimmed ICP and compared by
        their RMS over all source points, since trimming can discard the few
        points on a short side face that pin down the motion.  Along straight
        surfaces (target spread below a quarter of the resolution across its
        principal axis) many alignments fit equally well, so there the
        prediction is kept unless the unseeded search is better by more than a
        tenth of the resolution.  Returns ``None`` when neither trimmed fit
        comes within the resolution.
        """
        cfg = self.cfg
        dim = source.shape[1]
        t0 = np.zeros(dim)
        t0[:2] = track.velocity
        guess = RigidTransform(rotation_about_z(track.angular_velocity, dim), t0)
        runs = [icp_align(source, target, cfg.trim_fraction, cfg.icp_max_iterations,
                          cfg.icp_tolerance, initial=guess),
                icp_align(source, target, cfg.trim_fraction, cfg.icp_max_iterations, cfg.icp_tolerance)]
        if min(r.mean_residual for r in runs) > cfg.resolution:
            return None
        polished = [self._polish(source, target, r.transform) for r in runs]
        rms = [_overlap_rms(T.apply(source), target) for T in polished]
        planar = target[:, :2] - target[:, :2].mean(axis=0)
        minor = math.sqrt(max(np.linalg.eigvalsh(planar.T @ planar / len(planar))[0], 0.0))
        margin = 0.0 if minor >= 0.25 * cfg.resolution else 0.1 * cfg.resolution
        return polished[1] if rms[1] < rms[0] - margin else polished[0]

    def _polish(self, source, target, transform: RigidTransform) -> RigidTransform:
        """Untrimmed ICP from the smaller scan into the larger one."""
        cfg = self.cfg
        if len(target) < len(source):
            r = icp_align(target, source, 1.0, cfg.icp_max_iterations, cfg.icp_tolerance,
                          initial=transform.inverse())
            return r.transform.inverse()
        return icp_align(source, target, 1.0, cfg.icp_max_iterations, cfg.icp_tolerance,
                         initial=transform).transform

    def _fragment_groups(self, assoc, new_ids, occ: ClusterSet, segments) -> Dict[int, List[int]]:
        """Current segments making up each associated previous object.

        A previous object that split keeps its associated segment and absorbs
        every otherwise new segment lying within r_c of it.
        """
        groups = {a.prev_object_id: [a.curr_object_id] for a in assoc}
        if not new_ids or not assoc:
            return groups
        owner, members = [], []
        for a in assoc:
            clusters = self.prev_objects_[a.prev_object_id].clusters
            owner.extend([a.prev_object_id] * len(clusters))
            members.extend(clusters)
        tree = cKDTree(self.prev_clusters_.means[members])
        for sid in new_ids:
            d, idx = tree.query(segments[sid].means(occ))
            k = int(np.argmin(d))
            if d[k] <= self.cfg.resolution:
                groups[owner[idx[k]]].append(sid)
        return groups

    def _incorporate(self, occ: ClusterSet, free: ClusterSet, segments, record_of):
        """Add frame clusters whose nearest same-class hinge is farther than r_c/2."""
        cfg = self.cfg
        half = 0.5 * cfg.resolution
        base = self.hmap_.clusters_
        owner_new = np.full(len(occ), -1, dtype=np.int64)
        for seg in segments:
            rid = record_of.get(seg.object_id)
            if rid is not None:
                owner_new[list(seg.clusters)] = rid

        owner = self.owner_.copy()
        # new objects adopt static hinges they sit on
        if len(base) and segments:
            occ_idx = np.flatnonzero(base.occupied & (owner < 0))
            if len(occ_idx):
                tree = cKDTree(base.means[occ_idx])
                for seg in segments:
                    rid = record_of.get(seg.object_id)
                    if rid is None or len(self.members(rid)):
                        continue
                    near = tree.query_ball_point(occ.means[list(seg.clusters)], half)
                    hit = sorted({i for lst in near for i in lst})
                    if hit:
                        owner[occ_idx[hit]] = rid

        add_occ = self._novel(base, True, occ)
        add_free = self._novel(base, False, free)
        added = ClusterSet.concatenate([base, occ.subset(add_occ), free.subset(add_free)])
        new_owner = np.r_[owner, owner_new[add_occ], np.full(len(add_free), -1, dtype=np.int64)]
        track_id = np.r_[self.track_id_, owner_new[add_occ], np.full(len(add_free), -1, dtype=np.int64)]
        changed = owner != self.owner_
        track_id[:len(owner)][changed] = owner[changed]
        coef = np.r_[self.hmap_.coef_, np.zeros(len(add_occ) + len(add_free))]
        self.hmap_.set_clusters(added, coef)
        self.owner_ = new_owner
        self.track_id_ = track_id
        for rid in [r for r in self.records_ if not np.any(self.owner_ == r)]:
            del self.records_[rid]

    def _novel(self, base: ClusterSet, occupied: bool, cand: ClusterSet) -> np.ndarray:
        half = 0.5 * self.cfg.resolution
        if len(cand) == 0:
            return np.zeros(0, dtype=np.int64)
        existing = base.means[base.occupied == occupied]
        ok = np.ones(len(cand), dtype=bool)
        if len(existing):
            d, _ = cKDTree(existing).query(cand.means)
            ok = d > half
        grid = SpatialHash(half, cand.dim)
        keep = []
        for i in np.flatnonzero(ok):
            p = cand.means[i].tolist()
            if grid.nearest_within(p, half) >= 0:
                continue
            grid.insert(p)
            keep.append(i)
        return np.asarray(keep, dtype=np.int64)

    def _retire(self):
        """Freeze records that coasted too long: bake in decay and dilation."""
        for rid in [r for r, rec in self.records_.items() if rec.coast > self.cfg.max_coast]:
            rec = self.records_.pop(rid)
            idx = self.members(rid)
            eff = self._effective_clusters(self.hmap_.clusters_, self.owner_, {rid: rec.position_covariance})
            cs = self.hmap_.clusters_
            cs.covariances[idx] = eff.covariances[idx]
            cs.weight_scales[idx] = eff.weight_scales[idx]
            self.owner_[idx] = -1

    # -- queries ---------------------------------------------------------------
    def clusters_at(self, t_star: int) -> ClusterSet:
        """Inference hinges at frame ``t_star`` (propagated, dilated and decayed)."""
        self._check_ready()
        t_star = int(t_star)
        T = self.frame_index_
        if t_star < self.first_frame_:
            raise HistoryError(f"time {t_star} precedes the first frame {self.first_frame_}")
        if t_star >= T:
            return self._future_clusters(t_star - T)
        return self._past_clusters(t_star)

    def _future_clusters(self, n: int) -> ClusterSet:
        clusters = self.hmap_.clusters_
        covs = {}
        for rid, rec in self.records_.items():
            idx = self.members(rid)
            if len(idx) == 0:
                continue
            if rec.is_static:
                # parked objects are held where they are, without growing uncertainty
                covs[rid] = rec.position_covariance
                continue
            if n > 0:
                centroid = clusters.means[idx].mean(axis=0)
                _, steps = propagate_to(self._pivot_track(rec.track, centroid), n, self._Q, self.dim_)
                net = RigidTransform.identity(self.dim_)
                for T in steps:
                    net = T.compose(net)
                clusters = transform_clusters(clusters, idx, net)
            P = rec.map_covariance
            F = transition_matrix()
            for _ in range(n):
                P = F @ P @ F.T + self._Q
            covs[rid] = P[:2, :2]
        return self._effective_clusters(clusters, self.owner_, covs)

    def _past_clusters(self, t_star: int) -> ClusterSet:
        entries = {e.frame: e for e in self.log_}
        if t_star not in entries:
            raise HistoryError(f"time {t_star} is older than the {len(self.log_)} frame history")
        clusters = self.hmap_.clusters_
        for t in range(self.frame_index_, t_star, -1):
            for rid, T in entries[t].transforms.items():
                idx = np.flatnonzero(self.track_id_ == rid)
                if len(idx):
                    clusters = transform_clusters(clusters, idx, T.inverse())
        return self._effective_clusters(clusters, self.track_id_, entries[t_star].position_covariances)

    def _check_ready(self):
        if not self.is_initialized:
            raise ValueError("the map has not ingested any frame")

    def decision_function(self, X, t_star: Optional[int] = None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if not self.is_initialized:
            return np.full(len(X), self.cfg.bias)
        t = self.frame_index_ if t_star is None else t_star
        hinges = self.clusters_at(t)
        return feature_matrix(X, hinges, self.cfg.feature_cutoff) @ self.hmap_.coef_ + self.cfg.bias

    def predict_proba(self, X, t_star: Optional[int] = None) -> np.ndarray:
        """Occupancy probability of each row of ``X`` at frame ``t_star`` (default: now)."""
        return expit(self.decision_function(X, t_star))

    def query(self, x, t_star: Optional[int] = None) -> float:
        return float(self.predict_proba(np.asarray(x, dtype=float).reshape(1, -1), t_star)[0])

    def render_grid(self, t_star: Optional[int], bounds, resolution: float, z: float = 0.0) -> np.ndarray:
        """Probabilities at cell centres of a grid over ``bounds = (x0, y0, x1, y1)``.

        Row ``i`` holds cells at ``y0 + (i + 0.5) * resolution``.  For 3D maps a
        horizontal slice at height ``z`` is rendered.
        """
        xs, ys = grid_centres(bounds, resolution)
        gx, gy = np.meshgrid(xs, ys)
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        dim = self.dim_ if self.is_initialized else 2
        if dim == 3:
            pts = np.column_stack([pts, np.full(len(pts), z)])
        return self.predict_proba(pts, t_star).reshape(len(ys), len(xs))

    # -- sklearn-style entry points ----------------------------------------------
    def fit(self, frames, y=None):
        """Reset and ingest ``frames`` in order."""
        for attr in ("hmap_",):
            if hasattr(self, attr):
                delattr(self, attr)
        for f in frames:
            self.step(f)
        return self

    def partial_fit(self, frame: Frame, y=None):
        return self.step(frame)

    # -- persistence -----------------------------------------------------------
    def save(self, path):
        """Write a snapshot; ``.npz`` is binary, anything else JSON."""
        from .snapshot import save_snapshot
        return save_snapshot(self, path)

    @classmethod
    def load(cls, path) -> "DynamicHilbertMap":
        from .snapshot import load_snapshot
        return load_snapshot(path)

    # -- summaries -----------------------------------------------------------
    def summary(self) -> dict:
        self._check_ready()
        cs = self.hmap_.clusters_
        return {"frame": self.frame_index_, "clusters": len(cs),
                "occupied": int(cs.occupied.sum()), "free": int((~cs.occupied).sum()),
                "objects": len(self.records_),
                "dynamic_clusters": int((self.owner_ >= 0).sum())}


def grid_centres(bounds, resolution: float):
    x0, y0, x1, y1 = (float(b) for b in bounds)
    if not resolution > 0:
        raise GridError("grid resolution must be > 0")
    if not (x1 > x0 and y1 > y0):
        raise GridError("grid bounds have zero or negative area")
    nx = int(math.ceil((x1 - x0) / resolution - 1e-9))
    ny = int(math.ceil((y1 - y0) / resolution - 1e-9))
    if nx * ny > MAX_GRID_CELLS:
        raise GridError(f"grid of {nx}x{ny} cells exceeds the {MAX_GRID_CELLS} cell limit")
    return x0 + (np.arange(nx) + 0.5) * resolution, y0 + (np.arange(ny) + 0.5) * resolution


def _overlap_rms(a: np.ndarray, b: np.ndarray) -> float:
    """Smaller of the two one-sided nearest-neighbour RMS distances.

    When an object enters or leaves view one scan is roughly a subset of
    the other, and only the subset side is expected to match everywhere.
    """
    ab = cKDTree(b).query(a)[0]
    ba = cKDTree(a).query(b)[0]
    return math.sqrt(min(np.mean(ab ** 2), np.mean(ba ** 2)))


class _StageTimer:
    def __init__(self):
        import time
        self._clock = time.perf_counter
        self.times: Dict[str, float] = {}

    def __call__(self, name: str):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t0 = timer._clock()

            def __exit__(self, *exc):
                timer.times[name] = timer.times.get(name, 0.0) + timer._clock() - self.t0
                return False

        return _Ctx()
