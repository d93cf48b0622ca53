"""Versioned save/load of a :class:`DynamicHilbertMap`.

Two encodings share one nested structure: JSON (``.json``, optionally
``.json.gz``) writes floats with their shortest round-trip representation,
and NPZ (``.npz``) stores every array in binary.  Both are lossless, and a
restored map continues stepping exactly like the original because the
training RNG state is part of the dump.
"""

from __future__ import annotations

import gzip
import io
import json
from collections import deque
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .core import ClusterSet, Config, RigidTransform
from .dynamic_map import DhmObjectRecord, DynamicHilbertMap, _LogEntry
from .hilbert_map import HilbertMap
from .segmentation import ObjectSegment
from .tracking import TrackState

__all__ = ["SCHEMA", "SnapshotError", "load_snapshot", "save_snapshot", "snapshot_state",
           "restore_snapshot"]

SCHEMA = "dhm-snapshot-v1"
_ARRAY_TAG = "__ndarray__"


class SnapshotError(ValueError):
    """A snapshot file is unreadable, has the wrong schema or is inconsistent."""


# -- state <-> map -------------------------------------------------------------
def _clusters_state(cs: ClusterSet) -> dict:
    return {"means": cs.means, "covariances": cs.covariances, "weight_scales": cs.weight_scales,
            "occupied": cs.occupied, "counts": cs.counts, "resolution": cs.resolution}


def _clusters_from(d: dict, dim: int) -> ClusterSet:
    return ClusterSet(np.asarray(d["means"], dtype=float).reshape(-1, dim),
                      np.asarray(d["covariances"], dtype=float).reshape(-1, dim, dim),
                      d["weight_scales"], d["occupied"], d["counts"], float(d["resolution"]))


def _transform_state(T: RigidTransform) -> dict:
    return {"rotation": T.rotation, "translation": T.translation}


def snapshot_state(dhm: DynamicHilbertMap) -> dict:
    """Everything needed to answer queries and keep stepping, as a nested dict."""
    state = {"schema": SCHEMA, "config": asdict(dhm.cfg), "initialized": dhm.is_initialized}
    if not dhm.is_initialized:
        return state
    hm = dhm.hmap_
    rng = getattr(hm, "_rng_state", None)
    state.update(
        dim=dhm.dim_,
        frame_index=dhm.frame_index_,
        first_frame=dhm.first_frame_,
        next_record_id=dhm.next_record_id_,
        clusters=_clusters_state(hm.clusters_),
        coef=hm.coef_,
        classes=hm.classes_,
        objective_history=[float(v) for v in hm.objective_history_],
        rng=None if rng is None else rng.bit_generator.state,
        owner=dhm.owner_,
        track_id=dhm.track_id_,
        records=[{"id": rid, "state": r.track.state, "covariance": r.track.covariance,
                  "last_observed": r.track.last_observed, "map_covariance": r.map_covariance,
                  "coast": r.coast, "still_frames": r.still_frames}
                 for rid, r in dhm.records_.items()],
        log=[{"frame": e.frame,
              "transforms": [[rid, _transform_state(T)] for rid, T in e.transforms.items()],
              "position_covariances": [[rid, P] for rid, P in e.position_covariances.items()]}
             for e in dhm.log_],
        prev_clusters=_clusters_state(dhm.prev_clusters_),
        prev_objects=[[s.object_id, list(s.clusters)] for s in dhm.prev_objects_],
        prev_record_of=[[k, v] for k, v in dhm.prev_record_of_.items()],
        prev_points=[[k, v] for k, v in dhm.prev_points_.items()],
    )
    return state


def restore_snapshot(state: dict) -> DynamicHilbertMap:
    """Rebuild a map from :func:`snapshot_state` output."""
    if not isinstance(state, dict) or state.get("schema") != SCHEMA:
        found = state.get("schema") if isinstance(state, dict) else None
        raise SnapshotError(f"expected schema {SCHEMA!r}, found {found!r}")
    try:
        cfg = Config(**state["config"])
        dhm = DynamicHilbertMap(cfg)
        if not state["initialized"]:
            return dhm
        dim = int(state["dim"])
        dhm._init_state(dim)
        hm = HilbertMap.from_config(cfg).set_clusters(_clusters_from(state["clusters"], dim),
                                                     state["coef"])
        hm.classes_ = np.asarray(state["classes"])
        hm.objective_history_ = list(state["objective_history"])
        if state["rng"] is not None:
            rng = np.random.default_rng()
            rng.bit_generator.state = state["rng"]
            hm._rng_state = rng
        dhm.hmap_ = hm
        dhm.frame_index_ = int(state["frame_index"])
        dhm.first_frame_ = int(state["first_frame"])
        dhm.next_record_id_ = int(state["next_record_id"])
        dhm.owner_ = np.asarray(state["owner"], dtype=np.int64).reshape(-1)
        dhm.track_id_ = np.asarray(state["track_id"], dtype=np.int64).reshape(-1)
        for r in state["records"]:
            track = TrackState(r["state"], r["covariance"], int(r["last_observed"]))
            dhm.records_[int(r["id"])] = DhmObjectRecord(
                int(r["id"]), track, np.asarray(r["map_covariance"], dtype=float).reshape(6, 6),
                int(r["coast"]), int(r["still_frames"]))
        dhm.log_ = deque(maxlen=cfg.log_depth)
        for e in state["log"]:
            dhm.log_.append(_LogEntry(
                int(e["frame"]),
                {int(rid): RigidTransform(np.asarray(T["rotation"], dtype=float).reshape(dim, dim),
                                          T["translation"]) for rid, T in e["transforms"]},
                {int(rid): np.asarray(P, dtype=float).reshape(2, 2)
                 for rid, P in e["position_covariances"]}))
        dhm.prev_clusters_ = _clusters_from(state["prev_clusters"], dim)
        dhm.prev_objects_ = [ObjectSegment(int(i), tuple(c)) for i, c in state["prev_objects"]]
        dhm.prev_record_of_ = {int(k): int(v) for k, v in state["prev_record_of"]}
        dhm.prev_points_ = {int(k): np.asarray(v, dtype=float).reshape(-1, dim)
                            for k, v in state["prev_points"]}
    except (KeyError, TypeError, ValueError) as exc:
        raise SnapshotError(f"inconsistent snapshot: {exc}") from exc
    if len(dhm.owner_) != len(dhm.hmap_.clusters_) or len(dhm.track_id_) != len(dhm.owner_):
        raise SnapshotError("inconsistent snapshot: per-cluster arrays differ in length")
    return dhm


# -- encodings -------------------------------------------------------------------
def _encode(obj, arrays=None):
    """Replace arrays by tagged records, inline (JSON) or as references (NPZ)."""
    if isinstance(obj, np.ndarray):
        if arrays is None:
            return {_ARRAY_TAG: obj.dtype.str, "shape": list(obj.shape), "data": obj.ravel().tolist()}
        key = f"a{len(arrays)}"
        arrays[key] = obj
        return {_ARRAY_TAG: key}
    if isinstance(obj, dict):
        return {k: _encode(v, arrays) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v, arrays) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _decode(obj, arrays=None):
    if isinstance(obj, dict):
        if _ARRAY_TAG in obj:
            if arrays is None:
                return np.array(obj["data"], dtype=np.dtype(obj[_ARRAY_TAG])).reshape(obj["shape"])
            return arrays[obj[_ARRAY_TAG]]
        return {k: _decode(v, arrays) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v, arrays) for v in obj]
    return obj


def _is_npz(path: Path) -> bool:
    return path.suffix.lower() == ".npz"


def save_snapshot(dhm: DynamicHilbertMap, path) -> Path:
    """Write ``dhm`` to ``path``; ``.npz`` selects binary, anything else JSON."""
    path = Path(path)
    state = snapshot_state(dhm)
    if _is_npz(path):
        arrays = {}
        meta = json.dumps(_encode(state, arrays), allow_nan=False)
        with open(path, "wb") as fh:
            np.savez_compressed(fh, __meta__=np.array(meta), **arrays)
        return path
    text = json.dumps(_encode(state), allow_nan=False, separators=(",", ":"))
    opener = gzip.open if path.suffix.lower() == ".gz" else open
    with opener(path, "wt", encoding="utf-8") as fh:
        fh.write(text)
    return path


def load_snapshot(path) -> DynamicHilbertMap:
    path = Path(path)
    try:
        if _is_npz(path):
            with np.load(path, allow_pickle=False) as data:
                arrays = {k: data[k] for k in data.files if k != "__meta__"}
                state = _decode(json.loads(str(data["__meta__"])), arrays)
        else:
            raw = path.read_bytes()
            if raw[:2] == b"\x1f\x8b":
                raw = gzip.decompress(raw)
            state = _decode(json.loads(io.TextIOWrapper(io.BytesIO(raw), encoding="utf-8").read()))
    except (OSError, ValueError, KeyError) as exc:
        raise SnapshotError(f"cannot read snapshot {path}: {exc}") from exc
    return restore_snapshot(state)
