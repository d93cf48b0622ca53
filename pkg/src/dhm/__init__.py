"""Dynamic Hilbert maps: continuous spatiotemporal occupancy from LIDAR frames."""

from .core import Cluster, ClusterSet, Config, Frame, RigidTransform
from .dynamic_map import DynamicHilbertMap, GridError, HistoryError, decay_ratio
from .evaluation import EvalReport, compute_metrics, horizon_protocol, run_protocol
from .hilbert_map import HilbertMap
from .registration import icp_align
from .sim import SceneSpec, simulate
from .snapshot import load_snapshot, save_snapshot

__all__ = [
    "Cluster",
    "ClusterSet",
    "Config",
    "DynamicHilbertMap",
    "EvalReport",
    "Frame",
    "GridError",
    "HilbertMap",
    "HistoryError",
    "RigidTransform",
    "SceneSpec",
    "compute_metrics",
    "decay_ratio",
    "horizon_protocol",
    "icp_align",
    "load_snapshot",
    "run_protocol",
    "save_snapshot",
    "simulate",
]

__version__ = "0.1.0"
