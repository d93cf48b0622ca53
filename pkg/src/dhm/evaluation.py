"""Occupancy metrics, the prediction-horizon protocol and report formatting."""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .clustering import sample_free_points
from .core import Config, Frame
from .dynamic_map import DynamicHilbertMap

__all__ = [
    "EvalReport",
    "Metrics",
    "auc_score",
    "compute_metrics",
    "evaluation_points",
    "horizon_protocol",
    "run_protocol",
]

SCHEMA = "dhm-report-v1"
_EPS = 1e-12


@dataclass(frozen=True)
class Metrics:
    auc: Optional[float]
    nll: float
    accuracy: float
    f_measure: float
    n: int


def _binary(labels) -> np.ndarray:
    y = np.asarray(labels)
    if y.dtype == bool:
        return y
    values = set(np.unique(y).tolist())
    if not values <= {-1, 0, 1}:
        raise ValueError(f"labels must be boolean, {{0, 1}} or {{-1, +1}}, got {sorted(values)}")
    return y == 1


def auc_score(probabilities, labels) -> Optional[float]:
    """Area under the ROC curve via the rank-sum statistic (ties averaged).

    Returns ``None`` when only one class is present.
    """
    p = np.asarray(probabilities, dtype=float)
    y = _binary(labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(p)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def compute_metrics(probabilities, labels) -> Metrics:
    """AUC, clamped NLL, and accuracy / F-measure at threshold 0.5.

    A probability of exactly 0.5 counts as a free prediction.  The F-measure
    is 0 when precision and recall are both 0.
    """
    p = np.asarray(probabilities, dtype=float)
    y = _binary(labels)
    if len(p) == 0 or len(p) != len(y):
        raise ValueError("need equally many (non-zero) probabilities and labels")
    pc = np.clip(p, _EPS, 1 - _EPS)
    nll = float(-np.mean(np.where(y, np.log(pc), np.log1p(-pc))))
    pred = p > 0.5
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Metrics(auc_score(p, y), nll, float(np.mean(pred == y)), float(f), len(p))


def evaluation_points(frame: Frame, spacing: float, region=None):
    """The frame's hits (occupied) and sampled free points, optionally cropped.

    ``region`` is an ``(x0, y0, x1, y1)`` rectangle in the x-y plane.
    Returns ``(points, labels)`` with boolean labels.
    """
    occ = frame.occupied_points
    free = sample_free_points(frame, spacing) if len(frame) else np.zeros((0, frame.dim))
    X = np.vstack([occ, free])
    y = np.r_[np.ones(len(occ), dtype=bool), np.zeros(len(free), dtype=bool)]
    if region is not None:
        x0, y0, x1, y1 = region
        keep = (X[:, 0] >= x0) & (X[:, 0] <= x1) & (X[:, 1] >= y0) & (X[:, 1] <= y1)
        X, y = X[keep], y[keep]
    return X, y


def horizon_protocol(frames: Sequence[Frame], config: Config, train_frames: int,
                     horizons: Sequence[int], region=None) -> Dict[int, float]:
    """F-measure of predictions made ``h`` frames past the training window.

    The map ingests ``frames[:train_frames]`` and is then frozen; for each
    horizon ``h`` the evaluation points of frame ``train_frames - 1 + h`` are
    scored at that time.  Horizons without a frame are skipped with a warning.
    """
    dhm = DynamicHilbertMap(config)
    for f in frames[:train_frames]:
        dhm.step(f)
    return _score_horizons(dhm, frames, config, train_frames, horizons, region)


def _score_horizons(dhm, frames, config, train_frames, horizons, region) -> Dict[int, float]:
    out = {}
    last = train_frames - 1
    for h in horizons:
        k = last + int(h)
        if k >= len(frames):
            warnings.warn(f"no frame for horizon {h}; skipped", RuntimeWarning, stacklevel=3)
            continue
        X, y = evaluation_points(frames[k], config.free_spacing, region)
        if len(X) == 0:
            warnings.warn(f"no evaluation points for horizon {h}; skipped", RuntimeWarning, stacklevel=3)
            continue
        p = dhm.predict_proba(X, frames[last].timestamp + int(h))
        out[int(h)] = compute_metrics(p, y).f_measure
    return out


@dataclass
class EvalReport:
    auc: Optional[float]
    nll: float
    accuracy: float
    f_measure: float
    horizons: Dict[str, Dict[int, float]] = field(default_factory=dict)
    step_ms_mean: float = 0.0
    step_ms_p95: float = 0.0
    seeds: int = 1
    train_frames: int = 0

    def __post_init__(self):
        for name in ("accuracy", "f_measure"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.auc is not None and not 0.0 <= self.auc <= 1.0:
            raise ValueError("auc must lie in [0, 1]")
        if self.nll < 0:
            raise ValueError("nll must be >= 0")

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "seeds": self.seeds,
            "train_frames": self.train_frames,
            "static": {"auc": self.auc, "nll": self.nll, "accuracy": self.accuracy,
                       "f_measure": self.f_measure},
            "horizons": {m: {str(h): v for h, v in sorted(c.items())} for m, c in self.horizons.items()},
            "timing_ms": {"step_mean": self.step_ms_mean, "step_p95": self.step_ms_p95},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        auc = "n/a" if self.auc is None else f"{self.auc:.3f}"
        lines = [f"{'AUC':>7} {'NLL':>7} {'ACC':>7} {'F-MEAS':>7} {'TIME':>8}",
                 f"{auc:>7} {self.nll:>7.3f} {100 * self.accuracy:>7.2f} {self.f_measure:>7.3f} "
                 f"{self.step_ms_mean:>6.1f}ms"]
        if self.horizons:
            hs = sorted({h for c in self.horizons.values() for h in c})
            lines.append("")
            lines.append(f"{'t*':>6} " + " ".join(f"{m:>10}" for m in self.horizons))
            for h in hs:
                cells = [self.horizons[m].get(h) for m in self.horizons]
                lines.append(f"{h:>6} " + " ".join(f"{'-':>10}" if c is None else f"{c:>10.3f}" for c in cells))
        return "\n".join(lines)


def run_protocol(frames_for_seed: Callable[[int], List[Frame]], config: Config, train_frames: int,
                 horizons: Sequence[int], seeds: int = 1, region=None) -> EvalReport:
    """Average the horizon protocol (DHM and static baseline) over seeds.

    ``frames_for_seed(i)`` supplies the frames for run ``i``; run ``i`` also
    uses ``config.seed + i``.  Static metrics are measured at ``t* = 0`` on the
    full last training frame.
    """
    if train_frames < 1:
        raise ValueError("train_frames must be >= 1")
    per_method: Dict[str, Dict[int, List[float]]] = {"DHM": {}, "HM": {}}
    static_metrics: List[Metrics] = []
    step_ms: List[float] = []
    for i in range(seeds):
        frames = list(frames_for_seed(i))
        if len(frames) < train_frames:
            raise ValueError(f"need at least {train_frames} frames, got {len(frames)}")
        for method, dynamic in (("DHM", True), ("HM", False)):
            cfg = config.replace(seed=config.seed + i, dynamic_enabled=dynamic)
            dhm = DynamicHilbertMap(cfg)
            for f in frames[:train_frames]:
                t0 = time.perf_counter()
                dhm.step(f)
                if dynamic:
                    step_ms.append(1000 * (time.perf_counter() - t0))
            if dynamic:
                last = frames[train_frames - 1]
                X, y = evaluation_points(last, cfg.free_spacing)
                static_metrics.append(compute_metrics(dhm.predict_proba(X, last.timestamp), y))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore" if i else "default")
                scores = _score_horizons(dhm, frames, cfg, train_frames, horizons, region)
            for h, v in scores.items():
                per_method[method].setdefault(h, []).append(v)
    aucs = [m.auc for m in static_metrics if m.auc is not None]
    return EvalReport(
        auc=float(np.mean(aucs)) if aucs else None,
        nll=float(np.mean([m.nll for m in static_metrics])),
        accuracy=float(np.mean([m.accuracy for m in static_metrics])),
        f_measure=float(np.mean([m.f_measure for m in static_metrics])),
        horizons={m: {h: float(np.mean(v)) for h, v in c.items()} for m, c in per_method.items()},
        step_ms_mean=float(np.mean(step_ms)) if step_ms else 0.0,
        step_ms_p95=float(np.percentile(step_ms, 95)) if step_ms else 0.0,
        seeds=seeds,
        train_frames=train_frames,
    )
