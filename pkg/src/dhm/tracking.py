"""Constant-velocity Kalman filter over planar object motion.

State layout is ``[x, y, theta, vx, vy, vtheta]`` with velocities expressed
per frame; the observation is the per-frame rigid displacement estimated by
ICP, so ``H`` selects the velocity block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .core import RigidTransform, rotation_about_z, wrap_angle

__all__ = [
    "MotionObservation",
    "TrackState",
    "aggregate_covariance",
    "heading_from_covariance",
    "init_track",
    "observation_matrix",
    "predict",
    "propagate_to",
    "transition_matrix",
    "update",
]


def transition_matrix(dt: float = 1.0) -> np.ndarray:
    F = np.eye(6)
    F[0, 3] = F[1, 4] = F[2, 5] = dt
    return F


def observation_matrix() -> np.ndarray:
    H = np.zeros((3, 6))
    H[:, 3:] = np.eye(3)
    return H


_F = transition_matrix(1.0)
_H = observation_matrix()


@dataclass(frozen=True)
class TrackState:
    state: np.ndarray
    covariance: np.ndarray
    last_observed: int = 0

    def __post_init__(self):
        x = np.array(self.state, dtype=float).reshape(6)
        x[2] = wrap_angle(x[2])
        P = np.array(self.covariance, dtype=float).reshape(6, 6)
        object.__setattr__(self, "state", x)
        object.__setattr__(self, "covariance", 0.5 * (P + P.T))

    @property
    def position(self) -> np.ndarray:
        return self.state[:2]

    @property
    def heading(self) -> float:
        return float(self.state[2])

    @property
    def velocity(self) -> np.ndarray:
        return self.state[3:5]

    @property
    def angular_velocity(self) -> float:
        return float(self.state[5])

    @property
    def position_covariance(self) -> np.ndarray:
        return self.covariance[:2, :2]


@dataclass(frozen=True)
class MotionObservation:
    displacement: np.ndarray
    rotation_delta: float

    def __post_init__(self):
        d = np.array(self.displacement, dtype=float).reshape(2)
        if not (np.all(np.isfinite(d)) and math.isfinite(self.rotation_delta)):
            raise ValueError("observation must be finite")
        object.__setattr__(self, "displacement", d)

    @classmethod
    def from_transform(cls, transform: RigidTransform) -> "MotionObservation":
        """Displacement ``(t0, t1)`` and angle ``atan2(R10, R00)`` of a rigid transform."""
        return cls(transform.translation[:2], transform.angle)

    def as_vector(self) -> np.ndarray:
        return np.array([self.displacement[0], self.displacement[1], self.rotation_delta])


def heading_from_covariance(cov) -> float:
    """Direction of the dominant eigenvector of the (x, y) block.

    The eigenvector sign is canonicalised to the half-plane x > 0, giving an
    angle in (-pi/2, pi/2]; an isotropic covariance yields 0.
    """
    cov = np.asarray(cov, dtype=float)[:2, :2]
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    if math.isclose(vals[0], vals[1], rel_tol=1e-9, abs_tol=1e-15):
        return 0.0
    v = vecs[:, 1]
    if v[0] < 0 or (v[0] == 0 and v[1] < 0):
        v = -v
    return math.atan2(v[1], v[0])


def aggregate_covariance(means, covariances=None) -> np.ndarray:
    """Spatial covariance of an object made of equally weighted Gaussian clusters."""
    means = np.asarray(means, dtype=float)
    centred = means - means.mean(axis=0)
    spread = centred.T @ centred / len(means)
    if covariances is not None:
        spread = spread + np.asarray(covariances, dtype=float).mean(axis=0)
    return spread


def init_track(position, object_covariance, frame_index: int = 0) -> TrackState:
    """Zero-velocity track at ``position`` with zero covariance."""
    x = np.zeros(6)
    x[:2] = np.asarray(position, dtype=float)[:2]
    x[2] = heading_from_covariance(object_covariance)
    return TrackState(x, np.zeros((6, 6)), frame_index)


def predict(track: TrackState, Q) -> TrackState:
    """One Kalman prediction step: ``x <- F x``, ``P <- F P F^T + Q``."""
    Q = np.asarray(Q, dtype=float)
    x = _F @ track.state
    P = _F @ track.covariance @ _F.T + Q
    return TrackState(x, P, track.last_observed)


def update(track: TrackState, obs: MotionObservation, R, frame_index: int = None) -> TrackState:
    """Kalman correction with a per-frame motion observation.

    The rotation component of the innovation is wrapped to (-pi, pi].
    """
    R = np.asarray(R, dtype=float)
    x, P = track.state, track.covariance
    innovation = obs.as_vector() - _H @ x
    innovation[2] = wrap_angle(innovation[2])
    S = R + _H @ P @ _H.T
    K = np.linalg.solve(S.T, (P @ _H.T).T).T
    x = x + K @ innovation
    P = (np.eye(6) - K @ _H) @ P
    last = track.last_observed if frame_index is None else frame_index
    return TrackState(x, P, last)


def step_transform(track: TrackState, dim: int = 2) -> RigidTransform:
    """Rigid motion over one frame implied by the track's velocities.

    Rotation by the angular velocity about the current position, followed by
    translation by the linear velocity.
    """
    pivot = np.zeros(dim)
    pivot[:2] = track.position
    shift = np.zeros(dim)
    shift[:2] = track.velocity
    return RigidTransform.about_pivot(rotation_about_z(track.angular_velocity, dim), shift, pivot)


def propagate_to(track: TrackState, n_steps: int, Q, dim: int = 2
                 ) -> Tuple[TrackState, List[RigidTransform]]:
    """Prediction-only rollout over ``n_steps`` frames.

    Returns the final state and the per-step rigid transforms to apply to the
    object's clusters.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    transforms = []
    for _ in range(n_steps):
        transforms.append(step_transform(track, dim))
        track = predict(track, Q)
    return track, transforms
