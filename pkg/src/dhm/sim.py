"""Synthetic scenes and a virtual range sensor with a ground-truth occupancy oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .core import Frame, rotation_2d

__all__ = [
    "Box",
    "DynamicShape",
    "Polygon",
    "SceneSpec",
    "Sensor",
    "SimResult",
    "default_region",
    "default_scene",
    "default_scene_3d",
    "exit_scene",
    "shape_from_dict",
    "simulate",
]


def _ccw(vertices: np.ndarray) -> np.ndarray:
    x, y = vertices[:, 0], vertices[:, 1]
    area2 = np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
    return vertices if area2 > 0 else vertices[::-1]


@dataclass(frozen=True)
class Polygon:
    """Convex polygon in the plane; vertices are stored counter-clockwise."""

    vertices: np.ndarray
    dim = 2

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise ValueError("a polygon needs at least three 2D vertices")
        object.__setattr__(self, "vertices", _ccw(v))

    @property
    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def to_dict(self) -> dict:
        return {"type": "polygon", "vertices": self.vertices.tolist()}


@dataclass(frozen=True)
class Box:
    """Rectangle (2D) or box (3D) with a yaw about the vertical axis."""

    center: np.ndarray
    size: np.ndarray
    yaw: float = 0.0

    def __post_init__(self):
        c = np.array(self.center, dtype=float)
        s = np.array(self.size, dtype=float)
        if c.shape not in ((2,), (3,)) or s.shape != c.shape:
            raise ValueError("box center and size must both have length 2 or 3")
        if np.any(s <= 0):
            raise ValueError("box size must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "size", s)

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def centroid(self) -> np.ndarray:
        return self.center

    def to_polygon(self) -> Polygon:
        hx, hy = self.size[:2] / 2
        corners = np.array([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]])
        return Polygon(corners @ rotation_2d(self.yaw).T + self.center[:2])

    def to_dict(self) -> dict:
        return {"type": "box", "center": self.center.tolist(), "size": self.size.tolist(),
                "yaw": self.yaw}


@dataclass(frozen=True)
class DynamicShape:
    """A shape moving at constant linear and angular velocity (per frame)."""

    shape: object
    velocity: np.ndarray
    angular_velocity: float = 0.0

    def __post_init__(self):
        v = np.array(self.velocity, dtype=float)
        if v.shape != (self.shape.dim,):
            raise ValueError("velocity length must match the shape dimension")
        object.__setattr__(self, "velocity", v)

    def pose_at(self, t: float):
        """Shape at frame ``t``: rotated about its initial centroid, then shifted."""
        theta = self.angular_velocity * t
        shift = self.velocity * t
        s = self.shape
        if isinstance(s, Box):
            return Box(s.center + shift, s.size, s.yaw + theta)
        R = rotation_2d(theta)
        c = s.centroid
        return Polygon((s.vertices - c) @ R.T + c + shift)

    def to_dict(self) -> dict:
        d = self.shape.to_dict()
        d.update(velocity=self.velocity.tolist(), angular_velocity=self.angular_velocity)
        return d


@dataclass(frozen=True)
class Sensor:
    """Planar fan of beams, optionally stacked over elevation rings in 3D.

    ``heading`` is the centre of the field of view in degrees from +x.
    """

    origin: np.ndarray
    fov: float = 180.0
    beams: int = 181
    max_range: float = 30.0
    heading: float = 90.0
    elevations: Tuple[float, ...] = (0.0,)

    def __post_init__(self):
        o = np.array(self.origin, dtype=float)
        if o.shape not in ((2,), (3,)):
            raise ValueError("sensor origin must have length 2 or 3")
        if self.beams < 1 or not self.max_range > 0:
            raise ValueError("need at least one beam and a positive max range")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "elevations", tuple(float(e) for e in self.elevations))

    @property
    def dim(self) -> int:
        return len(self.origin)

    def directions(self) -> np.ndarray:
        if self.beams == 1:
            az = np.array([math.radians(self.heading)])
        else:
            az = np.radians(self.heading - self.fov / 2 + self.fov * np.arange(self.beams) / (self.beams - 1))
        if self.dim == 2:
            return np.column_stack([np.cos(az), np.sin(az)])
        el = np.radians(np.asarray(self.elevations))
        A, E = np.meshgrid(az, el)
        A, E = A.ravel(), E.ravel()
        return np.column_stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)])

    def to_dict(self) -> dict:
        return {"origin": self.origin.tolist(), "fov": self.fov, "beams": self.beams,
                "max_range": self.max_range, "heading": self.heading,
                "elevations": list(self.elevations)}


def shape_from_dict(d: dict):
    kind = d.get("type", "box")
    if kind == "box":
        shape = Box(d["center"], d["size"], float(d.get("yaw", 0.0)))
    elif kind == "polygon":
        shape = Polygon(d["vertices"])
    else:
        raise ValueError(f"unknown shape type {kind!r}")
    if "velocity" in d:
        return DynamicShape(shape, d["velocity"], float(d.get("angular_velocity", 0.0)))
    return shape


@dataclass(frozen=True)
class SceneSpec:
    static_shapes: Tuple = ()
    dynamic_shapes: Tuple = ()
    sensor: Sensor = None
    frames: int = 16
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sensor is None:
            raise ValueError("a scene needs a sensor")
        if self.frames < 1 or self.noise_sigma < 0:
            raise ValueError("frames must be >= 1 and noise_sigma >= 0")
        object.__setattr__(self, "static_shapes", tuple(self.static_shapes))
        object.__setattr__(self, "dynamic_shapes", tuple(self.dynamic_shapes))
        dim = self.sensor.dim
        for s in self.static_shapes + tuple(d.shape for d in self.dynamic_shapes):
            if s.dim != dim:
                raise ValueError("shape and sensor dimensions differ")

    @property
    def dim(self) -> int:
        return self.sensor.dim

    def shapes_at(self, t: float) -> list:
        return list(self.static_shapes) + [d.pose_at(t) for d in self.dynamic_shapes]

    def replace(self, **changes) -> "SceneSpec":
        from dataclasses import replace
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {"sensor": self.sensor.to_dict(), "frames": self.frames,
                "noise_sigma": self.noise_sigma, "seed": self.seed,
                "static": [s.to_dict() for s in self.static_shapes],
                "dynamic": [d.to_dict() for d in self.dynamic_shapes]}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        sensor = d["sensor"]
        sensor = Sensor(sensor["origin"], float(sensor.get("fov", 180.0)), int(sensor.get("beams", 181)),
                        float(sensor.get("max_range", 30.0)), float(sensor.get("heading", 90.0)),
                        tuple(sensor.get("elevations", (0.0,))))
        static = [shape_from_dict(s) for s in d.get("static", [])]
        dynamic = [shape_from_dict(s) for s in d.get("dynamic", [])]
        if any(isinstance(s, DynamicShape) for s in static) or not all(
                isinstance(s, DynamicShape) for s in dynamic):
            raise ValueError("static shapes take no velocity; dynamic shapes need one")
        return cls(static, dynamic, sensor, int(d.get("frames", 16)),
                   float(d.get("noise_sigma", 0.0)), int(d.get("seed", 0)))


def _ray_polygon(origin, dirs, poly: Polygon) -> np.ndarray:
    """Distance along each ray to the polygon boundary (inf if missed)."""
    p = poly.vertices
    e = np.roll(p, -1, axis=0) - p
    w = p - origin  # (E, 2)
    denom = dirs[:, None, 0] * e[None, :, 1] - dirs[:, None, 1] * e[None, :, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (w[None, :, 0] * e[None, :, 1] - w[None, :, 1] * e[None, :, 0]) / denom
        u = (w[None, :, 0] * dirs[:, None, 1] - w[None, :, 1] * dirs[:, None, 0]) / denom
    ok = (np.abs(denom) > 1e-15) & (s >= 0) & (u >= 0) & (u <= 1)
    return np.where(ok, s, np.inf).min(axis=1)


def _ray_box3d(origin, dirs, box: Box) -> np.ndarray:
    R = rotation_2d(-box.yaw)
    o = origin - box.center
    o = np.r_[R @ o[:2], o[2]]
    d = np.column_stack([dirs[:, :2] @ R.T, dirs[:, 2]])
    half = box.size / 2
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - o) / d
        t2 = (half - o) / d
    lo = np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2))
    hi = np.where(np.isnan(t2), np.inf, np.maximum(t1, t2))
    # parallel rays outside a slab never hit
    parallel_out = (d == 0) & (np.abs(o) > half)
    t_near = lo.max(axis=1)
    t_far = hi.min(axis=1)
    hit = (t_near <= t_far) & (t_far >= 0) & ~parallel_out.any(axis=1)
    return np.where(hit, np.maximum(t_near, 0.0), np.inf)


def _ray_cast(origin, dirs, shape) -> np.ndarray:
    if len(origin) == 2:
        poly = shape.to_polygon() if isinstance(shape, Box) else shape
        return _ray_polygon(origin, dirs, poly)
    return _ray_box3d(origin, dirs, shape)


def _inside(points: np.ndarray, shape, strict: bool = False) -> np.ndarray:
    points = np.atleast_2d(points)
    if points.shape[1] == 2:
        poly = shape.to_polygon() if isinstance(shape, Box) else shape
        p = poly.vertices
        e = np.roll(p, -1, axis=0) - p
        rel = points[:, None, :] - p[None, :, :]
        cross = e[None, :, 0] * rel[:, :, 1] - e[None, :, 1] * rel[:, :, 0]
        tol = 1e-9
        return np.all(cross > tol, axis=1) if strict else np.all(cross >= -tol, axis=1)
    R = rotation_2d(-shape.yaw)
    rel = points - shape.center
    local = np.column_stack([rel[:, :2] @ R.T, rel[:, 2]])
    half = shape.size / 2
    if strict:
        return np.all(np.abs(local) < half - 1e-9, axis=1)
    return np.all(np.abs(local) <= half + 1e-9, axis=1)


@dataclass
class SimResult:
    frames: List[Frame]
    spec: SceneSpec

    def occupied(self, points, t: float) -> np.ndarray:
        """Ground truth: whether each point lies inside (or on) a shape at frame ``t``."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros(len(points), dtype=bool)
        for s in self.spec.shapes_at(t):
            out |= _inside(points, s)
        return out


def simulate(spec: SceneSpec) -> SimResult:
    """Ray-cast every frame of ``spec``.

    The first intersection along a beam is its hit, perturbed along the beam
    by Gaussian range noise; beams that hit nothing within range are
    max-range returns.  Deterministic for a given seed.
    """
    rng = np.random.default_rng(spec.seed)
    sensor = spec.sensor
    origin = sensor.origin
    dirs = sensor.directions()
    frames = []
    for t in range(spec.frames):
        shapes = spec.shapes_at(t)
        for s in shapes:
            if _inside(origin, s, strict=True)[0]:
                raise ValueError(f"sensor lies inside a shape at frame {t}")
        rng_t = np.full(len(dirs), np.inf)
        for s in shapes:
            rng_t = np.minimum(rng_t, _ray_cast(origin, dirs, s))
        noise = rng.normal(0.0, spec.noise_sigma, len(dirs)) if spec.noise_sigma > 0 else np.zeros(len(dirs))
        max_range = ~(rng_t <= sensor.max_range)
        dist = np.where(max_range, sensor.max_range, np.clip(rng_t + noise, 0.0, sensor.max_range))
        hits = origin + dirs * dist[:, None]
        origins = np.broadcast_to(origin, hits.shape).copy()
        frames.append(Frame(t, origins, hits, max_range))
    return SimResult(frames, spec)


def default_scene(seed: int = 0, frames: int = 16, noise_sigma: float = 0.01) -> SceneSpec:
    """Room-sized U of walls, one static obstacle and two cars crossing the view.

    A 180 degree, 181 beam sensor with 30 m range sits at the origin looking
    along +y; with the default resolution a frame yields about 5000 points.
    """
    walls = [
        Box([0.0, 7.25], [16.5, 0.5]),
        Box([-8.0, 3.5], [0.5, 7.0]),
        Box([8.0, 3.5], [0.5, 7.0]),
        Box([5.5, 1.5], [0.8, 0.8]),
    ]
    cars = [
        DynamicShape(Box([-5.0, 3.0], [2.0, 1.0]), [0.4, 0.0]),
        DynamicShape(Box([4.0, 5.0], [1.6, 0.8]), [-0.3, 0.0]),
    ]
    return SceneSpec(walls, cars, Sensor([0.0, 0.0], 180.0, 181, 30.0, 90.0), frames, noise_sigma, seed)


def default_scene_3d(seed: int = 0, frames: int = 11, noise_sigma: float = 0.01) -> SceneSpec:
    """Box world: a back wall, a static crate and one moving box, nine sensor rings."""
    boxes = [
        Box([0.0, 6.25, 1.0], [12.5, 0.5, 2.0]),
        Box([-6.0, 3.0, 1.0], [0.5, 6.0, 2.0]),
        Box([6.0, 3.0, 1.0], [0.5, 6.0, 2.0]),
        Box([3.5, 2.0, 0.5], [0.8, 0.8, 1.0]),
    ]
    mover = [DynamicShape(Box([-3.5, 3.5, 0.75], [1.6, 1.0, 1.5]), [0.35, 0.0, 0.0])]
    sensor = Sensor([0.0, 0.0, 0.75], 180.0, 91, 20.0, 90.0, tuple(float(e) for e in np.arange(-8.0, 8.5, 2.0)))
    return SceneSpec(boxes, mover, sensor, frames, noise_sigma, seed)


def exit_scene(seed: int = 0, frames: int = 22, noise_sigma: float = 0.01) -> SceneSpec:
    """A car crossing a 90 degree field of view and driving out of it.

    The sensor sees the car's near corner from the first frame; the car
    leaves the view around frame 8 and keeps going behind the field edge.
    """
    wall = Box([0.0, 6.25], [16.0, 0.5])
    car = DynamicShape(Box([1.0, 3.0], [2.0, 1.0]), [0.4, 0.0])
    sensor = Sensor([0.0, 0.0], 90.0, 91, 20.0, 90.0)
    return SceneSpec((wall,), (car,), sensor, frames, noise_sigma, seed)


def default_region(dim: int = 2) -> Tuple[float, float, float, float]:
    """Axis-aligned (x0, y0, x1, y1) rectangle covering the default scenes' lanes."""
    return (-7.5, 2.0, 7.5, 6.0) if dim == 2 else (-5.5, 2.5, 5.5, 4.5)
