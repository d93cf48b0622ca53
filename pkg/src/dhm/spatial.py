"""Uniform-grid spatial hash for fixed-radius neighbour queries."""

from __future__ import annotations

import itertools
import math
from collections import defaultdict

import numpy as np


class SpatialHash:
    """Bucket points into cubic cells of side ``cell_size``.

    With ``cell_size >= radius`` every point within ``radius`` of a query lies
    in the 3**D cells surrounding the query's cell, so queries are exact.
    """

    def __init__(self, cell_size: float, dim: int):
        if not cell_size > 0:
            raise ValueError("cell_size must be > 0")
        self.cell_size = float(cell_size)
        self.dim = dim
        self._inv = 1.0 / self.cell_size
        self._cells = defaultdict(list)
        self._points = []
        self._offsets = list(itertools.product((-1, 0, 1), repeat=dim))

    def __len__(self) -> int:
        return len(self._points)

    def _key(self, p):
        inv = self._inv
        return tuple(math.floor(c * inv) for c in p)

    def insert(self, point) -> int:
        """Add a point and return its index."""
        p = tuple(float(c) for c in point)
        idx = len(self._points)
        self._points.append(p)
        self._cells[self._key(p)].append(idx)
        return idx

    def move(self, idx: int, point) -> None:
        """Relocate an already inserted point."""
        old = self._points[idx]
        p = tuple(float(c) for c in point)
        k_old, k_new = self._key(old), self._key(p)
        if k_old != k_new:
            self._cells[k_old].remove(idx)
            self._cells[k_new].append(idx)
        self._points[idx] = p

    def candidates(self, point):
        key = self._key(point)
        cells = self._cells
        for off in self._offsets:
            bucket = cells.get(tuple(k + o for k, o in zip(key, off)))
            if bucket:
                yield from bucket

    def nearest_within(self, point, radius: float):
        """Index of the nearest stored point within ``radius`` (inclusive), or -1."""
        if radius > self.cell_size:
            raise ValueError("radius exceeds cell size; query would be inexact")
        best, best_d2 = -1, radius * radius
        pts = self._points
        for idx in self.candidates(point):
            q = pts[idx]
            d2 = 0.0
            for a, b in zip(point, q):
                d2 += (a - b) * (a - b)
            if d2 <= best_d2 and (best < 0 or d2 < best_d2 or idx < best):
                best, best_d2 = idx, d2
        return best

    def neighbors_strict(self, point, radius: float, exclude: int = -1) -> list:
        """Indices of stored points with distance strictly below ``radius``."""
        if radius > self.cell_size:
            raise ValueError("radius exceeds cell size; query would be inexact")
        r2 = radius * radius
        pts = self._points
        out = []
        for idx in self.candidates(point):
            if idx == exclude:
                continue
            q = pts[idx]
            d2 = 0.0
            for a, b in zip(point, q):
                d2 += (a - b) * (a - b)
            if d2 < r2:
                out.append(idx)
        out.sort()
        return out

    def points(self) -> np.ndarray:
        return np.asarray(self._points, dtype=float).reshape(-1, self.dim)
