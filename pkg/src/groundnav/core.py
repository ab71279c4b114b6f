"""Geometric and feature primitives shared by every other module.

Conventions used throughout the package:

* headings are radians, counterclockwise-positive, 0 along +x, wrapped to (-pi, pi]
* ``z`` is camera height above the floor in meters
* a height-grid cell with height 0.0 is free floor
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi
NUM_VIEWS = 12
VIEW_SPAN = TWO_PI / NUM_VIEWS
DEFAULT_FEATURE_DIM = 32


class GeometryError(ValueError):
    """Degenerate geometry, e.g. a bearing between coincident points."""


class BoundsError(ValueError):
    """A point lies outside the height grid."""


class StateError(RuntimeError):
    """An operation was applied to an object in the wrong state."""


def wrap_angle(angle: float) -> float:
    """Wrap ``angle`` to (-pi, pi]."""
    a = math.remainder(angle, TWO_PI)
    if a <= -math.pi:
        a += TWO_PI
    return a


def wrap_positive(angle: float) -> float:
    """Wrap ``angle`` to [0, 2*pi)."""
    a = math.fmod(angle, TWO_PI)
    if a < 0.0:
        a += TWO_PI
    if a >= TWO_PI:
        a = 0.0
    return a


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    z: float = 0.0
    heading: float = 0.0

    def __post_init__(self):
        for name in ("x", "y", "z", "heading"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z, self.heading)):
            raise GeometryError(f"non-finite pose {self}")
        if self.z < 0:
            raise GeometryError(f"camera height must be >= 0, got {self.z}")
        object.__setattr__(self, "heading", wrap_angle(self.heading))

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.z, self.heading]


@dataclass(frozen=True)
class PolarOffset:
    distance: float
    heading: float

    def __post_init__(self):
        if not self.distance > 0:
            raise GeometryError(f"polar distance must be > 0, got {self.distance}")
        object.__setattr__(self, "heading", wrap_angle(self.heading))

    def to_point(self, origin: Sequence[float], frame_heading: float = 0.0) -> tuple[float, float]:
        """Planar point reached from ``origin`` when the offset is read in a frame
        rotated by ``frame_heading``."""
        h = frame_heading + self.heading
        return (origin[0] + self.distance * math.cos(h), origin[1] + self.distance * math.sin(h))


def relative_polar(observer: Pose, target: Sequence[float]) -> PolarOffset:
    """Distance and observer-relative bearing from ``observer`` to planar ``target``."""
    dx = target[0] - observer.x
    dy = target[1] - observer.y
    if dx == 0.0 and dy == 0.0:
        raise GeometryError(f"target {tuple(target[:2])} coincides with observer")
    return PolarOffset(math.hypot(dx, dy), wrap_angle(math.atan2(dy, dx) - observer.heading))


def feature_vec(values, d: int | None = None) -> np.ndarray:
    """Validate and copy a feature vector as a float64 array."""
    v = np.array(values, dtype=np.float64).reshape(-1)
    if d is not None and v.shape[0] != d:
        raise ValueError(f"feature has length {v.shape[0]}, expected {d}")
    if not np.all(np.isfinite(v)):
        raise ValueError("feature contains non-finite values")
    return v


def view_index(relative_heading: float) -> int:
    """Index of the 30-degree panorama sector containing ``relative_heading``.

    View k spans [k*30 - 15, k*30 + 15) degrees.
    """
    k = int(math.floor(wrap_positive(relative_heading + VIEW_SPAN / 2) / VIEW_SPAN))
    return k % NUM_VIEWS


def view_center(k: int) -> float:
    return wrap_angle(k * VIEW_SPAN)


@dataclass(frozen=True)
class View:
    feature: np.ndarray
    # None means nothing blocks the sector-center ray within sensor range
    min_depth: float | None = None

    def __post_init__(self):
        if self.min_depth is not None and not self.min_depth > 0:
            raise ValueError(f"min_depth must be > 0, got {self.min_depth}")


@dataclass(frozen=True)
class PanoObservation:
    views: tuple[View, ...]

    def __post_init__(self):
        if len(self.views) != NUM_VIEWS:
            raise ValueError(f"panorama needs exactly {NUM_VIEWS} views, got {len(self.views)}")
        object.__setattr__(self, "views", tuple(self.views))

    def features(self) -> np.ndarray:
        return np.stack([v.feature for v in self.views])


@dataclass(frozen=True)
class HeightGrid:
    """2.5D occupancy grid. ``cells`` is indexed ``[row, col]`` with rows along +y."""

    resolution: float
    origin: tuple[float, float]
    width: int
    height: int
    cells: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError("resolution must be > 0")
        cells = np.asarray(self.cells, dtype=np.float64)
        if cells.size != self.width * self.height:
            raise ValueError(f"expected {self.width * self.height} cells, got {cells.size}")
        cells = cells.reshape(self.height, self.width)
        if not np.all(np.isfinite(cells)) or np.any(cells < 0):
            raise ValueError("cell heights must be finite and >= 0")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @classmethod
    def empty(cls, width: int, height: int, resolution: float = 0.1, origin=(0.0, 0.0)) -> HeightGrid:
        return cls(resolution, origin, width, height, np.zeros(width * height))

    @classmethod
    def from_dict(cls, data: dict) -> HeightGrid:
        return cls(
            float(data["resolution"]),
            tuple(data["origin"]),
            int(data["width"]),
            int(data["height"]),
            np.asarray(data["cells"], dtype=np.float64),
        )

    def to_dict(self) -> dict:
        return {
            "resolution": self.resolution,
            "origin": list(self.origin),
            "width": self.width,
            "height": self.height,
            "cells": self.cells.reshape(-1).tolist(),
        }

    @classmethod
    def load(cls, path) -> HeightGrid:
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def with_box(self, x0: float, y0: float, x1: float, y1: float, h: float) -> HeightGrid:
        """Copy with every cell whose center lies in [x0, x1) x [y0, y1) raised to ``h``."""
        cells = self.cells.copy()
        cx = self.origin[0] + (np.arange(self.width) + 0.5) * self.resolution
        cy = self.origin[1] + (np.arange(self.height) + 0.5) * self.resolution
        mask = ((cy >= y0) & (cy < y1))[:, None] & ((cx >= x0) & (cx < x1))[None, :]
        cells[mask] = h
        return HeightGrid(self.resolution, self.origin, self.width, self.height, cells)

    def contains(self, x: float, y: float) -> bool:
        u = (x - self.origin[0]) / self.resolution
        v = (y - self.origin[1]) / self.resolution
        return 0.0 <= u < self.width and 0.0 <= v < self.height

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        """(col, row) of the cell containing (x, y)."""
        if not self.contains(x, y):
            raise BoundsError(f"point ({x}, {y}) outside grid")
        return (
            int(math.floor((x - self.origin[0]) / self.resolution)),
            int(math.floor((y - self.origin[1]) / self.resolution)),
        )

    def height_at(self, x: float, y: float) -> float:
        col, row = self.cell_of(x, y)
        return float(self.cells[row, col])

    def in_range(self, col: int, row: int) -> bool:
        return 0 <= col < self.width and 0 <= row < self.height


def grid_walk(grid: HeightGrid, a: Sequence[float], b: Sequence[float]) -> Iterator[tuple[int, int, float, float]]:
    """Cells crossed by the planar segment a->b, in order.

    Yields ``(col, row, t_enter, t_exit)`` with t the segment parameter in [0, 1].
    Cells may lie outside the grid when ``b`` does; callers decide. A segment
    passing exactly through a cell corner steps diagonally.
    """
    res = grid.resolution
    u0 = (a[0] - grid.origin[0]) / res
    v0 = (a[1] - grid.origin[1]) / res
    u1 = (b[0] - grid.origin[0]) / res
    v1 = (b[1] - grid.origin[1]) / res
    col, row = int(math.floor(u0)), int(math.floor(v0))
    end_col, end_row = int(math.floor(u1)), int(math.floor(v1))
    du, dv = u1 - u0, v1 - v0

    if du > 0:
        step_c, t_max_c, t_delta_c = 1, (col + 1 - u0) / du, 1.0 / du
    elif du < 0:
        step_c, t_max_c, t_delta_c = -1, (col - u0) / du, -1.0 / du
    else:
        step_c, t_max_c, t_delta_c = 0, math.inf, math.inf
    if dv > 0:
        step_r, t_max_r, t_delta_r = 1, (row + 1 - v0) / dv, 1.0 / dv
    elif dv < 0:
        step_r, t_max_r, t_delta_r = -1, (row - v0) / dv, -1.0 / dv
    else:
        step_r, t_max_r, t_delta_r = 0, math.inf, math.inf

    budget = abs(end_col - col) + abs(end_row - row)
    t = 0.0
    for _ in range(budget + 1):
        if (col, row) == (end_col, end_row):
            yield col, row, t, 1.0
            return
        t_next = min(t_max_c, t_max_r, 1.0)
        yield col, row, t, t_next
        t = t_next
        if t_max_c < t_max_r:
            col += step_c
            t_max_c += t_delta_c
        elif t_max_r < t_max_c:
            row += step_r
            t_max_r += t_delta_r
        else:
            col += step_c
            row += step_r
            t_max_c += t_delta_c
            t_max_r += t_delta_r
    # float drift can leave the walk one cell short of the end cell
    yield end_col, end_row, t, 1.0


def ray_visible(grid: HeightGrid, source: Pose, target: Sequence[float]) -> bool:
    """Line of sight from a camera at ``source`` to the 3D point ``target``.

    A crossed cell blocks when it is raised (height > 0) and its height reaches
    the lowest point of the ray inside that cell. The cells holding the two
    endpoints never block.
    """
    tz = float(target[2]) if len(target) > 2 else 0.0
    start_cell = grid.cell_of(source.x, source.y)
    end_cell = grid.cell_of(target[0], target[1])
    z0, dz = source.z, tz - source.z
    for col, row, t0, t1 in grid_walk(grid, source.xy, target):
        if (col, row) == start_cell or (col, row) == end_cell:
            continue
        if not grid.in_range(col, row):
            continue
        h = grid.cells[row, col]
        if h > 0.0 and h >= min(z0 + t0 * dz, z0 + t1 * dz):
            return False
    return True
