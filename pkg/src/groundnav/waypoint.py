"""Waypoint heatmaps, candidate extraction, stand-in predictors and evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import (
    NUM_VIEWS,
    HeightGrid,
    PanoObservation,
    PolarOffset,
    Pose,
    relative_polar,
    view_center,
    wrap_angle,
    wrap_positive,
)
from .ingest import NavGraph, WaypointSample


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class Discretization:
    angle_bins: int = 120
    dist_bins: int = 12
    dist_step: float = 0.25

    def __post_init__(self):
        if self.angle_bins < 4 or self.dist_bins < 1 or not self.dist_step > 0:
            raise ValueError(f"invalid discretization {self}")

    @property
    def sector(self) -> float:
        return 2 * math.pi / self.angle_bins

    @property
    def max_range(self) -> float:
        return self.dist_bins * self.dist_step

    def angle_bin(self, heading: float) -> int:
        return int(math.floor(wrap_positive(heading) / self.sector)) % self.angle_bins

    def dist_bin(self, distance: float) -> int:
        """Bin b covers (b*step, (b+1)*step]."""
        return max(0, int(math.ceil(distance / self.dist_step)) - 1)

    def to_dict(self) -> dict:
        return {"angle_bins": self.angle_bins, "dist_bins": self.dist_bins, "dist_step": self.dist_step}


@dataclass
class Heatmap:
    disc: Discretization
    grid: np.ndarray
    # targets that fell outside the distance range when rasterized
    dropped: int = 0

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        if self.grid.shape != (self.disc.angle_bins, self.disc.dist_bins):
            raise ValueError(f"heatmap shape {self.grid.shape} does not match {self.disc}")
        if not np.all(np.isfinite(self.grid)) or np.any(self.grid < 0):
            raise ValueError("heatmap entries must be finite and >= 0")

    @classmethod
    def zeros(cls, disc: Discretization) -> Heatmap:
        return cls(disc, np.zeros((disc.angle_bins, disc.dist_bins)))


def rasterize_targets(sample: WaypointSample, agent_heading: float, disc: Discretization = Discretization()) -> Heatmap:
    hm = Heatmap.zeros(disc)
    for t in sample.targets:
        if not 0 < t.distance <= disc.max_range:
            hm.dropped += 1
            continue
        a = disc.angle_bin(t.heading - agent_heading)
        hm.grid[a, disc.dist_bin(t.distance)] = 1.0
    return hm


def extract_candidates(
    h: Heatmap, k_max: int = 5, angle_suppress: int = 5, dist_suppress: int | None = None
) -> list[PolarOffset]:
    """Greedy non-maximum suppression over the heatmap.

    ``dist_suppress`` defaults to the full distance axis, so at most one
    candidate is produced per suppressed angular window.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    disc = h.disc
    if dist_suppress is None:
        dist_suppress = disc.dist_bins
    work = h.grid.copy()
    out = []
    while len(out) < k_max:
        flat = int(np.argmax(work))  # first max in C order gives the lexicographic tie-break
        a, b = divmod(flat, disc.dist_bins)
        if not work[a, b] > 0:
            break
        out.append(PolarOffset((b + 0.5) * disc.dist_step, wrap_angle((a + 0.5) * disc.sector)))
        rows = [(a + k) % disc.angle_bins for k in range(-angle_suppress, angle_suppress + 1)]
        work[np.ix_(rows, range(max(0, b - dist_suppress), min(disc.dist_bins, b + dist_suppress + 1)))] = 0.0
    return out


def oracle_predict(
    graph: NavGraph,
    node_id: str,
    pos_sigma: float = 0.0,
    drop_prob: float = 0.0,
    rng_seed=0,
    observer_heading: float = 0.0,
) -> list[PolarOffset]:
    """Neighbor offsets read from the ground-truth graph, with optional corruption.

    Each neighbor consumes one uniform draw (drop test) and two normal draws
    (planar noise) whatever the parameters, so a seed fixes the whole stream.
    """
    if node_id not in graph.nodes:
        raise KeyError(f"unknown node {node_id!r} in scan {graph.scan_id!r}")
    rng = np.random.default_rng(rng_seed)
    x, y, z = graph.nodes[node_id]
    observer = Pose(x, y, max(z, 0.0), observer_heading)
    out = []
    for nb in graph.neighbors(node_id):
        u = rng.random()
        noise = rng.standard_normal(2) * pos_sigma
        if u < drop_prob:
            continue
        nx, ny, _ = graph.nodes[nb]
        out.append(relative_polar(observer, (nx + noise[0], ny + noise[1])))
    return out


MIN_CLEARANCE = 0.5
DEPTH_MARGIN = 0.25


def depth_heuristic_predict(obs: PanoObservation, disc: Discretization = Discretization()) -> list[PolarOffset]:
    """One candidate per view whose depth clears ``MIN_CLEARANCE``.

    Open views are placed at maximum range; blocked views stop short of the
    obstacle by ``DEPTH_MARGIN``.
    """
    out = []
    for k in range(NUM_VIEWS):
        depth = obs.views[k].min_depth
        if depth is None:
            dist = disc.max_range
        elif depth >= MIN_CLEARANCE:
            dist = max(min(depth - DEPTH_MARGIN, disc.max_range), disc.dist_step)
        else:
            continue
        out.append(PolarOffset(dist, view_center(k)))
    return out


def _pairwise(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise UndefinedMetricError("distance between point sets needs two nonempty sets")
    if a.ndim == 1:
        a = a[None, :]
    if b.ndim == 1:
        b = b[None, :]
    # hypot avoids the underflow of squaring tiny differences
    d = np.hypot.reduce(a[:, None, :] - b[None, :, :], axis=-1)
    return d.min(axis=1), d.min(axis=0)


def chamfer(a, b) -> float:
    """Symmetric Chamfer distance: half the sum of the two mean nearest-neighbor distances."""
    ab, ba = _pairwise(a, b)
    return 0.5 * (float(ab.mean()) + float(ba.mean()))


def hausdorff(a, b) -> float:
    ab, ba = _pairwise(a, b)
    return max(float(ab.max()), float(ba.max()))


@dataclass
class NodeWaypoints:
    """Predicted and ground-truth waypoints around one graph node, world frame."""

    position: tuple[float, float]
    targets: list[PolarOffset]
    preds: list[PolarOffset] = field(default_factory=list)
    frame_heading: float = 0.0
    scan: str = ""

    def target_points(self) -> list[tuple[float, float]]:
        return [t.to_point(self.position, self.frame_heading) for t in self.targets]

    def pred_points(self) -> list[tuple[float, float]]:
        return [p.to_point(self.position, self.frame_heading) for p in self.preds]


@dataclass
class WaypointEvalReport:
    delta: float
    pct_open: float | None
    d_chamfer: float | None
    d_hausdorff: float | None
    n_nodes: int
    n_preds: int

    def to_dict(self) -> dict:
        def fmt(v):
            return "undefined" if v is None else v

        return {
            "delta": self.delta,
            "pct_open": fmt(self.pct_open),
            "d_chamfer": fmt(self.d_chamfer),
            "d_hausdorff": fmt(self.d_hausdorff),
            "n_nodes": self.n_nodes,
            "n_preds": self.n_preds,
        }


def is_open(grid: HeightGrid, point: Sequence[float], agent_height: float) -> bool:
    """A prediction is open when it lands on a grid cell lower than the agent."""
    if not grid.contains(point[0], point[1]):
        return False
    return grid.height_at(point[0], point[1]) < agent_height


def eval_waypoints(
    nodes: Sequence[NodeWaypoints], grid: HeightGrid | Mapping[str, HeightGrid], agent_height: float
) -> WaypointEvalReport:
    """Count mismatch, open-space ratio, Chamfer and Hausdorff over a set of nodes.

    ``grid`` is a single grid or a mapping from scan id to grid. Nodes without
    predictions add their full target count to the mismatch and are left out
    of the distance means. Metrics with nothing to average are ``None``.
    """
    if not nodes:
        raise ValueError("eval_waypoints needs at least one node")
    deltas, chamfers, hausdorffs = [], [], []
    n_open = n_preds = 0
    for node in nodes:
        if not node.targets:
            raise ValueError(f"node at {node.position} has no targets")
        deltas.append(abs(len(node.targets) - len(node.preds)))
        if not node.preds:
            continue
        tp, pp = node.target_points(), node.pred_points()
        n_preds += len(pp)
        node_grid = grid if isinstance(grid, HeightGrid) else grid[node.scan]
        n_open += sum(is_open(node_grid, p, agent_height) for p in pp)
        chamfers.append(chamfer(tp, pp))
        hausdorffs.append(hausdorff(tp, pp))
    return WaypointEvalReport(
        delta=float(np.mean(deltas)),
        pct_open=100.0 * n_open / n_preds if n_preds else None,
        d_chamfer=float(np.mean(chamfers)) if chamfers else None,
        d_hausdorff=float(np.mean(hausdorffs)) if hausdorffs else None,
        n_nodes=len(nodes),
        n_preds=n_preds,
    )
