"""Trajectory metrics: TL, NE, SR, OSR, SPL and nDTW, plus per-split aggregation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

SUCCESS_DISTANCE = 3.0

Point = Sequence[float]


class MetricInputError(ValueError):
    pass


@dataclass(frozen=True)
class MetricsRecord:
    episode_id: str
    tl: float
    ne: float
    sr: float
    osr: float
    spl: float
    ndtw: float

    def to_dict(self) -> dict:
        return asdict(self)


def _planar(points) -> np.ndarray:
    arr = np.asarray([(p[0], p[1]) for p in points], dtype=np.float64)
    if arr.size == 0:
        raise MetricInputError("path is empty")
    return arr


def dtw(path: Sequence[Point], reference: Sequence[Point]) -> float:
    """Minimum-cost monotone alignment of two planar paths."""
    p, r = _planar(path), _planar(reference)
    cost = np.sqrt(((p[:, None, :] - r[None, :, :]) ** 2).sum(-1))
    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            acc[i, j] = cost[i - 1, j - 1] + min(acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1])
    return float(acc[n, m])


def ndtw(path: Sequence[Point], reference: Sequence[Point], d_th: float = SUCCESS_DISTANCE) -> float:
    return math.exp(-dtw(path, reference) / (len(reference) * d_th))


def path_length(points: Sequence[Point]) -> float:
    p = _planar(points)
    return float(np.sqrt((np.diff(p, axis=0) ** 2).sum(-1)).sum())


def compute_metrics(
    poses: Sequence[Point],
    goal: Point,
    geodesic: float,
    reference: Sequence[Point],
    d_th: float = SUCCESS_DISTANCE,
    episode_id: str = "",
) -> MetricsRecord:
    """Score one executed path.

    ``geodesic`` is the shortest start-to-goal length. A zero geodesic is only
    accepted when the path starts within ``d_th`` of the goal, and then SPL
    equals SR.
    """
    p = _planar(poses)
    g = np.asarray(goal[:2], dtype=np.float64)
    to_goal = np.sqrt(((p - g) ** 2).sum(-1))
    if geodesic < 0 or (geodesic == 0 and to_goal[0] > d_th):
        raise MetricInputError(f"geodesic length {geodesic} invalid for a start {to_goal[0]:.3f} m from goal")
    tl = path_length(p)
    ne = float(to_goal[-1])
    sr = 1.0 if ne <= d_th else 0.0
    osr = 1.0 if float(to_goal.min()) <= d_th else 0.0
    spl = sr if geodesic == 0 else sr * geodesic / max(tl, geodesic)
    return MetricsRecord(episode_id, tl, ne, sr, osr, spl, ndtw(p, reference, d_th))


FIELDS = ("tl", "ne", "sr", "osr", "spl", "ndtw")


def aggregate_report(records: Sequence[MetricsRecord]) -> dict[str, float]:
    """Mean of every metric across episodes, in episode order."""
    if not records:
        raise MetricInputError("no records to aggregate")
    summary = {f: math.fsum(getattr(r, f) for r in records) / len(records) for f in FIELDS}
    summary["episodes"] = len(records)
    return summary


def rounded(summary: dict, digits: int = 4) -> dict:
    return {k: round(v, digits) if isinstance(v, float) else v for k, v in summary.items()}
