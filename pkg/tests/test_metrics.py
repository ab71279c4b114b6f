import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groundnav.metrics import (
    MetricInputError,
    MetricsRecord,
    aggregate_report,
    compute_metrics,
    dtw,
    ndtw,
    path_length,
    rounded,
)

from reference import dtw_branch_and_bound, dtw_enumerate, metrics_reference


def test_start_at_goal():
    r = compute_metrics([(1.0, 1.0)], (2.0, 1.0), 0.0, [(1.0, 1.0)])
    assert (r.tl, r.sr, r.osr, r.spl) == (0.0, 1.0, 1.0, 1.0)


def test_zero_geodesic_far_from_goal_is_rejected():
    with pytest.raises(MetricInputError):
        compute_metrics([(0.0, 0.0)], (10.0, 0.0), 0.0, [(0.0, 0.0)])
    with pytest.raises(MetricInputError):
        compute_metrics([], (0.0, 0.0), 1.0, [(0.0, 0.0)])


def test_overshoot_counts_for_osr_only():
    poses = [(0.0, 0.0), (6.0, 0.0), (10.0, 0.0), (11.1, 0.0)]
    r = compute_metrics(poses, (8.0, 0.0), 8.0, [(0.0, 0.0), (8.0, 0.0)])
    assert r.ne == pytest.approx(3.1)
    assert (r.sr, r.osr, r.spl) == (0.0, 1.0, 0.0)


def test_shortest_path_follower_spl_one():
    poses = [(0.0, 0.0), (3.0, 4.0), (6.0, 8.0)]
    r = compute_metrics(poses, (6.0, 8.0), 10.0, poses)
    assert r.spl == 1.0 and r.ndtw == 1.0


def test_ndtw_examples():
    P = [(0.0, 0.0), (1.0, 2.0), (3.0, 3.0)]
    assert ndtw(P, P) == 1.0
    assert ndtw([(0.0, 0.0)], [(3.0, 0.0)], 3.0) == pytest.approx(math.exp(-1), abs=1e-15)
    with pytest.raises(MetricInputError):
        ndtw([], P)


def test_dtw_matches_explicit_enumeration_small():
    rng = np.random.default_rng(30)
    for _ in range(100):
        P = rng.uniform(-5, 5, (int(rng.integers(1, 6)), 2)).tolist()
        R = rng.uniform(-5, 5, (int(rng.integers(1, 6)), 2)).tolist()
        assert abs(dtw(P, R) - dtw_enumerate(P, R)) <= 1e-9


def test_dtw_matches_branch_and_bound():
    rng = np.random.default_rng(31)
    for _ in range(50):
        P = rng.uniform(-5, 5, (int(rng.integers(1, 11)), 2)).tolist()
        R = rng.uniform(-5, 5, (int(rng.integers(1, 11)), 2)).tolist()
        assert abs(dtw(P, R) - dtw_branch_and_bound(P, R)) <= 1e-9


def random_traj(rng):
    n = int(rng.integers(1, 11))
    steps = rng.normal(0, 1.5, (n, 2))
    poses = (np.cumsum(steps, axis=0) + rng.uniform(-3, 3, 2)).tolist()
    goal = rng.uniform(-6, 6, 2).tolist()
    ref = rng.uniform(-6, 6, (int(rng.integers(1, 9)), 2)).tolist()
    start_d = math.dist(poses[0], goal)
    geo = 0.0 if start_d <= 3.0 and rng.random() < 0.3 else float(start_d + rng.uniform(0, 3))
    return poses, goal, geo, ref


def test_compute_metrics_matches_reference():
    rng = np.random.default_rng(32)
    for _ in range(200):
        poses, goal, geo, ref = random_traj(rng)
        got = compute_metrics(poses, goal, geo, ref).to_dict()
        want = metrics_reference(poses, goal, geo, ref)
        for k, v in want.items():
            assert abs(got[k] - v) <= 1e-12, k


def test_record_orderings():
    rng = np.random.default_rng(33)
    for _ in range(300):
        r = compute_metrics(*random_traj(rng))
        assert 0 <= r.spl <= r.sr <= r.osr <= 1
        assert 0 < r.ndtw <= 1


coords = st.floats(-20, 20)
paths = st.lists(st.tuples(coords, coords), min_size=1, max_size=8)


@settings(max_examples=150, deadline=None)
@given(paths, paths, st.floats(-math.pi, math.pi), coords, coords)
def test_ndtw_rigid_motion_invariance(P, R, theta, tx, ty):
    c, s = math.cos(theta), math.sin(theta)
    move = lambda pts: [(c * x - s * y + tx, s * x + c * y + ty) for x, y in pts]
    assert ndtw(move(P), move(R)) == pytest.approx(ndtw(P, R), rel=1e-9, abs=1e-12)


@given(paths, st.floats(0.05, 10), st.floats(-math.pi, math.pi))
def test_ndtw_drops_with_offset(P, mag, ang):
    dx, dy = mag * math.cos(ang), mag * math.sin(ang)
    assert ndtw([(x + dx, y + dy) for x, y in P], P) < ndtw(P, P) == 1.0


def test_tl_reversal():
    poses = [(0.0, 0.0), (1.0, 0.0), (1.0, 2.0), (4.0, 6.0)]
    goal = (4.0, 5.0)
    a = compute_metrics(poses, goal, 5.0, poses)
    b = compute_metrics(poses[::-1], goal, 5.0, poses)
    assert a.tl == b.tl == path_length(poses) == 8.0
    assert a.ne != b.ne


def test_aggregate_report():
    one = MetricsRecord("a", 5.0, 1.0, 1.0, 1.0, 0.8, 0.6)
    s = aggregate_report([one])
    assert {k: s[k] for k in ("tl", "ne", "sr", "osr", "spl", "ndtw")} == {
        "tl": 5.0, "ne": 1.0, "sr": 1.0, "osr": 1.0, "spl": 0.8, "ndtw": 0.6}
    two = aggregate_report([one, MetricsRecord("b", 7.0, 4.0, 0.0, 1.0, 0.0, 0.2)])
    assert two["sr"] == 0.5 and two["episodes"] == 2
    with pytest.raises(MetricInputError):
        aggregate_report([])


def test_aggregate_matches_direct_means():
    rng = np.random.default_rng(34)
    recs = [MetricsRecord(str(i), *rng.uniform(0, 10, 2), float(rng.integers(2)), 1.0, *rng.uniform(0, 1, 2)) for i in range(20)]
    s = aggregate_report(recs)
    for f in ("tl", "ne", "sr", "osr", "spl", "ndtw"):
        assert s[f] == pytest.approx(sum(getattr(r, f) for r in recs) / 20, abs=1e-12)
    assert rounded({"tl": 1.234567, "episodes": 3}) == {"tl": 1.2346, "episodes": 3}
