"""Regenerate the bundled fixtures under src/groundnav/data/.

Run from the repository root: ``python tools/make_fixtures.py``. Output is
deterministic.
"""

import json
import math
from pathlib import Path

import numpy as np

from groundnav.core import HeightGrid

DATA = Path(__file__).resolve().parents[1] / "src" / "groundnav" / "data"


def pose_matrix(x, y, z):
    return [1, 0, 0, x, 0, 1, 0, y, 0, 0, 1, z, 0, 0, 0, 1]


def synthetic_scan(rng, n):
    """Jittered lattice of panorama nodes with a few quirks real files have:
    excluded entries, one-directional flags and an isolated node."""
    side = math.ceil(math.sqrt(n))
    pos = []
    for i in range(n):
        r, c = divmod(i, side)
        pos.append((round(c * 2.0 + rng.uniform(-0.4, 0.4), 3), round(r * 2.0 + rng.uniform(-0.4, 0.4), 3), 1.5))
    included = [bool(rng.random() > 0.1) for _ in range(n)]
    flags = [[False] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if math.dist(pos[i][:2], pos[j][:2]) < 2.9 and rng.random() < 0.8:
                if rng.random() < 0.25:
                    flags[i][j] = True  # one direction only
                else:
                    flags[i][j] = flags[j][i] = True
    lonely = n - 1
    for j in range(n):
        flags[lonely][j] = flags[j][lonely] = False
    included[lonely] = True
    return [
        {"image_id": f"n{i:02d}", "pose": pose_matrix(*pos[i]), "included": included[i], "unobstructed": flags[i]}
        for i in range(n)
    ]


def occlusion_scenario():
    """Start A sees a clutter object where the target landmark hides behind a
    1 m wall at quadruped height; from B the landmark is in plain view."""
    grid = HeightGrid.empty(80, 60, 0.1).with_box(3.0, 0.0, 3.2, 2.0, 1.0)
    heading = math.radians(25)
    ax, ay = 1.0, 1.0
    g = (ax + 3.5 * math.cos(math.radians(37)), ay + 3.5 * math.sin(math.radians(37)))
    lm = (ax + 4.8 * math.cos(math.radians(20)), ay + 4.8 * math.sin(math.radians(20)))
    u = np.subtract(g, lm) / math.dist(g, lm)
    b = (g[0] + u[0], g[1] + u[1])
    t = (g[0] - 1.4 * u[0], g[1] - 1.4 * u[1])
    clutter = (ax + 1.5 * math.cos(math.radians(30)), ay + 1.5 * math.sin(math.radians(30)))
    r = lambda p: [round(p[0], 4), round(p[1], 4)]
    return {
        "scan": "occlusion",
        "graph": {
            "nodes": {"A": r((ax, ay)) + [0.0], "B": r(b) + [0.0], "G": r(g) + [0.0], "T": r(t) + [0.0]},
            "edges": [["A", "B"], ["A", "G"], ["B", "G"], ["G", "T"]],
        },
        "grid": grid.to_dict(),
        "landmarks": [
            {"id": "target", "position": r(lm) + [0.5], "feature_seed": 1},
            {"id": "clutter", "position": r(clutter) + [0.3], "feature_seed": 80},
        ],
        "agent_height": 0.3,
        "start": {"node": "A", "heading": round(heading, 6)},
        "goal": {"position": r(lm), "node": "T"},
        "feature_dim": 32,
        "sensor_range": 5.0,
        "target_landmark": "target",
    }


def corridor_scenario():
    """Straight corridor of five nodes, 1.5 m apart, goal past the far end."""
    grid = HeightGrid.empty(90, 30, 0.1).with_box(0.0, 0.0, 9.0, 0.5, 1.0).with_box(0.0, 2.5, 9.0, 3.0, 1.0)
    nodes = {f"c{i}": [1.0 + 1.5 * i, 1.5, 0.0] for i in range(5)}
    nodes["side"] = [2.5, 2.2, 0.0]
    edges = [[f"c{i}", f"c{i + 1}"] for i in range(4)] + [["c1", "side"]]
    return {
        "scan": "corridor",
        "graph": {"nodes": nodes, "edges": edges},
        "grid": grid.to_dict(),
        "landmarks": [{"id": "door", "position": [8.6, 1.5, 1.0], "feature_seed": 7}],
        "agent_height": 0.3,
        "start": {"node": "c0", "heading": 0.0},
        "goal": {"position": [8.5, 1.5], "node": "c4"},
        "feature_dim": 32,
        "sensor_range": 5.0,
        "target_landmark": "door",
    }


def main():
    conn = DATA / "connectivity"
    conn.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(2024)
    for k, n in enumerate([6, 9, 12, 8, 10]):
        path = conn / f"synth{k}_connectivity.json"
        path.write_text(json.dumps(synthetic_scan(rng, n)) + "\n")
    (DATA / "occlusion_scenario.json").write_text(json.dumps(occlusion_scenario()) + "\n")
    (DATA / "corridor_scenario.json").write_text(json.dumps(corridor_scenario()) + "\n")


if __name__ == "__main__":
    main()
