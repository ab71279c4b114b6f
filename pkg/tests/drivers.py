"""Random scenario drivers shared by unit and acceptance tests."""

import math

import numpy as np

from groundnav.core import PanoObservation, Pose, View
from groundnav.topomap import NodeKind, TopoMap, Waypoint

from reference import RefMap

FEAT_D = 4


def blank_pano():
    return PanoObservation(tuple(View(np.zeros(FEAT_D)) for _ in range(12)))


def random_topo_run(rng, eps=0.5, radius=0.5, max_steps=30, max_wps=8):
    """Drive a TopoMap and a RefMap through the same random update/promote/prune
    sequence. Returns both, plus the per-step prune counts of the real map."""
    start = tuple(rng.uniform(-2, 2, 2)) + (0.0,)
    tm = TopoMap.start(Pose(*start), blank_pano(), eps, radius)
    ref = RefMap(start, eps, radius)
    tag = 0
    for _ in range(int(rng.integers(1, max_steps + 1))):
        cur = tm.current.position
        batch = []
        for _ in range(int(rng.integers(0, max_wps + 1))):
            if tm.nodes and rng.random() < 0.3:
                # land close to an existing node so localization kicks in
                anchor = tm.nodes[int(rng.choice(sorted(tm.nodes)))].position
                p = anchor + np.append(rng.normal(0, 0.3, 2), 0.0)
            else:
                ang, dist = rng.uniform(-math.pi, math.pi), rng.uniform(0.3, 3.0)
                p = cur + np.array([dist * math.cos(ang), dist * math.sin(ang), 0.0])
            batch.append((tuple(float(v) for v in p), tag))
            tag += 1
        tm.update(Pose(*cur), [Waypoint(p, np.full(FEAT_D, t, dtype=float)) for p, t in batch])
        ref.update(batch)
        ghosts = tm.ghosts()
        if ghosts and rng.random() < 0.5:
            gid = int(rng.choice(ghosts))
            arrive = tm.nodes[gid].position + np.append(rng.normal(0, 0.05, 2), 0.0)
            tm.promote(gid, blank_pano(), Pose(*arrive))
            ref.promote(gid, arrive.tolist())
        if rng.random() < 0.6:
            assert tm.prune() == ref.prune()
    return tm, ref


def same_state(tm, ref, tol=1e-9):
    if set(tm.nodes) != set(ref.nodes):
        return f"node ids {sorted(tm.nodes)} vs {sorted(ref.nodes)}"
    for nid, node in tm.nodes.items():
        r = ref.nodes[nid]
        if node.kind.value != r["kind"]:
            return f"node {nid} kind {node.kind.value} vs {r['kind']}"
        if np.max(np.abs(node.position - np.array(r["pos"]))) > tol:
            return f"node {nid} position {node.position} vs {r['pos']}"
        if node.kind is NodeKind.GHOST and [int(o.feature[0]) for o in node.observations] != r["obs"]:
            return f"node {nid} observations differ"
    if {frozenset(e) for e in tm.edges} != ref.edges:
        return "edge sets differ"
    return None
