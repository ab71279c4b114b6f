"""Online topological map with visited, current and ghost nodes."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .aggregate import EncoderParams, Mode, aggregate_views
from .core import PanoObservation, Pose, StateError

POSE_TOLERANCE = 1e-6


class NodeKind(str, enum.Enum):
    VISITED = "visited"
    CURRENT = "current"
    GHOST = "ghost"


# lower ranks survive pruning
_PRUNE_RANK = {NodeKind.CURRENT: 0, NodeKind.VISITED: 1, NodeKind.GHOST: 2}


@dataclass(frozen=True)
class Observation:
    feature: np.ndarray
    source_node: int
    source_heading: float


@dataclass(frozen=True)
class Waypoint:
    position: tuple[float, float, float]
    feature: np.ndarray
    source_heading: float = 0.0


@dataclass
class TopoNode:
    id: int
    kind: NodeKind
    position: np.ndarray
    observations: list[Observation] = field(default_factory=list)
    position_samples: int = 1
    panorama: PanoObservation | None = None


class Outcome(str, enum.Enum):
    LOCALIZED_VISITED = "localized_visited"
    LOCALIZED_GHOST = "localized_ghost"
    NEW_GHOST = "new_ghost"
    REJECTED = "rejected"


@dataclass
class UpdateLog:
    outcomes: list[tuple[Outcome, int | None]] = field(default_factory=list)
    edges_added: list[tuple[int, int]] = field(default_factory=list)
    errors: dict[int, str] = field(default_factory=dict)


class TopoMap:
    """Graph of nodes keyed by integer id; edges are Euclidean-weighted.

    Exactly one node is ``CURRENT`` at any time. Ids are handed out from a
    counter and never reused.
    """

    def __init__(self, epsilon: float = 0.5, localize_radius: float = 0.5):
        self.nodes: dict[int, TopoNode] = {}
        self.edges: dict[tuple[int, int], float] = {}
        self.next_id = 0
        self.epsilon = epsilon
        self.localize_radius = localize_radius
        self.current_id: int | None = None

    @classmethod
    def start(cls, pose: Pose, panorama: PanoObservation, epsilon: float = 0.5, localize_radius: float = 0.5) -> TopoMap:
        m = cls(epsilon, localize_radius)
        node = m._new_node(NodeKind.CURRENT, (pose.x, pose.y, pose.z))
        node.panorama = panorama
        m.current_id = node.id
        return m

    # -- graph bookkeeping -------------------------------------------------

    def _new_node(self, kind: NodeKind, position) -> TopoNode:
        node = TopoNode(self.next_id, kind, np.array(position, dtype=np.float64))
        self.nodes[node.id] = node
        self.next_id += 1
        return node

    def _dist(self, a: int, b: int) -> float:
        return math.dist(self.nodes[a].position, self.nodes[b].position)

    def add_edge(self, a: int, b: int) -> bool:
        if a == b:
            return False
        key = (min(a, b), max(a, b))
        new = key not in self.edges
        self.edges[key] = self._dist(a, b)
        return new

    def cut_edge(self, a: int, b: int) -> None:
        """Drop an edge found untraversable; a ghost left without edges is dropped too."""
        self.edges.pop((min(a, b), max(a, b)), None)
        for nid in (a, b):
            node = self.nodes.get(nid)
            if node is not None and node.kind is NodeKind.GHOST and not self.neighbors(nid):
                del self.nodes[nid]

    def _reweight(self, node_id: int) -> None:
        for key in self.edges:
            if node_id in key:
                self.edges[key] = self._dist(*key)

    def neighbors(self, node_id: int) -> list[int]:
        out = [b if a == node_id else a for a, b in self.edges if node_id in (a, b)]
        return sorted(out)

    @property
    def current(self) -> TopoNode:
        return self.nodes[self.current_id]

    def ghosts(self) -> list[int]:
        return sorted(i for i, n in self.nodes.items() if n.kind is NodeKind.GHOST)

    # -- the three update rules --------------------------------------------

    def localize(self, point) -> int | None:
        """Nearest node within ``localize_radius``; non-ghosts win distance ties, then lower ids."""
        if not self.nodes:
            return None
        ids = list(self.nodes)
        d = self._distances_to(ids, np.asarray(point, dtype=np.float64))
        best, best_key = None, None
        for nid, dist in zip(ids, d.tolist()):
            if dist > self.localize_radius:
                continue
            key = (dist, self.nodes[nid].kind is NodeKind.GHOST, nid)
            if best_key is None or key < best_key:
                best, best_key = nid, key
        return best

    def _distances_to(self, ids: list[int], point: np.ndarray) -> np.ndarray:
        pos = np.stack([self.nodes[i].position for i in ids])
        return np.sqrt(((pos - point) ** 2).sum(axis=1))

    def update(self, current_pose: Pose, waypoints: Sequence[Waypoint]) -> UpdateLog:
        cur = self.current
        if np.linalg.norm(cur.position - (current_pose.x, current_pose.y, current_pose.z)) > POSE_TOLERANCE:
            raise StateError(f"pose {current_pose} does not match current node {cur.id} at {cur.position.tolist()}")
        log = UpdateLog()
        for i, wp in enumerate(waypoints):
            pos = np.asarray(wp.position, dtype=np.float64)
            feat = np.asarray(wp.feature, dtype=np.float64)
            if pos.shape != (3,) or not np.all(np.isfinite(pos)) or not np.all(np.isfinite(feat)):
                log.outcomes.append((Outcome.REJECTED, None))
                log.errors[i] = f"waypoint {i} has non-finite or malformed values"
                continue
            obs = Observation(feat, cur.id, wp.source_heading)
            hit = self.localize(pos)
            if hit is None:
                ghost = self._new_node(NodeKind.GHOST, pos)
                ghost.observations.append(obs)
                self.add_edge(cur.id, ghost.id)
                log.edges_added.append((cur.id, ghost.id))
                log.outcomes.append((Outcome.NEW_GHOST, ghost.id))
            elif self.nodes[hit].kind is NodeKind.GHOST:
                ghost = self.nodes[hit]
                n = ghost.position_samples
                ghost.position = (ghost.position * n + pos) / (n + 1)
                ghost.position_samples = n + 1
                ghost.observations.append(obs)
                self._reweight(hit)
                if self.add_edge(cur.id, hit):
                    log.edges_added.append((min(cur.id, hit), max(cur.id, hit)))
                log.outcomes.append((Outcome.LOCALIZED_GHOST, hit))
            else:
                if self.add_edge(cur.id, hit):
                    log.edges_added.append((min(cur.id, hit), max(cur.id, hit)))
                log.outcomes.append((Outcome.LOCALIZED_VISITED, hit))
        return log

    def promote(self, ghost_id: int, panorama: PanoObservation, pose: Pose) -> None:
        """The agent has arrived at a ghost: it becomes the current node.

        The node takes the agent's measured position and the freshly captured
        panorama replaces its accumulated observations.
        """
        node = self.nodes.get(ghost_id)
        if node is None or node.kind is not NodeKind.GHOST:
            raise StateError(f"node {ghost_id} is not a ghost")
        self._make_current(node, pose)
        node.observations = []
        node.position_samples = 1
        node.panorama = panorama

    def relocate(self, node_id: int, pose: Pose) -> None:
        """Move the current marker onto an existing visited node."""
        node = self.nodes.get(node_id)
        if node is None or node.kind is NodeKind.GHOST:
            raise StateError(f"node {node_id} is not a visited node")
        if node.kind is NodeKind.CURRENT:
            return
        self._make_current(node, pose)

    def add_current(self, pose: Pose, panorama: PanoObservation) -> int:
        """Register a new confirmed location (e.g. where a blocked move stopped)."""
        prev = self.current_id
        node = self._new_node(NodeKind.VISITED, (pose.x, pose.y, pose.z))
        node.panorama = panorama
        self._make_current(node, pose)
        self.add_edge(prev, node.id)
        return node.id

    def _make_current(self, node: TopoNode, pose: Pose) -> None:
        self.nodes[self.current_id].kind = NodeKind.VISITED
        node.kind = NodeKind.CURRENT
        node.position = np.array([pose.x, pose.y, pose.z], dtype=np.float64)
        self.current_id = node.id
        self._reweight(node.id)

    # -- pruning -----------------------------------------------------------

    def _prune_order(self, nid: int) -> tuple[int, int]:
        return (_PRUNE_RANK[self.nodes[nid].kind], nid)

    def prune(self) -> int:
        """Merge nodes closer than ``epsilon`` until no such pair remains.

        Each round removes the weakest node that has a too-close partner
        (ghosts before visited nodes, younger before older; the current node
        is never removed). It merges into its nearest too-close partner, ties
        going to the stronger partner.
        """
        removed = 0
        while len(self.nodes) > 1:
            ids = sorted(self.nodes)
            pos = np.stack([self.nodes[i].position for i in ids])
            dist = np.sqrt(((pos[:, None, :] - pos[None, :, :]) ** 2).sum(axis=-1))
            near = dist < self.epsilon
            np.fill_diagonal(near, False)
            has_partner = near.any(axis=1)
            if not has_partner.any():
                break
            vi = max(np.flatnonzero(has_partner), key=lambda i: self._prune_order(ids[i]))
            partners = [(float(dist[vi, j]), self._prune_order(ids[j]), ids[j]) for j in np.flatnonzero(near[vi])]
            self._merge(ids[vi], min(partners)[2])
            removed += 1
        return removed

    def _merge(self, victim: int, survivor: int) -> None:
        v, s = self.nodes[victim], self.nodes[survivor]
        nbrs = self.neighbors(victim)
        for key in [k for k in self.edges if victim in k]:
            del self.edges[key]
        del self.nodes[victim]
        for nb in nbrs:
            if nb != survivor:
                self.add_edge(survivor, nb)
        if v.kind is NodeKind.GHOST and s.kind is NodeKind.GHOST:
            s.observations.extend(v.observations)

    # -- features ----------------------------------------------------------

    def node_features(self, node_id: int) -> np.ndarray:
        node = self.nodes[node_id]
        if node.kind is NodeKind.GHOST:
            feats = [o.feature for o in node.observations]
        else:
            feats = [] if node.panorama is None else list(node.panorama.features())
        if not feats:
            raise StateError(f"node {node_id} has no stored features")
        return np.stack(feats)

    def node_representation(self, node_id: int, mode: Mode | str = Mode.AVERAGE, params: EncoderParams | None = None) -> np.ndarray:
        """Visited/current nodes: mean panorama feature. Ghosts: average or attention fusion of their observations."""
        if node_id not in self.nodes:
            raise StateError(f"unknown node {node_id}")
        feats = self.node_features(node_id)
        if self.nodes[node_id].kind is not NodeKind.GHOST:
            return feats.mean(axis=0)
        return aggregate_views(feats, mode, params)

    # -- serialization -----------------------------------------------------

    def snapshot(self) -> dict:
        return {
            "nodes": [
                {
                    "id": n.id,
                    "kind": n.kind.value,
                    "pos": n.position.tolist(),
                    "n_obs": len(n.observations) if n.kind is NodeKind.GHOST else (0 if n.panorama is None else len(n.panorama.views)),
                }
                for n in sorted(self.nodes.values(), key=lambda n: n.id)
            ],
            "edges": [[a, b, w] for (a, b), w in sorted(self.edges.items())],
        }

    def dumps(self) -> str:
        return json.dumps(self.snapshot())

    def check(self) -> None:
        """Assert the structural invariants; raises StateError on violation."""
        currents = [i for i, n in self.nodes.items() if n.kind is NodeKind.CURRENT]
        if currents != [self.current_id]:
            raise StateError(f"expected exactly one current node, found {currents}")
        for (a, b), w in self.edges.items():
            if a not in self.nodes or b not in self.nodes:
                raise StateError(f"edge ({a}, {b}) references a removed node")
            if not math.isclose(w, self._dist(a, b), abs_tol=1e-9, rel_tol=0):
                raise StateError(f"edge ({a}, {b}) weight {w} is stale")
        for n in self.nodes.values():
            if n.kind is NodeKind.GHOST and not n.observations:
                raise StateError(f"ghost {n.id} has no observations")
            if n.id >= self.next_id:
                raise StateError(f"node id {n.id} not below counter {self.next_id}")
