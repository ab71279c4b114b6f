"""Desk-scale continuous environment and the episode loop that drives the topo map."""

from __future__ import annotations

import enum
import hashlib
import heapq
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Hashable, Iterable, Protocol, Sequence

import numpy as np

from .aggregate import EncoderParams, Mode
from .core import (
    NUM_VIEWS,
    BoundsError,
    HeightGrid,
    PanoObservation,
    Pose,
    View,
    grid_walk,
    ray_visible,
    relative_polar,
    view_center,
    view_index,
    wrap_angle,
)
from .ingest import NavGraph
from .topomap import NodeKind, TopoMap, Waypoint
from .waypoint import Discretization, depth_heuristic_predict, oracle_predict

# how far short of a blocking cell a stopped agent halts, in meters
STOP_MARGIN = 0.01
# an agent this close (planar) to a nav-graph node is treated as standing on it
NODE_SNAP = 0.5


class UnreachableError(RuntimeError):
    pass


class ProtocolError(RuntimeError):
    pass


class Terminal(str, enum.Enum):
    GOAL_DECLARED = "GoalDeclared"
    STEP_LIMIT = "StepLimit"
    STUCK = "Stuck"
    PROTOCOL_ERROR = "ProtocolError"


@dataclass(frozen=True)
class Landmark:
    id: str
    position: tuple[float, float, float]
    feature_seed: int

    def feature(self, d: int) -> np.ndarray:
        v = np.random.default_rng(self.feature_seed).standard_normal(d)
        return v / np.linalg.norm(v)


@dataclass
class Scenario:
    scan_id: str
    nav_graph: NavGraph
    grid: HeightGrid
    landmarks: list[Landmark]
    agent_height: float
    start_node: str
    goal: tuple[float, float]
    goal_node: str | None = None
    start_heading: float = 0.0
    feature_dim: int = 32
    sensor_range: float = 5.0
    target_landmark: str | None = None

    def __post_init__(self):
        if not self.agent_height > 0:
            raise ValueError(f"agent_height must be > 0, got {self.agent_height}")
        if self.start_node not in self.nav_graph.nodes:
            raise ValueError(f"start node {self.start_node!r} not in graph")
        sx, sy, _ = self.nav_graph.nodes[self.start_node]
        for label, (x, y) in (("start", (sx, sy)), ("goal", self.goal)):
            if not self.grid.contains(x, y):
                raise BoundsError(f"{label} ({x}, {y}) outside grid")
        self._features = {lm.id: lm.feature(self.feature_dim) for lm in self.landmarks}

    def landmark_feature(self, landmark_id: str) -> np.ndarray:
        return self._features[landmark_id]

    def target_feature(self) -> np.ndarray:
        if self.target_landmark is None:
            raise ValueError("scenario names no target landmark")
        return self.landmark_feature(self.target_landmark)

    def start_pose(self) -> Pose:
        x, y, _ = self.nav_graph.nodes[self.start_node]
        return Pose(x, y, self.agent_height, self.start_heading)

    def goal_graph_node(self) -> str:
        if self.goal_node is not None:
            return self.goal_node
        gx, gy = self.goal
        return min(sorted(self.nav_graph.nodes), key=lambda k: math.dist(self.nav_graph.nodes[k][:2], (gx, gy)))

    def with_height(self, agent_height: float) -> Scenario:
        return replace(self, agent_height=agent_height)

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | None = None) -> Scenario:
        grid = data["grid"]
        if isinstance(grid, str):
            grid = HeightGrid.load((base_dir or Path(".")) / grid)
        else:
            grid = HeightGrid.from_dict(grid)
        graph = NavGraph.from_dict({"scan": data.get("scan", ""), **data["graph"]})
        goal = data["goal"]
        return cls(
            scan_id=data.get("scan", ""),
            nav_graph=graph,
            grid=grid,
            landmarks=[Landmark(str(lm["id"]), tuple(lm["position"]), int(lm["feature_seed"])) for lm in data.get("landmarks", [])],
            agent_height=float(data["agent_height"]),
            start_node=str(data["start"]["node"]),
            start_heading=float(data["start"].get("heading", 0.0)),
            goal=(float(goal["position"][0]), float(goal["position"][1])),
            goal_node=goal.get("node"),
            feature_dim=int(data.get("feature_dim", 32)),
            sensor_range=float(data.get("sensor_range", 5.0)),
            target_landmark=data.get("target_landmark"),
        )

    def to_dict(self) -> dict:
        graph = self.nav_graph.to_dict()
        return {
            "scan": self.scan_id,
            "graph": {"nodes": graph["nodes"], "edges": graph["edges"]},
            "grid": self.grid.to_dict(),
            "landmarks": [{"id": lm.id, "position": list(lm.position), "feature_seed": lm.feature_seed} for lm in self.landmarks],
            "agent_height": self.agent_height,
            "start": {"node": self.start_node, "heading": self.start_heading},
            "goal": {"position": list(self.goal), "node": self.goal_node},
            "feature_dim": self.feature_dim,
            "sensor_range": self.sensor_range,
            "target_landmark": self.target_landmark,
        }

    @classmethod
    def load(cls, path) -> Scenario:
        path = Path(path)
        with open(path) as f:
            return cls.from_dict(json.load(f), path.parent)


# -- sensing -------------------------------------------------------------------


def first_block_distance(grid: HeightGrid, pose: Pose, heading: float, max_range: float, min_height: float) -> float | None:
    """Distance along ``heading`` to the first cell at least ``min_height`` tall, or None."""
    end = (pose.x + max_range * math.cos(heading), pose.y + max_range * math.sin(heading))
    start_cell = grid.cell_of(pose.x, pose.y)
    for col, row, t0, _ in grid_walk(grid, pose.xy, end):
        if not grid.in_range(col, row):
            return None
        if (col, row) != start_cell and grid.cells[row, col] >= min_height:
            return t0 * max_range
    return None


def capture_panorama(scenario: Scenario, pose: Pose) -> PanoObservation:
    """Twelve 30-degree views around ``pose`` seen from the scenario's camera height."""
    grid = scenario.grid
    if not grid.contains(pose.x, pose.y):
        raise BoundsError(f"pose ({pose.x}, {pose.y}) outside grid")
    camera = Pose(pose.x, pose.y, scenario.agent_height, pose.heading)
    sums = np.zeros((NUM_VIEWS, scenario.feature_dim))
    for lm in scenario.landmarks:
        if (lm.position[0], lm.position[1]) == camera.xy or not grid.contains(lm.position[0], lm.position[1]):
            continue
        off = relative_polar(camera, lm.position)
        if off.distance > scenario.sensor_range or not ray_visible(grid, camera, lm.position):
            continue
        sums[view_index(off.heading)] += scenario.landmark_feature(lm.id)
    views = []
    for k in range(NUM_VIEWS):
        norm = np.linalg.norm(sums[k])
        feat = sums[k] / norm if norm > 0 else sums[k]
        depth = first_block_distance(grid, camera, pose.heading + view_center(k), scenario.sensor_range, scenario.agent_height)
        views.append(View(feat, depth))
    return PanoObservation(tuple(views))


# -- motion --------------------------------------------------------------------


@dataclass
class AgentState:
    pose: Pose
    trace: list[tuple[int, Pose]] = field(default_factory=list)
    blocked: bool = False

    def __post_init__(self):
        if not self.trace:
            self.trace = [(0, self.pose)]


def floor_stop(grid: HeightGrid, a: Sequence[float], b: Sequence[float]) -> float:
    """Segment parameter where floor-level motion a->b first enters a raised cell (1.0 if never)."""
    start_cell = grid.cell_of(a[0], a[1])
    for col, row, t0, _ in grid_walk(grid, a, b):
        if (col, row) == start_cell:
            continue
        if not grid.in_range(col, row) or grid.cells[row, col] > 0.0:
            return t0
    return 1.0


def goto(scenario: Scenario, state: AgentState, target: Sequence[float]) -> AgentState:
    """Drive straight toward ``target``; stop short of the first raised cell."""
    grid = scenario.grid
    if not grid.contains(target[0], target[1]):
        raise BoundsError(f"target ({target[0]}, {target[1]}) outside grid")
    p = state.pose
    dx, dy = target[0] - p.x, target[1] - p.y
    length = math.hypot(dx, dy)
    step = state.trace[-1][0] + 1
    if length == 0.0:
        return AgentState(p, state.trace + [(step, p)], blocked=False)
    t = floor_stop(grid, p.xy, target)
    blocked = t < 1.0
    if blocked:
        t = max(0.0, t - STOP_MARGIN / length)
    heading = math.atan2(dy, dx) if t > 0 else p.heading
    new = Pose(p.x + t * dx, p.y + t * dy, p.z, heading) if blocked else Pose(target[0], target[1], p.z, heading)
    return AgentState(new, state.trace + [(step, new)], blocked=blocked)


# -- planning ------------------------------------------------------------------


def shortest_path(
    neighbors: Callable[[Hashable], Iterable[Hashable]],
    weight: Callable[[Hashable, Hashable], float],
    source: Hashable,
    target: Hashable,
) -> tuple[float, list]:
    """Dijkstra; among minimum-cost paths the lexicographically smallest node sequence wins."""
    heap = [(0.0, [source])]
    done = set()
    while heap:
        cost, path = heapq.heappop(heap)
        node = path[-1]
        if node in done:
            continue
        if node == target:
            return cost, path
        done.add(node)
        for nb in neighbors(node):
            if nb not in done:
                heapq.heappush(heap, (cost + weight(node, nb), path + [nb]))
    raise UnreachableError(f"no path from {source!r} to {target!r}")


def plan_path(tmap: TopoMap, from_id: int, to_id: int) -> list[int]:
    for nid in (from_id, to_id):
        if nid not in tmap.nodes:
            raise KeyError(f"unknown node {nid}")
    adjacency: dict[int, list[int]] = {n: [] for n in tmap.nodes}
    for a, b in tmap.edges:
        adjacency[a].append(b)
        adjacency[b].append(a)
    return shortest_path(
        lambda n: adjacency[n], lambda a, b: tmap.edges[(min(a, b), max(a, b))], from_id, to_id
    )[1]


def nav_geodesic(graph: NavGraph, source: str, target: str) -> tuple[float, list[str]]:
    adjacency: dict[str, list[str]] = {n: [] for n in graph.nodes}
    for a, b in graph.edges:
        adjacency[a].append(b)
        adjacency[b].append(a)
    return shortest_path(lambda n: adjacency[n], lambda a, b: graph.edges[(min(a, b), max(a, b))], source, target)


# -- policies ------------------------------------------------------------------


@dataclass
class PolicyContext:
    tmap: TopoMap
    pose: Pose
    scenario: Scenario
    mode: Mode
    params: EncoderParams | None
    # policies may leave diagnostics here; they are copied into the action log
    info: dict = field(default_factory=dict)


class Policy(Protocol):
    name: str

    def select(self, ctx: PolicyContext) -> int | None:
        """Node id to travel to over the whole map, or None to stop."""


class NearestToGoal:
    """Go to the map node closest (planar) to the goal; stop when that is the current node."""

    name = "nearest"

    def select(self, ctx: PolicyContext) -> int | None:
        goal = ctx.scenario.goal
        cur = ctx.tmap.current_id

        def key(nid):
            pos = ctx.tmap.nodes[nid].position
            return (math.dist(pos[:2], goal), nid != cur, nid)

        best = min(ctx.tmap.nodes, key=key)
        return None if best == cur else best


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))


class FeatureMatch:
    """Score node representations against a target feature by cosine similarity.

    Travels to the best-scoring other node, and stops once the current node
    scores at least as well as every alternative.
    """

    name = "feature"

    def __init__(self, target: np.ndarray | None = None):
        self.target = target

    def scores(self, ctx: PolicyContext) -> dict[int, float]:
        target = self.target if self.target is not None else ctx.scenario.target_feature()
        return {
            nid: cosine(ctx.tmap.node_representation(nid, ctx.mode, ctx.params), target)
            for nid in sorted(ctx.tmap.nodes)
        }

    def select(self, ctx: PolicyContext) -> int | None:
        scores = self.scores(ctx)
        ctx.info["scores"] = {str(k): v for k, v in scores.items()}
        cur = ctx.tmap.current_id
        others = [n for n in scores if n != cur]
        if not others:
            return None
        best = max(others, key=lambda n: (scores[n], -n))
        return None if scores[cur] >= scores[best] else best


POLICIES = {"nearest": NearestToGoal, "feature": FeatureMatch}


# -- predictors ----------------------------------------------------------------


@dataclass
class OraclePredictor:
    """Ground-truth neighbors of the nav node under the agent, optionally corrupted."""

    pos_sigma: float = 0.0
    drop_prob: float = 0.0
    name: str = "oracle"

    def __call__(self, scenario: Scenario, pose: Pose, pano: PanoObservation, seed: int):
        nodes = scenario.nav_graph.nodes
        near = min(sorted(nodes), key=lambda k: math.dist(nodes[k][:2], pose.xy))
        if math.dist(nodes[near][:2], pose.xy) > NODE_SNAP:
            return []
        return oracle_predict(scenario.nav_graph, near, self.pos_sigma, self.drop_prob, seed, pose.heading)


@dataclass
class DepthPredictor:
    disc: Discretization = field(default_factory=Discretization)
    name: str = "depth"

    def __call__(self, scenario: Scenario, pose: Pose, pano: PanoObservation, seed: int):
        return depth_heuristic_predict(pano, self.disc)


# -- episodes ------------------------------------------------------------------


@dataclass
class Trajectory:
    episode_id: str
    scan_id: str
    poses: list[Pose]
    actions: list[dict]
    terminal: Terminal
    map_snapshot: dict | None = None
    # one entry per policy call, including the final stop; not part of the log schema
    decisions: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "episode": self.episode_id,
            "scan": self.scan_id,
            "poses": [p.as_list() for p in self.poses],
            "actions": self.actions,
            "terminal": self.terminal.value,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> Trajectory:
        poses = [Pose(*p) for p in data["poses"]]
        return cls(data["episode"], data.get("scan", ""), poses, list(data["actions"]), Terminal(data["terminal"]))


def episode_seed(seed: int, episode_id: str) -> int:
    """Independent 64-bit seed for one episode, stable across processes."""
    digest = hashlib.sha256(f"{seed}:{episode_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def run_episode(
    scenario: Scenario,
    policy: Policy,
    predictor: Callable | None = None,
    mode: Mode | str = Mode.ATTENTION,
    params: EncoderParams | None = None,
    max_steps: int = 15,
    rng_seed: int = 0,
    episode_id: str = "ep0",
    epsilon: float = 0.5,
    localize_radius: float = 0.5,
) -> Trajectory:
    """Predict waypoints, update and prune the map, select a node, plan, move; repeat.

    Every planned hop is logged as one action with the pose it ended at, so
    ``poses`` always holds one more entry than ``actions``.
    """
    mode = Mode(mode)
    if mode is Mode.ATTENTION and params is None:
        params = EncoderParams.seeded(0, scenario.feature_dim)
    predictor = predictor or OraclePredictor()
    rng = np.random.default_rng(episode_seed(rng_seed, episode_id))

    state = AgentState(scenario.start_pose())
    pano = capture_panorama(scenario, state.pose)
    tmap = TopoMap.start(state.pose, pano, epsilon, localize_radius)
    poses = [state.pose]
    actions: list[dict] = []
    decisions: list[dict] = []
    terminal = Terminal.STEP_LIMIT
    stalls = 0

    for step in range(max_steps):
        pose = state.pose
        offsets = predictor(scenario, pose, pano, int(rng.integers(2**63)))
        waypoints = []
        for off in offsets:
            x, y = off.to_point(pose.xy, pose.heading)
            if scenario.grid.contains(x, y):
                feat = pano.views[view_index(off.heading)].feature
                waypoints.append(Waypoint((x, y, scenario.agent_height), feat, wrap_angle(pose.heading + off.heading)))
        tmap.update(pose, waypoints)
        tmap.prune()

        ctx = PolicyContext(tmap, pose, scenario, mode, params)
        choice = policy.select(ctx)
        cur = tmap.current_id
        decisions.append({"step": step, "current": cur, "choice": choice, **ctx.info})
        if choice is None or choice == cur:
            terminal = Terminal.GOAL_DECLARED
            break
        if choice not in tmap.nodes:
            terminal = Terminal.PROTOCOL_ERROR
            break
        try:
            path = plan_path(tmap, cur, choice)
        except UnreachableError:
            terminal = Terminal.PROTOCOL_ERROR
            break

        for hop in path[1:]:
            before = state.pose
            target = tmap.nodes[hop].position[:2]
            state = goto(scenario, state, target)
            poses.append(state.pose)
            action = {"step": step, "selected_node": choice, "planned_path": path, "hop": hop, "blocked": state.blocked}
            action.update(ctx.info)
            actions.append(action)
            if state.blocked:
                tmap.cut_edge(tmap.current_id, hop)
                if math.dist(before.xy, state.pose.xy) > 0:
                    pano = capture_panorama(scenario, state.pose)
                    tmap.add_current(state.pose, pano)
                    stalls = 0
                else:
                    stalls += 1
                break
            stalls = 0
            pano = capture_panorama(scenario, state.pose)
            if tmap.nodes[hop].kind is NodeKind.GHOST:
                tmap.promote(hop, pano, state.pose)
            else:
                tmap.relocate(hop, state.pose)
        if stalls >= 2:
            terminal = Terminal.STUCK
            break

    return Trajectory(episode_id, scenario.scan_id, poses, actions, terminal, tmap.snapshot(), decisions)
