"""Connectivity-graph parsing and waypoint-supervision dataset generation."""

from __future__ import annotations

import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .core import Pose, relative_polar


class ParseError(ValueError):
    pass


@dataclass(frozen=True)
class ScanEntry:
    node_id: str
    position: tuple[float, float, float]
    included: bool
    unobstructed: tuple[bool, ...]


@dataclass(frozen=True)
class ScanGraph:
    scan_id: str
    entries: tuple[ScanEntry, ...]


@dataclass
class NavGraph:
    """Undirected navigation graph. Edge keys are sorted ``(a, b)`` pairs with ``a < b``."""

    scan_id: str
    nodes: dict[str, tuple[float, float, float]]
    edges: dict[tuple[str, str], float] = field(default_factory=dict)

    def neighbors(self, node_id: str) -> list[str]:
        out = []
        for a, b in self.edges:
            if a == node_id:
                out.append(b)
            elif b == node_id:
                out.append(a)
        return sorted(out)

    def degree(self, node_id: str) -> int:
        return len(self.neighbors(node_id))

    def to_dict(self) -> dict:
        return {
            "scan": self.scan_id,
            "nodes": {k: list(v) for k, v in sorted(self.nodes.items())},
            "edges": [[a, b, w] for (a, b), w in sorted(self.edges.items())],
        }

    @classmethod
    def from_dict(cls, data: dict) -> NavGraph:
        nodes = {str(k): tuple(float(c) for c in v) for k, v in data["nodes"].items()}
        g = cls(str(data.get("scan", "")), nodes)
        for a, b, *rest in data["edges"]:
            a, b = str(a), str(b)
            if a not in nodes or b not in nodes:
                raise ParseError(f"edge ({a}, {b}) references unknown node")
            g.edges[_key(a, b)] = math.dist(nodes[a], nodes[b])
        return g


@dataclass(frozen=True)
class WaypointTarget:
    neighbor_id: str
    distance: float
    heading: float


@dataclass(frozen=True)
class WaypointSample:
    scan_id: str
    node_id: str
    camera_height: float
    targets: tuple[WaypointTarget, ...]

    def to_json(self) -> str:
        return json.dumps(
            {
                "scan": self.scan_id,
                "node": self.node_id,
                "height": self.camera_height,
                "targets": [
                    {"neighbor": t.neighbor_id, "dist": t.distance, "heading": t.heading}
                    for t in self.targets
                ],
            }
        )

    @classmethod
    def from_dict(cls, data: dict) -> WaypointSample:
        return cls(
            data["scan"],
            data["node"],
            float(data["height"]),
            tuple(WaypointTarget(t["neighbor"], float(t["dist"]), float(t["heading"])) for t in data["targets"]),
        )


@dataclass
class DatasetManifest:
    per_scan: dict[str, int]
    total_samples: int
    total_targets: int
    camera_height: float
    skipped_isolated: dict[str, int] = field(default_factory=dict)
    discretization: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "per_scan": dict(sorted(self.per_scan.items())),
            "total_samples": self.total_samples,
            "total_targets": self.total_targets,
            "camera_height": self.camera_height,
            "skipped_isolated": dict(sorted(self.skipped_isolated.items())),
            "discretization": self.discretization,
        }


def _key(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a < b else (b, a)


def parse_connectivity(data: bytes | str, scan_id: str = "") -> ScanGraph:
    """Parse one scan's connectivity JSON.

    Every entry is kept, including ones marked ``included: false``.
    """
    try:
        raw = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ParseError(f"malformed connectivity JSON: {e}") from e
    if not isinstance(raw, list):
        raise ParseError("connectivity file must hold a JSON array")
    n = len(raw)
    seen: set[str] = set()
    entries = []
    for i, item in enumerate(raw):
        try:
            node_id = str(item["image_id"])
            pose = [float(v) for v in item["pose"]]
            included = bool(item["included"])
            unobstructed = tuple(bool(v) for v in item["unobstructed"])
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"entry {i}: missing or invalid field ({e})") from e
        if len(pose) != 16:
            raise ParseError(f"entry {i} ({node_id}): pose needs 16 numbers, got {len(pose)}")
        if len(unobstructed) != n:
            raise ParseError(
                f"entry {i} ({node_id}): unobstructed has {len(unobstructed)} flags, expected {n}"
            )
        if node_id in seen:
            raise ParseError(f"entry {i}: duplicate node id {node_id}")
        seen.add(node_id)
        entries.append(ScanEntry(node_id, (pose[3], pose[7], pose[11]), included, unobstructed))
    return ScanGraph(scan_id, tuple(entries))


def build_nav_graph(scan: ScanGraph) -> NavGraph:
    """Keep included entries; connect a pair when either direction is unobstructed."""
    entries = scan.entries
    nodes = {e.node_id: e.position for e in entries if e.included}
    graph = NavGraph(scan.scan_id, nodes)
    for i, ei in enumerate(entries):
        if not ei.included:
            continue
        for j in range(i + 1, len(entries)):
            ej = entries[j]
            if ej.included and (ei.unobstructed[j] or ej.unobstructed[i]):
                # linked nodes need distinct planar positions for a defined heading
                if ei.position[:2] == ej.position[:2]:
                    raise ParseError(f"nodes {ei.node_id} and {ej.node_id} share a planar position")
                graph.edges[_key(ei.node_id, ej.node_id)] = math.dist(ei.position, ej.position)
    return graph


def graph_to_scan(graph: NavGraph) -> ScanGraph:
    """Connectivity view of a graph: every node included, flags set both ways."""
    ids = sorted(graph.nodes)
    index = {k: i for i, k in enumerate(ids)}
    flags = [[False] * len(ids) for _ in ids]
    for a, b in graph.edges:
        flags[index[a]][index[b]] = flags[index[b]][index[a]] = True
    return ScanGraph(
        graph.scan_id,
        tuple(ScanEntry(k, graph.nodes[k], True, tuple(flags[index[k]])) for k in ids),
    )


def isolated_nodes(graph: NavGraph) -> list[str]:
    linked = {n for e in graph.edges for n in e}
    return sorted(set(graph.nodes) - linked)


def annotate_waypoint_targets(graph: NavGraph, camera_height: float) -> list[WaypointSample]:
    """One sample per node with at least one neighbor, in the world-aligned frame."""
    if not camera_height > 0:
        raise ValueError(f"camera_height must be > 0, got {camera_height}")
    adjacency: dict[str, list[str]] = {k: [] for k in graph.nodes}
    for a, b in graph.edges:
        adjacency[a].append(b)
        adjacency[b].append(a)
    samples = []
    for node_id in sorted(graph.nodes):
        nbrs = sorted(adjacency[node_id])
        if not nbrs:
            continue
        x, y, _ = graph.nodes[node_id]
        observer = Pose(x, y, camera_height, 0.0)
        targets = []
        for nb in nbrs:
            off = relative_polar(observer, graph.nodes[nb])
            targets.append(WaypointTarget(nb, off.distance, off.heading))
        samples.append(WaypointSample(graph.scan_id, node_id, camera_height, tuple(targets)))
    return samples


def emit_dataset(
    samples: Iterable[WaypointSample],
    sink,
    skipped_isolated: dict[str, int] | None = None,
    discretization: dict | None = None,
) -> DatasetManifest:
    """Write samples as JSONL to ``sink`` (a path or a text stream).

    When ``sink`` is a path the file is written to a temporary sibling and
    renamed, so a failed write leaves neither a partial file nor a manifest.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("no samples to emit")
    heights = {s.camera_height for s in samples}
    if len(heights) != 1:
        raise ValueError(f"samples mix camera heights {sorted(heights)}")

    buf = io.StringIO()
    per_scan: dict[str, int] = {}
    n_targets = 0
    for s in samples:
        buf.write(s.to_json())
        buf.write("\n")
        per_scan[s.scan_id] = per_scan.get(s.scan_id, 0) + 1
        n_targets += len(s.targets)
    text = buf.getvalue()

    if isinstance(sink, (str, os.PathLike)):
        path = Path(sink)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        try:
            with os.fdopen(fd, "w", newline="\n") as f:
                f.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    else:
        sink.write(text)

    return DatasetManifest(
        per_scan=per_scan,
        total_samples=sum(per_scan.values()),
        total_targets=n_targets,
        camera_height=heights.pop(),
        skipped_isolated=dict(skipped_isolated or {}),
        discretization=dict(discretization or {}),
    )


def load_connectivity_dir(directory) -> list[NavGraph]:
    """Build a graph for every ``<scan>_connectivity.json`` (or ``<scan>.json``) in a directory."""
    graphs = []
    for path in sorted(Path(directory).glob("*.json")):
        scan_id = path.stem.removesuffix("_connectivity")
        try:
            graphs.append(build_nav_graph(parse_connectivity(path.read_bytes(), scan_id)))
        except ParseError as e:
            raise ParseError(f"{path}: {e}") from e
    return graphs


def load_graphs(path) -> dict[str, NavGraph]:
    with open(path) as f:
        data = json.load(f)
    return {g["scan"]: NavGraph.from_dict(g) for g in data["scans"]}


def dump_graphs(graphs: Iterable[NavGraph]) -> str:
    return json.dumps({"scans": [g.to_dict() for g in graphs]}, indent=1) + "\n"
