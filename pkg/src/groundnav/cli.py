"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or validation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import struct
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .aggregate import EncoderParams, Mode, read_header
from .core import HeightGrid, PolarOffset
from .ingest import (
    ParseError,
    annotate_waypoint_targets,
    build_nav_graph,
    dump_graphs,
    emit_dataset,
    isolated_nodes,
    load_graphs,
    parse_connectivity,
)
from .metrics import aggregate_report, compute_metrics, rounded
from .simenv import POLICIES, DepthPredictor, OraclePredictor, Scenario, Trajectory, nav_geodesic, run_episode
from .waypoint import Discretization, NodeWaypoints, eval_waypoints

log = logging.getLogger("groundnav")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _workers(threads: int | None) -> int:
    return threads if threads and threads > 0 else (os.cpu_count() or 1)


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _echo_config(out: Path, args: argparse.Namespace) -> None:
    cfg = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k != "func"}
    cfg["version"] = __version__
    _write_text(out.with_name(out.name + ".config.json"), json.dumps(cfg, indent=1, sort_keys=True) + "\n")


def _read_jsonl(path: Path) -> list[tuple[int, dict]]:
    if not path.is_file():
        raise DataError(f"{path}: file not found")
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rows.append((lineno, json.loads(line)))
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: invalid JSON ({e.msg})") from e
    return rows


def _load_scenario(path: Path) -> Scenario:
    if not path.is_file():
        raise DataError(f"{path}: scenario file not found")
    try:
        return Scenario.load(path)
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"{path}: invalid scenario ({e})") from e


# -- commands ------------------------------------------------------------------


def cmd_ingest(args) -> None:
    src = Path(args.connectivity)
    if not src.is_dir():
        raise DataError(f"{src}: connectivity directory not found")
    files = sorted(src.glob("*.json"))
    if not files:
        raise DataError(f"{src}: no connectivity files")

    def one(path: Path):
        try:
            return build_nav_graph(parse_connectivity(path.read_bytes(), path.stem.removesuffix("_connectivity")))
        except ParseError as e:
            raise DataError(f"{path}: {e}") from e

    with ThreadPoolExecutor(_workers(args.threads)) as pool:
        graphs = list(pool.map(one, files))
    for g in graphs:
        log.info("scan %s: %d nodes, %d edges", g.scan_id, len(g.nodes), len(g.edges))
    _write_text(args.out, dump_graphs(graphs))


def cmd_build_dataset(args) -> None:
    path = Path(args.graphs)
    if not path.is_file():
        raise DataError(f"{path}: graphs file not found")
    try:
        graphs = load_graphs(path)
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: invalid graphs file ({e})") from e
    if not args.height > 0:
        raise DataError(f"--height must be > 0, got {args.height}")
    samples, skipped = [], {}
    for scan_id, g in sorted(graphs.items()):
        samples.extend(annotate_waypoint_targets(g, args.height))
        skipped[scan_id] = len(isolated_nodes(g))
    if not samples:
        raise DataError(f"{path}: no node has a neighbor")
    disc = Discretization(args.angle_bins, args.dist_bins, args.dist_step)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    manifest = emit_dataset(samples, args.out, skipped, disc.to_dict())
    _write_text(args.out.with_name(args.out.name + ".manifest.json"), json.dumps(manifest.to_dict(), indent=1) + "\n")
    log.info("wrote %d samples", manifest.total_samples)


def cmd_eval_waypoints(args) -> None:
    truth = {}
    for lineno, row in _read_jsonl(Path(args.truth)):
        try:
            truth[(row["scan"], row["node"])] = [PolarOffset(t["dist"], t["heading"]) for t in row["targets"]]
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"{args.truth}:{lineno}: bad sample ({e})") from e
    preds = {}
    for lineno, row in _read_jsonl(Path(args.pred)):
        try:
            preds[(row["scan"], row["node"])] = [PolarOffset(p["dist"], p["heading"]) for p in row["preds"]]
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"{args.pred}:{lineno}: bad prediction ({e})") from e
    graphs = load_graphs(args.graphs) if args.graphs else {}

    per_scan: dict[str, list[NodeWaypoints]] = {}
    for (scan, node), targets in sorted(truth.items()):
        if scan not in graphs or node not in graphs[scan].nodes:
            raise DataError(f"{args.graphs}: no position for node {node!r} of scan {scan!r}")
        x, y, _ = graphs[scan].nodes[node]
        per_scan.setdefault(scan, []).append(NodeWaypoints((x, y), targets, preds.get((scan, node), []), scan=scan))

    grids = {}
    for scan in per_scan:
        grid_path = Path(args.grid) / f"{scan}.json"
        if not grid_path.is_file():
            raise DataError(f"{grid_path}: height grid not found")
        grids[scan] = HeightGrid.load(grid_path)
    all_nodes = [n for nodes in per_scan.values() for n in nodes]
    out = {
        "summary": eval_waypoints(all_nodes, grids, args.agent_height).to_dict(),
        "per_scan": {s: eval_waypoints(n, grids[s], args.agent_height).to_dict() for s, n in sorted(per_scan.items())},
    }
    _write_text(args.out, json.dumps(out, indent=1) + "\n")


def _params_for(args, scenario: Scenario) -> EncoderParams | None:
    if args.params:
        p = Path(args.params)
        if not p.is_file():
            raise DataError(f"{p}: parameter file not found")
        params = EncoderParams.load(p)
        if params.d != scenario.feature_dim:
            raise DataError(f"{p}: parameter width {params.d} != scenario feature_dim {scenario.feature_dim}")
        return params
    return EncoderParams.seeded(args.seed, scenario.feature_dim)


def cmd_simulate(args) -> None:
    scenario = _load_scenario(Path(args.scenario))
    if args.agent_height is not None:
        scenario = scenario.with_height(args.agent_height)
    params = _params_for(args, scenario)
    if args.predictor == "oracle":
        predictor = OraclePredictor(args.pos_sigma, args.drop_prob)
    else:
        predictor = DepthPredictor()
    episode_ids = [f"ep{i:04d}" for i in range(args.episodes)]

    def one(ep):
        return run_episode(
            scenario,
            POLICIES[args.policy](),
            predictor,
            Mode(args.aggregation),
            params,
            max_steps=args.max_steps,
            rng_seed=args.seed,
            episode_id=ep,
            epsilon=args.epsilon,
            localize_radius=args.localize_radius,
        )

    with ThreadPoolExecutor(_workers(args.threads)) as pool:
        trajs = list(pool.map(one, episode_ids))
    _write_text(args.out, "".join(t.to_json() + "\n" for t in trajs))
    if args.dump_map:
        maps = "".join(json.dumps({"episode": t.episode_id, **t.map_snapshot}) + "\n" for t in trajs)
        _write_text(args.out.with_name(args.out.name + ".maps.jsonl"), maps)
    for t in trajs:
        log.info("%s: %s after %d moves", t.episode_id, t.terminal.value, len(t.actions))


def cmd_metrics(args) -> None:
    scenario = _load_scenario(Path(args.scenario))
    goal_node = scenario.goal_graph_node()
    geodesic, route = nav_geodesic(scenario.nav_graph, scenario.start_node, goal_node)
    reference = [scenario.nav_graph.nodes[n][:2] for n in route]
    records = []
    for lineno, row in _read_jsonl(Path(args.traj)):
        try:
            traj = Trajectory.from_dict(row)
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"{args.traj}:{lineno}: bad trajectory ({e})") from e
        records.append(
            compute_metrics([p.xy for p in traj.poses], scenario.goal, geodesic, reference, args.d_th, traj.episode_id)
        )
    if not records:
        raise DataError(f"{args.traj}: no trajectories")
    out = {
        "per_episode": [rounded(r.to_dict()) for r in records],
        "summary": rounded(aggregate_report(records)),
    }
    _write_text(args.out, json.dumps(out, indent=1) + "\n")


def cmd_dump_params(args) -> None:
    p = Path(args.file)
    if not p.is_file():
        raise DataError(f"{p}: parameter file not found")
    try:
        header = read_header(p.read_bytes())
    except (ValueError, struct.error) as e:
        raise DataError(f"{p}: {e}") from e
    print(json.dumps(header, indent=1))


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=0, help="worker threads (0 = all cores)")
    common.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = _Parser(prog="groundnav", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("ingest", parents=[common], help="connectivity files -> graphs.json")
    p.add_argument("--connectivity", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("build-dataset", parents=[common], help="graphs.json -> waypoint JSONL")
    p.add_argument("--graphs", type=Path, required=True)
    p.add_argument("--height", type=float, required=True, help="camera height in meters")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--angle-bins", type=int, default=120)
    p.add_argument("--dist-bins", type=int, default=12)
    p.add_argument("--dist-step", type=float, default=0.25)
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("eval-waypoints", parents=[common], help="score predicted waypoints")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--truth", type=Path, required=True)
    p.add_argument("--grid", type=Path, required=True, help="directory of <scan>.json height grids")
    p.add_argument("--graphs", type=Path, required=True, help="graphs.json holding node positions")
    p.add_argument("--agent-height", type=float, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_eval_waypoints)

    p = sub.add_parser("simulate", parents=[common], help="run episodes in a scenario")
    p.add_argument("--scenario", type=Path, required=True)
    p.add_argument("--episodes", type=int, default=1)
    p.add_argument("--aggregation", choices=[m.value for m in Mode], default="attention")
    p.add_argument("--policy", choices=sorted(POLICIES), default="nearest")
    p.add_argument("--predictor", choices=["oracle", "depth"], default="oracle")
    p.add_argument("--agent-height", type=float, default=None)
    p.add_argument("--params", type=Path, default=None, help="encoder parameter file (default: seeded)")
    p.add_argument("--max-steps", type=int, default=15)
    p.add_argument("--epsilon", type=float, default=0.5)
    p.add_argument("--localize-radius", type=float, default=0.5)
    p.add_argument("--pos-sigma", type=float, default=0.0)
    p.add_argument("--drop-prob", type=float, default=0.0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--dump-map", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("metrics", parents=[common], help="score trajectories")
    p.add_argument("--traj", type=Path, required=True)
    p.add_argument("--scenario", type=Path, required=True)
    p.add_argument("--d-th", type=float, default=3.0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("dump-params", parents=[common], help="print a parameter file header")
    p.add_argument("file", type=Path)
    p.set_defaults(func=cmd_dump_params)
    return parser


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        if not argv:
            raise UsageError(parser.format_help())
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ParseError, ValueError, KeyError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    out = getattr(args, "out", None)
    if out is not None:
        _echo_config(Path(out), args)
    return 0


def main() -> None:
    sys.exit(dispatch())
