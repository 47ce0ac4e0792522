import argparse
import json
import logging
import logging.handlers
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

from dotenv import load_dotenv

from src.config.config_handler import ConfigHandler, RunConfig, load_sim_config, parse_overrides
from src.core.hmm_matcher import nearest_road_sequence
from src.core.lane_enrichment import EnrichedMap, build_enriched_map
from src.core.metrics import evaluate
from src.core.pipeline import MatchRecord, MatchSession, Observation
from src.core.road_graph import RoadGraph
from src.core.scenario import ScenarioStream, load_scenario_stream
from src.core.simulator import SimConfig, generate_network, simulate_drive, write_bundle
from src.services.map_io import load_enriched, load_road_graph, write_enriched, write_overlay
from src.services.stream_io import (
    DetectionStream,
    load_detections,
    load_lanes,
    load_match_output,
    load_trajectory,
    load_truth,
    write_match_records,
)
from src.utils.errors import EmptyLattice, InputError, MapMatchError
from src.utils.helpers import dumps_canonical, parse_seed_range, timed_operation

# Constants
LOG_FILE_NAME = "mapmatch.log"
LOG_DIR_ENV = "MAPMATCH_LOG_DIR"
LOG_LEVEL_ENV = "MAPMATCH_LOG_LEVEL"
EXIT_OK = 0
EXIT_UNEXPECTED = 1

# Initialize logger at module level
logger = logging.getLogger(__name__)


def setup_logging(log_level: int = logging.INFO) -> None:
    """
    Setup logging configuration. Console output goes to stderr; a daily
    rotating file is added when MAPMATCH_LOG_DIR is set.

    Args:
        log_level: Logging level (default: INFO)
    """
    handlers: List[logging.Handler] = []
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(logging.Formatter('%(asctime)s - %(levelname)s - %(message)s'))
    handlers.append(console_handler)

    log_dir = os.environ.get(LOG_DIR_ENV)
    if log_dir:
        Path(log_dir).mkdir(parents=True, exist_ok=True)
        file_handler = logging.handlers.TimedRotatingFileHandler(
            filename=str(Path(log_dir) / LOG_FILE_NAME),
            when='midnight',
            interval=1,
            backupCount=7
        )
        file_handler.setFormatter(logging.Formatter('%(asctime)s - %(levelname)s - %(name)s - %(message)s'))
        handlers.append(file_handler)

    logging.basicConfig(level=log_level, handlers=handlers, force=True)
    logger.debug("Logging initialized")


def resolve_log_level(verbose: bool) -> int:
    if verbose:
        return logging.DEBUG
    name = os.environ.get(LOG_LEVEL_ENV, "INFO").upper()
    level = logging.getLevelName(name)
    return level if isinstance(level, int) else logging.INFO


def load_run_config(args: argparse.Namespace) -> RunConfig:
    handler = ConfigHandler(args.config, parse_overrides(args.set))
    return handler.run_config


def load_maps(args: argparse.Namespace, run: RunConfig) -> tuple:
    """Road graph and optional enriched map from --enriched or --map (+ --lanes)."""
    if getattr(args, "enriched", None):
        enriched = load_enriched(args.enriched)
        return enriched.graph, enriched
    if not getattr(args, "map", None):
        raise InputError("Either --map or --enriched is required")
    graph = load_road_graph(args.map, run.snap_tolerance)
    lanes_path = getattr(args, "lanes", None)
    if not lanes_path:
        return graph, None
    lanes = load_lanes(lanes_path, run.lane_sample_interval)
    enriched = build_enriched_map(graph, lanes, run.lane_emission_params, run.transition_params, run.association_floor)
    return graph, enriched


def assemble_observations(poses, detections: Optional[DetectionStream],
                          scenario: Optional[ScenarioStream]) -> List[Observation]:
    return [
        Observation(
            t=t,
            pose=pose,
            detections=detections.lookup(t) if detections is not None else None,
            scenario=scenario.lookup(t) if scenario is not None else None,
        )
        for t, pose in poses
    ]


@timed_operation("enrich")
def cmd_enrich(args: argparse.Namespace) -> int:
    run = load_run_config(args)
    graph = load_road_graph(args.map, run.snap_tolerance)
    lanes = load_lanes(args.lanes, run.lane_sample_interval) if args.lanes else []
    enriched = build_enriched_map(graph, lanes, run.lane_emission_params, run.transition_params, run.association_floor)
    write_enriched(args.out, enriched)
    return EXIT_OK


def match_nearest(graph: RoadGraph, observations: Sequence[Observation], run: RunConfig) -> List[MatchRecord]:
    sequence = nearest_road_sequence(graph, [obs.pose for obs in observations], run.candidate_radius)
    return [
        MatchRecord(obs.t, rid, obs.pose, {rid: 1.0} if rid is not None else {}, restart=rid is None)
        for obs, rid in zip(observations, sequence)
    ]


@timed_operation("match")
def cmd_match(args: argparse.Namespace) -> int:
    run = load_run_config(args)
    if args.no_pose_correction:
        run = replace(run, pose_correction=False)
    if args.disable_pl:
        run = replace(run, use_lane_factor=False)
    if args.disable_ps:
        run = replace(run, use_scenario_factor=False)

    graph, enriched = load_maps(args, run)
    poses = load_trajectory(args.traj, graph.origin)
    detections = load_detections(args.detections, run.detection_time_tolerance) if args.detections else None
    scenario = load_scenario_stream(args.scenario, run.stale_window) if args.scenario else None
    observations = assemble_observations(poses, detections, scenario)

    if args.nearest_neighbor:
        online = final = match_nearest(graph, observations, run)
    else:
        session = MatchSession(graph, enriched, run.pipeline_params)
        for obs in observations:
            session.match_step(obs)
        online = list(session.records)
        final = session.finalize() if online else []

    write_match_records(args.out, online, final)
    if args.emit_geojson:
        write_overlay(args.emit_geojson, graph, [rec.pose.position for rec in final],
                      [rec.road_id for rec in final])
    matched = sum(1 for rec in final if rec.matched)
    logger.info(f"Matched {matched} of {len(final)} observations")
    if not final:
        raise EmptyLattice("Trajectory is empty")
    if matched == 0 and not any(rec.matched for rec in online):
        raise EmptyLattice("No observation had a candidate road")
    return EXIT_OK


@timed_operation("eval")
def cmd_eval(args: argparse.Namespace) -> int:
    run = load_run_config(args)
    graph, _ = load_maps(args, run)
    pred, positions = load_match_output(args.pred)
    truth = load_truth(args.truth)
    report = evaluate(pred, truth, graph, None if truth.positions is not None else positions)
    output = dumps_canonical(report.as_dict())
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as f:
            f.write(output + "\n")
    else:
        print(output)
    return EXIT_OK


def simulate_seed(config: SimConfig, out_dir: str) -> str:
    network = generate_network(config)
    drive = simulate_drive(network, config.route, config)
    write_bundle(out_dir, network, drive, config)
    return out_dir


@timed_operation("sim")
def cmd_sim(args: argparse.Namespace) -> int:
    overrides = parse_overrides(args.set)
    base = load_sim_config(args.config, overrides)
    if args.seeds:
        seeds = parse_seed_range(args.seeds)
    elif args.seed is not None:
        seeds = [args.seed]
    else:
        seeds = [base.seed]

    jobs = []
    for seed in seeds:
        out_dir = args.out if len(seeds) == 1 and not args.seeds else str(Path(args.out) / f"seed_{seed:04d}")
        jobs.append((replace(base, seed=seed), out_dir))
    if args.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            futures = [pool.submit(simulate_seed, config, out_dir) for config, out_dir in jobs]
            for future in futures:
                future.result()
    else:
        for config, out_dir in jobs:
            simulate_seed(config, out_dir)
    logger.info(f"Simulated {len(jobs)} bundle(s) under {args.out}")
    return EXIT_OK


def cmd_config(args: argparse.Namespace) -> int:
    handler = ConfigHandler(args.config, parse_overrides(args.set))
    if args.dump:
        sys.stdout.write(handler.dump())
    else:
        logger.info(f"Configuration {handler.config_file} is valid")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mapmatch", description="Lane-aware online map matching")
    parser.add_argument('--verbose', '-v', action='store_true', help='Enable verbose logging')
    subparsers = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p: argparse.ArgumentParser) -> None:
        p.add_argument('--config', help='Run configuration YAML (default: config/config.yaml)')
        p.add_argument('--set', action='append', default=[], metavar='KEY=VALUE', help='Override a configuration value')

    enrich = subparsers.add_parser("enrich", help="Associate lane markings with the road map")
    enrich.add_argument('--map', required=True, help='GeoJSON road map')
    enrich.add_argument('--lanes', help='Lane markings JSONL')
    enrich.add_argument('--out', required=True, help='Output enriched map JSON')
    add_config_args(enrich)
    enrich.set_defaults(handler=cmd_enrich)

    match = subparsers.add_parser("match", help="Match a trajectory to the road map")
    match.add_argument('--map', help='GeoJSON road map')
    match.add_argument('--enriched', help='Enriched map JSON (replaces --map and --lanes)')
    match.add_argument('--lanes', help='Lane markings JSONL, enriched on the fly')
    match.add_argument('--traj', required=True, help='Trajectory JSONL')
    match.add_argument('--detections', help='Lane detections JSONL (vehicle frame)')
    match.add_argument('--scenario', help='Scenario probabilities JSONL')
    match.add_argument('--out', required=True, help='Output match records JSONL')
    match.add_argument('--emit-geojson', help='Also write a GeoJSON overlay of the matched roads')
    match.add_argument('--no-pose-correction', action='store_true', help='Keep raw poses for the distance emission')
    match.add_argument('--disable-pl', action='store_true', help='Disable the lane-marking factor')
    match.add_argument('--disable-ps', action='store_true', help='Disable the scenario factor')
    match.add_argument('--nearest-neighbor', action='store_true', help='Match every point to its closest road')
    add_config_args(match)
    match.set_defaults(handler=cmd_match)

    evaluate_cmd = subparsers.add_parser("eval", help="Evaluate match output against ground truth")
    evaluate_cmd.add_argument('--pred', required=True, help='Match records JSONL')
    evaluate_cmd.add_argument('--truth', required=True, help='Ground truth JSONL')
    evaluate_cmd.add_argument('--map', help='GeoJSON road map')
    evaluate_cmd.add_argument('--enriched', help='Enriched map JSON')
    evaluate_cmd.add_argument('--out', help='Output report JSON (default: stdout)')
    add_config_args(evaluate_cmd)
    evaluate_cmd.set_defaults(handler=cmd_eval)

    sim = subparsers.add_parser("sim", help="Generate a synthetic dataset bundle")
    sim.add_argument('--config', help='Simulator configuration YAML (default: config/sim.yaml)')
    sim.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                     help='Override a simulator value, e.g. noise.gnss_sigma=5')
    sim.add_argument('--seed', type=int, help='Random seed')
    sim.add_argument('--seeds', help='Seed range a..b; bundles go to OUT/seed_NNNN')
    sim.add_argument('--workers', type=int, default=1, help='Worker processes for seed ranges')
    sim.add_argument('--out', required=True, help='Output directory')
    sim.set_defaults(handler=cmd_sim)

    config = subparsers.add_parser("config", help="Validate or print the run configuration")
    config.add_argument('--dump', action='store_true', help='Print the effective configuration as YAML')
    add_config_args(config)
    config.set_defaults(handler=cmd_config)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Command-line entry point"""
    load_dotenv(override=True)
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(resolve_log_level(args.verbose))

    try:
        return args.handler(args)
    except MapMatchError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except (FileNotFoundError, IsADirectoryError, PermissionError) as e:
        logger.error(f"Cannot read input: {e}")
        return InputError.exit_code
    except json.JSONDecodeError as e:
        logger.error(f"Invalid JSON: {e}")
        return InputError.exit_code
    except Exception as e:
        logger.error(f"Unexpected error: {e}", exc_info=True)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
