import argparse
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd

from src.config.config_handler import ConfigHandler, RunConfig, load_sim_config, parse_overrides
from src.core.hmm_matcher import nearest_road_sequence
from src.core.lane_enrichment import EnrichedMap, build_enriched_map
from src.core.metrics import EvalReport, evaluate
from src.core.pipeline import run_session
from src.core.simulator import NetworkConfig, SimConfig, SimNetwork, generate_network, simulate_drive
from src.utils.errors import DegenerateEval, MapMatchError
from src.utils.helpers import parse_seed_range, timed_operation

logger = logging.getLogger(__name__)

NEAREST = "nearest"
BASELINE = "baseline"
# variant -> (use enriched map, use_lane_factor, use_scenario_factor, pose_correction)
VARIANTS: Dict[str, Tuple[bool, bool, bool, bool]] = {
    BASELINE: (False, False, False, False),
    "baseline+ps": (False, False, True, False),
    "baseline+pl": (True, True, False, True),
    "full": (True, True, True, True),
}
VARIANT_ORDER = (NEAREST,) + tuple(VARIANTS)
METRICS = ("match_rate", "precision", "recall", "f1")


def setup_logging(log_level: int = logging.INFO) -> None:
    """
    Setup logging configuration.

    Args:
        log_level: Logging level (default: INFO)
    """
    logging.basicConfig(
        level=log_level,
        format='%(asctime)s - %(levelname)s - %(message)s'
    )


@lru_cache(maxsize=8)
def prepared_network(network_config: NetworkConfig, run_config: RunConfig) -> Tuple[SimNetwork, EnrichedMap]:
    """Network and enriched map for a network configuration; built once per process."""
    network = generate_network(SimConfig(network=network_config))
    enriched = build_enriched_map(network.graph, network.lanes, run_config.lane_emission_params,
                                  run_config.transition_params, run_config.association_floor)
    return network, enriched


def score(pred: Sequence[Optional[int]], drive_truth, graph) -> Dict[str, float]:
    """Metrics of one matched sequence; a degenerate evaluation scores zero."""
    try:
        report: EvalReport = evaluate(pred, drive_truth, graph)
    except DegenerateEval as e:
        logger.warning(f"Degenerate evaluation scored as zero: {e}")
        return {metric: 0.0 for metric in METRICS}
    return {metric: getattr(report, metric) for metric in METRICS}


def run_seed(sim_config: SimConfig, run_config: RunConfig) -> List[Dict[str, object]]:
    """
    Simulate one drive and match it with every variant.

    Returns:
        One row per variant with the seed, variant name and metrics
    """
    network, enriched = prepared_network(sim_config.network, run_config)
    drive = simulate_drive(network, sim_config.route, sim_config)
    graph = network.graph

    rows = []
    nearest = nearest_road_sequence(graph, [obs.pose for obs in drive.observations], run_config.candidate_radius)
    rows.append({"seed": sim_config.seed, "variant": NEAREST, **score(nearest, drive.truth, graph)})
    for name, (use_enriched, use_lane, use_scenario, correction) in VARIANTS.items():
        params = replace(run_config, use_lane_factor=use_lane, use_scenario_factor=use_scenario,
                         pose_correction=correction).pipeline_params
        _, final = run_session(graph, drive.observations, enriched if use_enriched else None, params)
        pred = [rec.road_id for rec in final]
        rows.append({"seed": sim_config.seed, "variant": name, **score(pred, drive.truth, graph)})
    logger.debug(f"Seed {sim_config.seed} done")
    return rows


@timed_operation("ablation")
def run_ablation(seeds: Sequence[int], sim_config: SimConfig, run_config: RunConfig,
                 workers: int = 1) -> pd.DataFrame:
    """
    Per-seed, per-variant metrics over a seed range.

    Args:
        seeds: Simulator seeds
        sim_config: Base simulator configuration (its seed is replaced)
        run_config: Matcher configuration
        workers: Worker processes; 1 runs in-process

    Returns:
        DataFrame with columns seed, variant and the metrics
    """
    configs = [replace(sim_config, seed=seed) for seed in seeds]
    rows: List[Dict[str, object]] = []
    if workers > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for seed_rows in pool.map(run_seed, configs, [run_config] * len(configs)):
                rows.extend(seed_rows)
    else:
        for config in configs:
            rows.extend(run_seed(config, run_config))
    return pd.DataFrame(rows, columns=["seed", "variant", *METRICS])


def summarize(results: pd.DataFrame) -> pd.DataFrame:
    """Median metrics per variant with the difference to the baseline."""
    summary = results.groupby("variant")[list(METRICS)].median()
    summary = summary.reindex([v for v in VARIANT_ORDER if v in summary.index])
    if BASELINE in summary.index:
        for metric in METRICS:
            summary[f"{metric}_delta"] = summary[metric] - summary.loc[BASELINE, metric]
    summary.insert(0, "seeds", results.groupby("variant")["seed"].nunique().reindex(summary.index))
    return summary.round(6)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Command-line entry point"""
    parser = argparse.ArgumentParser(description='Monte-Carlo ablation of the matcher factors on simulated drives')
    parser.add_argument('--seeds', default='0..19', help='Seed range a..b (default: 0..19)')
    parser.add_argument('--sim-config', help='Simulator configuration YAML (default: config/sim.yaml)')
    parser.add_argument('--sim-set', action='append', default=[], metavar='KEY=VALUE',
                        help='Simulator override, e.g. noise.gnss_sigma=5')
    parser.add_argument('--config', help='Run configuration YAML (default: config/config.yaml)')
    parser.add_argument('--set', action='append', default=[], metavar='KEY=VALUE', help='Run configuration override')
    parser.add_argument('--route', help='Route kind to drive (surface, elevated, ramp_exit)')
    parser.add_argument('--workers', type=int, default=1, help='Worker processes')
    parser.add_argument('--output', '-o', default='ablation.csv', help='Summary CSV filename')
    parser.add_argument('--per-seed', help='Also write the per-seed metrics to this CSV')
    parser.add_argument('--verbose', '-v', action='store_true', help='Enable verbose logging')
    args = parser.parse_args(argv)

    log_level = logging.DEBUG if args.verbose else logging.INFO
    setup_logging(log_level)

    try:
        sim_overrides = parse_overrides(args.sim_set)
        if args.route:
            sim_overrides["route"] = args.route
        sim_config = load_sim_config(args.sim_config, sim_overrides)
        run_config = ConfigHandler(args.config, parse_overrides(args.set)).run_config
        results = run_ablation(parse_seed_range(args.seeds), sim_config, run_config, args.workers)
    except MapMatchError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code

    summary = summarize(results)
    output_path = Path(args.output)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    summary.to_csv(output_path, index_label="variant")
    if args.per_seed:
        results.to_csv(args.per_seed, index=False)
    logger.info(f"Saved ablation summary over {results['seed'].nunique()} seeds to {args.output}")
    print(summary.to_string())
    return 0


if __name__ == "__main__":
    exit(main())
