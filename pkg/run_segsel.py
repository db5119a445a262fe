"""
Main runner script for segsel

This script provides a command-line interface that turns GPS trajectories or
synthetic routes into arrival matrices, trains the segment-selection policy
and runs the evaluation sweeps.
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Tuple

# Add current directory to path
sys.path.insert(0, str(Path(__file__).parent))

from segsel.config import COMMANDS, SWEEPS, RunConfig, load_config, require_valid
from segsel.errors import ConfigurationError, DataError, SegselError
from segsel.evaluation.ablation import (
    SWEEP_RUNNERS, AblationRunner, expand_sweeps, plot_convergence, plot_sweep,
)
from segsel.evaluation.metrics import evaluate_selection, prediction_errors, write_report
from segsel.evaluation.synthetic import generate_synthetic_route
from segsel.learning.training import (
    build_benchmark_table, dprl_train, load_benchmark_table, load_checkpoint,
    save_checkpoint, write_convergence_log,
)
from segsel.preprocessing.ingest import SegmentGrid, load_route, parse_trajectory_file, save_route
from segsel.preprocessing.interp import (
    ArrivalMatrix, build_arrival_matrix, load_arrival_matrix, save_arrival_matrix,
)
from segsel.utils import configure_logging, rng_stream, write_json

ROUTE_FILE = "route.yaml"
TRAIN_FILE = "train.csv"
TEST_FILE = "test.csv"
ARRIVALS_FILE = "arrivals.csv"
TRAIN_FRACTION = 0.8


def apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    """Command-line flags win over config-file values."""
    seed = getattr(args, "seed", None)
    if seed is not None:
        cfg = replace(
            cfg, seed=seed,
            train=replace(cfg.train, seed=seed),
            synthetic=replace(cfg.synthetic, seed=seed),
        )
    paths = cfg.paths
    if getattr(args, "out", None):
        paths = replace(paths, out=args.out)
    if getattr(args, "route", None):
        paths = replace(paths, route=args.route)
    if getattr(args, "checkpoint", None):
        paths = replace(paths, checkpoint=args.checkpoint)
    if getattr(args, "data", None):
        key = "trajectories" if args.command == "ingest" else "data"
        paths = replace(paths, **{key: args.data})
    cfg = replace(cfg, paths=paths)
    if getattr(args, "sweep", None):
        cfg = replace(cfg, sweep=replace(cfg.sweep, kinds=tuple(expand_sweeps([args.sweep]))))
    elif args.command == "ablate":
        cfg = replace(cfg, sweep=replace(cfg.sweep, kinds=tuple(expand_sweeps(cfg.sweep.kinds))))
    return cfg


def load_dataset(data_dir: str, seed: Optional[int]) -> Tuple[SegmentGrid, ArrivalMatrix, ArrivalMatrix]:
    """
    Load route and train/test matrices from a data directory.

    A directory holding a single arrivals.csv is split with the seeded
    "split" stream.
    """
    root = Path(data_dir)
    grid = load_route(root / ROUTE_FILE)
    if (root / TRAIN_FILE).exists():
        train = load_arrival_matrix(root / TRAIN_FILE)
        test = load_arrival_matrix(root / TEST_FILE)
    else:
        if seed is None:
            raise ConfigurationError("splitting arrivals.csv needs a seed")
        train, test = load_arrival_matrix(root / ARRIVALS_FILE).split(TRAIN_FRACTION, rng_stream(seed, "split"))
    for matrix in (train, test):
        if matrix.grid_ref != grid.digest:
            raise DataError(f"arrival matrix in {root} was built for a different route grid")
    return grid, train, test


def resolve_benchmark(cfg: RunConfig, train: ArrivalMatrix, grid: SegmentGrid):
    if cfg.reward.benchmark is None:
        return None
    if cfg.reward.benchmark == "all":
        return build_benchmark_table(train, grid)
    return load_benchmark_table(cfg.reward.benchmark)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.paths.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, cfg: RunConfig, outputs: List[str]) -> None:
    write_json(out / f"{command}_manifest.json", {
        "command": command,
        "config_digest": cfg.digest,
        "outputs": sorted(outputs),
    })


def cmd_ingest(cfg: RunConfig) -> None:
    """Trajectory file + route description -> arrival matrix."""
    journeys = parse_trajectory_file(cfg.paths.trajectories, cfg.ingest.tau)
    grid = load_route(cfg.paths.route)
    matrix = build_arrival_matrix(journeys, grid, cfg.ingest.utc_offset_hours)
    out = _out_dir(cfg)
    save_arrival_matrix(matrix, out / ARRIVALS_FILE)
    save_route(grid, out / ROUTE_FILE)
    _write_manifest(out, "ingest", cfg, [ARRIVALS_FILE, ROUTE_FILE])

    print(f"\n{'='*60}")
    print(f"Ingested: {cfg.paths.trajectories}")
    print(f"{'='*60}\n")
    print(f"Journeys parsed: {len(journeys)}")
    print(f"Trips interpolated: {matrix.n_trips}")
    print(f"Grid points: {len(grid)} ({len(grid.interpolation_indices)} interpolated)")
    print(f"Written: {out / ARRIVALS_FILE}")


def cmd_synth(cfg: RunConfig) -> None:
    """Synthetic route -> route.yaml, train.csv, test.csv."""
    grid, train, test = generate_synthetic_route(cfg.synthetic)
    out = _out_dir(cfg)
    save_route(grid, out / ROUTE_FILE)
    save_arrival_matrix(train, out / TRAIN_FILE)
    save_arrival_matrix(test, out / TEST_FILE)
    _write_manifest(out, "synth", cfg, [ROUTE_FILE, TRAIN_FILE, TEST_FILE])

    print(f"Synthetic route {grid.route_id}: {len(grid)} grid points, "
          f"{train.n_trips} train / {test.n_trips} test trips -> {out}")


def cmd_train(cfg: RunConfig) -> None:
    """Train the selection policy and write checkpoint, convergence log and report."""
    grid, train, test = load_dataset(cfg.paths.data, cfg.train.seed)
    benchmark = resolve_benchmark(cfg, train, grid)
    result = dprl_train(train, grid, cfg.train, cfg.reward, benchmark)
    test_mae = float(prediction_errors(result.model, test, grid).mean())

    out = _out_dir(cfg)
    save_checkpoint(result, out / "checkpoint.json")
    write_convergence_log(result.log, out / "convergence.csv", cfg.digest)
    outputs = ["checkpoint.json", "convergence.csv", "train_report.json"]
    if result.log:
        plot_convergence(result.log, out / "convergence.svg", title=grid.route_id)
        outputs.append("convergence.svg")
    write_json(out / "train_report.json", {
        "config_digest": cfg.digest,
        "route_id": grid.route_id,
        "test_mae": test_mae,
        "final_train_mae": result.log[-1].train_mae if result.log else None,
        "selection": list(result.selection.indices),
        "feature_count": len(result.model),
    })
    _write_manifest(out, "train", cfg, outputs)

    print(f"Trained {cfg.train.epochs} epochs on {train.n_trips} trips")
    print(f"Selected {result.selection.m} of {len(grid.interpolation_indices)} interpolation points")
    print(f"Held-out MAE: {test_mae:.4f} min")


def cmd_evaluate(cfg: RunConfig) -> None:
    """Score a checkpoint's predictor on the held-out split."""
    checkpoint = load_checkpoint(cfg.paths.checkpoint)
    grid, train, test = load_dataset(cfg.paths.data, checkpoint.seed)
    if checkpoint.route_id != grid.route_id:
        raise DataError(f"checkpoint is for route {checkpoint.route_id}, data is for {grid.route_id}")
    test_mae = float(prediction_errors(checkpoint.model, test, grid).mean())
    all_mae, all_model = evaluate_selection(train, test, grid, grid.interpolation_indices)

    out = _out_dir(cfg)
    write_json(out / "evaluate.json", {
        "config_digest": checkpoint.config_digest,
        "route_id": grid.route_id,
        "test_mae": test_mae,
        "feature_count": len(checkpoint.model),
        "all_segments_mae": all_mae,
        "all_segments_feature_count": len(all_model),
    })
    _write_manifest(out, "evaluate", cfg, ["evaluate.json"])

    print(f"Held-out MAE: {test_mae:.4f} min ({len(checkpoint.model)} segments)")
    print(f"All-segments MAE: {all_mae:.4f} min ({len(all_model)} segments)")


def cmd_ablate(cfg: RunConfig) -> None:
    """Run the configured sweeps and write one report and plot per sweep."""
    grid, train, test = load_dataset(cfg.paths.data, cfg.train.seed)
    benchmark = resolve_benchmark(cfg, train, grid)
    runner = AblationRunner(train, test, grid, cfg.train, cfg.reward, cfg.sweep.seeds, benchmark)
    out = _out_dir(cfg)
    outputs = []
    for kind in cfg.sweep.kinds:
        reports = SWEEP_RUNNERS[kind](runner, cfg.sweep)
        write_report(reports, out / f"ablation_{kind}.json", sweep=kind, config_digest=cfg.digest)
        plot_sweep(reports, out / f"ablation_{kind}.svg", title=f"{grid.route_id}: {kind}")
        outputs += [f"ablation_{kind}.json", f"ablation_{kind}.svg"]

        print(f"\n{'='*60}")
        print(f"SWEEP: {kind}")
        print(f"{'='*60}")
        for report in reports:
            print(f"  {report.strategy:<14} median MAE {report.mae:.4f} min  ({report.feature_count} segments)")
    _write_manifest(out, "ablate", cfg, outputs)


HANDLERS = {
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description='segsel - road-segment selection for bus arrival-time prediction',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Build an arrival matrix from raw trajectories
  python run_segsel.py ingest --data trips.csv --route route.yaml --out data/

  # Generate the synthetic hotspot route
  python run_segsel.py synth --config config.yaml --seed 1 --out data/

  # Train, then evaluate the checkpoint
  python run_segsel.py train --data data/ --config config.yaml --out run/
  python run_segsel.py evaluate --data data/ --checkpoint run/checkpoint.json --out run/

  # Replay an ablation
  python run_segsel.py ablate --data data/ --config config.yaml --sweep selection --out sweeps/
        """
    )
    parser.add_argument('--log-level', help='Log level (overrides $SEGSEL_LOG)')
    subparsers = parser.add_subparsers(dest='command', help='Command to run')

    for name in COMMANDS:
        sub = subparsers.add_parser(name, help=HANDLERS[name].__doc__.strip().splitlines()[0])
        sub.add_argument('--config', help='YAML run configuration')
        sub.add_argument('--out', help='Output directory')
        if name in ("ingest", "train", "evaluate", "ablate"):
            sub.add_argument('--data', help='Trajectory file (ingest) or data directory')
        if name == "ingest":
            sub.add_argument('--route', help='Route description file')
        if name in ("synth", "train", "ablate"):
            sub.add_argument('--seed', type=int, help='Master seed')
        if name == "evaluate":
            sub.add_argument('--checkpoint', help='Checkpoint written by train')
        if name == "ablate":
            sub.add_argument('--sweep', choices=SWEEPS + ("all",), help='Sweep to run')
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for the CLI."""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)

    if not args.command:
        parser.print_help()
        return 0

    try:
        if args.config and not Path(args.config).exists():
            raise ConfigurationError(f"File not found: {args.config}")
        cfg = apply_overrides(load_config(args.config), args)
        require_valid(cfg, args.command)
        HANDLERS[args.command](cfg)
    except (SegselError, OSError) as e:
        print(f"Error: {e}")
        sys.exit(1)
    return 0


if __name__ == '__main__':
    main()
