"""
CLI interface for the superpoint mapper
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any

from rich import box
from rich.console import Console
from rich.table import Table

from . import __version__
from .dataset import Dataset, read_classes, read_ground_truth, write_dataset
from .errors import DatasetError, EmptyMapError
from .evaluation import MetricsReport, evaluate_predictions
from .experiments import ExperimentRow, ablation_study, pose_drift_sweep, summarize
from .pipeline import (
    BenchmarkReport,
    benchmark,
    evaluate,
    evaluation_classes,
    load_prediction,
    query_semantic_instance,
    run_mapping,
    save_outputs,
)
from .settings import PipelineConfig, get_config_paths, get_default_config_content, init_config, load_config
from .synth import PRESETS, NoiseSpec, SceneSpec, apply_noise, ground_truth_points, load_scene, render_sequence


def setup_logging(verbose: bool = False) -> None:
    """Configure logging based on verbosity"""
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(
        level=level,
        format='[%(asctime)s] %(levelname)s: %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )


def _key_value(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got '{text}'")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


def _add_config_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, metavar="FILE", help="Config file applied after the search paths")
    parser.add_argument(
        "--set", dest="overrides", type=_key_value, action="append", default=[], metavar="KEY=VALUE",
        help="Override one config value (repeatable)"
    )
    parser.add_argument("--no-search", action="store_true", help="Ignore user and local config files")


def _add_scene_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--scene", default="three_objects",
        help=f"Scene preset ({', '.join(PRESETS)}) or a TOML scene file (default: three_objects)"
    )
    parser.add_argument("--frames", type=int, default=60, help="Frames for preset scenes (default: 60)")


def _add_noise_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--rotation-drift", type=float, default=0.0, metavar="DEG", help="Pose walk rotation std per frame")
    parser.add_argument("--translation-drift", type=float, default=0.0, metavar="M", help="Pose walk translation std per frame")
    parser.add_argument("--depth-noise", type=float, default=0.0, metavar="M", help="Additive depth noise std")
    parser.add_argument("--mask-px", type=int, default=0, help="Mask erosion / dilation radius in pixels")
    parser.add_argument("--misclass-rate", type=float, default=0.0, help="Thing relabeling probability")


def create_parser() -> argparse.ArgumentParser:
    """Create CLI argument parser"""
    parser = argparse.ArgumentParser(
        prog="spmap",
        description="Incremental superpoint-based semantic instance mapping from RGB-D panoptic frames",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Render the three-object oracle scene as a dataset
  %(prog)s synth data/three --scene three_objects

  # Map it and score the result
  %(prog)s map data/three --output out/three --gt data/three/gt.ply

  # Score saved outputs again
  %(prog)s eval out/three data/three/gt.ply

  # Per-stage timing
  %(prog)s bench data/three

  # Ablations and the pose-drift sweep on synthetic scenes
  %(prog)s ablate --scene cluttered --mask-px 2
  %(prog)s sweep --levels 0 0.5 1.0 --seeds 0 1 2
        """
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Enable verbose logging")
    parser.add_argument("--version", action="version", version=f"spmap {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    map_cmd = commands.add_parser("map", help="Map a dataset directory and write outputs")
    map_cmd.add_argument("dataset", type=Path, help="Dataset directory")
    map_cmd.add_argument("--output", "-o", type=Path, required=True, help="Output directory")
    map_cmd.add_argument("--gt", type=Path, help="Ground-truth PLY; writes metrics.txt when given")
    _add_config_options(map_cmd)

    eval_cmd = commands.add_parser("eval", help="Evaluate saved outputs against ground truth")
    eval_cmd.add_argument("prediction", type=Path, help="Output directory of a map run")
    eval_cmd.add_argument("gt", type=Path, help="Ground-truth PLY")
    eval_cmd.add_argument("--classes", type=Path, help="classes.txt for names and thing classes")
    _add_config_options(eval_cmd)

    synth_cmd = commands.add_parser("synth", help="Render a synthetic scene as a dataset")
    synth_cmd.add_argument("output", type=Path, help="Dataset directory to write")
    synth_cmd.add_argument("--seed", type=int, default=0, help="Score and noise seed (default: 0)")
    _add_scene_options(synth_cmd)
    _add_noise_options(synth_cmd)

    bench_cmd = commands.add_parser("bench", help="Per-stage timing and memory on a dataset")
    bench_cmd.add_argument("dataset", type=Path, help="Dataset directory")
    bench_cmd.add_argument("--output", "-o", type=Path, help="Also write outputs and timing.txt here")
    _add_config_options(bench_cmd)

    ablate_cmd = commands.add_parser("ablate", help="Component ablation on a synthetic scene")
    ablate_cmd.add_argument("--seeds", type=int, nargs="+", default=[0], help="Noise seeds (default: 0)")
    _add_scene_options(ablate_cmd)
    _add_noise_options(ablate_cmd)
    _add_config_options(ablate_cmd)

    sweep_cmd = commands.add_parser("sweep", help="Pose-drift sweep on a synthetic scene")
    sweep_cmd.add_argument("--levels", type=float, nargs="+", default=[0.0, 0.5, 1.0], help="Drift levels")
    sweep_cmd.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2], help="Noise seeds")
    _add_scene_options(sweep_cmd)
    _add_config_options(sweep_cmd)

    config_cmd = commands.add_parser("config", help="Show or initialize configuration")
    config_cmd.add_argument("action", choices=["show", "init", "default"], help="show | init | default")
    config_cmd.add_argument("--force", action="store_true", help="Overwrite an existing config file")
    _add_config_options(config_cmd)

    return parser


def _load(args: argparse.Namespace) -> tuple[PipelineConfig, list[str]]:
    loaded = load_config(args.config, dict(args.overrides), search=not args.no_search)
    return loaded.config, loaded.config_sources


def _scene(args: argparse.Namespace) -> SceneSpec:
    if args.scene in PRESETS:
        return PRESETS[args.scene](args.frames)
    return load_scene(Path(args.scene))


def _noise(args: argparse.Namespace) -> NoiseSpec:
    return NoiseSpec(
        rotation_drift_deg=args.rotation_drift,
        translation_drift_m=args.translation_drift,
        depth_noise_std=args.depth_noise,
        mask_erode_dilate_px=args.mask_px,
        mask_misclass_rate=args.misclass_rate,
    )


def metrics_table(report: MetricsReport, title: str = "Metrics") -> Table:
    table = Table(title=title, box=box.SIMPLE)
    for column in ("Class", "AP50", "AP75", "N_TP50", "PQ50", "PQ75", "IoU_LS"):
        table.add_column(column, style="cyan" if column == "Class" else "white", justify="left" if column == "Class" else "right")
    for m in report.classes:
        table.add_row(
            report.names.get(m.category, str(m.category)), f"{100 * m.ap50:.2f}", f"{100 * m.ap75:.2f}",
            str(m.ntp50), f"{100 * m.pq50:.2f}", f"{100 * m.pq75:.2f}", f"{100 * m.iou_ls:.2f}",
        )
    table.add_row(
        "[bold]mean[/bold]", f"{100 * report.map50:.2f}", f"{100 * report.map75:.2f}", str(report.ntp50),
        f"{100 * report.pq50:.2f}", f"{100 * report.pq75:.2f}", f"{100 * report.iou_ls:.2f}",
    )
    return table


def timing_table(report: BenchmarkReport) -> Table:
    table = Table(title=f"Timing ({report.frames} frames)", box=box.SIMPLE)
    table.add_column("Stage", style="cyan")
    table.add_column("Calls", justify="right")
    table.add_column("Total s", justify="right")
    table.add_column("Mean ms", justify="right")
    for stage, calls, total, mean_ms in report.rows:
        table.add_row(stage, str(calls), f"{total:.3f}", f"{mean_ms:.2f}")
    return table


def experiment_table(rows: list[ExperimentRow], title: str) -> Table:
    table = Table(title=title, box=box.SIMPLE)
    table.add_column("Variant", style="cyan")
    table.add_column("Drift", justify="right")
    for column in ("mAP50", "mAP75", "PQ50", "IoU_LS"):
        table.add_column(column, justify="right")
    for (variant, level), means in summarize(rows).items():
        table.add_row(
            variant, f"{level:g}", f"{100 * means['map50']:.2f}", f"{100 * means['map75']:.2f}",
            f"{100 * means['pq50']:.2f}", f"{100 * means['iou_ls']:.2f}",
        )
    return table


def show_config(config: PipelineConfig, sources: list[str]) -> None:
    """Display configuration sources, search paths and resolved values."""
    console = Console()

    console.print("[bold cyan]Configuration Sources[/bold cyan]")
    if sources:
        for source in sources:
            console.print(f"  [green][OK][/green] {source}")
    else:
        console.print("  [dim]No config files found (using built-in defaults)[/dim]")
    console.print()

    console.print("[bold cyan]Config Search Paths[/bold cyan]")
    for path in get_config_paths():
        exists = "[green][OK][/green]" if path.exists() else "[dim]--[/dim]"
        console.print(f"  {exists} {path}")
    console.print()

    console.print("[bold cyan]Current Settings[/bold cyan]")
    settings_table = Table(box=box.SIMPLE)
    settings_table.add_column("Setting", style="cyan")
    settings_table.add_column("Value", style="white")
    for key, value in config.as_dict().items():
        settings_table.add_row(key, str(value))
    console.print(settings_table)


def cmd_map(args: argparse.Namespace, console: Console) -> int:
    config, _ = _load(args)
    dataset = Dataset.open(args.dataset)
    session = run_mapping(dataset.frames(), config, dataset.classes)
    result = query_semantic_instance(session)
    metrics = None
    if args.gt is not None:
        metrics = evaluate(result, read_ground_truth(args.gt), config, dataset.classes)
    paths = save_outputs(args.output, session, result, metrics)
    console.print(f"[green][OK][/green] {len(result.instances.instances)} instances, "
                  f"{len(result.semantic)} superpoints, {result.mesh.vertex_count} vertices")
    for name, path in paths.items():
        console.print(f"  {name}: {path}")
    if metrics is not None:
        console.print(metrics_table(metrics))
    return 0


def cmd_eval(args: argparse.Namespace, console: Console) -> int:
    config, _ = _load(args)
    classes = None
    if args.classes is not None:
        classes = read_classes(args.classes)
    prediction = load_prediction(args.prediction)
    gt = read_ground_truth(args.gt)
    names = dict(classes.names) if classes is not None else None
    report = evaluate_predictions(
        prediction, gt, evaluation_classes(config, classes), config.transfer_distance, names
    )
    (args.prediction / "metrics.txt").write_text(report.to_text())
    console.print(metrics_table(report))
    return 0


def cmd_synth(args: argparse.Namespace, console: Console) -> int:
    scene = _scene(args)
    noise = _noise(args)
    frames = render_sequence(scene, seed=args.seed, score_range=noise.score_range)
    frames = apply_noise(frames, noise, args.seed, scene.classes.things)
    count = write_dataset(args.output, frames, scene.classes, ground_truth_points(scene))
    console.print(f"[green][OK][/green] Wrote {count} frames of '{scene.name}' to {args.output}")
    return 0


def cmd_bench(args: argparse.Namespace, console: Console) -> int:
    config, _ = _load(args)
    dataset = Dataset.open(args.dataset)
    session, result, report = benchmark(dataset.frames(), config, dataset.classes)
    console.print(timing_table(report))
    console.print(f"\\[i] Peak map memory: {report.peak_map_bytes / 2**20:.1f} MiB")
    if args.output is not None and result is not None:
        save_outputs(args.output, session, result)
    return 0


def cmd_ablate(args: argparse.Namespace, console: Console) -> int:
    config, _ = _load(args)
    rows = ablation_study(_scene(args), _noise(args), config, args.seeds)
    console.print(experiment_table(rows, "Ablation"))
    inconsistent = sum(r.inconsistent_merges for r in rows if r.variant != "no_semantic_consistency")
    if inconsistent:
        console.print(f"[yellow][!][/yellow] {inconsistent} semantically inconsistent merges")
    return 0


def cmd_sweep(args: argparse.Namespace, console: Console) -> int:
    config, _ = _load(args)
    rows = pose_drift_sweep(_scene(args), args.levels, args.seeds, config)
    console.print(experiment_table(rows, "Pose drift sweep"))
    return 0


def cmd_config(args: argparse.Namespace, console: Console) -> int:
    if args.action == "init":
        config_path = init_config(force=args.force)
        if config_path:
            console.print(f"[green][OK][/green] Config file created: {config_path}")
        else:
            console.print("[yellow]Config file already exists.[/yellow]")
            console.print("Use --force to overwrite it.")
        return 0
    if args.action == "default":
        console.print(get_default_config_content(), markup=False, highlight=False)
        return 0
    config, sources = _load(args)
    show_config(config, sources)
    return 0


COMMANDS: dict[str, Any] = {
    "map": cmd_map,
    "eval": cmd_eval,
    "synth": cmd_synth,
    "bench": cmd_bench,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
    "config": cmd_config,
}


def main(argv: list[str] | None = None) -> int:
    """
    Main CLI entry point.

    Returns:
        Exit code (0 success, 1 unexpected error, 2 configuration or dataset error, 130 interrupted)
    """
    console = Console()
    parser = create_parser()
    args = parser.parse_args(argv)

    setup_logging(args.verbose)
    logger = logging.getLogger(__name__)

    try:
        return COMMANDS[args.command](args, console)
    except (DatasetError, ValueError) as e:
        logger.error(f"[FAIL] Configuration error: {e}")
        return 2
    except EmptyMapError as e:
        logger.error(f"[FAIL] {e}")
        return 1
    except KeyboardInterrupt:
        logger.info("\n[!] Interrupted by user")
        return 130
    except Exception as e:
        logger.error(f"[FAIL] Unexpected error: {e}", exc_info=args.verbose)
        return 1


if __name__ == "__main__":
    sys.exit(main())
