"""
gridgnn Command Line
train, verify, sample-stats and gen
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import logging

import numpy as np
from rich.console import Console
from rich.table import Table

from config.settings import build_run_config, dataset_paths, load_env_file
from backend.features.graph import Dataset, generate_synthetic, load_dataset, save_dataset
from backend.features.model import (
    RunConfig,
    TrainReport,
    compute_gradients,
    gradient_check,
    reference_gradients,
    relative_error,
    shard_oracle_error,
    train,
)
from backend.features.sampling import aggregation_bias
from backend.features.utils.errors import GridGnnError, InputError
from backend.features.utils.logging_setup import setup_logging

logger = logging.getLogger(__name__)

console = Console()

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INPUT_ERROR = 2

SHARD_TOLERANCE = 1e-6
GRADIENT_TOLERANCE = 1e-5
FD_TOLERANCE = 1e-6
DEFAULT_METRICS = Path("metrics.csv")


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    """Flags shared by every command; None means 'fall back to file/env/default'"""
    parser.add_argument("--config", type=Path, help="key = value settings file")
    parser.add_argument("--grid", help="Device grid GdxGxxGyxGz, e.g. 2x2x2x1")
    parser.add_argument("--batch-size", dest="batch_size", type=int, help="Vertices per step and DP group")
    parser.add_argument("--epochs", type=int, help="Training epochs")
    parser.add_argument("--seed", type=int, help="Run seed")
    parser.add_argument("--precision", choices=["fp32", "bf16comm"], help="PMM all-reduce payload precision")
    parser.add_argument("--prefetch", action="store_const", const=True, help="Build the next batch while computing")
    parser.add_argument("--overlap", action="store_const", const=True, help="Overlap orthogonal backward all-reduces")
    parser.add_argument("--out", type=Path, help="Metrics CSV (train) or output directory (gen)")
    parser.add_argument("--layers", type=int, help="GCN layers")
    parser.add_argument("--hidden", type=int, help="Hidden dimension")
    parser.add_argument("--lr", type=float, help="Learning rate")
    parser.add_argument("--optimizer", choices=["adam", "sgd"], help="Optimizer")
    parser.add_argument("--dropout", type=float, help="Dropout rate in [0, 1)")
    parser.add_argument("--no-rmsnorm", dest="use_rmsnorm", action="store_const", const=False, help="Disable RMSNorm")
    parser.add_argument("--no-dropout", dest="use_dropout", action="store_const", const=False, help="Disable dropout")
    parser.add_argument(
        "--no-residual", dest="use_residual", action="store_const", const=False, help="Disable residual connections"
    )
    parser.add_argument("--eval-every", dest="eval_every", type=int, help="Full-graph evaluation period in epochs")
    parser.add_argument("--dtype", choices=["float32", "float64"], help="Compute precision")
    parser.add_argument("--data-dir", dest="data_dir", type=Path, help="Directory holding the four dataset files")
    parser.add_argument("--synthetic-n", dest="synthetic_n", type=int, help="Synthetic vertex count")
    parser.add_argument("--avg-degree", dest="avg_degree", type=float, help="Synthetic average degree")
    parser.add_argument("--classes", type=int, help="Synthetic class count")
    parser.add_argument("--d-in", dest="d_in", type=int, help="Synthetic feature dimension")
    parser.add_argument(
        "--log-level", dest="log_level", type=str.upper, choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="Log level"
    )
    parser.add_argument("--log-format", dest="log_format", choices=["console", "json"], help="Log output format")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridgnn", description="4D-parallel mini-batch GCN training simulator")
    commands = parser.add_subparsers(dest="command", required=True)

    train_parser = commands.add_parser("train", help="Train on the configured grid and write metrics")
    _add_run_flags(train_parser)

    verify_parser = commands.add_parser("verify", help="Check sharded paths against the serial reference")
    _add_run_flags(verify_parser)
    verify_parser.add_argument("--perturb", type=float, default=0.0, help=argparse.SUPPRESS)

    stats_parser = commands.add_parser("sample-stats", help="Monte Carlo check of the sampler")
    _add_run_flags(stats_parser)
    stats_parser.add_argument("--draws", type=int, default=10000, help="Number of sampled batches")

    gen_parser = commands.add_parser("gen", help="Write a synthetic dataset")
    _add_run_flags(gen_parser)
    return parser


_NON_CONFIG = {"command", "config", "log_level", "log_format", "perturb", "draws"}


def config_from_args(args: argparse.Namespace) -> RunConfig:
    values = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG}
    if args.command == "gen":
        values.pop("out", None)
        # gen never samples
        if values.get("batch_size") is None:
            values["batch_size"] = 2
    return build_run_config(values, args.config)


def load_run_dataset(config: RunConfig) -> Dataset:
    """The configured dataset directory, or a synthetic graph from the run seed"""
    if config.data_dir is not None:
        paths = dataset_paths(config.data_dir)
        return load_dataset(paths["graph"], paths["features"], paths["labels"], paths["split"])
    params = config.synthetic
    return generate_synthetic(
        params.n, params.avg_degree, params.d_in, params.n_classes, config.seed, feature_signal=params.feature_signal
    )


def _fmt(value: float, digits: int = 4) -> str:
    return "-" if value is None or np.isnan(value) else f"{value:.{digits}f}"


def render_report(report: TrainReport) -> None:
    table = Table(title=f"Training on grid {report.grid} ({report.steps_per_epoch} steps/epoch)")
    for column in ("epoch", "loss", "train", "val", "test", "fwd ms", "bwd ms", "bytes X/Y/Z", "bytes D"):
        table.add_column(column, justify="right")
    for record in report.epochs:
        table.add_row(
            str(record.epoch),
            _fmt(record.loss),
            _fmt(record.train_acc),
            _fmt(record.val_acc),
            _fmt(record.test_acc),
            _fmt(record.t_fwd_ms, 1),
            _fmt(record.t_bwd_ms, 1),
            f"{record.bytes_x + record.bytes_y + record.bytes_z:,.0f}",
            f"{record.bytes_d:,.0f}",
        )
    console.print(table)


def summary_path(out: Path) -> Path:
    return out.with_name(out.name + ".summary.json")


def cmd_train(config: RunConfig) -> int:
    """Train, write the metrics CSV and a JSON summary next to it"""
    dataset = load_run_dataset(config)
    result = train(dataset, config)
    report = result.report
    out = config.out or DEFAULT_METRICS
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write_csv(out)
    summary = report.model_dump(mode="json", exclude={"epochs"})
    summary["final"] = report.epochs[-1].model_dump(mode="json")
    summary_path(out).write_text(json.dumps(summary, indent=2))
    render_report(report)
    logger.info(f"Wrote {len(report.epochs)} epoch rows to {out}")
    return EXIT_OK


def _max_gradient_error(sharded: Dict[int, Dict[str, np.ndarray]], serial: Dict[int, Dict[str, np.ndarray]]) -> float:
    return max(
        relative_error(sharded[d][name].astype(np.float64), serial[d][name].astype(np.float64))
        for d in serial
        for name in serial[d]
    )


def cmd_verify(config: RunConfig, perturb: float = 0.0) -> int:
    """
    Shard-construction oracle, sharded-vs-serial gradients and the fp64
    finite-difference check on the configured grid

    Returns:
        0 when every check passes, 1 otherwise
    """
    dataset = load_run_dataset(config)
    exact = config.model_copy(update={"precision": "fp32"})
    checks: List[tuple] = []

    shard_error = shard_oracle_error(dataset, config.device_grid, config.batch_size, config.seed, 3, perturb)
    checks.append(("shard construction vs serial subgraph", shard_error, SHARD_TOLERANCE))

    sharded = compute_gradients(dataset, exact, perturb=perturb)
    serial = reference_gradients(dataset, exact)
    checks.append(("sharded vs serial gradients", _max_gradient_error(sharded, serial), GRADIENT_TOLERANCE))

    fd_errors = gradient_check(dataset, config)
    checks.append(("fp64 finite differences", max(fd_errors.values()), FD_TOLERANCE))

    table = Table(title=f"Verification on grid {config.grid}")
    for column in ("check", "max error", "tolerance", "status"):
        table.add_column(column)
    passed = True
    for name, error, tolerance in checks:
        ok = bool(error <= tolerance)
        passed &= ok
        table.add_row(name, f"{error:.3e}", f"{tolerance:.0e}", "[green]pass[/green]" if ok else "[red]FAIL[/red]")
    console.print(table)
    return EXIT_OK if passed else EXIT_CHECK_FAILED


def cmd_sample_stats(config: RunConfig, draws: int) -> int:
    """Inclusion frequency and aggregation bias of the uniform sampler"""
    dataset = load_run_dataset(config).astype(np.float64)
    report = aggregation_bias(dataset, config.batch_size, draws, config.seed)
    table = Table(title=f"Sampler over {draws} draws, B={config.batch_size}, N={dataset.n}")
    table.add_column("statistic")
    table.add_column("value", justify="right")
    table.add_row("expected inclusion B/N", f"{report.expected_inclusion:.6f}")
    table.add_row("mean inclusion frequency", f"{float(np.mean(report.inclusion_frequency)):.6f}")
    table.add_row("max inclusion error", f"{report.max_inclusion_error:.6f}")
    table.add_row("mean relative bias", f"{float(np.mean(report.relative_bias)):.6f}")
    table.add_row("max relative bias", f"{report.max_relative_bias:.6f}")
    console.print(table)
    return EXIT_OK


def cmd_gen(config: RunConfig, out: Optional[Path]) -> int:
    """Write graph.txt, features.sgnf, labels.sgnl and split.sgns into ``out``"""
    if out is None:
        raise InputError("gen needs --out <directory>")
    params = config.synthetic
    dataset = generate_synthetic(
        params.n, params.avg_degree, params.d_in, params.n_classes, config.seed, feature_signal=params.feature_signal
    )
    out.mkdir(parents=True, exist_ok=True)
    paths = dataset_paths(out)
    save_dataset(dataset, paths["graph"], paths["features"], paths["labels"], paths["split"])
    console.print(f"Wrote {dataset.n}-vertex dataset ({params.n_classes} classes, d_in={params.d_in}) to {out}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    load_env_file()
    setup_logging(args.log_level, args.log_format)
    try:
        config = config_from_args(args)
        if args.command == "train":
            return cmd_train(config)
        if args.command == "verify":
            return cmd_verify(config, args.perturb)
        if args.command == "sample-stats":
            return cmd_sample_stats(config, args.draws)
        return cmd_gen(config, args.out)
    except (GridGnnError, OSError) as exc:
        logger.error(f"{args.command} failed: {exc}")
        print(f"gridgnn: error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
