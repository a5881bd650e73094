"""Command line harness: generate, train, eval, ablate and gradcheck.

Every subcommand is driven by a flat ``key = value`` config file plus
overrides, and is reproducible from (config, seed). Results go to stdout or
files as CSV; logs go to stderr.
"""

import argparse
import csv
import functools
import io
import itertools
import logging
import os
import sys
import time
from collections.abc import Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import torch
from reprobate import render

from .checkpoint import load_checkpoint, save_checkpoint
from .config import (
    VIEW_ORDER,
    RunConfig,
    SyntheticConfig,
    build_config,
    config_hash,
    dump_flat,
    load_config,
    parse_flat,
)
from .data import (
    default_cutoff,
    generate_synthetic,
    load_dataset,
    split_temporal,
    write_dataset,
)
from .embeddings import Encoder
from .errors import ConfigError, DataError, FimError, NumericError
from .model import GROUPS, parameter_group
from .numerics import grad_check
from .prediction import bce_loss
from .records import Sample
from .training import (
    MetricRow,
    TrainResult,
    build_model,
    evaluate,
    format_metrics,
    seed_everything,
    train_model,
    write_metrics,
)

logger = logging.getLogger(__name__)

ENV_DATA_DIR = "FIMREC_DATA_DIR"
CHECKPOINT = "model.ckpt"
METRICS = "metrics.csv"
ENCODER = "encoder"
RUN_CONFIG = "config.txt"
SWEEP_PREFIX = "sweep."
POWERSET = "powerset"


def run_overrides(
    sets: Iterable[str] = (),
    fpem: str | None = None,
    views: str | None = None,
    search: str | None = None,
    seed: int | None = None,
) -> list[str]:
    """``key = value`` overrides for the flag shortcuts, applied after ``--set``."""
    overrides = list(sets)
    if fpem is not None:
        overrides.append(f"fpem.enabled = {'true' if fpem == 'on' else 'false'}")
    if views is not None:
        overrides.append(f"mss.views = {views or 'none'}")
    if search is not None:
        overrides.append(f"mss.search_mode = {search}")
    if seed is not None:
        overrides.append(f"seed = {seed}")
    return overrides


def load_split(
    data_dir: str | Path, cfg: RunConfig
) -> tuple[list[Sample], list[Sample]]:
    samples = load_dataset(data_dir, cfg.max_len)
    cutoff = cfg.cutoff_step if cfg.cutoff_step is not None else default_cutoff(samples)
    train, test = split_temporal(samples, cutoff)
    logger.info("split at step %d: %d train, %d test", cutoff, len(train), len(test))
    return train, test


def cmd_generate(
    config_path: str | Path | None, out_dir: str | Path, overrides: Iterable[str] = ()
) -> Path:
    cfg = load_config(SyntheticConfig, config_path, overrides)
    logger.info("generating with %s", render(cfg, 300))
    return write_dataset(out_dir, generate_synthetic(cfg), cfg)


def cmd_train(cfg: RunConfig, data_dir: str | Path, out_dir: str | Path) -> TrainResult:
    """Train, then write the checkpoint, encoder, metrics CSV and resolved config."""
    train, test = load_split(data_dir, cfg)
    result = train_model(cfg, train, test)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out_dir / CHECKPOINT, dict(result.model.named_parameters()))
    result.encoder.save(out_dir / ENCODER)
    write_metrics(out_dir / METRICS, result.rows)
    (out_dir / RUN_CONFIG).write_text(dump_flat(cfg))
    logger.info("wrote %s", out_dir)
    return result


def cmd_eval(
    cfg: RunConfig, data_dir: str | Path, checkpoint: str | Path
) -> list[MetricRow]:
    """Score a saved checkpoint on the test split; one row per task at step 0."""
    run_dir = Path(checkpoint).parent
    encoder = Encoder.load(run_dir / ENCODER)
    _, test = load_split(data_dir, cfg)
    if not test:
        raise DataError("the test split is empty")
    model = build_model(encoder, cfg)
    try:
        model.load_state_dict(load_checkpoint(checkpoint))
    except RuntimeError as exc:
        raise DataError(f"checkpoint does not fit the model: {exc}") from None
    metrics = evaluate(model, encoder.encode(test))
    return [
        MetricRow(0, task, measured.loss, measured.auc, measured.gauc)
        for task, measured in metrics.items()
    ]


@dataclass(frozen=True)
class GridPoint:
    flat: dict[str, str]
    swept: dict[str, str]


def view_powerset() -> list[str]:
    """All 16 view subsets, smallest first; the empty one is ``none``."""
    return [
        ",".join(subset) or "none"
        for size in range(len(VIEW_ORDER) + 1)
        for subset in itertools.combinations(VIEW_ORDER, size)
    ]


def parse_grid(text: str, source: str = "<grid>") -> list[GridPoint]:
    """Expand ``sweep.<key> = v1 | v2`` axes over the base ``key = value`` lines."""
    flat = parse_flat(text, source)
    base = {k: v for k, v in flat.items() if not k.startswith(SWEEP_PREFIX)}
    axes: list[tuple[str, list[str]]] = []
    for key, value in flat.items():
        if not key.startswith(SWEEP_PREFIX):
            continue
        name = key.removeprefix(SWEEP_PREFIX)
        if name == "mss.views" and value.strip() == POWERSET:
            values = view_powerset()
        else:
            values = [item.strip() for item in value.split("|") if item.strip()]
        if not values:
            raise ConfigError(f"{key}: sweep has no values")
        axes.append((name, values))
    names = [name for name, _ in axes]
    return [
        GridPoint({**base, **dict(zip(names, combo))}, dict(zip(names, combo)))
        for combo in itertools.product(*(values for _, values in axes))
    ]


@functools.lru_cache(maxsize=4)
def _cached_split(
    data_dir: str, max_len: int, cutoff: int | None
) -> tuple[tuple[Sample, ...], tuple[Sample, ...]]:
    samples = load_dataset(data_dir, max_len)
    train, test = split_temporal(
        samples, cutoff if cutoff is not None else default_cutoff(samples)
    )
    return tuple(train), tuple(test)


def run_grid_point(flat: dict[str, str], data_dir: str) -> dict[str, object]:
    """Train one grid point; the primary task's final test AUC and GAUC."""
    cfg = build_config(RunConfig, flat)
    started = time.perf_counter()
    train, test = _cached_split(data_dir, cfg.max_len, cfg.cutoff_step)
    result = train_model(cfg, train, test)
    final = [row for row in result.rows if row.task == cfg.primary_task][-1]
    return {
        "config_hash": config_hash(cfg),
        "auc": final.auc,
        "gauc": final.gauc,
        "wall_time": time.perf_counter() - started,
    }


def cmd_ablate(
    grid_path: str | Path, data_dir: str | Path, workers: int = 1
) -> str:
    """Run every grid point; CSV rows sorted by config hash."""
    try:
        text = Path(grid_path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read grid {grid_path}: {exc}") from None
    points = parse_grid(text, str(grid_path))
    for point in points:
        build_config(RunConfig, point.flat)
    logger.info("ablation over %d grid points with %d workers", len(points), workers)

    flats = [point.flat for point in points]
    data_dirs = [str(data_dir)] * len(points)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_grid_point, flats, data_dirs))
    else:
        results = [run_grid_point(f, d) for f, d in zip(flats, data_dirs)]

    axes = list(points[0].swept) if points else []
    rows = sorted(
        ({**point.swept, **result} for point, result in zip(points, results)),
        key=lambda row: row["config_hash"],
    )
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["config_hash", *axes, "auc", "gauc", "wall_time"])
    for row in rows:
        writer.writerow(
            [row["config_hash"], *(row[axis] for axis in axes)]
            + [_cell(row["auc"]), _cell(row["gauc"]), f"{row['wall_time']:.3f}"]
        )
    return buffer.getvalue()


def _cell(value: object) -> str:
    return "" if value is None else repr(value)


@dataclass(frozen=True)
class GroupReport:
    group: str
    status: str  # ok, fail or absent
    max_error: float | None
    exempt: tuple[str, ...] = ()
    nonsmooth: int = 0


def cmd_gradcheck(
    cfg: RunConfig,
    h: float = 1e-5,
    tolerance: float = 1e-4,
    max_coords: int | None = 24,
    toy_users: int = 4,
) -> list[GroupReport]:
    """Finite-difference check of the full pipeline on a small generated batch."""
    toy = SyntheticConfig(
        n_users=toy_users,
        seq_len=min(cfg.max_len, 24),
        samples_per_user=1,
        seed=cfg.seed,
    )
    samples = generate_synthetic(toy).samples
    encoder = Encoder.fit(samples, cfg.max_len, cfg.price_buckets, cfg.mmoe.tasks)
    batch = encoder.encode(samples)
    seed_everything(cfg.seed, cfg.threads)
    model = build_model(encoder, cfg)
    model.randomize_heads(torch.Generator().manual_seed(cfg.seed))
    params = dict(model.named_parameters())
    report = grad_check(
        lambda: bce_loss(model(batch), batch.labels),
        params,
        h,
        max_coords=max_coords,
        seed=cfg.seed,
        kink_tol=tolerance,
    )

    reports = []
    for group in GROUPS:
        names = [name for name in params if parameter_group(name) == group]
        exempt = tuple(name for name in names if name in report.exempt)
        nonsmooth = sum(report.nonsmooth.get(name, 0) for name in names)
        if not names:
            reports.append(GroupReport(group, "absent", None))
        else:
            worst = max(report.errors[name] for name in names)
            status = "ok" if worst < tolerance else "fail"
            reports.append(GroupReport(group, status, worst, exempt, nonsmooth))
    logger.info("gradient check: %s", render({r.group: r.status for r in reports}, 200))
    return reports


def format_gradcheck(reports: Sequence[GroupReport]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["group", "status", "max_rel_err", "nonsmooth", "exempt"])
    for report in reports:
        writer.writerow(
            [
                report.group,
                report.status,
                "" if report.max_error is None else f"{report.max_error:.3e}",
                report.nonsmooth,
                " ".join(report.exempt),
            ]
        )
    return buffer.getvalue()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fimrec",
        description="Frequency-aware multi-view interest modeling experiments.",
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true")
    verbosity.add_argument("-q", "--quiet", action="store_true")
    commands = parser.add_subparsers(dest="command", required=True)

    run = argparse.ArgumentParser(add_help=False)
    run.add_argument("--config", help="flat key = value run config")
    run.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config key (repeatable)",
    )
    run.add_argument("--fpem", choices=("on", "off"))
    run.add_argument("--views", help="comma separated views, or none")
    run.add_argument("--search", choices=("hard", "soft"))
    run.add_argument("--seed", type=int)

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument(
        "--data",
        default=os.environ.get(ENV_DATA_DIR),
        help=f"dataset directory (default: ${ENV_DATA_DIR})",
    )

    generate = commands.add_parser("generate", help="write a synthetic dataset")
    generate.add_argument("config", nargs="?", help="synthetic generator config")
    generate.add_argument("out", help="output directory")
    generate.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    generate.add_argument("--seed", type=int)

    train = commands.add_parser("train", parents=[run, data], help="train a model")
    train.add_argument("--out", required=True, help="run output directory")

    evaluate = commands.add_parser(
        "eval", parents=[run, data], help="score a checkpoint on the test split"
    )
    evaluate.add_argument("--checkpoint", required=True)

    ablate = commands.add_parser("ablate", parents=[data], help="run a sweep grid")
    ablate.add_argument("grid", help="grid file with sweep.<key> = a | b axes")
    ablate.add_argument("--out", help="CSV path (default: stdout)")
    ablate.add_argument("--workers", type=int, default=1)

    gradcheck = commands.add_parser(
        "gradcheck", parents=[run], help="finite-difference gradient report"
    )
    gradcheck.add_argument("--h", type=float, default=1e-5)
    gradcheck.add_argument("--tolerance", type=float, default=1e-4)
    gradcheck.add_argument("--max-coords", type=int, default=24)
    return parser


def _run_config(args: argparse.Namespace, fallback: Path | None = None) -> RunConfig:
    path = args.config
    if path is None and fallback is not None and fallback.exists():
        path = fallback
    overrides = run_overrides(args.set, args.fpem, args.views, args.search, args.seed)
    return load_config(RunConfig, path, overrides)


def _data_dir(args: argparse.Namespace) -> str:
    if not args.data:
        raise ConfigError(f"no dataset directory: pass --data or set {ENV_DATA_DIR}")
    return args.data


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "generate":
        overrides = list(args.set)
        if args.seed is not None:
            overrides.append(f"seed = {args.seed}")
        cmd_generate(args.config, args.out, overrides)
        return 0
    if args.command == "train":
        cmd_train(_run_config(args), _data_dir(args), args.out)
        return 0
    if args.command == "eval":
        fallback = Path(args.checkpoint).parent / RUN_CONFIG
        rows = cmd_eval(_run_config(args, fallback), _data_dir(args), args.checkpoint)
        sys.stdout.write(format_metrics(rows))
        return 0
    if args.command == "ablate":
        table = cmd_ablate(args.grid, _data_dir(args), args.workers)
        if args.out:
            Path(args.out).write_text(table)
        else:
            sys.stdout.write(table)
        return 0
    reports = cmd_gradcheck(
        _run_config(args), args.h, args.tolerance, args.max_coords
    )
    sys.stdout.write(format_gradcheck(reports))
    if any(report.status == "fail" for report in reports):
        raise NumericError(f"gradient check exceeded tolerance {args.tolerance}")
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.INFO
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return _dispatch(args)
    except FimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
