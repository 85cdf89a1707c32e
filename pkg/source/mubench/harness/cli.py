"""Command line interface: `mubench train|run|report|plot|list-methods`.

Exit codes: 0 on success, 2 on usage errors (including a missing config file), 1 on any other error. Errors are
reported on stderr as one JSON line `{"error": <type>, "message": <text>}`.
"""

import argparse
import json
import logging as log
import sys
from pathlib import Path
from typing import Optional

from ..config import RunStatus
from ..setup import init
from ..support.store import resolve_output_dir
from ..unlearners import list_methods
from .main import run_experiment, train_originals
from .models import ExperimentConfig, load_config
from .report import PLOT_METRICS, emit_budget_plot, emit_depoison_plot, emit_table
from .results import ResultsStore

_DEFAULT_PLOT_METRICS = ["ta", "fa_disc"]


def _csv_list(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in _csv_list(text)]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got '{text}'") from e


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one sub-parser per command."""
    parser = argparse.ArgumentParser(prog="mubench", description="MUBench: machine unlearning benchmark harness")
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def with_config(sub: argparse.ArgumentParser, required: bool = True) -> None:
        sub.add_argument("--config", required=required, help="Experiment config (JSON)")
        sub.add_argument("--out", help="Output directory (default: config `out`, else $MUBENCH_DATA, else _runs)")

    def with_seeds(sub: argparse.ArgumentParser) -> None:
        group = sub.add_mutually_exclusive_group()
        group.add_argument("--seed", type=int, help="Run a single seed")
        group.add_argument("--seeds", type=_int_list, help="Comma separated seeds, e.g. 0,1,2")

    train = commands.add_parser("train", help="Train and cache the original model of each seed")
    with_config(train)
    with_seeds(train)

    run = commands.add_parser("run", help="Run the experiment matrix")
    with_config(run)
    with_seeds(run)
    run.add_argument("--methods", type=_csv_list, help="Comma separated subset of the configured method ids")
    run.add_argument("--workers", type=int, help="Worker processes (overrides the config)")

    report = commands.add_parser("report", help="Print the comparison table of each scenario")
    with_config(report, required=False)
    report.add_argument("--scenario", help="Only this scenario descriptor, e.g. one_class:c0")
    report.add_argument("--csv", action="store_true", help="CSV instead of aligned text")

    plot = commands.add_parser("plot", help="Write budget plots (SVG plus CSV)")
    with_config(plot, required=False)
    plot.add_argument(
        "--metric", action="append", choices=PLOT_METRICS, help=f"Metric to plot, repeatable (default: {', '.join(_DEFAULT_PLOT_METRICS)})"
    )

    methods = commands.add_parser("list-methods", help="Print the registered method ids")
    methods.add_argument("--approximate", action="store_true", help="Leave out the exact methods (retrain, sisa)")
    return parser


def _load(parser: argparse.ArgumentParser, args: argparse.Namespace) -> Optional[ExperimentConfig]:
    if not args.config:
        return None
    if not Path(args.config).is_file():
        parser.error(f"config file '{args.config}' not found")
    config = load_config(args.config)
    seeds = [args.seed] if getattr(args, "seed", None) is not None else getattr(args, "seeds", None)
    if seeds:
        config = config.with_seeds(seeds)
    return config


def _output_dir(args: argparse.Namespace, config: Optional[ExperimentConfig]) -> Path:
    return resolve_output_dir(args.out or (config.out if config else None))


def _cmd_train(args: argparse.Namespace, config: ExperimentConfig) -> int:
    for path in train_originals(config, _output_dir(args, config)):
        print(path)
    return 0


def _cmd_run(args: argparse.Namespace, config: ExperimentConfig) -> int:
    if args.methods:
        config = config.with_methods(args.methods)
    if args.workers:
        config = config.model_copy(update={"workers": args.workers})
    store = run_experiment(config, _output_dir(args, config))
    rows = store.rows()
    failed = sum(r.status == RunStatus.FAILED for r in rows)
    print(json.dumps({"out": str(store.root), "rows": len(rows), "failed": failed}))
    return 0


def _cmd_report(args: argparse.Namespace, config: Optional[ExperimentConfig]) -> int:
    store = ResultsStore(_output_dir(args, config))
    scenarios = [args.scenario] if args.scenario else store.scenarios()
    if not scenarios:
        raise ValueError(f"no results in '{store.root}'")
    for scenario in scenarios:
        if not args.csv:
            print(f"== {scenario} ==")
        print(emit_table(store, scenario, as_csv=args.csv))
    return 0


def _cmd_plot(args: argparse.Namespace, config: Optional[ExperimentConfig]) -> int:
    store = ResultsStore(_output_dir(args, config))
    if not store.scenarios():
        raise ValueError(f"no results in '{store.root}'")
    written = []
    for metric in args.metric or _DEFAULT_PLOT_METRICS:
        written += emit_budget_plot(store, metric)
    written += emit_depoison_plot(store)
    for path in written:
        print(path)
    return 0


def _cmd_list_methods(args: argparse.Namespace) -> int:
    for method in list_methods(approximate_only=args.approximate):
        print(method.method_id)
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    """Parse `argv` and run the command. Returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "list-methods":
            return _cmd_list_methods(args)
        init()
        config = _load(parser, args)
    except SystemExit as e:
        return int(e.code or 0)
    except Exception as e:
        return _fail(e)

    commands = {"train": _cmd_train, "run": _cmd_run, "report": _cmd_report, "plot": _cmd_plot}
    try:
        return commands[args.command](args, config)
    except Exception as e:
        log.debug("Command %s failed", args.command, exc_info=True)
        return _fail(e)


def _fail(error: Exception) -> int:
    print(json.dumps({"error": type(error).__name__, "message": str(error)}), file=sys.stderr)
    return 1


def run_cli() -> None:
    """Console script entry point."""
    sys.exit(main())
