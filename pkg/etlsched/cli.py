"""
Command-line entry point.

Subcommands::

    etlsched train        train one agent per seed, write curve, metrics and checkpoints
    etlsched bench        compare agents on identical workloads
    etlsched sweep        sensitivity sweep over lr, gamma or node count
    etlsched plot         render a sweep CSV as an SVG line chart
    etlsched gen-workload dump a generated task DAG as JSON

Exit status: 0 on success, 2 for configuration and usage errors, 3 for
numeric failures during training.

Example:
    $ etlsched train --seeds 1,2 --episodes 50 --out runs/demo
    $ etlsched sweep --param gamma --grid 0.8,0.9,0.99 --set run.episodes=100
    $ etlsched plot runs/demo/sweep_gamma_summary.csv --out gamma.svg
"""

import argparse
import sys
from typing import List, Optional, Sequence

from .agents import AGENT_NAMES
from .argparser import add_logging_arguments, add_run_arguments, extract_logging_args, extract_overrides
from .config import SchedConfig, load_run_config
from .errors import EXIT_OK, ConfigurationError, EtlSchedError, UsageError
from .experiments import (
    DEFAULT_GRIDS,
    RunConfig,
    SweepParam,
    SweepSpec,
    parse_grid,
    run_bench,
    run_cluster,
    run_sweep,
    run_train,
)
from .log import configure_logging, get_logger
from .plot import PLOT_KINDS, plot_sweep
from .workload import generate_dag

logger = get_logger(__name__)


def _agent_list(text: str) -> List[str]:
    names = [n.strip().lower() for n in text.split(",") if n.strip()]
    unknown = [n for n in names if n not in AGENT_NAMES]
    if unknown or not names:
        raise argparse.ArgumentTypeError(f"unknown agent(s) {unknown}, valid names: {', '.join(AGENT_NAMES)}")
    return names


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="etlsched", description="ETL scheduling simulator and DQN scheduler")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    train = sub.add_parser("train", help="train an agent and evaluate it")
    add_run_arguments(add_logging_arguments(train))
    train.add_argument("--agent", choices=AGENT_NAMES, help="agent to train (default: run.agent)")

    bench = sub.add_parser("bench", help="compare agents on identical workloads and seeds")
    add_run_arguments(add_logging_arguments(bench))
    bench.add_argument("--agents", type=_agent_list, help=f"comma separated subset of {','.join(AGENT_NAMES)}")

    sweep = sub.add_parser("sweep", help="sensitivity sweep over one parameter")
    add_run_arguments(add_logging_arguments(sweep))
    sweep.add_argument("--param", required=True, help="lr, gamma or nodes")
    sweep.add_argument("--grid", help="comma separated values (default: the built-in grid of the parameter)")
    sweep.add_argument("--agent", choices=AGENT_NAMES, help="agent to run at every grid point (default: run.agent)")

    plot = sub.add_parser("plot", help="render a sweep CSV as SVG")
    add_logging_arguments(plot)
    plot.add_argument("csv", help="sweep summary or long-form CSV")
    plot.add_argument(
        "--kind", choices=PLOT_KINDS, default="auto", help="swept parameter, read from the CSV by default"
    )
    plot.add_argument("--out", help="SVG path (default: CSV path with .svg)")

    gen = sub.add_parser("gen-workload", help="write a generated task DAG as JSON")
    add_logging_arguments(gen)
    gen.add_argument("--config", help="run configuration file (.json, .yaml)")
    gen.add_argument("--seed", dest="workload_seed", type=int, help="workload seed (default: workload.seed)")
    gen.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    gen.add_argument("--out", help="output file (default: stdout)")
    return parser


def _load_run(args: argparse.Namespace, extra: Optional[Sequence[str]] = None) -> RunConfig:
    overrides = extract_overrides(args) + list(extra or [])
    config_file = getattr(args, "config", None)
    config = load_run_config(config_file, overrides)
    configure_logging(config["logging"])
    try:
        return RunConfig.from_config(config)
    except ConfigurationError as exc:
        raise SchedConfig.locate(exc, config_file, overrides) from exc


def cmd_train(args: argparse.Namespace) -> int:
    run_cfg = _load_run(args, [f"run.agent={args.agent}"] if args.agent else None)
    agg = run_train(run_cfg)
    print(
        f"{run_cfg.agent_name}: ASD {agg.mean.asd:.4g} +- {agg.sd['asd']:.2g}, TCR {agg.mean.tcr:.4g}, "
        f"TP {agg.mean.tp:.4g}, RC {agg.mean.rc:.4g}, reward {agg.mean.avg_cum_reward:.4g} "
        f"({agg.n_runs} seed(s))"
    )
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    run_cfg = _load_run(args)
    table = run_bench(run_cfg, args.agents)
    print(table.render())
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    param = SweepParam.parse(args.param)
    extra = [f"run.agent={args.agent}"] if args.agent else None
    run_cfg = _load_run(args, extra)
    grid = parse_grid(args.grid) if args.grid else DEFAULT_GRIDS[param]
    summary = run_sweep(SweepSpec(param=param, grid=tuple(grid), base=run_cfg))
    print(summary.to_string(index=False))
    return EXIT_OK


def cmd_plot(args: argparse.Namespace) -> int:
    configure_logging({key.split(".", 1)[1]: value for key, value in extract_logging_args(args).items()})
    out = args.out or (args.csv.rsplit(".", 1)[0] + ".svg")
    plot_sweep(args.csv, out, kind=args.kind)
    print(out)
    return EXIT_OK


def cmd_gen_workload(args: argparse.Namespace) -> int:
    extra = [f"workload.seed={args.workload_seed}"] if args.workload_seed is not None else None
    run_cfg = _load_run(args, extra)
    cluster = run_cluster(run_cfg, run_cfg.seeds[0])
    dag = generate_dag(run_cfg.workload, floor=cluster.execution_floor())
    text = dag.to_json()
    if args.out:
        try:
            with open(args.out, mode="w", encoding="utf-8") as f:
                f.write(text)
        except OSError as exc:
            raise UsageError(f"cannot write '{args.out}': {exc.strerror}") from exc
        logger.info("wrote %d tasks and %d edges to %s", dag.n_tasks, len(dag.edges), args.out)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "bench": cmd_bench,
    "sweep": cmd_sweep,
    "plot": cmd_plot,
    "gen-workload": cmd_gen_workload,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run the CLI.

    Returns:
        Process exit status (argparse errors exit with 2 directly)
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except EtlSchedError as exc:
        print(f"etlsched {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
