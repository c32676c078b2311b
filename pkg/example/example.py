"""
etlsched Library Example

Trains a DQN scheduler on a small workload through the Python API instead of
the ``etlsched`` command, then compares it with the least-loaded heuristic.

Features demonstrated:
1. Shared command-line flags (``--log-level``, ``--seeds``, ``--set`` ...)
2. Loading a run configuration file with overrides
3. Training and evaluating a single agent with a per-episode callback
4. Aggregating seed reports and printing a ranked comparison

Usage Examples:
    # Defaults from config.yaml
    python example.py

    # Fewer episodes, more output
    python example.py --episodes 20 --log-level DEBUG

    # Any configuration key
    python example.py --set agent.lr=1e-3 --set cluster.n_nodes=6
"""

import os

from etlsched.argparser import SchedArgumentParser, extract_overrides
from etlsched.config import load_run_config
from etlsched.experiments import RunConfig, train_and_evaluate
from etlsched.log import configure_logging, get_logger
from etlsched.metrics import aggregate_reports, compare_reports

HERE = os.path.dirname(os.path.abspath(__file__))


def main() -> None:
    parser = SchedArgumentParser.add_logging_arguments()
    SchedArgumentParser.add_run_arguments(parser)
    args = parser.parse_args()

    config = load_run_config(args.config or os.path.join(HERE, "config.yaml"), extract_overrides(args))
    configure_logging(config["logging"])
    log = get_logger("example")
    run_cfg = RunConfig.from_config(config)

    def progress(row: dict) -> None:
        if row["episode"] % 25 == 0:
            log.info("seed %d episode %d reward %.3f", row["seed"], row["episode"], row["total_reward"])

    reports = {}
    for name in ("dqn", "leastloaded"):
        results = [train_and_evaluate(run_cfg, name, seed, on_episode=progress) for seed in run_cfg.seeds]
        agg = aggregate_reports([r.report for r in results if r.report is not None])
        log.info("%s: ASD %.3f (sd %.3f) over %d seed(s)", name, agg.mean.asd, agg.sd["asd"], agg.n_runs)
        reports[name] = agg.mean

    print(compare_reports(reports).render())


if __name__ == "__main__":
    main()
