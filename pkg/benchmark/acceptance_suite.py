"""
Acceptance suite for etlsched.

Runs the long scenarios on the default configuration and keeps every
artifact under one output directory:

- bench of dqn, ddqn and the three heuristics over five seeds
- learning-rate and discount-factor sweeps for dqn
- node-count sweep for leastloaded and dqn
- SVG charts of every sweep

Each scenario prints its wall time and the qualitative check it is judged
by (PASS/FAIL). A published comparison table can be printed next to the
measured one with ``--reference``; it is context only, the simulator is not
calibrated to reproduce it.

Usage:
    python benchmark/acceptance_suite.py --out runs/acceptance --jobs 4
    python benchmark/acceptance_suite.py --quick --reference tests/data/published_table.json
"""

import math
import os
import time
from datetime import datetime
from typing import Callable, Dict, List, Tuple

import pandas as pd

from etlsched.argparser import SchedArgumentParser, extract_overrides
from etlsched.config import load_run_config
from etlsched.experiments import DEFAULT_GRIDS, RunConfig, SweepParam, SweepSpec, run_bench, run_sweep
from etlsched.log import configure_logging, get_logger
from etlsched.metrics import compare_reports, load_reference_table
from etlsched.plot import plot_sweep

log = get_logger("acceptance")

Check = Tuple[str, bool]


def by_value(summary: pd.DataFrame) -> Dict[float, float]:
    return dict(zip(summary["value"].tolist(), summary["mean"].tolist()))


def bench_scenario(run_cfg: RunConfig, out_dir: str) -> List[Check]:
    table = run_bench(run_cfg, ["dqn", "ddqn", "random", "roundrobin", "leastloaded"], out_dir=out_dir)
    print(table.render())
    means = {row.name: row.report for row in table.rows}
    runs = pd.read_csv(os.path.join(out_dir, "bench_runs.csv"), dtype={"seed": str})
    sd = runs[runs["seed"] == "sd"].set_index("agent")["asd"]

    checks = []
    for baseline in ("random", "roundrobin"):
        pooled = math.sqrt((sd["dqn"] ** 2 + sd[baseline] ** 2) / 2.0)
        beaten = means["dqn"].asd + pooled <= means[baseline].asd
        checks.append((f"dqn ASD below {baseline} by one pooled sd", beaten))
        checks.append((f"dqn TCR above {baseline}", means["dqn"].tcr > means[baseline].tcr))
    return checks


def sweep_scenario(run_cfg: RunConfig, param: SweepParam, agent: str, out_dir: str) -> Tuple[Dict, str]:
    summary = run_sweep(SweepSpec(param, DEFAULT_GRIDS[param], run_cfg), agent_name=agent, out_dir=out_dir)
    print(summary.to_string(index=False))
    csv_path = os.path.join(out_dir, f"sweep_{param.value}_summary.csv")
    svg_path = plot_sweep(csv_path, os.path.join(out_dir, f"sweep_{param.value}_{agent}.svg"))
    return by_value(summary), svg_path


def lr_scenario(run_cfg: RunConfig, out_dir: str) -> List[Check]:
    means, _ = sweep_scenario(run_cfg, SweepParam.LEARNING_RATE, "dqn", out_dir)
    return [
        ("lr 5e-4 beats 1e-5", means[5e-4] > means[1e-5]),
        ("lr 5e-4 beats 1e-2", means[5e-4] > means[1e-2]),
    ]


def gamma_scenario(run_cfg: RunConfig, out_dir: str) -> List[Check]:
    means, _ = sweep_scenario(run_cfg, SweepParam.GAMMA, "dqn", out_dir)
    return [
        ("gamma 0.93 ASD below 0.80", means[0.93] < means[0.80]),
        ("gamma 0.93 ASD below 0.99", means[0.93] < means[0.99]),
    ]


def nodes_scenario(run_cfg: RunConfig, out_dir: str) -> List[Check]:
    checks = []
    for agent in ("leastloaded", "dqn"):
        means, _ = sweep_scenario(run_cfg, SweepParam.NODE_COUNT, agent, os.path.join(out_dir, agent))
        checks.append((f"{agent}: 8 nodes beat 2", means[8] < means[2]))
        checks.append((f"{agent}: 8 nodes beat 16", means[8] < means[16]))
    return checks


SCENARIOS: Dict[str, Tuple[Callable[[RunConfig, str], List[Check]], Tuple[int, ...]]] = {
    "bench": (bench_scenario, (1, 2, 3, 4, 5)),
    "lr": (lr_scenario, (1, 2, 3)),
    "gamma": (gamma_scenario, (1, 2, 3)),
    "nodes": (nodes_scenario, (1, 2, 3)),
}


def main() -> None:
    parser = SchedArgumentParser.add_logging_arguments()
    SchedArgumentParser.add_run_arguments(parser)
    parser.add_argument("--only", choices=sorted(SCENARIOS), action="append", help="run only these scenarios")
    parser.add_argument("--quick", action="store_true", help="100 training episodes and 5 evaluation episodes")
    parser.add_argument("--reference", help="published comparison JSON to print next to the bench table")
    args = parser.parse_args()

    overrides = extract_overrides(args)
    if args.quick:
        overrides = ["run.episodes=100", "run.eval_episodes=5"] + overrides
    config = load_run_config(args.config, overrides)
    configure_logging(config["logging"])
    base = RunConfig.from_config(config)
    root = base.output_dir if args.out else os.path.join("runs", "acceptance")

    print(f"\n{'=' * 60}")
    print(f"ETLSCHED ACCEPTANCE SUITE - {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")
    print(f"{'=' * 60}")
    print(f"• Config digest: {base.digest()}")
    print(f"• Episodes: {base.episodes} train, {base.eval_episodes} eval")
    print(f"• Workers: {base.jobs}")
    print(f"• Output: {root}")
    print(f"{'=' * 60}\n")

    results: List[Tuple[str, float, List[Check]]] = []
    for name in args.only or list(SCENARIOS):
        scenario, seeds = SCENARIOS[name]
        run_cfg = base.with_value("run.seeds", list(seeds))
        print(f"--- {name} ({len(seeds)} seeds) ---")
        start = time.perf_counter()
        checks = scenario(run_cfg, os.path.join(root, name))
        results.append((name, time.perf_counter() - start, checks))

    if args.reference:
        print("\nPublished comparison (context only):")
        print(compare_reports(load_reference_table(args.reference)).render())

    print(f"\n{'=' * 60}")
    failed = 0
    for name, elapsed, checks in results:
        print(f"{name:<8} {elapsed:8.1f}s")
        for label, ok in checks:
            failed += not ok
            print(f"    [{'PASS' if ok else 'FAIL'}] {label}")
    print(f"{'=' * 60}")
    if failed:
        log.warning("%d check(s) failed", failed)
    else:
        log.info("all checks passed")


if __name__ == "__main__":
    main()
