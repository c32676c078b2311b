"""
Training, benchmarking and sensitivity sweeps.

Every run is identified by ``(agent, master seed)`` and is deterministic: the
cluster, the agent and every training and evaluation workload get their own
seed derived from the master seed with :func:`derive_run_seed`. Agents
compared in one benchmark therefore see identical clusters and identical
evaluation workloads.

A run trains for ``run.episodes`` episodes (heuristics skip training), then
plays ``run.eval_episodes`` greedy episodes whose traces feed the metrics.

Independent runs execute in a process pool of ``run.jobs`` workers; results
are merged in submission order, so artifacts do not depend on scheduling.

Artifacts:
    train: ``reward_curve.csv``, ``metrics.json``, ``checkpoint_seed<seed>.json``
    bench: ``bench_runs.csv``, ``comparison.csv``, ``comparison.json``
    sweep: ``sweep_<param>.csv``, ``sweep_<param>_summary.csv``
    with tracing: ``trace_seed<seed>.jsonl`` (``trace_<agent>_seed<seed>.jsonl`` in benchmarks)
"""

import copy
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .agents import AGENT_NAMES, Agent, AgentConfig, Transition, make_agent
from .cluster import ClusterConfig, ClusterSpec, cluster_from_config
from .config import SCHEMA, SchedConfig, set_dotted
from .env import EnvConfig, SchedulingEnv
from .errors import ConfigurationError, EtlSchedError, NumericError, UsageError
from .log import configure_logging, get_logger, run_context
from .metrics import (
    AggregateReport,
    ComparisonTable,
    EpisodeTrace,
    MetricsReport,
    aggregate_reports,
    compare_reports,
    compute_metrics,
    report_row,
    write_csv,
    write_json,
    write_report_json,
    write_runs_csv,
)
from .workload import WorkloadConfig

logger = get_logger(__name__)

CURVE_COLUMNS = ("seed", "episode", "steps", "total_reward", "discounted_return", "epsilon", "mean_loss")
SWEEP_COLUMNS = ("param", "value", "seed", "agent", "metric", "result", "status")
SUMMARY_COLUMNS = ("param", "value", "metric", "mean", "sd", "n", "failed")

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_run_seed(master_seed: int, stream: str, index: int) -> int:
    """
    Split a master seed into independent 64-bit seeds.

    The stream name is hashed with BLAKE2b (8 bytes, little endian) and mixed
    with the master seed and the index through three splitmix64 rounds::

        splitmix64(splitmix64(splitmix64(master) ^ hash(stream)) ^ index)

    Examples:
        >>> derive_run_seed(42, "env", 0) == derive_run_seed(42, "env", 0)
        True
        >>> derive_run_seed(42, "env", 0) == derive_run_seed(42, "agent", 0)
        False
    """
    stream_hash = int.from_bytes(hashlib.blake2b(stream.encode("utf-8"), digest_size=8).digest(), "little")
    mixed = _splitmix64(_splitmix64(master_seed & _MASK64) ^ stream_hash)
    return _splitmix64(mixed ^ (index & _MASK64))


@dataclass(frozen=True)
class RunConfig:
    """Typed view of a validated ``runcfg-v1`` configuration."""

    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    episodes: int = 300
    eval_episodes: int = 20
    seeds: Tuple[int, ...] = (42,)
    output_dir: str = "runs"
    jobs: int = 1
    trace: bool = False
    agent_name: str = "dqn"
    agents: Tuple[str, ...] = ("dqn", "random", "roundrobin", "leastloaded")

    def validate(self) -> "RunConfig":
        self.workload.validate()
        self.cluster.validate()
        self.env.validate()
        self.agent.validate()
        if self.episodes < 1:
            raise ConfigurationError("must be >= 1", path="run.episodes")
        if self.eval_episodes < 1:
            raise ConfigurationError("must be >= 1", path="run.eval_episodes")
        if not self.seeds:
            raise ConfigurationError("needs at least one seed", path="run.seeds")
        if any(not 0 <= s < 2**64 for s in self.seeds):
            raise ConfigurationError("seeds must be 64-bit unsigned integers", path="run.seeds")
        if self.jobs < 1:
            raise ConfigurationError("must be >= 1", path="run.jobs")
        for name in (self.agent_name,) + tuple(self.agents):
            if name not in AGENT_NAMES:
                raise ConfigurationError(f"unknown agent '{name}', valid names: {', '.join(AGENT_NAMES)}", path="run")
        return self

    @classmethod
    def from_config(cls, config: Mapping[str, Any]) -> "RunConfig":
        """Build from a nested configuration dict as returned by :func:`~etlsched.config.load_run_config`."""
        run = config.get("run", {})
        return cls(
            workload=WorkloadConfig.from_dict(config.get("workload", {})),
            cluster=ClusterConfig.from_dict(config.get("cluster", {})),
            env=EnvConfig.from_dict(config.get("env", {})),
            agent=AgentConfig.from_dict(config.get("agent", {})),
            episodes=int(run.get("episodes", 300)),
            eval_episodes=int(run.get("eval_episodes", 20)),
            seeds=tuple(int(s) for s in run.get("seeds", (42,))),
            output_dir=str(run.get("output_dir", "runs")),
            jobs=int(run.get("jobs", 1)),
            trace=bool(run.get("trace", False)),
            agent_name=str(run.get("agent", "dqn")),
            agents=tuple(run.get("agents", ("dqn", "random", "roundrobin", "leastloaded"))),
        ).validate()

    def to_config(self) -> Dict[str, Any]:
        return {
            "schema": SCHEMA,
            "workload": self.workload.to_dict(),
            "cluster": self.cluster.to_dict(),
            "env": self.env.to_dict(),
            "agent": self.agent.to_dict(),
            "run": {
                "episodes": self.episodes,
                "eval_episodes": self.eval_episodes,
                "seeds": list(self.seeds),
                "output_dir": self.output_dir,
                "jobs": self.jobs,
                "trace": self.trace,
                "agent": self.agent_name,
                "agents": list(self.agents),
            },
        }

    def with_value(self, dotted: str, value: Any) -> "RunConfig":
        """Copy with one dotted configuration key replaced, re-validated."""
        config = self.to_config()
        set_dotted(config, dotted, value)
        return RunConfig.from_config(config)

    def digest(self) -> str:
        """Short hash of everything that influences the simulated episodes."""
        config = self.to_config()
        payload = {k: config[k] for k in ("workload", "cluster", "env", "agent")}
        payload["episodes"] = self.episodes
        payload["eval_episodes"] = self.eval_episodes
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()[:12]


class SweepParam(str, Enum):
    """Swept configuration value, the dotted key it sets and the metric it is judged by."""

    LEARNING_RATE = "lr"
    GAMMA = "gamma"
    NODE_COUNT = "nodes"

    @property
    def path(self) -> str:
        return {"lr": "agent.lr", "gamma": "agent.gamma", "nodes": "cluster.n_nodes"}[self.value]

    @property
    def metric(self) -> str:
        return "avg_cum_reward" if self is SweepParam.LEARNING_RATE else "asd"

    @property
    def log_scale(self) -> bool:
        return self is SweepParam.LEARNING_RATE

    @classmethod
    def parse(cls, text: str) -> "SweepParam":
        aliases = {
            "lr": cls.LEARNING_RATE,
            "learningrate": cls.LEARNING_RATE,
            "learning_rate": cls.LEARNING_RATE,
            "gamma": cls.GAMMA,
            "nodes": cls.NODE_COUNT,
            "nodecount": cls.NODE_COUNT,
            "n_nodes": cls.NODE_COUNT,
        }
        try:
            return aliases[text.strip().lower()]
        except KeyError:
            raise UsageError(f"unknown sweep parameter '{text}', expected one of lr, gamma, nodes") from None


DEFAULT_GRIDS: Dict[SweepParam, Tuple[float, ...]] = {
    SweepParam.LEARNING_RATE: (1e-5, 5e-5, 1e-4, 5e-4, 1e-3, 5e-3, 1e-2),
    SweepParam.GAMMA: (0.80, 0.85, 0.90, 0.93, 0.95, 0.97, 0.99),
    SweepParam.NODE_COUNT: (2, 4, 6, 8, 10, 12, 16),
}


@dataclass(frozen=True)
class SweepSpec:
    param: SweepParam
    grid: Tuple[Any, ...]
    base: RunConfig

    def validate(self) -> "SweepSpec":
        """
        Raises:
            ConfigurationError: Empty grid or a value outside the parameter's domain
        """
        if not self.grid:
            raise ConfigurationError("grid must not be empty", path=self.param.path)
        for value in self.grid:
            if self.param is SweepParam.LEARNING_RATE and not value > 0:
                raise ConfigurationError(f"learning rate {value} must be > 0", path=self.param.path)
            if self.param is SweepParam.GAMMA and not 0.0 < value < 1.0:
                raise ConfigurationError(f"discount {value} outside (0, 1)", path=self.param.path)
            if self.param is SweepParam.NODE_COUNT and (int(value) != value or value < 1):
                raise ConfigurationError(f"node count {value} must be a positive integer", path=self.param.path)
        return self

    def typed_grid(self) -> Tuple[Any, ...]:
        if self.param is SweepParam.NODE_COUNT:
            return tuple(int(v) for v in self.grid)
        return tuple(float(v) for v in self.grid)


def parse_grid(text: str) -> Tuple[float, ...]:
    """Comma separated numbers, e.g. ``"1e-4,5e-4"``."""
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigurationError(f"invalid grid '{text}'", path="--grid") from None


@dataclass
class EpisodeResult:
    steps: int
    total_reward: float
    discounted_return: float
    mean_loss: Optional[float]
    epsilon: float
    trace: Optional[EpisodeTrace] = None


def run_episode(
    env: Any,
    agent: Agent,
    seed: Optional[int] = None,
    learn: bool = True,
    greedy: bool = False,
    gamma: float = 0.93,
    max_steps: Optional[int] = None,
) -> EpisodeResult:
    """
    Play one episode of ``agent`` in ``env``.

    Works with :class:`~etlsched.env.SchedulingEnv` and
    :class:`~etlsched.toy_mdp.ToyEnv`. Truncated toy episodes are stored as
    non-terminal transitions.

    Args:
        env: Environment to reset and step
        agent: Acting agent
        seed: Seed passed to ``env.reset``
        learn: Feed every transition to ``agent.observe``
        greedy: Act without exploration
        gamma: Discount for the reported return
        max_steps: Stop after this many steps even if the episode is not over
    """
    state = env.reset(seed=seed)
    rewards: List[float] = []
    losses: List[float] = []
    try:
        while not env.terminal and (max_steps is None or len(rewards) < max_steps):
            action = agent.act(env, state, greedy=greedy)
            result = env.step(action)
            if learn:
                terminal = bool(result.terminal and not result.info.get("truncated", False))
                loss = agent.observe(
                    Transition(
                        state=np.asarray(state, dtype=np.float64),
                        action=int(action),
                        reward=float(result.reward),
                        next_state=np.asarray(result.next_state, dtype=np.float64),
                        terminal=terminal,
                    )
                )
                if loss is not None:
                    losses.append(loss)
            rewards.append(float(result.reward))
            state = result.next_state
    except NumericError as exc:
        raise exc.with_context(step=len(rewards)) from exc
    if learn:
        agent.end_episode()
    trace = env.episode_trace() if hasattr(env, "episode_trace") else None
    return EpisodeResult(
        steps=len(rewards),
        total_reward=math.fsum(rewards),
        discounted_return=math.fsum((gamma**t) * r for t, r in enumerate(rewards)),
        mean_loss=math.fsum(losses) / len(losses) if losses else None,
        epsilon=float(agent.epsilon),
        trace=trace,
    )


@dataclass
class RunResult:
    agent: str
    seed: int
    report: Optional[MetricsReport]
    curve: List[Dict[str, Any]] = field(default_factory=list)
    checkpoint: Optional[Dict[str, Any]] = None
    status: str = "ok"
    error: Optional[str] = None
    failure: Optional[EtlSchedError] = None


def run_cluster(run_cfg: RunConfig, seed: int) -> ClusterSpec:
    """The cluster every run with master seed ``seed`` executes on."""
    return cluster_from_config(run_cfg.cluster, derive_run_seed(seed, "cluster", 0))


def build_env(run_cfg: RunConfig, seed: int, record_trace: bool = False) -> SchedulingEnv:
    return SchedulingEnv(run_cfg.workload, run_cluster(run_cfg, seed), run_cfg.env, record_trace=record_trace)


def train_and_evaluate(
    run_cfg: RunConfig,
    agent_name: str,
    seed: int,
    trace_path: Optional[str] = None,
    on_episode: Optional[Callable[[Dict[str, Any]], None]] = None,
) -> RunResult:
    """
    Train ``agent_name`` under master ``seed`` and evaluate it greedily.

    Args:
        run_cfg: Validated run configuration
        agent_name: One of :data:`~etlsched.agents.AGENT_NAMES`
        seed: Master seed of the run
        trace_path: Write the first evaluation episode's event trace here
        on_episode: Called with every reward-curve row as it is produced

    Returns:
        The run's metrics, reward curve and final agent checkpoint
    """
    env = build_env(run_cfg, seed, record_trace=trace_path is not None)
    agent = make_agent(agent_name, env, run_cfg.agent, derive_run_seed(seed, "agent", 0))
    gamma = run_cfg.agent.gamma
    curve: List[Dict[str, Any]] = []

    with run_context(f"{agent_name}/seed{seed}"):
        if agent.learns:
            for episode in range(run_cfg.episodes):
                try:
                    result = run_episode(env, agent, derive_run_seed(seed, "train-workload", episode), gamma=gamma)
                except NumericError as exc:
                    raise exc.with_context(agent=agent_name, seed=seed, phase="train", episode=episode) from exc
                row = {
                    "seed": seed,
                    "episode": episode,
                    "steps": result.steps,
                    "total_reward": result.total_reward,
                    "discounted_return": result.discounted_return,
                    "epsilon": result.epsilon,
                    "mean_loss": "" if result.mean_loss is None else result.mean_loss,
                }
                curve.append(row)
                if on_episode is not None:
                    on_episode(row)
                if (episode + 1) % max(1, run_cfg.episodes // 10) == 0:
                    logger.info(
                        "episode %d/%d: reward %.3f, epsilon %.3f",
                        episode + 1,
                        run_cfg.episodes,
                        result.total_reward,
                        result.epsilon,
                    )

        traces: List[EpisodeTrace] = []
        for episode in range(run_cfg.eval_episodes):
            try:
                result = run_episode(
                    env, agent, derive_run_seed(seed, "eval-workload", episode), learn=False, greedy=True, gamma=gamma
                )
            except NumericError as exc:
                raise exc.with_context(agent=agent_name, seed=seed, phase="eval", episode=episode) from exc
            assert result.trace is not None
            traces.append(result.trace)
            if episode == 0 and trace_path is not None:
                env.dump_trace(trace_path)
        report = compute_metrics(traces, gamma, seeds=(seed,), config_digest=run_cfg.digest())
        logger.info("evaluated: ASD %.3f, TCR %.2f, TP %.2f, RC %.4f", report.asd, report.tcr, report.tp, report.rc)
    return RunResult(agent=agent_name, seed=seed, report=report, curve=curve, checkpoint=agent.checkpoint())


@dataclass(frozen=True)
class _RunJob:
    run_cfg: RunConfig
    agent_name: str
    seed: int
    trace_path: Optional[str] = None


def _execute(job: _RunJob) -> RunResult:
    try:
        return train_and_evaluate(job.run_cfg, job.agent_name, job.seed, job.trace_path)
    except EtlSchedError as exc:
        logger.error("run %s/seed%d failed: %s", job.agent_name, job.seed, exc)
        return RunResult(
            agent=job.agent_name, seed=job.seed, report=None, status="error", error=str(exc), failure=exc
        )
    except Exception as exc:  # pylint: disable=broad-except
        logger.exception("run %s/seed%d crashed", job.agent_name, job.seed)
        return RunResult(agent=job.agent_name, seed=job.seed, report=None, status="error", error=repr(exc))


def _init_worker(logging_settings: Mapping[str, Any]) -> None:
    configure_logging(logging_settings)


def execute_runs(jobs: Sequence[_RunJob], workers: int = 1) -> List[RunResult]:
    """Run ``jobs`` sequentially or in a process pool; results keep the order of ``jobs``."""
    if workers <= 1 or len(jobs) <= 1:
        return [_execute(job) for job in jobs]
    settings = copy.deepcopy(SchedConfig.get("logging", {}) or {})
    with ProcessPoolExecutor(
        max_workers=min(workers, len(jobs)), initializer=_init_worker, initargs=(settings,)
    ) as pool:
        return list(pool.map(_execute, jobs))


def prepare_output_dir(path: str) -> str:
    """
    Create ``path`` if needed and make sure it is writable.

    Raises:
        UsageError: The directory cannot be created or written
    """
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory '{path}': {exc.strerror}") from exc
    if not os.access(path, os.W_OK):
        raise UsageError(f"output directory '{path}' is not writable")
    return path


def _sd_row(agent: str, agg: AggregateReport) -> Dict[str, Any]:
    row: Dict[str, Any] = {"agent": agent, "seed": "sd", "episodes": agg.n_runs, "status": "ok"}
    row.update({k: v for k, v in agg.sd.items()})
    return row


def _raise_if_failed(results: Sequence[RunResult]) -> None:
    """Re-raise the first failure when no run succeeded; its class keeps the exit code."""
    failed = [r for r in results if r.status != "ok"]
    if not failed or len(failed) != len(results):
        return
    first = failed[0]
    if isinstance(first.failure, NumericError):
        raise first.failure.with_context(agent=first.agent, seed=first.seed)
    if first.failure is not None:
        raise first.failure
    raise NumericError("every run failed", {"agent": first.agent, "seed": first.seed, "error": first.error})


def run_train(run_cfg: RunConfig, out_dir: Optional[str] = None) -> AggregateReport:
    """
    Train ``run.agent`` once per seed and write the train artifacts.

    Raises:
        NumericError: A run failed numerically (the exception's exit code is 3)
    """
    out_dir = prepare_output_dir(out_dir or run_cfg.output_dir)
    agent_name = run_cfg.agent_name
    results: List[RunResult] = []
    for seed in run_cfg.seeds:
        trace_path = os.path.join(out_dir, f"trace_seed{seed}.jsonl") if run_cfg.trace else None
        result = train_and_evaluate(run_cfg, agent_name, seed, trace_path)
        results.append(result)
        if result.checkpoint is not None:
            write_json(os.path.join(out_dir, f"checkpoint_seed{seed}.json"), result.checkpoint)

    write_csv(os.path.join(out_dir, "reward_curve.csv"), CURVE_COLUMNS, [row for r in results for row in r.curve])
    reports = [r.report for r in results if r.report is not None]
    agg = aggregate_reports(reports)
    write_report_json(
        os.path.join(out_dir, "metrics.json"),
        agg.mean,
        extra={
            "agent": agent_name,
            "sd": agg.sd,
            "per_seed": [dict(r.report.to_dict(), seed=r.seed) for r in results if r.report is not None],
            "config": run_cfg.to_config(),
        },
    )
    logger.info("train artifacts written to %s", out_dir)
    return agg


def run_bench(
    run_cfg: RunConfig, agents: Optional[Sequence[str]] = None, out_dir: Optional[str] = None
) -> ComparisonTable:
    """
    Run every agent on every seed and compare their seed-mean reports.

    Raises:
        UsageError: Unknown agent name
    """
    names = list(agents or run_cfg.agents)
    unknown = [a for a in names if a not in AGENT_NAMES]
    if unknown or not names:
        raise UsageError(f"unknown agent(s) {unknown}, valid names: {', '.join(AGENT_NAMES)}")
    out_dir = prepare_output_dir(out_dir or run_cfg.output_dir)
    jobs = [
        _RunJob(
            run_cfg,
            name,
            seed,
            os.path.join(out_dir, f"trace_{name}_seed{seed}.jsonl") if run_cfg.trace else None,
        )
        for name in names
        for seed in run_cfg.seeds
    ]
    logger.info("bench: %d agents x %d seeds = %d runs", len(names), len(run_cfg.seeds), len(jobs))
    results = execute_runs(jobs, run_cfg.jobs)
    _raise_if_failed(results)

    rows: List[Dict[str, Any]] = []
    means: Dict[str, MetricsReport] = {}
    for name in names:
        mine = [r for r in results if r.agent == name]
        for r in mine:
            if r.report is not None:
                rows.append(report_row(name, r.seed, r.report))
            else:
                rows.append({"agent": name, "seed": r.seed, "status": "error"})
        reports = [r.report for r in mine if r.report is not None]
        if not reports:
            logger.warning("agent %s has no successful run and is left out of the comparison", name)
            continue
        agg = aggregate_reports(reports)
        means[name] = agg.mean
        rows.append(report_row(name, "mean", agg.mean))
        rows.append(_sd_row(name, agg))

    write_runs_csv(os.path.join(out_dir, "bench_runs.csv"), rows)
    table = compare_reports(means)
    header = ["method"] + [c for m in ("asd", "tcr", "tp", "rc") for c in (m, f"{m}_rank")] + ["avg_cum_reward"]
    write_csv(os.path.join(out_dir, "comparison.csv"), header, table.to_rows())
    write_json(os.path.join(out_dir, "comparison.json"), table.to_dict())
    for warning in table.warnings:
        logger.warning(warning)
    return table


def run_sweep(spec: SweepSpec, agent_name: Optional[str] = None, out_dir: Optional[str] = None) -> pd.DataFrame:
    """
    Train and evaluate once per grid value and seed.

    Returns:
        The summary frame (one row per grid value, in grid order)
    """
    spec.validate()
    base = spec.base
    agent_name = agent_name or base.agent_name
    metric = spec.param.metric
    out_dir = prepare_output_dir(out_dir or base.output_dir)
    grid = spec.typed_grid()
    configs = [base.with_value(spec.param.path, value) for value in grid]
    jobs = [_RunJob(cfg, agent_name, seed) for cfg in configs for seed in base.seeds]
    logger.info("sweep %s: %d values x %d seeds = %d runs", spec.param.value, len(grid), len(base.seeds), len(jobs))
    results = execute_runs(jobs, base.jobs)

    rows: List[Dict[str, Any]] = []
    for i, result in enumerate(results):
        value = grid[i // len(base.seeds)]
        rows.append(
            {
                "param": spec.param.value,
                "value": value,
                "seed": result.seed,
                "agent": agent_name,
                "metric": metric,
                "result": float(getattr(result.report, metric)) if result.report is not None else "",
                "status": result.status,
            }
        )
    write_csv(os.path.join(out_dir, f"sweep_{spec.param.value}.csv"), SWEEP_COLUMNS, rows)
    summary = summarize_sweep(pd.DataFrame(rows, columns=list(SWEEP_COLUMNS)), grid)
    write_csv(
        os.path.join(out_dir, f"sweep_{spec.param.value}_summary.csv"),
        SUMMARY_COLUMNS,
        summary.to_dict(orient="records"),
    )
    return summary


def summarize_sweep(frame: pd.DataFrame, grid: Optional[Sequence[Any]] = None) -> pd.DataFrame:
    """
    Per-value mean and sample sd of a long-form sweep frame.

    Failed runs are counted but do not enter the statistics. Values are
    returned in ``grid`` order (first-appearance order without a grid).
    """
    if grid is None:
        grid = list(dict.fromkeys(frame["value"].tolist()))
    ok = frame[frame["status"] == "ok"]
    records = []
    for value in grid:
        sel = ok[ok["value"] == value]["result"].astype(float)
        failed = int(((frame["value"] == value) & (frame["status"] != "ok")).sum())
        records.append(
            {
                "param": frame["param"].iloc[0] if len(frame) else "",
                "value": value,
                "metric": frame["metric"].iloc[0] if len(frame) else "",
                "mean": float(sel.mean()) if len(sel) else float("nan"),
                "sd": float(sel.std(ddof=1)) if len(sel) > 1 else 0.0,
                "n": int(len(sel)),
                "failed": failed,
            }
        )
    return pd.DataFrame(records, columns=list(SUMMARY_COLUMNS))

