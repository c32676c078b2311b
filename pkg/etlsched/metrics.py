"""
Evaluation metrics computed from finished episodes.

Four scheduling metrics plus the discounted return:

- ASD: average scheduling delay, mean of ``start - ready`` over tasks that
  started executing (sim-seconds; ``start`` is after allocation coordination)
- TCR: task completion rate, percent of tasks finished by their deadline
- TP: throughput, finished tasks per 100 sim-seconds of episode makespan
- RC: normalized resource cost, mean of ``min(c / c_max, 1)`` over finished tasks
- avg_cum_reward: mean over episodes of ``sum(gamma**t * r_t)`` over decision steps

Per-episode values are averaged across episodes with :func:`math.fsum`, so a
report does not depend on the order of its traces.
"""

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .errors import UsageError

# TP is reported per this many sim-seconds.
TP_WINDOW = 100.0

METRICS = ("asd", "tcr", "tp", "rc", "avg_cum_reward")

# True when larger is better.
DIRECTIONS: Dict[str, bool] = {"asd": False, "tcr": True, "tp": True, "rc": False}
ARROWS = {True: "↑", False: "↓"}

RUN_COLUMNS = (
    "agent",
    "seed",
    "episodes",
    "asd",
    "tcr",
    "tp",
    "rc",
    "avg_cum_reward",
    "completed",
    "missed",
    "unfinished",
    "status",
)


@dataclass(frozen=True)
class TaskRecord:
    """How one task went in one episode."""

    task_id: int
    release: float
    ready: Optional[float]
    start: Optional[float]
    finish: Optional[float]
    delta: int
    latency: float
    cost: float
    node: Optional[int]
    status: str

    @property
    def started(self) -> bool:
        return self.start is not None and self.ready is not None

    @property
    def finished(self) -> bool:
        return self.finish is not None


@dataclass(frozen=True)
class EpisodeTrace:
    """Everything the metrics need from one episode."""

    records: Tuple[TaskRecord, ...]
    rewards: Tuple[float, ...]
    horizon: float
    end_time: float
    c_max: float
    wall_clock_s: float = field(default=0.0, compare=False)

    @property
    def n_tasks(self) -> int:
        return len(self.records)

    @property
    def makespan(self) -> float:
        finishes = [r.finish for r in self.records if r.finish is not None]
        return max(finishes) if finishes else self.end_time

    def status_counts(self) -> Dict[str, int]:
        counts = {"completed": 0, "missed": 0, "unfinished": 0}
        for record in self.records:
            counts[record.status] = counts.get(record.status, 0) + 1
        return counts


@dataclass(frozen=True)
class MetricsReport:
    asd: float
    tcr: float
    tp: float
    rc: float
    avg_cum_reward: float
    episodes: int
    seeds: Tuple[int, ...] = ()
    completed: float = 0.0
    missed: float = 0.0
    unfinished: float = 0.0
    config_digest: str = ""

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["seeds"] = list(self.seeds)
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "MetricsReport":
        values = dict(data)
        values["seeds"] = tuple(values.get("seeds", ()))
        return cls(**values)


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values) if values else 0.0


def discounted_return(rewards: Sequence[float], gamma: float) -> float:
    """``sum(gamma**t * r_t)``; ``0.0 ** 0`` is 1, so ``gamma=0`` returns the first reward."""
    return math.fsum((gamma**t) * r for t, r in enumerate(rewards))


def episode_metrics(trace: EpisodeTrace, gamma: float) -> Dict[str, float]:
    """Metrics of a single episode."""
    started = [r.start - r.ready for r in trace.records if r.started]  # type: ignore[operator]
    finished = [r for r in trace.records if r.finished]
    makespan = trace.makespan
    c_max = trace.c_max if trace.c_max > 0 else 1.0
    counts = trace.status_counts()
    return {
        "asd": _mean(started),
        "tcr": 100.0 * sum(r.delta for r in trace.records) / trace.n_tasks if trace.n_tasks else 0.0,
        "tp": TP_WINDOW * len(finished) / makespan if makespan > 0 else 0.0,
        "rc": _mean([min(r.cost / c_max, 1.0) for r in finished]),
        "avg_cum_reward": discounted_return(trace.rewards, gamma),
        "completed": float(counts["completed"]),
        "missed": float(counts["missed"]),
        "unfinished": float(counts["unfinished"]),
    }


def compute_metrics(
    traces: Sequence[EpisodeTrace], gamma: float, seeds: Iterable[int] = (), config_digest: str = ""
) -> MetricsReport:
    """
    Average per-episode metrics over ``traces``.

    Args:
        traces: Evaluation episodes
        gamma: Discount for the cumulative reward
        seeds: Seeds the traces came from, echoed in the report
        config_digest: Identifies the configuration, used for mismatch warnings

    Raises:
        UsageError: If ``traces`` is empty
    """
    if not traces:
        raise UsageError("compute_metrics needs at least one episode trace")
    per_episode = [episode_metrics(t, gamma) for t in traces]
    means = {key: _mean([m[key] for m in per_episode]) for key in per_episode[0]}
    return MetricsReport(
        asd=means["asd"],
        tcr=means["tcr"],
        tp=means["tp"],
        rc=means["rc"],
        avg_cum_reward=means["avg_cum_reward"],
        episodes=len(traces),
        seeds=tuple(seeds),
        completed=means["completed"],
        missed=means["missed"],
        unfinished=means["unfinished"],
        config_digest=config_digest,
    )


@dataclass(frozen=True)
class AggregateReport:
    """Mean and sample standard deviation of reports from several seeds."""

    mean: MetricsReport
    sd: Dict[str, float]
    n_runs: int


def aggregate_reports(reports: Sequence[MetricsReport]) -> AggregateReport:
    """
    Combine per-seed reports into mean +- sample sd.

    A single report has sd 0.
    """
    if not reports:
        raise UsageError("aggregate_reports needs at least one report")
    means: Dict[str, float] = {}
    sds: Dict[str, float] = {}
    for key in METRICS + ("completed", "missed", "unfinished"):
        values = [getattr(r, key) for r in reports]
        mu = _mean(values)
        means[key] = mu
        if len(values) > 1:
            sds[key] = math.sqrt(math.fsum((v - mu) ** 2 for v in values) / (len(values) - 1))
        else:
            sds[key] = 0.0
    seeds = tuple(s for r in reports for s in r.seeds)
    digests = {r.config_digest for r in reports}
    mean = MetricsReport(
        episodes=sum(r.episodes for r in reports),
        seeds=seeds,
        config_digest=reports[0].config_digest if len(digests) == 1 else "mixed",
        **means,
    )
    return AggregateReport(mean=mean, sd=sds, n_runs=len(reports))


@dataclass(frozen=True)
class ComparisonRow:
    name: str
    report: MetricsReport
    ranks: Dict[str, int]

    @property
    def mean_rank(self) -> float:
        return _mean([float(r) for r in self.ranks.values()])


@dataclass(frozen=True)
class ComparisonTable:
    """Methods ranked per metric, best first."""

    rows: Tuple[ComparisonRow, ...]
    warnings: Tuple[str, ...] = ()

    def header(self) -> List[str]:
        return ["method"] + [f"{m.upper()} {ARROWS[up]}" for m, up in DIRECTIONS.items()]

    def render(self) -> str:
        """Plain-text table; TP is in tasks per 100 sim-seconds."""
        lines = ["{:<14}".format("Method") + "".join(f"{h:>12}" for h in self.header()[1:])]
        for row in self.rows:
            cells = "".join(f"{getattr(row.report, m):>12.4g}" for m in DIRECTIONS)
            lines.append(f"{row.name:<14}{cells}")
        lines.append("ASD in sim-seconds, TCR in percent, TP per 100 sim-seconds, RC normalized cost")
        lines.extend(f"warning: {w}" for w in self.warnings)
        return "\n".join(lines)

    def to_rows(self) -> List[Dict[str, Any]]:
        out = []
        for row in self.rows:
            record: Dict[str, Any] = {"method": row.name}
            for metric in DIRECTIONS:
                record[metric] = getattr(row.report, metric)
                record[f"{metric}_rank"] = row.ranks[metric]
            record["avg_cum_reward"] = row.report.avg_cum_reward
            out.append(record)
        return out

    def to_dict(self) -> Dict[str, Any]:
        return {
            "directions": {m: ("higher" if up else "lower") for m, up in DIRECTIONS.items()},
            "tp_window": TP_WINDOW,
            "rows": self.to_rows(),
            "warnings": list(self.warnings),
        }


def compare_reports(reports: Mapping[str, MetricsReport]) -> ComparisonTable:
    """
    Rank methods on ASD, TCR, TP and RC.

    Ties share a rank (competition ranking). Rows are ordered by mean rank,
    then by name.

    Raises:
        UsageError: If ``reports`` is empty
    """
    if not reports:
        raise UsageError("compare_reports needs at least one report")
    names = sorted(reports)
    ranks: Dict[str, Dict[str, int]] = {name: {} for name in names}
    for metric, higher_is_better in DIRECTIONS.items():
        for name in names:
            mine = getattr(reports[name], metric)
            if higher_is_better:
                better = sum(1 for other in names if getattr(reports[other], metric) > mine)
            else:
                better = sum(1 for other in names if getattr(reports[other], metric) < mine)
            ranks[name][metric] = 1 + better

    warnings: List[str] = []
    digests = {name: reports[name].config_digest for name in names}
    if len(set(digests.values())) > 1:
        detail = ", ".join(f"{n}={d or '?'}" for n, d in digests.items())
        warnings.append(f"reports come from different configurations ({detail})")

    rows = [ComparisonRow(name=n, report=reports[n], ranks=ranks[n]) for n in names]
    rows.sort(key=lambda r: (r.mean_rank, r.name))
    return ComparisonTable(rows=tuple(rows), warnings=tuple(warnings))


def load_reference_table(path: str) -> Dict[str, MetricsReport]:
    """
    Read a published comparison (``{"rows": [{"method", "asd", "tcr", "tp", "rc"}]}``) as reports.

    Missing reward columns are filled with 0.
    """
    with open(path, mode="r", encoding="utf-8") as f:
        data = json.load(f)
    out: Dict[str, MetricsReport] = {}
    for row in data["rows"]:
        out[row["method"]] = MetricsReport(
            asd=float(row["asd"]),
            tcr=float(row["tcr"]),
            tp=float(row["tp"]),
            rc=float(row["rc"]),
            avg_cum_reward=float(row.get("avg_cum_reward", 0.0)),
            episodes=int(row.get("episodes", 0)),
        )
    return out


def write_json(path: str, payload: Any) -> None:
    """Deterministic JSON: sorted keys, two-space indent, trailing newline."""
    with open(path, mode="w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")


def write_report_json(path: str, report: MetricsReport, extra: Optional[Mapping[str, Any]] = None) -> None:
    payload = {"report": report.to_dict(), "tp_window": TP_WINDOW}
    if extra:
        payload.update(extra)
    write_json(path, payload)


def write_csv(path: str, columns: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> None:
    """CSV with a fixed column order and ``\\n`` line endings; floats written with ``repr``."""
    with open(path, mode="w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def report_row(agent: str, seed: Any, report: MetricsReport, status: str = "ok") -> Dict[str, Any]:
    row: Dict[str, Any] = {"agent": agent, "seed": seed, "episodes": report.episodes, "status": status}
    for key in METRICS + ("completed", "missed", "unfinished"):
        row[key] = getattr(report, key)
    return row


def write_runs_csv(path: str, rows: Iterable[Mapping[str, Any]]) -> None:
    """One row per agent per seed plus ``mean`` and ``sd`` aggregate rows, columns :data:`RUN_COLUMNS`."""
    write_csv(path, RUN_COLUMNS, rows)
