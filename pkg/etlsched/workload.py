"""
Synthetic ETL workload generation.

Builds layered task DAGs shaped like a warehouse refresh: five fixed stages
(extract, clean, transform, aggregate, load), one task per operation on one
table partition, edges only between consecutive stages. Extract tasks come from
two source classes (structured relational tables and semi-structured streams)
and are released either in an initial batch or by a per-class Poisson process;
every other task becomes ready once all of its parents have finished.

Everything here is a pure function of the :class:`WorkloadConfig` (seed
included) so the same config always yields a byte-identical JSON dump.

Example:
    >>> from etlsched.workload import WorkloadConfig, generate_dag, topological_order
    >>> dag = generate_dag(WorkloadConfig(n_tasks=5, layer_widths=(1, 1, 1, 1, 1), edge_prob=1.0, seed=7))
    >>> topological_order(dag)
    [0, 1, 2, 3, 4]
"""

import json
import math
from dataclasses import asdict, dataclass, field, fields
from enum import Enum, IntEnum
from functools import cached_property
from typing import Any, Dict, List, Mapping, Optional, Tuple

import networkx as nx
import numpy as np

from .errors import ConfigurationError, MalformedWorkloadError

DAG_FORMAT = "taskdag-v1"

WORK_RANGE = (1.0, 50.0)
INPUT_MB_RANGE = (1.0, 100.0)
MAX_PRIORITY = 4

# Hardware envelope of the default cluster profile.
FASTEST_NODE_SPEED = 4.0
FASTEST_NODE_BANDWIDTH = 20.0


class Stage(IntEnum):
    """ETL stage; the integer value is the DAG layer index."""

    EXTRACT = 0
    CLEAN = 1
    TRANSFORM = 2
    AGGREGATE = 3
    LOAD = 4

    @property
    def label(self) -> str:
        return self.name.capitalize()

    @classmethod
    def from_label(cls, label: str) -> "Stage":
        try:
            return cls[label.upper()]
        except KeyError as exc:
            raise MalformedWorkloadError(f"unknown stage '{label}'") from exc


# Fraction of a task's input handed on to its consumers.
STAGE_OUTPUT_RATIO = {
    Stage.EXTRACT: 1.0,
    Stage.CLEAN: 0.8,
    Stage.TRANSFORM: 1.0,
    Stage.AGGREGATE: 0.3,
    Stage.LOAD: 0.0,
}


class SourceKind(str, Enum):
    STRUCTURED_RELATIONAL = "StructuredRelational"
    SEMI_STRUCTURED_STREAM = "SemiStructuredStream"


@dataclass(frozen=True)
class SourceClass:
    """
    A family of data sources feeding Extract tasks.

    Attributes:
        kind: Relational tables (ORDERS, CUSTOMER, LINEITEM style) or streaming records
        arrival_rate: Poisson arrival rate of non-batch Extract tasks, tasks per sim-second
        base_latency: Delay between arrival and availability, sim-seconds
    """

    kind: SourceKind
    arrival_rate: float
    base_latency: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.arrival_rate) or self.arrival_rate < 0:
            raise ConfigurationError("arrival_rate must be finite and >= 0", path=f"sources.{self.kind.value}")
        if not math.isfinite(self.base_latency) or self.base_latency < 0:
            raise ConfigurationError("base_latency must be >= 0", path=f"sources.{self.kind.value}")


DEFAULT_SOURCES: Dict[SourceKind, SourceClass] = {
    SourceKind.STRUCTURED_RELATIONAL: SourceClass(
        SourceKind.STRUCTURED_RELATIONAL, arrival_rate=0.5, base_latency=0.2
    ),
    SourceKind.SEMI_STRUCTURED_STREAM: SourceClass(
        SourceKind.SEMI_STRUCTURED_STREAM, arrival_rate=2.0, base_latency=0.05
    ),
}


@dataclass(frozen=True)
class Task:
    """One ETL operation on one table partition."""

    id: int
    stage: Stage
    work: float
    input_mb: float
    source: SourceKind
    release: float
    deadline: float
    priority: int = 0

    def __post_init__(self) -> None:
        if self.id < 0:
            raise MalformedWorkloadError(f"task id must be >= 0, got {self.id}")
        if not self.work > 0:
            raise MalformedWorkloadError(f"task {self.id}: work must be > 0")
        if self.input_mb < 0:
            raise MalformedWorkloadError(f"task {self.id}: input_mb must be >= 0")
        if self.release < 0:
            raise MalformedWorkloadError(f"task {self.id}: release must be >= 0")
        if not self.deadline > self.release:
            raise MalformedWorkloadError(f"task {self.id}: deadline must be after release")
        if not 0 <= self.priority <= MAX_PRIORITY:
            raise MalformedWorkloadError(f"task {self.id}: priority must be in [0, {MAX_PRIORITY}]")

    @property
    def output_mb(self) -> float:
        return self.input_mb * STAGE_OUTPUT_RATIO[self.stage]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "stage": self.stage.label,
            "work": self.work,
            "input_mb": self.input_mb,
            "source": self.source.value,
            "release": self.release,
            "deadline": self.deadline,
            "priority": self.priority,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Task":
        try:
            return cls(
                id=int(data["id"]),
                stage=Stage.from_label(str(data["stage"])),
                work=float(data["work"]),
                input_mb=float(data["input_mb"]),
                source=SourceKind(data["source"]),
                release=float(data["release"]),
                deadline=float(data["deadline"]),
                priority=int(data.get("priority", 0)),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise MalformedWorkloadError(f"bad task record {dict(data)!r}: {exc}") from exc


@dataclass(frozen=True)
class WorkloadConfig:
    """
    Parameters of the DAG generator.

    ``layer_widths`` are relative stage widths; the generator apportions
    ``n_tasks`` across the five stages in those proportions (every stage gets at
    least one task). ``ref_speed`` / ``ref_bandwidth`` are the mean node speed
    and bandwidth the deadlines are computed against.
    """

    n_tasks: int = 200
    layer_widths: Tuple[int, ...] = (40, 40, 40, 40, 40)
    edge_prob: float = 0.1
    scale_factor: float = 1.0
    deadline_slack: float = 3.0
    stream_fraction: float = 0.3
    seed: int = 0
    batch_fraction: float = 0.5
    ref_speed: float = 2.5
    ref_bandwidth: float = 12.5

    def __post_init__(self) -> None:
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))

    def validate(self) -> "WorkloadConfig":
        """Raise :class:`ConfigurationError` on the first violated invariant."""
        if self.n_tasks <= 0:
            raise ConfigurationError("must be > 0", path="workload.n_tasks")
        if len(self.layer_widths) != len(Stage):
            raise ConfigurationError(f"needs exactly {len(Stage)} entries", path="workload.layer_widths")
        if any(w <= 0 for w in self.layer_widths):
            raise ConfigurationError("widths must be positive", path="workload.layer_widths")
        if self.n_tasks < len(Stage):
            raise ConfigurationError(f"must be >= {len(Stage)} (one task per stage)", path="workload.n_tasks")
        if not 0.0 <= self.edge_prob <= 1.0:
            raise ConfigurationError("must be in [0, 1]", path="workload.edge_prob")
        if not self.scale_factor > 0:
            raise ConfigurationError("must be > 0", path="workload.scale_factor")
        if not self.deadline_slack > 1.0:
            raise ConfigurationError("must be > 1", path="workload.deadline_slack")
        if not 0.0 <= self.stream_fraction <= 1.0:
            raise ConfigurationError("must be in [0, 1]", path="workload.stream_fraction")
        if not 0.0 <= self.batch_fraction <= 1.0:
            raise ConfigurationError("must be in [0, 1]", path="workload.batch_fraction")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("must be a 64-bit unsigned integer", path="workload.seed")
        if not (self.ref_speed > 0 and self.ref_bandwidth > 0):
            raise ConfigurationError("reference speed and bandwidth must be > 0", path="workload.ref_speed")
        return self

    def layer_sizes(self) -> List[int]:
        """Largest-remainder apportionment of ``n_tasks`` over the stage widths."""
        n_stages = len(self.layer_widths)
        spare = self.n_tasks - n_stages
        total = float(sum(self.layer_widths))
        quotas = [spare * w / total for w in self.layer_widths]
        sizes = [1 + int(math.floor(q)) for q in quotas]
        remainders = sorted(range(n_stages), key=lambda i: (-(quotas[i] - math.floor(quotas[i])), i))
        for i in remainders[: self.n_tasks - sum(sizes)]:
            sizes[i] += 1
        return sizes

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["layer_widths"] = list(self.layer_widths)
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "WorkloadConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(f"unknown key(s) {unknown}", path="workload")
        return cls(**dict(data))


@dataclass(frozen=True)
class TaskDag:
    """A workload: tasks plus (producer_id, consumer_id) dependency edges."""

    tasks: Tuple[Task, ...]
    edges: Tuple[Tuple[int, int], ...]
    scale_factor: float = 1.0
    config: Optional[WorkloadConfig] = field(default=None, compare=False)

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    @cached_property
    def _index(self) -> Dict[int, Task]:
        return {t.id: t for t in self.tasks}

    def task(self, task_id: int) -> Task:
        return self._index[task_id]

    @cached_property
    def _parents(self) -> Dict[int, Tuple[int, ...]]:
        parents: Dict[int, List[int]] = {t.id: [] for t in self.tasks}
        for producer, consumer in self.edges:
            parents.setdefault(consumer, []).append(producer)
        return {k: tuple(sorted(v)) for k, v in parents.items()}

    @cached_property
    def _children(self) -> Dict[int, Tuple[int, ...]]:
        children: Dict[int, List[int]] = {t.id: [] for t in self.tasks}
        for producer, consumer in self.edges:
            children.setdefault(producer, []).append(consumer)
        return {k: tuple(sorted(v)) for k, v in children.items()}

    def predecessors(self, task_id: int) -> Tuple[int, ...]:
        return self._parents.get(task_id, ())

    def successors(self, task_id: int) -> Tuple[int, ...]:
        return self._children.get(task_id, ())

    def out_degree(self, task_id: int) -> int:
        return len(self.successors(task_id))

    @cached_property
    def depths(self) -> Dict[int, int]:
        """Longest edge count from any root to each task."""
        depth: Dict[int, int] = {}
        for tid in topological_order(self):
            parents = self.predecessors(tid)
            depth[tid] = 1 + max(depth[p] for p in parents) if parents else 0
        return depth

    @property
    def max_depth(self) -> int:
        return max(self.depths.values(), default=0)

    @property
    def max_out_degree(self) -> int:
        return max((self.out_degree(t.id) for t in self.tasks), default=0)

    def to_networkx(self) -> nx.DiGraph:
        graph = nx.DiGraph()
        graph.add_nodes_from(t.id for t in self.tasks)
        graph.add_edges_from(self.edges)
        return graph

    def validate(self) -> "TaskDag":
        """
        Check ids, edge endpoints, stage monotonicity and acyclicity.

        Raises:
            MalformedWorkloadError: On the first violated invariant
        """
        ids = [t.id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise MalformedWorkloadError("task ids are not unique")
        for producer, consumer in self.edges:
            if producer not in self._index or consumer not in self._index:
                raise MalformedWorkloadError(f"edge ({producer}, {consumer}) references a missing task")
            if self._index[producer].stage >= self._index[consumer].stage:
                raise MalformedWorkloadError(f"edge ({producer}, {consumer}) does not go to a later stage")
        topological_order(self)
        return self

    def to_json(self) -> str:
        """Serialize with a fixed field order; identical DAGs give identical bytes."""
        document = {
            "format": DAG_FORMAT,
            "config": self.config.to_dict() if self.config is not None else None,
            "scale_factor": self.scale_factor,
            "tasks": [t.to_dict() for t in self.tasks],
            "edges": [[p, c] for p, c in self.edges],
        }
        return json.dumps(document, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "TaskDag":
        try:
            document = json.loads(text)
        except json.JSONDecodeError as exc:
            raise MalformedWorkloadError(f"invalid DAG JSON at line {exc.lineno}: {exc.msg}") from exc
        if document.get("format") != DAG_FORMAT:
            raise MalformedWorkloadError(f"expected format '{DAG_FORMAT}', got {document.get('format')!r}")
        config = WorkloadConfig.from_dict(document["config"]) if document.get("config") else None
        dag = cls(
            tasks=tuple(Task.from_dict(t) for t in document.get("tasks", [])),
            edges=tuple((int(p), int(c)) for p, c in document.get("edges", [])),
            scale_factor=float(document.get("scale_factor", 1.0)),
            config=config,
        )
        return dag.validate()


def _log_uniform(rng: np.random.Generator, bounds: Tuple[float, float], size: int) -> np.ndarray:
    low, high = bounds
    return np.exp(rng.uniform(math.log(low), math.log(high), size=size))


@dataclass(frozen=True)
class ExecutionFloor:
    """
    Shortest isolated run time a task can reach on a cluster.

    Attributes:
        nodes: ``(speed, bandwidth)`` of every node
        overhead: Coordination cost paid by every assignment
    """

    nodes: Tuple[Tuple[float, float], ...] = ((FASTEST_NODE_SPEED, FASTEST_NODE_BANDWIDTH),)
    overhead: float = 0.0

    def __post_init__(self) -> None:
        if not self.nodes:
            raise ConfigurationError("execution floor needs at least one node")
        if self.overhead < 0:
            raise ConfigurationError("coordination overhead must be >= 0")

    def time(self, work: float, input_mb: float) -> float:
        """Best compute plus read time over all nodes, plus the overhead; parents are co-located."""
        return min(work / speed + input_mb / bandwidth for speed, bandwidth in self.nodes) + self.overhead


def _deadline_window(work: float, input_mb: float, cfg: WorkloadConfig, floor: ExecutionFloor) -> float:
    nominal = work / cfg.ref_speed + input_mb / cfg.ref_bandwidth
    return max(cfg.deadline_slack * nominal, floor.time(work, input_mb))


def generate_dag(
    cfg: WorkloadConfig,
    sources: Optional[Mapping[SourceKind, SourceClass]] = None,
    floor: Optional[ExecutionFloor] = None,
) -> TaskDag:
    """
    Generate a layered ETL task DAG.

    Args:
        cfg: Generator parameters, seed included
        sources: Source classes keyed by kind (defaults to :data:`DEFAULT_SOURCES`)
        floor: Fastest run times of the target cluster, see
            :meth:`etlsched.cluster.ClusterSpec.execution_floor`. No deadline
            window is shorter than a task's floor. Defaults to the profile
            envelope without coordination overhead.

    Returns:
        A validated :class:`TaskDag`

    Raises:
        ConfigurationError: If ``cfg`` violates its invariants
    """
    cfg.validate()
    floor = floor or ExecutionFloor()
    sources = dict(sources or DEFAULT_SOURCES)
    rng = np.random.default_rng(cfg.seed)

    sizes = cfg.layer_sizes()
    layers: List[List[int]] = []
    next_id = 0
    for size in sizes:
        layers.append(list(range(next_id, next_id + size)))
        next_id += size
    n = cfg.n_tasks

    work = _log_uniform(rng, WORK_RANGE, n) * cfg.scale_factor
    input_mb = _log_uniform(rng, INPUT_MB_RANGE, n)
    priority = rng.integers(0, MAX_PRIORITY + 1, size=n)

    edges: List[Tuple[int, int]] = []
    for producers, consumers in zip(layers[:-1], layers[1:]):
        for consumer in consumers:
            picked = [p for p in producers if rng.random() < cfg.edge_prob]
            if not picked:
                picked = [producers[int(rng.integers(0, len(producers)))]]
            edges.extend((p, consumer) for p in picked)
    edges.sort()

    # Extract-stage sources and releases
    extract = layers[Stage.EXTRACT]
    is_stream = rng.random(len(extract)) < cfg.stream_fraction
    source_of: Dict[int, SourceKind] = {}
    for tid, stream in zip(extract, is_stream):
        source_of[tid] = SourceKind.SEMI_STRUCTURED_STREAM if stream else SourceKind.STRUCTURED_RELATIONAL

    n_batch = int(math.ceil(cfg.batch_fraction * len(extract)))
    order = rng.permutation(len(extract))
    batch = {extract[i] for i in order[:n_batch]}
    release: Dict[int, float] = {tid: 0.0 for tid in batch}
    for kind, source in sorted(sources.items(), key=lambda kv: kv[0].value):
        arriving = [tid for tid in extract if tid not in batch and source_of[tid] == kind]
        if not arriving:
            continue
        if source.arrival_rate > 0:
            arrivals = np.cumsum(rng.exponential(1.0 / source.arrival_rate, size=len(arriving)))
        else:
            arrivals = np.zeros(len(arriving))
        for tid, at in zip(arriving, arrivals):
            release[tid] = float(at) + source.base_latency

    parents: Dict[int, List[int]] = {}
    for producer, consumer in edges:
        parents.setdefault(consumer, []).append(producer)

    tasks: List[Task] = []
    planned_finish: Dict[int, float] = {}
    for stage, layer in zip(Stage, layers):
        for tid in layer:
            w, mb = float(work[tid]), float(input_mb[tid])
            if stage is Stage.EXTRACT:
                rel = release[tid]
            else:
                rel = max(planned_finish[p] for p in parents[tid])
                source_of[tid] = source_of[min(parents[tid])]
            task = Task(
                id=tid,
                stage=stage,
                work=w,
                input_mb=mb,
                source=source_of[tid],
                release=rel,
                deadline=rel + _deadline_window(w, mb, cfg, floor),
                priority=int(priority[tid]),
            )
            planned_finish[tid] = rel + w / cfg.ref_speed + mb / cfg.ref_bandwidth
            tasks.append(task)

    dag = TaskDag(tasks=tuple(tasks), edges=tuple(edges), scale_factor=cfg.scale_factor, config=cfg)
    return dag.validate()


def topological_order(dag: TaskDag) -> List[int]:
    """
    Dependency order of task ids, lowest id first among ready tasks.

    Raises:
        MalformedWorkloadError: If the edges contain a cycle
    """
    try:
        return list(nx.lexicographical_topological_sort(dag.to_networkx()))
    except nx.NetworkXUnfeasible as exc:
        raise MalformedWorkloadError("dependency cycle detected") from exc

