"""
Discrete-event simulation of a heterogeneous ETL cluster.

Nodes differ in compute speed, storage bandwidth, slot count and cost. A task
placed on a node goes through three phases:

1. allocation coordination, performed by a single cluster coordinator one
   assignment at a time and costing ``coord_base + coord_per_node * N``;
2. data staging: reading its own input plus pulling every parent output that
   lives on another node (ends with a ``TransferFinish`` event);
3. compute (ends with a ``TaskFinish`` event).

Events fire in ``(time, seq)`` order where ``seq`` is a global insertion
counter, so reruns with the same action sequence produce the same trace.
"""

import copy
import heapq
import json
import math
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from typing import Any, Callable, Dict, List, Mapping, Optional, Set, Tuple

import numpy as np

from .errors import AssignmentRejected, ConfigurationError, DeadlockError
from .log import get_logger
from .workload import FASTEST_NODE_BANDWIDTH, FASTEST_NODE_SPEED, ExecutionFloor, Task, TaskDag

logger = get_logger(__name__)

DEFAULT_PROFILE = "default-hetero-v1"

# Window (sim-seconds) over which in-flight staging traffic is compared to node bandwidth.
BANDWIDTH_WINDOW = 10.0


@dataclass(frozen=True)
class NodeSpec:
    """Static description of one cluster node."""

    id: int
    speed: float
    bandwidth: float
    mem_capacity: float
    slots: int
    cost_rate: float

    def __post_init__(self) -> None:
        if not (self.speed > 0 and self.bandwidth > 0 and self.mem_capacity > 0):
            raise ConfigurationError("speed, bandwidth and mem_capacity must be > 0", path=f"cluster.nodes[{self.id}]")
        if self.slots < 1:
            raise ConfigurationError("slots must be >= 1", path=f"cluster.nodes[{self.id}]")
        if self.cost_rate < 0:
            raise ConfigurationError("cost_rate must be >= 0", path=f"cluster.nodes[{self.id}]")


@dataclass(frozen=True)
class ClusterSpec:
    """Nodes plus the coordination overhead model."""

    nodes: Tuple[NodeSpec, ...]
    coord_base: float = 0.05
    coord_per_node: float = 0.02

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(self.nodes))
        if not self.nodes:
            raise ConfigurationError("cluster needs at least one node", path="cluster.nodes")
        if [n.id for n in self.nodes] != list(range(len(self.nodes))):
            raise ConfigurationError("node ids must be dense 0..N-1", path="cluster.nodes")
        if self.coord_base < 0 or self.coord_per_node < 0:
            raise ConfigurationError("coordination terms must be >= 0", path="cluster.coord_base")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def coordination_overhead(self) -> float:
        return self.coord_base + self.coord_per_node * self.n_nodes

    def execution_floor(self) -> ExecutionFloor:
        """Per-node speeds and bandwidths plus the coordination overhead, for deadline generation."""
        return ExecutionFloor(
            nodes=tuple((n.speed, n.bandwidth) for n in self.nodes), overhead=self.coordination_overhead()
        )

    @property
    def mean_speed(self) -> float:
        return float(np.mean([n.speed for n in self.nodes]))

    @property
    def mean_bandwidth(self) -> float:
        return float(np.mean([n.bandwidth for n in self.nodes]))

    @property
    def mean_cost_rate(self) -> float:
        return float(np.mean([n.cost_rate for n in self.nodes]))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "coord_base": self.coord_base,
            "coord_per_node": self.coord_per_node,
            "nodes": [asdict(n) for n in self.nodes],
        }


@dataclass(frozen=True)
class HardwareProfile:
    """Distribution nodes are drawn from."""

    speed_range: Tuple[float, float]
    bandwidth_range: Tuple[float, float]
    slot_choices: Tuple[int, ...]
    mem_per_slot: float
    cost_base: float
    cost_per_speed: float


PROFILES: Dict[str, HardwareProfile] = {
    DEFAULT_PROFILE: HardwareProfile(
        speed_range=(1.0, FASTEST_NODE_SPEED),
        bandwidth_range=(5.0, FASTEST_NODE_BANDWIDTH),
        slot_choices=(1, 2, 4),
        mem_per_slot=128.0,
        cost_base=0.5,
        cost_per_speed=0.25,
    ),
}


@dataclass(frozen=True)
class ClusterConfig:
    """The ``cluster`` block of a run config."""

    profile: str = DEFAULT_PROFILE
    n_nodes: int = 8
    coord_base: float = 0.05
    coord_per_node: float = 0.02

    def validate(self) -> "ClusterConfig":
        if self.profile not in PROFILES:
            raise ConfigurationError(f"unknown profile, expected one of {sorted(PROFILES)}", path="cluster.profile")
        if self.n_nodes < 1:
            raise ConfigurationError("must be >= 1", path="cluster.n_nodes")
        for name in ("coord_base", "coord_per_node"):
            if getattr(self, name) < 0:
                raise ConfigurationError("must be >= 0", path=f"cluster.{name}")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ClusterConfig":
        unknown = sorted(set(data) - {f.name for f in fields(cls)})
        if unknown:
            raise ConfigurationError(f"unknown key(s) {unknown}", path="cluster")
        return cls(**dict(data)).validate()


def build_cluster(
    n_nodes: int,
    seed: int,
    profile: str = DEFAULT_PROFILE,
    coord_base: float = 0.05,
    coord_per_node: float = 0.02,
) -> ClusterSpec:
    """
    Draw a heterogeneous cluster from a named hardware profile.

    Args:
        n_nodes: Number of nodes N
        seed: Seed of the node draw
        profile: Registered profile name
        coord_base: Fixed part of the per-assignment coordination overhead
        coord_per_node: Per-node part of the coordination overhead

    Returns:
        A :class:`ClusterSpec` with dense node ids
    """
    if profile not in PROFILES:
        raise ConfigurationError(f"unknown profile '{profile}'", path="cluster.profile")
    if n_nodes < 1:
        raise ConfigurationError("must be >= 1", path="cluster.n_nodes")
    spec = PROFILES[profile]
    rng = np.random.default_rng(seed)
    speeds = rng.uniform(*spec.speed_range, size=n_nodes)
    bandwidths = rng.uniform(*spec.bandwidth_range, size=n_nodes)
    slots = rng.choice(np.asarray(spec.slot_choices), size=n_nodes)
    nodes = tuple(
        NodeSpec(
            id=i,
            speed=float(speeds[i]),
            bandwidth=float(bandwidths[i]),
            mem_capacity=spec.mem_per_slot * int(slots[i]),
            slots=int(slots[i]),
            cost_rate=spec.cost_base + spec.cost_per_speed * float(speeds[i]),
        )
        for i in range(n_nodes)
    )
    return ClusterSpec(nodes=nodes, coord_base=coord_base, coord_per_node=coord_per_node)


def cluster_from_config(cfg: ClusterConfig, seed: int) -> ClusterSpec:
    return build_cluster(cfg.n_nodes, seed, cfg.profile, cfg.coord_base, cfg.coord_per_node)


def _transfer_time(parent_locations: Mapping[Task, int], node: NodeSpec, cluster: ClusterSpec) -> float:
    total = 0.0
    for parent, location in sorted(parent_locations.items(), key=lambda kv: kv[0].id):
        if location != node.id:
            source = cluster.nodes[location]
            total += parent.output_mb / min(source.bandwidth, node.bandwidth)
    return total


def estimate_exec_time(
    task: Task, node: NodeSpec, parent_locations: Mapping[Task, int], cluster: ClusterSpec
) -> float:
    """
    Time from assignment to finish of ``task`` on ``node`` with an idle coordinator.

    Sum of compute (``work / speed``), input read (``input_mb / bandwidth``),
    cross-node transfer of every parent output not already on ``node``, and the
    coordination overhead ``coord_base + coord_per_node * N``.
    """
    return (
        task.work / node.speed
        + task.input_mb / node.bandwidth
        + _transfer_time(parent_locations, node, cluster)
        + cluster.coordination_overhead()
    )


class EventKind(str, Enum):
    TASK_RELEASE = "TaskRelease"
    TASK_FINISH = "TaskFinish"
    TRANSFER_FINISH = "TransferFinish"


@dataclass(frozen=True, order=True)
class SimEvent:
    time: float
    seq: int
    kind: EventKind = field(compare=False)
    task_id: int = field(compare=False)
    node_id: Optional[int] = field(default=None, compare=False)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "time": self.time,
            "seq": self.seq,
            "kind": self.kind.value,
            "payload": {"task": self.task_id, "node": self.node_id},
        }


class TaskStatus(str, Enum):
    PENDING = "pending"
    READY = "ready"
    RUNNING = "running"
    COMPLETED = "completed"
    MISSED = "missed"
    UNFINISHED = "unfinished"

    @property
    def terminal(self) -> bool:
        return self in (TaskStatus.COMPLETED, TaskStatus.MISSED, TaskStatus.UNFINISHED)


@dataclass
class TaskRun:
    """Mutable runtime record of one task."""

    status: TaskStatus = TaskStatus.PENDING
    ready_time: Optional[float] = None
    assign_time: Optional[float] = None
    start_time: Optional[float] = None
    staging_done: Optional[float] = None
    finish_time: Optional[float] = None
    node: Optional[int] = None
    staging_mb: float = 0.0
    cost: float = 0.0


@dataclass(frozen=True)
class TaskOutcome:
    """Per-task result fed to the reward: success flag, latency and cost."""

    task_id: int
    delta: int
    latency: float
    cost: float
    status: TaskStatus


@dataclass(frozen=True)
class NodeLoad:
    busy_slots: int
    cpu_util: float
    mem_used: float
    bw_util: float
    queue_len: int


@dataclass(frozen=True)
class ClusterState:
    """Point-in-time view of node utilization."""

    sim_time: float
    nodes: Tuple[NodeLoad, ...]


class ClusterSimulator:
    """
    Event-driven executor for one episode.

    Args:
        dag: Workload to execute
        cluster: Hardware the workload runs on
        horizon: Simulated-time cap; tasks not finished by then end as unfinished
        record_trace: Keep every fired event for :meth:`dump_trace`
    """

    def __init__(self, dag: TaskDag, cluster: ClusterSpec, horizon: float = math.inf, record_trace: bool = True):
        self.dag = dag
        self.cluster = cluster
        self.horizon = horizon
        self.record_trace = record_trace
        self.sim_time = 0.0
        self.horizon_reached = False
        self.trace: List[Dict[str, Any]] = []

        self._events: List[SimEvent] = []
        self._seq = 0
        self._coordinator_free_at = 0.0
        self._busy = [0] * cluster.n_nodes
        self._mem_used = [0.0] * cluster.n_nodes
        self._running: List[Set[int]] = [set() for _ in range(cluster.n_nodes)]
        self._ready: Set[int] = set()
        self._finalized: List[TaskOutcome] = []
        self.runs: Dict[int, TaskRun] = {t.id: TaskRun() for t in dag.tasks}
        self._parents_left = {t.id: len(dag.predecessors(t.id)) for t in dag.tasks}

        for task in dag.tasks:
            if self._parents_left[task.id] == 0:
                self._push(task.release, EventKind.TASK_RELEASE, task.id)

    # -- event queue ---------------------------------------------------------

    def _push(self, time: float, kind: EventKind, task_id: int, node_id: Optional[int] = None) -> SimEvent:
        event = SimEvent(time=time, seq=self._seq, kind=kind, task_id=task_id, node_id=node_id)
        self._seq += 1
        heapq.heappush(self._events, event)
        return event

    def next_event_time(self) -> Optional[float]:
        return self._events[0].time if self._events else None

    @property
    def pending_events(self) -> int:
        return len(self._events)

    # -- queries -------------------------------------------------------------

    @property
    def done(self) -> bool:
        return self.horizon_reached or all(run.status.terminal for run in self.runs.values())

    def ready_tasks(self) -> List[Task]:
        """Ready tasks, earliest ready time first, id tie-break."""
        ready = sorted(self._ready, key=lambda tid: (self.runs[tid].ready_time, tid))
        return [self.dag.task(tid) for tid in ready]

    def candidate(self) -> Optional[Task]:
        if not self._ready:
            return None
        tid = min(self._ready, key=lambda t: (self.runs[t].ready_time, t))
        return self.dag.task(tid)

    def can_assign(self, task_id: int, node_id: int) -> bool:
        if task_id not in self._ready or not 0 <= node_id < self.cluster.n_nodes:
            return False
        node = self.cluster.nodes[node_id]
        fits = node.mem_capacity - self._mem_used[node_id] >= self.dag.task(task_id).input_mb
        return self._busy[node_id] < node.slots and fits

    def feasible_nodes(self, task_id: int) -> List[int]:
        return [n.id for n in self.cluster.nodes if self.can_assign(task_id, n.id)]

    def at_decision_point(self) -> bool:
        """A ready task exists and some node could take it."""
        candidate = self.candidate()
        return candidate is not None and bool(self.feasible_nodes(candidate.id))

    def parent_locations(self, task: Task) -> Dict[Task, int]:
        locations: Dict[Task, int] = {}
        for pid in self.dag.predecessors(task.id):
            node = self.runs[pid].node
            if node is not None:
                locations[self.dag.task(pid)] = node
        return locations

    def coordinator_wait(self) -> float:
        return max(0.0, self._coordinator_free_at - self.sim_time)

    def estimated_finish(self, task: Task, node_id: int) -> float:
        """Absolute finish time if ``task`` were assigned to ``node_id`` now."""
        node = self.cluster.nodes[node_id]
        return self.sim_time + self.coordinator_wait() + estimate_exec_time(
            task, node, self.parent_locations(task), self.cluster
        )

    def cluster_state(self) -> ClusterState:
        loads = []
        for node in self.cluster.nodes:
            in_flight = 0.0
            waiting = 0
            for tid in self._running[node.id]:
                run = self.runs[tid]
                if run.start_time is not None and run.start_time > self.sim_time:
                    waiting += 1
                elif run.staging_done is not None and self.sim_time < run.staging_done:
                    in_flight += run.staging_mb
            loads.append(
                NodeLoad(
                    busy_slots=self._busy[node.id],
                    cpu_util=self._busy[node.id] / node.slots,
                    mem_used=self._mem_used[node.id],
                    bw_util=min(1.0, in_flight / (node.bandwidth * BANDWIDTH_WINDOW)),
                    queue_len=waiting,
                )
            )
        return ClusterState(sim_time=self.sim_time, nodes=tuple(loads))

    # -- transitions ---------------------------------------------------------

    def assign(self, task_id: int, node_id: int) -> SimEvent:
        """
        Place a ready task on a node and schedule its finish.

        Returns:
            The scheduled ``TaskFinish`` event

        Raises:
            AssignmentRejected: Task not ready, node full, or not enough memory
        """
        if task_id not in self._ready:
            raise AssignmentRejected(f"task {task_id} is not ready")
        if not 0 <= node_id < self.cluster.n_nodes:
            raise AssignmentRejected(f"node {node_id} does not exist")
        node = self.cluster.nodes[node_id]
        task = self.dag.task(task_id)
        if self._busy[node_id] >= node.slots:
            raise AssignmentRejected(f"node {node_id} has no free slot")
        if node.mem_capacity - self._mem_used[node_id] < task.input_mb:
            raise AssignmentRejected(f"node {node_id} lacks memory for task {task_id}")

        dispatch = max(self.sim_time, self._coordinator_free_at)
        start = dispatch + self.cluster.coordination_overhead()
        self._coordinator_free_at = start

        parents = self.parent_locations(task)
        staging = task.input_mb / node.bandwidth + _transfer_time(parents, node, self.cluster)
        staging_mb = task.input_mb + sum(p.output_mb for p, loc in parents.items() if loc != node_id)
        finish = start + staging + task.work / node.speed

        run = self.runs[task_id]
        run.status = TaskStatus.RUNNING
        run.assign_time = self.sim_time
        run.start_time = start
        run.staging_done = start + staging
        run.node = node_id
        run.staging_mb = staging_mb
        run.cost = task.work * node.cost_rate

        self._ready.discard(task_id)
        self._busy[node_id] += 1
        self._mem_used[node_id] += task.input_mb
        self._running[node_id].add(task_id)

        if staging > 0:
            self._push(start + staging, EventKind.TRANSFER_FINISH, task_id, node_id)
        return self._push(finish, EventKind.TASK_FINISH, task_id, node_id)

    def advance_to_next_event(self) -> List[SimEvent]:
        """
        Jump to the next event time and fire every event due then.

        Returns:
            Fired events in ``(time, seq)`` order; empty when nothing was due or
            the horizon cut the episode

        Raises:
            DeadlockError: No events, no ready tasks, but unfinished tasks remain
        """
        if not self._events:
            if not self._ready and not self.done:
                raise DeadlockError(
                    f"no pending events at t={self.sim_time} with "
                    f"{sum(not r.status.terminal for r in self.runs.values())} unfinished tasks"
                )
            return []

        next_time = self._events[0].time
        if next_time > self.horizon:
            self._cut_at_horizon()
            return []

        self.sim_time = next_time
        fired: List[SimEvent] = []
        while self._events and self._events[0].time == next_time:
            event = heapq.heappop(self._events)
            self._fire(event)
            fired.append(event)
        return fired

    def _fire(self, event: SimEvent) -> None:
        if self.record_trace:
            self.trace.append(event.to_dict())
        if event.kind is EventKind.TASK_RELEASE:
            self._release(event.task_id)
        elif event.kind is EventKind.TASK_FINISH:
            self._finish(event.task_id, event.node_id)

    def _release(self, task_id: int) -> None:
        run = self.runs[task_id]
        run.status = TaskStatus.READY
        run.ready_time = self.sim_time
        self._ready.add(task_id)

    def _finish(self, task_id: int, node_id: Optional[int]) -> None:
        assert node_id is not None
        task = self.dag.task(task_id)
        run = self.runs[task_id]
        run.finish_time = self.sim_time
        delta = 1 if run.finish_time <= task.deadline else 0
        run.status = TaskStatus.COMPLETED if delta else TaskStatus.MISSED
        self._busy[node_id] -= 1
        self._mem_used[node_id] -= task.input_mb
        self._running[node_id].discard(task_id)
        assert run.ready_time is not None
        self._finalized.append(
            TaskOutcome(task_id, delta, run.finish_time - run.ready_time, run.cost, run.status)
        )
        for child in self.dag.successors(task_id):
            self._parents_left[child] -= 1
            if self._parents_left[child] == 0:
                self._release(child)

    def _cut_at_horizon(self) -> None:
        self.sim_time = self.horizon
        self.horizon_reached = True
        for tid in sorted(self.runs):
            run = self.runs[tid]
            if run.status.terminal:
                continue
            anchor = run.ready_time if run.ready_time is not None else self.dag.task(tid).release
            run.status = TaskStatus.UNFINISHED
            self._finalized.append(TaskOutcome(tid, 0, max(0.0, self.horizon - anchor), 0.0, TaskStatus.UNFINISHED))
        self._ready.clear()
        self._events.clear()
        logger.debug("horizon %.3f reached, %d tasks unfinished", self.horizon, self.status_counts()["unfinished"])

    def drain_finalized(self) -> List[TaskOutcome]:
        """Outcomes of tasks finalized since the previous call."""
        out, self._finalized = self._finalized, []
        return out

    def status_counts(self) -> Dict[str, int]:
        counts = {s.value: 0 for s in TaskStatus}
        for run in self.runs.values():
            counts[run.status.value] += 1
        return counts

    def run_to_completion(self, policy: Callable[["ClusterSimulator", Task], Optional[int]]) -> None:
        """
        Drive the simulator without the MDP layer.

        ``policy(sim, candidate)`` returns a node id or ``None`` to wait for the
        next event.
        """
        while not self.done:
            candidate = self.candidate()
            if candidate is not None and self.feasible_nodes(candidate.id):
                node = policy(self, candidate)
                if node is not None:
                    self.assign(candidate.id, node)
                    continue
            if not self._events and self._ready:
                raise DeadlockError("policy keeps waiting with no pending events")
            self.advance_to_next_event()

    def snapshot(self) -> "ClusterSimulator":
        return copy.deepcopy(self)

    def dump_trace(self, path: str) -> None:
        """Write the fired events as JSON Lines."""
        with open(path, mode="w", encoding="utf-8") as f:
            for record in self.trace:
                f.write(json.dumps(record) + "\n")
