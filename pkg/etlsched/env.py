"""
The scheduling loop as a sequential decision problem.

At every decision point the environment exposes one candidate task (the ready
task that became ready first, lowest id on ties) and the agent picks one of
``N + 1`` actions: assign the candidate to node ``0..N-1`` or defer (``N``).

Observation layout (all components clamped to ``[0, 1]``, dimension ``12 + 4N``):

- 8 task features of the candidate: normalized work, normalized input size,
  depth / max depth, out degree / max out degree, priority / 4, stream-source
  flag, ready tasks / n_tasks, mean remaining slack of ready tasks
- 4 features per node: cpu utilization, memory used / capacity, staging
  bandwidth utilization, unstarted queue length / slots
- 4 data-flow features: per source class, normalized arrival rate scaled by
  the fraction of its Extract tasks still to arrive, and normalized base latency

The per-step reward combines on-time completion, latency and cost of the tasks
finalized during the transition, see :func:`compute_reward`.
"""

import copy
import time
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .cluster import ClusterSimulator, ClusterSpec, TaskOutcome, TaskStatus, estimate_exec_time
from .errors import ConfigurationError, DeadlockError, UsageError
from .log import get_logger
from .metrics import EpisodeTrace, TaskRecord
from .workload import (
    DEFAULT_SOURCES,
    INPUT_MB_RANGE,
    MAX_PRIORITY,
    WORK_RANGE,
    SourceKind,
    Task,
    TaskDag,
    WorkloadConfig,
    generate_dag,
)

logger = get_logger(__name__)

TASK_FEATURES = 8
NODE_FEATURES = 4
FLOW_FEATURES = 4

OutcomeLike = Union[TaskOutcome, Tuple[float, float, float]]


def state_dim(n_nodes: int) -> int:
    return TASK_FEATURES + NODE_FEATURES * n_nodes + FLOW_FEATURES


@dataclass(frozen=True, eq=False)
class StateVector:
    """Flat observation plus views on its three blocks."""

    values: np.ndarray
    n_nodes: int

    def __post_init__(self) -> None:
        if self.values.shape != (state_dim(self.n_nodes),):
            raise ConfigurationError(f"state has shape {self.values.shape}, expected ({state_dim(self.n_nodes)},)")

    @property
    def x_t(self) -> np.ndarray:
        return self.values[:TASK_FEATURES]

    @property
    def x_r(self) -> np.ndarray:
        return self.values[TASK_FEATURES : TASK_FEATURES + NODE_FEATURES * self.n_nodes]

    @property
    def x_d(self) -> np.ndarray:
        return self.values[-FLOW_FEATURES:]

    def node_features(self, node_id: int) -> np.ndarray:
        start = TASK_FEATURES + NODE_FEATURES * node_id
        return self.values[start : start + NODE_FEATURES]

    def __len__(self) -> int:
        return len(self.values)

    def __array__(self, dtype: Any = None, copy: Any = None) -> np.ndarray:
        return self.values if dtype is None else self.values.astype(dtype)


@dataclass(frozen=True)
class RewardWeights:
    """Weights and normalizers of the per-step reward."""

    a1: float = 1.0
    a2: float = 0.5
    a3: float = 0.5
    t_max: float = 1.0
    c_max: float = 1.0

    def __post_init__(self) -> None:
        for name in ("a1", "a2", "a3"):
            if getattr(self, name) < 0:
                raise ConfigurationError("must be >= 0", path=f"env.{name}")
        if self.a1 + self.a2 + self.a3 <= 0:
            raise ConfigurationError("a1 + a2 + a3 must be > 0", path="env.a1")
        if not (self.t_max > 0 and self.c_max > 0):
            raise ConfigurationError("normalizers must be > 0", path="env.t_max")

    @property
    def bounds(self) -> Tuple[float, float]:
        return -(self.a2 + self.a3), self.a1


def compute_reward(outcomes: Sequence[OutcomeLike], weights: RewardWeights) -> float:
    """
    Reward of a transition from the tasks it finalized.

    ``r = a1 * mean(delta) - a2 * mean(min(t / t_max, 1)) - a3 * mean(min(c / c_max, 1))``
    over the ``N`` finalized tasks, and ``0.0`` when ``N == 0``. Always inside
    ``[-(a2 + a3), a1]``.

    Args:
        outcomes: :class:`TaskOutcome` objects or ``(delta, t, c)`` tuples
        weights: Reward weights and normalizers

    Examples:
        >>> compute_reward([(1, 0.0, 0.0)], RewardWeights())
        1.0
        >>> compute_reward([], RewardWeights())
        0.0
    """
    if not outcomes:
        return 0.0
    rows = np.array(
        [(o.delta, o.latency, o.cost) if isinstance(o, TaskOutcome) else tuple(o) for o in outcomes], dtype=np.float64
    )
    deltas, latencies, costs = rows[:, 0], rows[:, 1], rows[:, 2]
    reward = (
        weights.a1 * float(np.mean(deltas))
        - weights.a2 * float(np.mean(np.minimum(latencies / weights.t_max, 1.0)))
        - weights.a3 * float(np.mean(np.minimum(costs / weights.c_max, 1.0)))
    )
    low, high = weights.bounds
    return min(max(reward, low), high)


@dataclass(frozen=True)
class EnvConfig:
    """
    The ``env`` block of a run config.

    ``t_max`` / ``c_max`` / ``horizon`` of ``None`` are derived from the
    workload at every reset.
    """

    a1: float = 1.0
    a2: float = 0.5
    a3: float = 0.5
    t_max: Optional[float] = None
    c_max: Optional[float] = None
    horizon: Optional[float] = None
    horizon_multiplier: float = 1.5
    mask_invalid: bool = False
    defer_cap: int = 16

    def validate(self) -> "EnvConfig":
        RewardWeights(self.a1, self.a2, self.a3, self.t_max or 1.0, self.c_max or 1.0)
        if self.horizon is not None and self.horizon <= 0:
            raise ConfigurationError("must be > 0", path="env.horizon")
        if self.horizon_multiplier <= 0:
            raise ConfigurationError("must be > 0", path="env.horizon_multiplier")
        if self.defer_cap < 1:
            raise ConfigurationError("must be >= 1", path="env.defer_cap")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "EnvConfig":
        unknown = sorted(set(data) - {f.name for f in fields(cls)})
        if unknown:
            raise ConfigurationError(f"unknown key(s) {unknown}", path="env")
        return cls(**dict(data)).validate()


@dataclass
class StepResult:
    next_state: StateVector
    reward: float
    terminal: bool
    info: Dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class EpisodeScale:
    """Normalizers derived from one generated workload."""

    t_max: float
    c_max: float
    horizon: float


def derive_scale(dag: TaskDag, cluster: ClusterSpec, cfg: EnvConfig, deadline_slack: float) -> EpisodeScale:
    """
    Reward normalizers and horizon for ``dag`` on ``cluster``.

    ``t_max`` is ``deadline_slack`` times the 95th percentile of isolated
    execution time on an average node, ``c_max`` the 95th percentile of task
    cost on an average node, and the horizon ``horizon_multiplier`` times a
    serial makespan estimate (last arrival plus the sum of isolated times).
    """
    mean_node = replace(
        cluster.nodes[0],
        speed=cluster.mean_speed,
        bandwidth=cluster.mean_bandwidth,
        cost_rate=cluster.mean_cost_rate,
    )
    isolated = np.array([estimate_exec_time(t, mean_node, {}, cluster) for t in dag.tasks])
    costs = np.array([t.work * mean_node.cost_rate for t in dag.tasks])
    t_max = cfg.t_max if cfg.t_max is not None else deadline_slack * float(np.percentile(isolated, 95))
    c_max = cfg.c_max if cfg.c_max is not None else float(np.percentile(costs, 95))
    last_arrival = max((t.release for t in dag.tasks if not dag.predecessors(t.id)), default=0.0)
    serial = last_arrival + float(np.sum(isolated))
    horizon = cfg.horizon if cfg.horizon is not None else cfg.horizon_multiplier * serial
    return EpisodeScale(t_max=max(t_max, 1e-9), c_max=max(c_max, 1e-9), horizon=horizon)


class SchedulingEnv:
    """
    Episodic scheduling environment.

    Args:
        workload: Generator parameters; each reset draws a fresh DAG
        cluster: Hardware the episodes run on
        config: Reward and episode settings
        record_trace: Keep simulator event traces

    Example:
        >>> env = SchedulingEnv(WorkloadConfig(n_tasks=20), build_cluster(4, seed=1))
        >>> state = env.reset(seed=7)
        >>> result = env.step(env.defer_action)
    """

    def __init__(
        self,
        workload: WorkloadConfig,
        cluster: ClusterSpec,
        config: Optional[EnvConfig] = None,
        record_trace: bool = True,
    ) -> None:
        self.workload = workload
        self.cluster = cluster
        self.config = (config or EnvConfig()).validate()
        self.record_trace = record_trace
        self.n_nodes = cluster.n_nodes
        self.state_dim = state_dim(self.n_nodes)
        self.n_actions = self.n_nodes + 1
        self.defer_action = self.n_nodes

        self._sim: Optional[ClusterSimulator] = None
        self._dag: Optional[TaskDag] = None
        self._weights: Optional[RewardWeights] = None
        self._scale: Optional[EpisodeScale] = None
        self._terminal = False
        self._consecutive_defers = 0
        self._rewards: List[float] = []
        self._started_at = 0.0
        self._extract_by_source: Dict[SourceKind, Tuple[int, ...]] = {}

        rates = [s.arrival_rate for s in DEFAULT_SOURCES.values()]
        latencies = [s.base_latency for s in DEFAULT_SOURCES.values()]
        self._max_rate = max(rates) or 1.0
        self._max_latency = max(latencies) or 1.0

    # -- episode lifecycle ---------------------------------------------------

    def reset(self, seed: Optional[int] = None, dag: Optional[TaskDag] = None) -> StateVector:
        """
        Start a new episode.

        Args:
            seed: Workload seed; defaults to the configured one
            dag: Use this workload instead of generating one

        Returns:
            The initial observation, after firing every release due at time 0
        """
        if dag is None:
            cfg = self.workload if seed is None else replace(self.workload, seed=seed)
            dag = generate_dag(cfg, floor=self.cluster.execution_floor())
        self._dag = dag
        slack = dag.config.deadline_slack if dag.config is not None else self.workload.deadline_slack
        self._scale = derive_scale(dag, self.cluster, self.config, slack)
        self._weights = RewardWeights(
            self.config.a1, self.config.a2, self.config.a3, self._scale.t_max, self._scale.c_max
        )
        self._sim = ClusterSimulator(dag, self.cluster, horizon=self._scale.horizon, record_trace=self.record_trace)
        self._terminal = False
        self._consecutive_defers = 0
        self._rewards = []
        self._started_at = time.perf_counter()
        self._extract_by_source = {}
        for task in dag.tasks:
            if not dag.predecessors(task.id):
                self._extract_by_source.setdefault(task.source, ())
                self._extract_by_source[task.source] += (task.id,)

        if self._sim.next_event_time() == 0.0:
            self._sim.advance_to_next_event()
        self._sim.drain_finalized()
        self._terminal = self._sim.done
        logger.debug(
            "reset: %d tasks, %d edges, horizon %.2f, t_max %.3f, c_max %.3f",
            dag.n_tasks,
            len(dag.edges),
            self._scale.horizon,
            self._scale.t_max,
            self._scale.c_max,
        )
        return self.observe()

    @property
    def sim(self) -> ClusterSimulator:
        if self._sim is None:
            raise UsageError("call reset() before using the environment")
        return self._sim

    @property
    def dag(self) -> TaskDag:
        if self._dag is None:
            raise UsageError("call reset() before using the environment")
        return self._dag

    @property
    def weights(self) -> RewardWeights:
        if self._weights is None:
            raise UsageError("call reset() before using the environment")
        return self._weights

    @property
    def scale(self) -> EpisodeScale:
        if self._scale is None:
            raise UsageError("call reset() before using the environment")
        return self._scale

    @property
    def terminal(self) -> bool:
        return self._terminal

    @property
    def candidate(self) -> Optional[Task]:
        return self.sim.candidate()

    def legal_actions(self) -> List[int]:
        """Nodes the candidate can be assigned to now, followed by the defer action."""
        candidate = self.sim.candidate()
        nodes = self.sim.feasible_nodes(candidate.id) if candidate is not None else []
        return nodes + [self.defer_action]

    def step(self, action: int) -> StepResult:
        """
        Apply ``action`` and run the simulation to the next point that needs a decision.

        Raises:
            UsageError: Episode already terminal, or action outside ``0..N``
        """
        if self._sim is None or self._terminal:
            raise UsageError("step() called on a terminal episode; call reset()")
        if not 0 <= int(action) <= self.defer_action:
            raise UsageError(f"action {action} outside 0..{self.defer_action}")
        action = int(action)
        sim = self._sim
        info: Dict[str, Any] = {"invalid": False, "forced_decision": False, "error": None}
        penalty = 0.0

        candidate = sim.candidate()
        if action != self.defer_action and candidate is not None and sim.can_assign(candidate.id, action):
            sim.assign(candidate.id, action)
            self._consecutive_defers = 0
            self._advance_to_decision_point()
        else:
            if action != self.defer_action:
                info["invalid"] = True
                if not self.config.mask_invalid:
                    penalty = self.weights.a2
            self._consecutive_defers += 1
            feasible = sim.feasible_nodes(candidate.id) if candidate is not None else []
            if self._consecutive_defers > self.config.defer_cap and feasible:
                assert candidate is not None
                sim.assign(candidate.id, feasible[0])
                self._consecutive_defers = 0
                info["forced_decision"] = True
                info["error"] = "defer-cap"
                logger.debug(
                    "defer cap hit at t=%.3f, task %d forced to node %d", sim.sim_time, candidate.id, feasible[0]
                )
                self._advance_to_decision_point()
            else:
                self._advance_one_event()

        outcomes = sim.drain_finalized()
        reward = compute_reward(outcomes, self.weights) - penalty
        self._terminal = sim.done
        self._rewards.append(reward)
        info["outcomes"] = outcomes
        info["sim_time"] = sim.sim_time
        return StepResult(next_state=self.observe(), reward=reward, terminal=self._terminal, info=info)

    def _advance_one_event(self) -> None:
        sim = self.sim
        if sim.done:
            return
        if sim.pending_events == 0 and sim.ready_tasks():
            return
        sim.advance_to_next_event()

    def _advance_to_decision_point(self) -> None:
        sim = self.sim
        while not sim.done and not sim.at_decision_point():
            if sim.pending_events == 0:
                raise DeadlockError(f"no decision point reachable at t={sim.sim_time}")
            sim.advance_to_next_event()

    # -- observation ---------------------------------------------------------

    def observe(self) -> StateVector:
        """Build the observation for the current simulator state."""
        sim = self.sim
        dag = self.dag
        now = sim.sim_time
        x_t = np.zeros(TASK_FEATURES)
        ready = sim.ready_tasks()
        candidate = ready[0] if ready else None
        if candidate is not None:
            x_t[0] = candidate.work / (WORK_RANGE[1] * dag.scale_factor)
            x_t[1] = candidate.input_mb / INPUT_MB_RANGE[1]
            x_t[2] = dag.depths[candidate.id] / dag.max_depth if dag.max_depth else 0.0
            x_t[3] = dag.out_degree(candidate.id) / dag.max_out_degree if dag.max_out_degree else 0.0
            x_t[4] = candidate.priority / MAX_PRIORITY
            x_t[5] = 1.0 if candidate.source is SourceKind.SEMI_STRUCTURED_STREAM else 0.0
        x_t[6] = len(ready) / dag.n_tasks
        if ready:
            slack = [(t.deadline - now) / max(t.deadline - t.release, 1e-9) for t in ready]
            x_t[7] = float(np.mean(np.clip(slack, 0.0, 1.0)))

        state = sim.cluster_state()
        x_r = np.zeros(NODE_FEATURES * self.n_nodes)
        for node, load in zip(self.cluster.nodes, state.nodes):
            base = NODE_FEATURES * node.id
            x_r[base] = load.cpu_util
            x_r[base + 1] = load.mem_used / node.mem_capacity
            x_r[base + 2] = load.bw_util
            x_r[base + 3] = load.queue_len / node.slots

        x_d = np.zeros(FLOW_FEATURES)
        for i, kind in enumerate(SourceKind):
            source = DEFAULT_SOURCES[kind]
            members = self._extract_by_source.get(kind, ())
            pending = sum(1 for tid in members if sim.runs[tid].ready_time is None)
            fraction = pending / len(members) if members else 0.0
            x_d[2 * i] = source.arrival_rate / self._max_rate * fraction
            x_d[2 * i + 1] = source.base_latency / self._max_latency

        values = np.clip(np.concatenate([x_t, x_r, x_d]), 0.0, 1.0)
        return StateVector(values=values, n_nodes=self.n_nodes)

    # -- bookkeeping ---------------------------------------------------------

    def snapshot(self) -> "SchedulingEnv":
        """Independent deep copy; stepping it leaves this environment untouched."""
        return copy.deepcopy(self)

    def episode_trace(self) -> EpisodeTrace:
        """Per-task records and per-step rewards of the current episode."""
        sim = self.sim
        records = []
        for tid in sorted(sim.runs):
            run = sim.runs[tid]
            task = self.dag.task(tid)
            if run.finish_time is not None and run.ready_time is not None:
                latency = run.finish_time - run.ready_time
            elif run.status is TaskStatus.UNFINISHED:
                anchor = run.ready_time if run.ready_time is not None else task.release
                latency = max(0.0, sim.horizon - anchor)
            else:
                latency = 0.0
            records.append(
                TaskRecord(
                    task_id=tid,
                    release=task.release,
                    ready=run.ready_time,
                    start=run.start_time if run.start_time is not None and run.start_time <= sim.sim_time else None,
                    finish=run.finish_time,
                    delta=1 if run.status is TaskStatus.COMPLETED else 0,
                    latency=latency,
                    cost=run.cost if run.finish_time is not None else 0.0,
                    node=run.node,
                    status=run.status.value if run.status.terminal else "unfinished",
                )
            )
        return EpisodeTrace(
            records=tuple(records),
            rewards=tuple(self._rewards),
            horizon=sim.horizon,
            end_time=sim.sim_time,
            c_max=self.scale.c_max,
            wall_clock_s=time.perf_counter() - self._started_at,
        )

    def dump_trace(self, path: str) -> None:
        self.sim.dump_trace(path)

