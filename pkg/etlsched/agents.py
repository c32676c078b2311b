"""
Scheduling agents.

Key features:
    - DQNAgent: experience replay, frozen target network with hard sync,
      epsilon-greedy exploration and an optional Double-DQN bootstrap
    - TabularQAgent: Q-learning over a 729-state discretization of the
      observation (or the state index of a toy MDP)
    - HeuristicAgent: Random, RoundRobin and LeastLoaded dispatchers

Every agent implements ``act(env, state, greedy)`` and
``observe(transition)``, so one episode loop drives all of them, see
:func:`etlsched.experiments.run_episode`.

Usage:
    >>> agent = make_agent("dqn", env, AgentConfig(), seed=7)
    >>> action = agent.act(env, state)
    >>> loss = agent.observe(Transition(state, action, reward, next_state, terminal))
"""

from dataclasses import asdict, dataclass, fields, replace
from enum import Enum
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, NumericError, UsageError
from .log import get_logger
from .neuralnet import Adam, QNetwork

logger = get_logger(__name__)

AGENT_FORMAT = "agent-v1"
QTABLE_FORMAT = "qtable-v1"
AGENT_NAMES = ("dqn", "ddqn", "qtable", "random", "roundrobin", "leastloaded")

TABULAR_BUCKETS = 3
TABULAR_FEATURES = 6
TABULAR_STATES = TABULAR_BUCKETS**TABULAR_FEATURES


@dataclass(frozen=True)
class Transition:
    """One ``(s, a, r, s', terminal)`` sample."""

    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool

    def __post_init__(self) -> None:
        if not np.isfinite(self.reward):
            raise NumericError("non-finite reward", {"action": self.action})


@dataclass(frozen=True)
class TransitionBatch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray

    def __len__(self) -> int:
        return int(self.actions.shape[0])

    @classmethod
    def from_transitions(cls, transitions: Sequence[Transition]) -> "TransitionBatch":
        if not transitions:
            raise UsageError("empty transition batch")
        return cls(
            states=np.array([np.asarray(t.state, dtype=np.float64) for t in transitions]),
            actions=np.array([t.action for t in transitions], dtype=np.int64),
            rewards=np.array([t.reward for t in transitions], dtype=np.float64),
            next_states=np.array([np.asarray(t.next_state, dtype=np.float64) for t in transitions]),
            terminals=np.array([t.terminal for t in transitions], dtype=bool),
        )


class ReplayBuffer:
    """
    Fixed-capacity FIFO ring of transitions.

    Storage is allocated on the first insert, when the state dimension is
    known. Once full, each insert overwrites the oldest transition.

    Args:
        capacity: Maximum number of stored transitions
    """

    def __init__(self, capacity: int) -> None:
        if capacity < 1:
            raise ConfigurationError("must be >= 1", path="agent.buffer_capacity")
        self.capacity = capacity
        self.inserted = 0
        self._states: Optional[np.ndarray] = None
        self._next_states: Optional[np.ndarray] = None
        self._actions = np.zeros(capacity, dtype=np.int64)
        self._rewards = np.zeros(capacity, dtype=np.float64)
        self._terminals = np.zeros(capacity, dtype=bool)

    def __len__(self) -> int:
        return min(self.inserted, self.capacity)

    def add(self, transition: Transition) -> None:
        state = np.asarray(transition.state, dtype=np.float64)
        if self._states is None:
            self._states = np.zeros((self.capacity, state.shape[0]))
            self._next_states = np.zeros((self.capacity, state.shape[0]))
        assert self._next_states is not None
        slot = self.inserted % self.capacity
        self._states[slot] = state
        self._next_states[slot] = np.asarray(transition.next_state, dtype=np.float64)
        self._actions[slot] = transition.action
        self._rewards[slot] = transition.reward
        self._terminals[slot] = transition.terminal
        self.inserted += 1

    def _batch(self, idx: np.ndarray) -> TransitionBatch:
        assert self._states is not None and self._next_states is not None
        return TransitionBatch(
            states=self._states[idx],
            actions=self._actions[idx],
            rewards=self._rewards[idx],
            next_states=self._next_states[idx],
            terminals=self._terminals[idx],
        )

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform storage slots, drawn with replacement."""
        if len(self) == 0:
            raise UsageError("cannot sample from an empty replay buffer")
        return rng.integers(0, len(self), size=batch_size)

    def sample(self, batch_size: int, rng: np.random.Generator) -> TransitionBatch:
        return self._batch(self.sample_indices(batch_size, rng))

    def contents(self) -> List[Transition]:
        """Stored transitions, oldest first."""
        if len(self) == 0:
            return []
        start = self.inserted % self.capacity if self.inserted > self.capacity else 0
        order = [(start + i) % self.capacity for i in range(len(self))]
        batch = self._batch(np.array(order))
        return [
            Transition(
                state=batch.states[i],
                action=int(batch.actions[i]),
                reward=float(batch.rewards[i]),
                next_state=batch.next_states[i],
                terminal=bool(batch.terminals[i]),
            )
            for i in range(len(order))
        ]


@dataclass(frozen=True)
class AgentConfig:
    """The ``agent`` block of a run config."""

    gamma: float = 0.93
    lr: float = 5e-4
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 20000
    batch_size: int = 64
    target_sync_interval: int = 500
    buffer_capacity: int = 50000
    warmup_transitions: int = 1000
    double_dqn: bool = False
    hidden: Tuple[int, int] = (64, 32)
    embedding: str = "sigmoid"
    tabular_alpha: float = 0.1

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def validate(self) -> "AgentConfig":
        if not 0.0 < self.gamma < 1.0:
            raise ConfigurationError(f"{self.gamma} outside (0, 1)", path="agent.gamma")
        if not self.lr > 0:
            raise ConfigurationError("must be > 0", path="agent.lr")
        for name in ("epsilon_start", "epsilon_end"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigurationError("outside [0, 1]", path=f"agent.{name}")
        if self.epsilon_end > self.epsilon_start:
            raise ConfigurationError("must not exceed epsilon_start", path="agent.epsilon_end")
        for name in ("batch_size", "target_sync_interval", "buffer_capacity"):
            if getattr(self, name) < 1:
                raise ConfigurationError("must be >= 1", path=f"agent.{name}")
        for name in ("epsilon_decay_steps", "warmup_transitions"):
            if getattr(self, name) < 0:
                raise ConfigurationError("must be >= 0", path=f"agent.{name}")
        if not 0.0 <= self.tabular_alpha <= 1.0:
            raise ConfigurationError("outside [0, 1]", path="agent.tabular_alpha")
        return self

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["hidden"] = list(self.hidden)
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "AgentConfig":
        unknown = sorted(set(data) - {f.name for f in fields(cls)})
        if unknown:
            raise ConfigurationError(f"unknown key(s) {unknown}", path="agent")
        return cls(**dict(data)).validate()


@dataclass(frozen=True)
class EpsilonSchedule:
    """Linear decay from ``start`` to ``end`` over ``decay_steps`` environment steps, then constant."""

    start: float
    end: float
    decay_steps: int

    def value(self, step: int) -> float:
        if self.decay_steps <= 0 or step >= self.decay_steps:
            return self.end
        return self.start + (self.end - self.start) * (step / self.decay_steps)


def select_action(
    q: np.ndarray,
    epsilon: float,
    rng: np.random.Generator,
    legal: Optional[Sequence[int]] = None,
) -> int:
    """
    Epsilon-greedy choice restricted to ``legal`` actions.

    With probability ``epsilon`` a uniformly random legal action, otherwise
    the legal action with the highest Q value (lowest index on ties).

    Examples:
        >>> select_action(np.array([1.0, 3.0, 2.0]), 0.0, np.random.default_rng(0))
        1
        >>> select_action(np.array([2.0, 2.0, 0.0]), 0.0, np.random.default_rng(0))
        0
    """
    if not 0.0 <= epsilon <= 1.0:
        raise UsageError(f"epsilon {epsilon} outside [0, 1]")
    actions = list(range(len(q))) if legal is None else list(legal)
    if not actions:
        raise UsageError("no legal action")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(actions[int(rng.integers(len(actions)))])
    masked = np.full(len(q), -np.inf)
    masked[actions] = np.asarray(q, dtype=np.float64)[actions]
    return int(np.argmax(masked))


def td_targets(
    batch: TransitionBatch,
    target_net: QNetwork,
    online_net: QNetwork,
    gamma: float,
    double_dqn: bool = False,
) -> np.ndarray:
    """
    Bootstrapped regression targets.

    ``y = r`` for terminal transitions; otherwise ``r + gamma * max_a Q_target(s', a)``,
    or with ``double_dqn`` ``r + gamma * Q_target(s', argmax_a Q_online(s', a))``.
    """
    if len(batch) == 0:
        raise UsageError("empty transition batch")
    q_target = target_net.q_values(batch.next_states)
    if double_dqn:
        chosen = np.argmax(online_net.q_values(batch.next_states), axis=1)
        bootstrap = q_target[np.arange(len(batch)), chosen]
    else:
        bootstrap = np.max(q_target, axis=1)
    return np.where(batch.terminals, batch.rewards, batch.rewards + gamma * bootstrap)


class Agent:
    """Common surface of learning and non-learning agents."""

    name = "agent"
    learns = False

    @property
    def epsilon(self) -> float:
        return 0.0

    def act(self, env: Any, state: Any, greedy: bool = False) -> int:
        raise NotImplementedError

    def observe(self, transition: Transition) -> Optional[float]:
        """Learn from one transition; returns the training loss when a gradient step ran."""
        return None

    def end_episode(self) -> None:
        pass

    def checkpoint(self) -> Dict[str, Any]:
        return {"format": "heuristic-v1", "agent": self.name}


class DQNAgent(Agent):
    """
    Deep Q-learning agent.

    The online network is trained on uniform minibatches from the replay
    buffer once it holds ``warmup_transitions`` samples. Every
    ``target_sync_interval`` gradient steps the target network becomes an
    exact copy of the online network.

    Args:
        state_dim: Observation dimension
        n_actions: Size of the action space
        config: Hyperparameters
        seed: Seeds network initialization, exploration and minibatch sampling
    """

    learns = True

    def __init__(self, state_dim: int, n_actions: int, config: Optional[AgentConfig] = None, seed: int = 0) -> None:
        self.config = (config or AgentConfig()).validate()
        self.name = "ddqn" if self.config.double_dqn else "dqn"
        self.state_dim = state_dim
        self.n_actions = n_actions
        self.rng = np.random.default_rng(seed)
        self.online = QNetwork.initialize(
            state_dim, n_actions, self.rng, hidden=self.config.hidden, embedding=self.config.embedding
        )
        self.target = self.online.copy()
        self.optimizer = Adam(self.config.lr)
        self.buffer = ReplayBuffer(self.config.buffer_capacity)
        self.schedule = EpsilonSchedule(
            self.config.epsilon_start, self.config.epsilon_end, self.config.epsilon_decay_steps
        )
        self.env_steps = 0
        self.grad_steps = 0
        self.episodes = 0

    @property
    def epsilon(self) -> float:
        return self.schedule.value(self.env_steps)

    def act(self, env: Any, state: Any, greedy: bool = False) -> int:
        q = self.online.q_values(np.asarray(state, dtype=np.float64))
        return select_action(q, 0.0 if greedy else self.epsilon, self.rng, env.legal_actions())

    def observe(self, transition: Transition) -> Optional[float]:
        self.buffer.add(transition)
        self.env_steps += 1
        if len(self.buffer) < max(1, self.config.warmup_transitions):
            return None
        return self.train_batch(self.buffer.sample(self.config.batch_size, self.rng))

    train_step = observe

    def train_batch(self, batch: TransitionBatch) -> float:
        """One gradient step on ``batch``, followed by a target sync when due."""
        try:
            targets = td_targets(batch, self.target, self.online, self.config.gamma, self.config.double_dqn)
            grads, loss = self.online.backward(batch.states, batch.actions, targets)
            self.optimizer.step(self.online.parameters(), grads)
        except NumericError as exc:
            diagnostics = {**exc.diagnostics, "grad_step": self.grad_steps, "env_step": self.env_steps}
            raise NumericError("training diverged", diagnostics) from exc
        self.grad_steps += 1
        if self.grad_steps % self.config.target_sync_interval == 0:
            self.sync_target()
        return loss

    def sync_target(self) -> None:
        self.target.copy_from(self.online)
        logger.debug("target network synced at gradient step %d", self.grad_steps)

    def end_episode(self) -> None:
        self.episodes += 1

    def checkpoint(self) -> Dict[str, Any]:
        return {
            "format": AGENT_FORMAT,
            "agent": self.name,
            "config": self.config.to_dict(),
            "online": self.online.to_dict(),
            "target": self.target.to_dict(),
            "counters": {
                "env_steps": self.env_steps,
                "grad_steps": self.grad_steps,
                "episodes": self.episodes,
                "epsilon": self.epsilon,
            },
        }

    @classmethod
    def from_checkpoint(cls, data: Mapping[str, Any], seed: int = 0) -> "DQNAgent":
        """Rebuild an agent from :meth:`checkpoint` output; the replay buffer starts empty."""
        if data.get("format") != AGENT_FORMAT:
            raise ConfigurationError(f"not an {AGENT_FORMAT} checkpoint (format={data.get('format')!r})")
        config = AgentConfig.from_dict(data["config"])
        online = QNetwork.from_dict(data["online"])
        agent = cls(online.input_dim, online.n_actions, config, seed)
        agent.online = online
        agent.target = QNetwork.from_dict(data["target"])
        counters = data.get("counters", {})
        agent.env_steps = int(counters.get("env_steps", 0))
        agent.grad_steps = int(counters.get("grad_steps", 0))
        agent.episodes = int(counters.get("episodes", 0))
        return agent


def _bucket(value: float) -> int:
    return min(int(max(value, 0.0) * TABULAR_BUCKETS), TABULAR_BUCKETS - 1)


def discretize_state(state: Any, n_nodes: int) -> int:
    """
    Map an observation to one of 729 table rows.

    Six features, each cut into three equal-width buckets over ``[0, 1]``:
    candidate work, mean remaining slack of ready tasks, ready fraction, mean
    and minimum node cpu utilization, mean node queue length.
    """
    values = np.asarray(state, dtype=np.float64)
    nodes = values[8 : 8 + 4 * n_nodes].reshape(n_nodes, 4)
    features = (
        values[0],
        values[7],
        values[6],
        float(np.mean(nodes[:, 0])),
        float(np.min(nodes[:, 0])),
        float(np.mean(nodes[:, 3])),
    )
    index = 0
    for feature in features:
        index = index * TABULAR_BUCKETS + _bucket(feature)
    return index


def one_hot_index(state: Any) -> int:
    return int(np.argmax(np.asarray(state)))


def tabular_q_update(
    table: np.ndarray,
    state: int,
    action: int,
    reward: float,
    next_state: int,
    alpha: float,
    gamma: float,
    terminal: bool = False,
) -> np.ndarray:
    """
    One Q-learning update, in place.

    ``Q[s, a] += alpha * (r + gamma * max Q[s'] - Q[s, a])``, without the
    bootstrap term for terminal transitions.

    Returns:
        ``table``
    """
    n_states = table.shape[0]
    if not (0 <= state < n_states and 0 <= next_state < n_states):
        raise UsageError(f"state bucket outside 0..{n_states - 1}")
    bootstrap = 0.0 if terminal else gamma * float(np.max(table[next_state]))
    table[state, action] += alpha * (reward + bootstrap - table[state, action])
    return table


class TabularQAgent(Agent):
    """
    Q-learning over a discretized state space.

    Args:
        n_states: Number of table rows
        n_actions: Number of actions
        discretizer: Maps an observation to its row
        config: ``gamma``, ``tabular_alpha`` and the epsilon schedule are used
        seed: Exploration seed
    """

    name = "qtable"
    learns = True

    def __init__(
        self,
        n_states: int,
        n_actions: int,
        discretizer: Callable[[Any], int],
        config: Optional[AgentConfig] = None,
        seed: int = 0,
    ) -> None:
        self.config = (config or AgentConfig()).validate()
        self.table = np.zeros((n_states, n_actions))
        self.discretizer = discretizer
        self.rng = np.random.default_rng(seed)
        self.schedule = EpsilonSchedule(
            self.config.epsilon_start, self.config.epsilon_end, self.config.epsilon_decay_steps
        )
        self.env_steps = 0
        self.updates = 0

    @property
    def epsilon(self) -> float:
        return self.schedule.value(self.env_steps)

    def act(self, env: Any, state: Any, greedy: bool = False) -> int:
        row = self.table[self.discretizer(state)]
        return select_action(row, 0.0 if greedy else self.epsilon, self.rng, env.legal_actions())

    def observe(self, transition: Transition) -> Optional[float]:
        s = self.discretizer(transition.state)
        s_next = self.discretizer(transition.next_state)
        before = self.table[s, transition.action]
        tabular_q_update(
            self.table,
            s,
            transition.action,
            transition.reward,
            s_next,
            self.config.tabular_alpha,
            self.config.gamma,
            transition.terminal,
        )
        self.env_steps += 1
        self.updates += 1
        return float((self.table[s, transition.action] - before) ** 2)

    def checkpoint(self) -> Dict[str, Any]:
        return {
            "format": QTABLE_FORMAT,
            "agent": self.name,
            "config": self.config.to_dict(),
            "shape": list(self.table.shape),
            "table": self.table.reshape(-1).tolist(),
            "counters": {"env_steps": self.env_steps, "updates": self.updates},
        }

    @classmethod
    def from_checkpoint(
        cls, data: Mapping[str, Any], discretizer: Callable[[Any], int], seed: int = 0
    ) -> "TabularQAgent":
        """
        Rebuild an agent from :meth:`checkpoint` output.

        The discretizer is not serialized; pass the one the table was trained with.

        Raises:
            ConfigurationError: Wrong format or a table that does not match its shape
        """
        if data.get("format") != QTABLE_FORMAT:
            raise ConfigurationError(f"not a {QTABLE_FORMAT} checkpoint (format={data.get('format')!r})")
        n_states, n_actions = (int(n) for n in data["shape"])
        values = np.asarray(data["table"], dtype=np.float64)
        if values.size != n_states * n_actions:
            raise ConfigurationError(f"table has {values.size} entries, shape needs {n_states * n_actions}")
        agent = cls(n_states, n_actions, discretizer, AgentConfig.from_dict(data["config"]), seed)
        agent.table = values.reshape(n_states, n_actions)
        counters = data.get("counters", {})
        agent.env_steps = int(counters.get("env_steps", 0))
        agent.updates = int(counters.get("updates", 0))
        return agent


class HeuristicPolicy(str, Enum):
    RANDOM = "random"
    ROUND_ROBIN = "roundrobin"
    LEAST_LOADED = "leastloaded"


def heuristic_select(
    policy: HeuristicPolicy,
    sim: Any,
    rng: np.random.Generator,
    cursor: int = 0,
) -> Tuple[Optional[int], int]:
    """
    Pick a node for the simulator's candidate task.

    Returns:
        ``(node, cursor)``: the chosen node, or None when no node can take the
        candidate (the caller defers), and the updated round-robin cursor
    """
    candidate = sim.candidate()
    if candidate is None:
        return None, cursor
    feasible = sim.feasible_nodes(candidate.id)
    if not feasible:
        return None, cursor
    if policy is HeuristicPolicy.RANDOM:
        return int(feasible[int(rng.integers(len(feasible)))]), cursor
    if policy is HeuristicPolicy.ROUND_ROBIN:
        n_nodes = sim.cluster.n_nodes
        for offset in range(n_nodes):
            node = (cursor + offset) % n_nodes
            if node in feasible:
                return node, (node + 1) % n_nodes
        return None, cursor
    finish = {node: sim.estimated_finish(candidate, node) for node in feasible}
    return min(feasible, key=lambda node: (finish[node], node)), cursor


class HeuristicAgent(Agent):
    """Non-learning dispatcher; defers only when no node can take the candidate."""

    def __init__(self, policy: HeuristicPolicy, seed: int = 0) -> None:
        self.policy = HeuristicPolicy(policy)
        self.name = self.policy.value
        self.rng = np.random.default_rng(seed)
        self.cursor = 0

    def act(self, env: Any, state: Any, greedy: bool = False) -> int:
        node, self.cursor = heuristic_select(self.policy, env.sim, self.rng, self.cursor)
        return env.defer_action if node is None else node

    def checkpoint(self) -> Dict[str, Any]:
        return {"format": "heuristic-v1", "agent": self.name, "cursor": self.cursor}


def make_agent(name: str, env: Any, config: Optional[AgentConfig] = None, seed: int = 0) -> Agent:
    """
    Build the agent called ``name`` for ``env``.

    Toy environments (with an ``n_states`` attribute) get a one-hot tabular
    discretizer, scheduling environments the 729-state one.

    Raises:
        UsageError: Unknown agent name
    """
    config = config or AgentConfig()
    key = name.lower()
    if key in ("dqn", "ddqn"):
        return DQNAgent(env.state_dim, env.n_actions, replace(config, double_dqn=key == "ddqn"), seed)
    if key == "qtable":
        if hasattr(env, "n_states"):
            return TabularQAgent(env.n_states, env.n_actions, one_hot_index, config, seed)
        n_nodes = env.n_nodes
        return TabularQAgent(TABULAR_STATES, env.n_actions, lambda s: discretize_state(s, n_nodes), config, seed)
    try:
        return HeuristicAgent(HeuristicPolicy(key), seed)
    except ValueError:
        raise UsageError(f"unknown agent '{name}', valid names: {', '.join(AGENT_NAMES)}") from None
