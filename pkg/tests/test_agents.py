"""Tests for replay, exploration, TD targets and the agents."""

import numpy as np
import pytest

from etlsched.agents import (
    AGENT_NAMES,
    TABULAR_STATES,
    AgentConfig,
    DQNAgent,
    EpsilonSchedule,
    HeuristicAgent,
    HeuristicPolicy,
    ReplayBuffer,
    TabularQAgent,
    Transition,
    TransitionBatch,
    discretize_state,
    heuristic_select,
    make_agent,
    one_hot_index,
    select_action,
    tabular_q_update,
    td_targets,
)
from etlsched.cluster import ClusterSimulator, ClusterSpec, NodeSpec
from etlsched.errors import ConfigurationError, NumericError, UsageError
from etlsched.neuralnet import QNetwork
from etlsched.workload import TaskDag

from conftest import make_task, uniform_cluster


def transition(i, dim=3, terminal=False):
    state = np.full(dim, float(i))
    return Transition(state=state, action=i % 2, reward=float(i), next_state=state + 1.0, terminal=terminal)


def ready_sim(cluster):
    """Simulator with one ready Extract task and every node idle."""
    dag = TaskDag(tasks=(make_task(0, 0),), edges=()).validate()
    sim = ClusterSimulator(dag, cluster)
    sim.advance_to_next_event()
    return sim


class TestReplayBuffer:
    """FIFO ring buffer."""

    def test_fifo_eviction(self):
        """After capacity + k inserts only the last capacity items remain, oldest first."""
        buffer = ReplayBuffer(capacity=5)
        for i in range(8):
            buffer.add(transition(i))
        assert len(buffer) == 5
        assert [t.reward for t in buffer.contents()] == [3.0, 4.0, 5.0, 6.0, 7.0]
        assert buffer.inserted == 8

    def test_partial_buffer(self):
        """Before wrapping, contents are in insertion order."""
        buffer = ReplayBuffer(capacity=10)
        for i in range(3):
            buffer.add(transition(i, terminal=i == 2))
        contents = buffer.contents()
        assert [t.action for t in contents] == [0, 1, 0]
        assert [t.terminal for t in contents] == [False, False, True]
        np.testing.assert_array_equal(contents[1].next_state, [2.0, 2.0, 2.0])

    def test_uniform_sampling(self):
        """Sampled slots of a full buffer are uniform within 2 percent."""
        buffer = ReplayBuffer(capacity=4)
        for i in range(4):
            buffer.add(transition(i))
        idx = buffer.sample_indices(100_000, np.random.default_rng(0))
        freq = np.bincount(idx, minlength=4) / 100_000
        assert np.all(np.abs(freq - 0.25) < 0.25 * 0.02)

    def test_sample_batch_arrays(self):
        """Sampled batches carry aligned arrays."""
        buffer = ReplayBuffer(capacity=4)
        for i in range(4):
            buffer.add(transition(i))
        batch = buffer.sample(6, np.random.default_rng(1))
        assert len(batch) == 6
        assert batch.states.shape == (6, 3)
        np.testing.assert_array_equal(batch.states[:, 0], batch.rewards)

    def test_empty_buffer(self):
        """Sampling an empty buffer is a usage error."""
        with pytest.raises(UsageError):
            ReplayBuffer(capacity=3).sample(1, np.random.default_rng(0))
        assert ReplayBuffer(capacity=3).contents() == []

    def test_non_finite_reward(self):
        """Transitions with NaN rewards are refused."""
        with pytest.raises(NumericError):
            Transition(np.zeros(2), 0, float("nan"), np.zeros(2), False)


class TestExploration:
    """Epsilon schedule and action selection."""

    def test_schedule_checkpoints(self):
        """Linear from start to end over the decay steps, constant afterwards."""
        schedule = EpsilonSchedule(1.0, 0.05, 20_000)
        assert schedule.value(0) == 1.0
        assert schedule.value(10_000) == pytest.approx(0.525)
        assert schedule.value(20_000) == pytest.approx(0.05)
        assert schedule.value(1_000_000) == pytest.approx(0.05)
        assert EpsilonSchedule(1.0, 0.1, 0).value(0) == pytest.approx(0.1)

    def test_greedy_choice_and_ties(self):
        """Epsilon 0 takes the argmax, lowest index on ties."""
        rng = np.random.default_rng(0)
        assert select_action(np.array([1.0, 3.0, 2.0]), 0.0, rng) == 1
        assert select_action(np.array([2.0, 2.0, 0.0]), 0.0, rng) == 0

    def test_legal_mask(self):
        """Illegal actions are never chosen, greedy or exploring."""
        rng = np.random.default_rng(0)
        q = np.array([9.0, 1.0, 5.0, 0.0])
        assert select_action(q, 0.0, rng, legal=[1, 2]) == 2
        picks = {select_action(q, 1.0, rng, legal=[1, 3]) for _ in range(200)}
        assert picks == {1, 3}

    def test_uniform_exploration(self):
        """Epsilon 1 over four actions is uniform within 2 percent."""
        rng = np.random.default_rng(7)
        q = np.array([0.0, 10.0, 0.0, 0.0])
        counts = np.bincount([select_action(q, 1.0, rng) for _ in range(100_000)], minlength=4)
        assert np.all(np.abs(counts / 100_000 - 0.25) < 0.25 * 0.02)

    def test_scale_invariance(self):
        """Scaling all Q values by a positive constant keeps the greedy action."""
        rng = np.random.default_rng(3)
        for _ in range(100):
            q = rng.normal(size=6)
            assert select_action(q, 0.0, rng) == select_action(q * rng.uniform(0.01, 100.0), 0.0, rng)

    def test_invalid_epsilon(self):
        """Epsilon must be a probability."""
        with pytest.raises(UsageError):
            select_action(np.zeros(2), 1.5, np.random.default_rng(0))


class TestTdTargets:
    """Bootstrapped regression targets."""

    @pytest.fixture
    def nets(self):
        target = QNetwork.zeros(2, (2, 2), 2)
        target.b3[:] = [1.0, 5.0]
        online = QNetwork.zeros(2, (2, 2), 2)
        online.b3[:] = [3.0, 0.0]
        return target, online

    def test_max_bootstrap(self, nets):
        """Non-terminal targets add gamma times the target network's maximum."""
        target, online = nets
        batch = TransitionBatch.from_transitions(
            [Transition(np.zeros(2), 0, 1.0, np.ones(2), False), Transition(np.zeros(2), 1, 2.0, np.ones(2), True)]
        )
        np.testing.assert_allclose(td_targets(batch, target, online, gamma=0.5), [1.0 + 0.5 * 5.0, 2.0])

    def test_double_dqn_bootstrap(self, nets):
        """Double-DQN evaluates the online network's choice with the target network."""
        target, online = nets
        batch = TransitionBatch.from_transitions([Transition(np.zeros(2), 0, 1.0, np.ones(2), False)])
        np.testing.assert_allclose(td_targets(batch, target, online, gamma=0.5, double_dqn=True), [1.0 + 0.5 * 1.0])


def small_config(**kwargs):
    values = dict(warmup_transitions=4, batch_size=4, target_sync_interval=3, hidden=(4, 3), lr=1e-2)
    values.update(kwargs)
    return AgentConfig(**values)


class TestDQNAgent:
    """Replay-driven training, target sync and checkpoints."""

    def test_no_gradient_step_before_warmup(self):
        """observe returns None until the buffer holds warmup transitions."""
        agent = DQNAgent(3, 2, small_config(), seed=0)
        losses = [agent.observe(transition(i)) for i in range(4)]
        assert losses[:3] == [None, None, None]
        assert losses[3] is not None
        assert agent.grad_steps == 1
        assert agent.env_steps == 4

    def test_target_equals_online_right_after_sync(self):
        """The target lags the online net between syncs and equals it after each sync."""
        agent = DQNAgent(3, 2, small_config(), seed=0)
        for i in range(4):
            agent.observe(transition(i))
        assert not agent.target.equals(agent.online)
        for i in range(4, 6):
            agent.observe(transition(i))
        assert agent.grad_steps == 3
        assert agent.target.equals(agent.online)
        agent.observe(transition(6))
        assert not agent.target.equals(agent.online)

    def test_epsilon_follows_env_steps(self):
        """Exploration decays with environment steps."""
        agent = DQNAgent(3, 2, small_config(epsilon_decay_steps=10, epsilon_end=0.0, warmup_transitions=100), seed=0)
        for i in range(5):
            agent.observe(transition(i))
        assert agent.epsilon == pytest.approx(0.5)

    def test_divergence_is_reported_with_step(self):
        """Non-finite targets surface as NumericError carrying the gradient step."""
        agent = DQNAgent(2, 2, small_config(), seed=0)
        batch = TransitionBatch(
            states=np.zeros((1, 2)),
            actions=np.array([0]),
            rewards=np.array([np.inf]),
            next_states=np.zeros((1, 2)),
            terminals=np.array([True]),
        )
        with pytest.raises(NumericError) as excinfo:
            agent.train_batch(batch)
        assert excinfo.value.diagnostics["grad_step"] == 0
        assert excinfo.value.exit_code == 3

    def test_checkpoint_round_trip(self):
        """Networks, config and counters survive a checkpoint."""
        agent = DQNAgent(3, 2, small_config(double_dqn=True), seed=1)
        for i in range(6):
            agent.observe(transition(i))
        data = agent.checkpoint()
        assert data["format"] == "agent-v1"
        assert data["agent"] == "ddqn"
        restored = DQNAgent.from_checkpoint(data)
        assert restored.online.equals(agent.online)
        assert restored.target.equals(agent.target)
        assert restored.grad_steps == agent.grad_steps
        assert restored.config == agent.config

    def test_seeded_agents_are_identical(self):
        """Same seed and same transitions give bitwise identical networks."""
        agents = [DQNAgent(3, 2, small_config(), seed=5) for _ in range(2)]
        for agent in agents:
            for i in range(10):
                agent.observe(transition(i))
        assert agents[0].online.equals(agents[1].online)


class TestTabular:
    """Q-table updates and state discretization."""

    def test_update_by_hand(self):
        """Q[s, a] moves alpha of the way to r + gamma max Q[s']."""
        table = np.zeros((2, 2))
        tabular_q_update(table, 0, 1, 1.0, 1, alpha=0.5, gamma=0.9)
        assert table[0, 1] == pytest.approx(0.5)
        table[1] = [2.0, 0.0]
        tabular_q_update(table, 0, 0, 0.0, 1, alpha=0.5, gamma=0.9)
        assert table[0, 0] == pytest.approx(0.9)
        tabular_q_update(table, 1, 1, 1.0, 0, alpha=1.0, gamma=0.9, terminal=True)
        assert table[1, 1] == pytest.approx(1.0)

    def test_update_rejects_bad_states(self):
        """State rows outside the table are usage errors."""
        with pytest.raises(UsageError):
            tabular_q_update(np.zeros((2, 2)), 2, 0, 0.0, 0, alpha=0.1, gamma=0.9)

    def test_discretization_range(self):
        """Observations map to rows 0..728."""
        n_nodes = 3
        dim = 12 + 4 * n_nodes
        assert discretize_state(np.zeros(dim), n_nodes) == 0
        assert discretize_state(np.ones(dim), n_nodes) == TABULAR_STATES - 1
        rng = np.random.default_rng(0)
        rows = {discretize_state(rng.uniform(size=dim), n_nodes) for _ in range(2000)}
        assert all(0 <= r < TABULAR_STATES for r in rows)
        assert len(rows) > 100

    def test_make_agent_for_scheduling_env(self, env_factory):
        """The scheduling environment gets the 729-row table."""
        agent = make_agent("qtable", env_factory(), AgentConfig(), seed=0)
        assert isinstance(agent, TabularQAgent)
        assert agent.table.shape == (TABULAR_STATES, 5)

    def test_checkpoint_round_trip(self):
        """Table, config and counters survive a checkpoint."""
        agent = TabularQAgent(4, 2, one_hot_index, AgentConfig(tabular_alpha=0.5), seed=3)
        for i in range(3):
            agent.observe(
                Transition(state=np.eye(4)[i], action=i % 2, reward=1.0, next_state=np.eye(4)[i + 1], terminal=False)
            )
        data = agent.checkpoint()
        assert data["format"] == "qtable-v1"
        restored = TabularQAgent.from_checkpoint(data, one_hot_index)
        np.testing.assert_array_equal(restored.table, agent.table)
        assert restored.config == agent.config
        assert (restored.env_steps, restored.updates) == (3, 3)

    def test_checkpoint_rejects_foreign_data(self):
        """Other formats and tables that do not fit their shape are configuration errors."""
        data = TabularQAgent(2, 2, one_hot_index).checkpoint()
        with pytest.raises(ConfigurationError, match="qtable-v1"):
            TabularQAgent.from_checkpoint(dict(data, format="agent-v1"), one_hot_index)
        with pytest.raises(ConfigurationError, match="shape"):
            TabularQAgent.from_checkpoint(dict(data, table=[0.0, 1.0]), one_hot_index)


class TestHeuristics:
    """Random, RoundRobin and LeastLoaded dispatch."""

    def test_round_robin_cursor(self):
        """From cursor 0 on an idle cluster: node 0, then node 1."""
        sim = ready_sim(uniform_cluster(4))
        rng = np.random.default_rng(0)
        node, cursor = heuristic_select(HeuristicPolicy.ROUND_ROBIN, sim, rng, 0)
        assert (node, cursor) == (0, 1)
        node, cursor = heuristic_select(HeuristicPolicy.ROUND_ROBIN, sim, rng, cursor)
        assert (node, cursor) == (1, 2)
        assert heuristic_select(HeuristicPolicy.ROUND_ROBIN, sim, rng, 3) == (3, 0)

    def test_least_loaded_prefers_fast_node(self):
        """With speeds 1 and 10 and empty queues the fast node wins."""
        nodes = (
            NodeSpec(id=0, speed=1.0, bandwidth=10.0, mem_capacity=100.0, slots=1, cost_rate=1.0),
            NodeSpec(id=1, speed=10.0, bandwidth=10.0, mem_capacity=100.0, slots=1, cost_rate=1.0),
        )
        sim = ready_sim(ClusterSpec(nodes=nodes))
        node, _ = heuristic_select(HeuristicPolicy.LEAST_LOADED, sim, np.random.default_rng(0))
        assert node == 1

    def test_random_is_uniform(self):
        """Ten thousand draws over four free nodes are near uniform."""
        sim = ready_sim(uniform_cluster(4))
        rng = np.random.default_rng(2)
        picks = [heuristic_select(HeuristicPolicy.RANDOM, sim, rng)[0] for _ in range(10_000)]
        freq = np.bincount(picks, minlength=4) / 10_000
        assert np.all(np.abs(freq - 0.25) < 0.03)

    def test_defer_when_no_node_is_free(self):
        """A heuristic agent defers only when the candidate fits nowhere."""
        dag = TaskDag(tasks=(make_task(0, 0), make_task(1, 0)), edges=()).validate()
        sim = ClusterSimulator(dag, uniform_cluster(1))
        sim.advance_to_next_event()
        sim.assign(0, 0)
        assert heuristic_select(HeuristicPolicy.LEAST_LOADED, sim, np.random.default_rng(0)) == (None, 0)


class TestMakeAgent:
    """Agent factory."""

    def test_known_names(self, env_factory):
        """Every documented name builds an agent of the right kind."""
        env = env_factory()
        for name in AGENT_NAMES:
            agent = make_agent(name, env, AgentConfig(hidden=(4, 3)), seed=0)
            assert agent.name == name
        assert make_agent("ddqn", env, AgentConfig(hidden=(4, 3))).config.double_dqn
        assert isinstance(make_agent("random", env), HeuristicAgent)

    def test_unknown_name_lists_valid_ones(self, env_factory):
        """Unknown agents are usage errors naming the valid choices."""
        with pytest.raises(UsageError, match="roundrobin"):
            make_agent("a3c", env_factory())

    def test_config_validation(self):
        """Out-of-range hyperparameters are rejected with their path."""
        with pytest.raises(ConfigurationError, match="agent.gamma"):
            AgentConfig(gamma=1.0).validate()
        with pytest.raises(ConfigurationError, match="agent.epsilon_end"):
            AgentConfig(epsilon_start=0.1, epsilon_end=0.5).validate()
        with pytest.raises(ConfigurationError, match="agent.epsilon_decay_steps"):
            AgentConfig(epsilon_decay_steps=-1).validate()
