"""Tests for the scheduling environment: observations, reward and episode control."""

import numpy as np
import pytest

from etlsched.agents import HeuristicAgent, HeuristicPolicy
from etlsched.cluster import TaskOutcome, TaskStatus
from etlsched.env import EnvConfig, RewardWeights, SchedulingEnv, compute_reward, state_dim
from etlsched.errors import ConfigurationError, UsageError
from etlsched.experiments import run_episode
from etlsched.metrics import episode_metrics
from etlsched.workload import WorkloadConfig, generate_dag

from conftest import uniform_cluster


class TestComputeReward:
    """Per-step reward from finalized task outcomes."""

    def test_empty_outcomes_give_zero(self):
        """No finalized task means exactly zero reward."""
        assert compute_reward([], RewardWeights()) == 0.0

    def test_single_perfect_task(self):
        """On time, instant and free scores a1."""
        assert compute_reward([(1, 0.0, 0.0)], RewardWeights()) == pytest.approx(1.0)

    def test_worst_case_hits_lower_bound(self):
        """Missed, slow and expensive scores -(a2 + a3); ratios are capped at one."""
        assert compute_reward([(0, 50.0, 50.0)], RewardWeights()) == pytest.approx(-1.0)

    def test_mixed_batch_is_averaged(self):
        """Each term is the mean over the finalized tasks."""
        reward = compute_reward([(1, 0.5, 0.25), (0, 1.0, 0.75)], RewardWeights())
        assert reward == pytest.approx(0.5 - 0.5 * 0.75 - 0.5 * 0.5)

    def test_accepts_task_outcomes(self):
        """TaskOutcome objects and tuples are interchangeable."""
        weights = RewardWeights(t_max=10.0, c_max=20.0)
        outcome = TaskOutcome(task_id=0, delta=1, latency=5.0, cost=10.0, status=TaskStatus.COMPLETED)
        assert compute_reward([outcome], weights) == compute_reward([(1, 5.0, 10.0)], weights)

    def test_bounds_hold_for_random_inputs(self):
        """Randomized outcomes and weights always land in [-(a2 + a3), a1]."""
        rng = np.random.default_rng(0)
        for _ in range(100_000):
            a1, a2, a3 = rng.uniform(0.01, 2.0, size=3)
            weights = RewardWeights(a1=a1, a2=a2, a3=a3, t_max=rng.uniform(0.1, 10), c_max=rng.uniform(0.1, 10))
            n = int(rng.integers(0, 6))
            outcomes = [(int(rng.integers(0, 2)), rng.uniform(0, 30), rng.uniform(0, 30)) for _ in range(n)]
            reward = compute_reward(outcomes, weights)
            low, high = weights.bounds
            assert low - 1e-12 <= reward <= high + 1e-12
            if n == 0:
                assert reward == 0.0

    def test_invalid_weights(self):
        """Negative or all-zero weights are configuration errors."""
        with pytest.raises(ConfigurationError):
            RewardWeights(a1=-1.0)
        with pytest.raises(ConfigurationError):
            RewardWeights(a1=0.0, a2=0.0, a3=0.0)


class TestObservation:
    """State vector layout."""

    def test_dimension(self, env_factory):
        """Observation has 12 + 4N entries."""
        env = env_factory()
        state = env.reset(seed=1)
        assert env.state_dim == state_dim(4) == 28
        assert len(state) == 28
        assert env.n_actions == 5
        assert env.defer_action == 4

    def test_chain_features(self, small_workload, chain_dag):
        """Hand-checked features of the first candidate of a three-task chain."""
        env = SchedulingEnv(small_workload, uniform_cluster(2))
        state = env.reset(dag=chain_dag)
        assert env.candidate.id == 0
        np.testing.assert_allclose(state.x_t, [0.2, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0 / 3.0, 1.0])
        np.testing.assert_allclose(state.x_r, np.zeros(8))
        np.testing.assert_allclose(state.x_d, [0.0, 1.0, 0.0, 0.25])

    def test_values_stay_in_unit_interval(self, env_factory):
        """Every observation of a full episode is clamped to [0, 1]."""
        env = env_factory()
        agent = HeuristicAgent(HeuristicPolicy.RANDOM, seed=0)
        state = env.reset(seed=4)
        while not env.terminal:
            assert np.all((state.values >= 0.0) & (state.values <= 1.0))
            state = env.step(agent.act(env, state)).next_state

    def test_node_features_reflect_load(self, small_workload, chain_dag):
        """Assigning a task shows up as cpu and queue load on its node."""
        env = SchedulingEnv(small_workload, uniform_cluster(2, coord_base=1.0))
        env.reset(dag=chain_dag)
        env.sim.assign(0, 1)
        state = env.observe()
        assert state.node_features(1)[0] == pytest.approx(1.0)
        assert state.node_features(1)[3] == pytest.approx(1.0)
        assert state.node_features(0)[0] == 0.0


class TestStep:
    """Transition semantics."""

    def test_assignment_reward(self, small_workload, chain_dag):
        """Assigning the first chain task yields the reward of its completion."""
        env = SchedulingEnv(small_workload, uniform_cluster(2))
        env.reset(dag=chain_dag)
        assert env.scale.t_max == pytest.approx(30.0)
        assert env.scale.c_max == pytest.approx(10.0)
        assert env.legal_actions() == [0, 1, 2]
        result = env.step(0)
        assert result.reward == pytest.approx(1.0 - 0.5 * (10.0 / 30.0) - 0.5)
        assert not result.terminal
        assert env.candidate.id == 1
        assert [o.task_id for o in result.info["outcomes"]] == [0]

    def test_full_chain_episode(self, small_workload, chain_dag):
        """Three assignments finish the chain and end the episode."""
        env = SchedulingEnv(small_workload, uniform_cluster(2))
        env.reset(dag=chain_dag)
        results = [env.step(0) for _ in range(3)]
        assert [r.terminal for r in results] == [False, False, True]
        trace = env.episode_trace()
        assert [r.status for r in trace.records] == ["completed"] * 3
        assert len(trace.rewards) == 3
        with pytest.raises(UsageError, match="terminal"):
            env.step(0)

    def test_invalid_action_penalty(self, env_factory):
        """Assigning without a candidate is invalid and costs a2 unless masked."""
        for mask, expected in ((False, -0.5), (True, 0.0)):
            env = env_factory(mask_invalid=mask)
            env.workload = WorkloadConfig(n_tasks=20, layer_widths=(1, 1, 1, 1, 1), batch_fraction=0.0, seed=3)
            env.reset()
            assert env.candidate is None
            result = env.step(0)
            assert result.info["invalid"]
            assert result.reward == pytest.approx(expected)

    def test_defer_cap_forces_assignment(self, env_factory):
        """Deferring past the cap assigns the candidate to the first feasible node."""
        env = env_factory(defer_cap=2)
        env.workload = WorkloadConfig(n_tasks=20, layer_widths=(1, 1, 1, 1, 1), batch_fraction=1.0, seed=3)
        env.reset()
        candidate = env.candidate.id
        first_node = env.sim.feasible_nodes(candidate)[0]
        for _ in range(2):
            assert not env.step(env.defer_action).info["forced_decision"]
        result = env.step(env.defer_action)
        assert result.info["forced_decision"]
        assert result.info["error"] == "defer-cap"
        assert env.sim.runs[candidate].node == first_node

    def test_action_out_of_range(self, env_factory):
        """Actions outside 0..N are usage errors."""
        env = env_factory()
        env.reset(seed=1)
        with pytest.raises(UsageError, match="outside"):
            env.step(env.n_actions)

    def test_step_before_reset(self, env_factory):
        """The environment must be reset first."""
        with pytest.raises(UsageError):
            env_factory().step(0)

    def test_snapshot_is_independent(self, env_factory):
        """Stepping a snapshot does not change the original episode."""
        env = env_factory()
        state = env.reset(seed=2)
        clone = env.snapshot()
        clone.step(0)
        np.testing.assert_array_equal(env.observe().values, state.values)

    def test_same_seed_same_actions_same_trace(self, env_factory, tmp_path):
        """Replaying an action sequence reproduces the event trace exactly."""
        traces = []
        for i in range(2):
            env = env_factory()
            agent = HeuristicAgent(HeuristicPolicy.RANDOM, seed=11)
            run_episode(env, agent, seed=6, learn=False)
            path = tmp_path / f"trace{i}.jsonl"
            env.dump_trace(str(path))
            traces.append(path.read_bytes())
        assert traces[0] == traces[1]

    @pytest.mark.parametrize("policy", list(HeuristicPolicy))
    def test_status_conservation(self, env_factory, policy):
        """Terminal statuses sum to n_tasks and TP times makespan counts the finished tasks."""
        env = env_factory()
        result = run_episode(env, HeuristicAgent(policy, seed=1), seed=9, learn=False)
        trace = result.trace
        counts = trace.status_counts()
        assert sum(counts.values()) == env.dag.n_tasks
        finished = counts["completed"] + counts["missed"]
        metrics = episode_metrics(trace, gamma=0.9)
        assert metrics["tp"] * trace.makespan / 100.0 == pytest.approx(finished)

    def test_slower_nodes_never_raise_on_time_count(self):
        """With a fixed task-to-node mapping, lowering every node speed never increases the on-time count."""
        workload = WorkloadConfig(n_tasks=40, deadline_slack=1.5, seed=4)
        dag = generate_dag(workload)
        on_time = []
        for speed in (4.0, 2.0, 1.0, 0.5, 0.25):
            cluster = uniform_cluster(2, speed=speed, slots=64, mem=1e6)
            env = SchedulingEnv(workload, cluster, EnvConfig(horizon=1e9))
            env.reset(dag=dag)
            while not env.terminal:
                candidate = env.candidate
                env.step(env.defer_action if candidate is None else candidate.id % env.n_nodes)
            trace = env.episode_trace()
            assert {r.node for r in trace.records} == {0, 1}
            on_time.append(sum(r.delta for r in trace.records))
        assert on_time == sorted(on_time, reverse=True)
        assert on_time[0] > on_time[-1]

    def test_short_horizon_leaves_tasks_unfinished(self, env_factory):
        """An episode cut by the horizon reports the open tasks as unfinished."""
        env = env_factory(horizon=1.0)
        result = run_episode(env, HeuristicAgent(HeuristicPolicy.LEAST_LOADED), seed=9, learn=False)
        counts = result.trace.status_counts()
        assert counts["unfinished"] > 0
        assert sum(counts.values()) == env.dag.n_tasks


class TestEnvConfig:
    """The env block of a run config."""

    def test_from_dict_validates(self):
        """Bad values and unknown keys are configuration errors."""
        assert EnvConfig.from_dict({"defer_cap": 4}).defer_cap == 4
        with pytest.raises(ConfigurationError):
            EnvConfig.from_dict({"defer_cap": 0})
        with pytest.raises(ConfigurationError, match="unknown"):
            EnvConfig.from_dict({"alpha": 1})
