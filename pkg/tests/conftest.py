"""Global test configuration for etlsched."""

import logging
import os

import pytest

from etlsched.cluster import ClusterSpec, NodeSpec, build_cluster
from etlsched.config import SchedConfig
from etlsched.env import EnvConfig, SchedulingEnv
from etlsched.log import ColoredLogger
from etlsched.workload import SourceKind, Stage, Task, TaskDag, WorkloadConfig

_ENV_PREFIX = "ETLSCHED_"


def pytest_addoption(parser):
    parser.addoption(
        "--run-slow", action="store_true", default=False, help="run the slow acceptance tests (minutes each)"
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="module", autouse=True)
def reset_between_modules():
    """Start every test module with fresh logger state."""
    ColoredLogger._initialized_loggers.clear()
    if ColoredLogger._file_handler is not None:
        ColoredLogger._file_handler.close()
        ColoredLogger._file_handler = None
    yield


@pytest.fixture(autouse=True)
def reset_config_for_each_test(monkeypatch):
    """
    Reset SchedConfig to defaults before each test.

    ETLSCHED_* variables from the outer environment are removed so they
    cannot leak into the configuration under test.
    """
    for var in list(os.environ):
        if var.startswith(_ENV_PREFIX):
            monkeypatch.delenv(var, raising=False)
    SchedConfig.reset()
    SchedConfig._debug_mode = False
    yield
    SchedConfig.reset()
    if ColoredLogger._file_handler is not None:
        ColoredLogger._file_handler.close()
        ColoredLogger._file_handler = None
    ColoredLogger.reset()


@pytest.fixture
def temp_log_dir(tmp_path):
    """Directory for log files of one test."""
    log_dir = tmp_path / "logs"
    log_dir.mkdir()
    yield log_dir
    for handler in logging.root.handlers[:]:
        handler.close()


@pytest.fixture
def small_workload():
    """Twenty tasks, four per stage."""
    return WorkloadConfig(n_tasks=20, layer_widths=(1, 1, 1, 1, 1), edge_prob=0.3, seed=3)


@pytest.fixture
def small_cluster():
    return build_cluster(4, seed=1)


def uniform_cluster(n_nodes=2, speed=1.0, bandwidth=10.0, slots=1, coord_base=0.0, coord_per_node=0.0, mem=1000.0):
    """Identical nodes; coordination overhead off unless asked for."""
    nodes = tuple(
        NodeSpec(id=i, speed=speed, bandwidth=bandwidth, mem_capacity=mem, slots=slots, cost_rate=1.0)
        for i in range(n_nodes)
    )
    return ClusterSpec(nodes=nodes, coord_base=coord_base, coord_per_node=coord_per_node)


def make_task(
    tid, stage, work=10.0, input_mb=0.0, release=0.0, deadline=100.0, source=SourceKind.STRUCTURED_RELATIONAL
):
    return Task(
        id=tid, stage=Stage(stage), work=work, input_mb=input_mb, source=source, release=release, deadline=deadline
    )


@pytest.fixture
def chain_dag():
    """Three tasks in a line: 0 -> 1 -> 2, each 10 units of work and no input data."""
    tasks = (make_task(0, 0), make_task(1, 1), make_task(2, 2))
    return TaskDag(tasks=tasks, edges=((0, 1), (1, 2))).validate()


@pytest.fixture
def diamond_dag():
    """0 feeds 1 and 2, both feed 3; task 0 ships 50 MB downstream."""
    tasks = (
        make_task(0, 0, input_mb=50.0),
        make_task(1, 1, input_mb=10.0),
        make_task(2, 1, input_mb=10.0),
        make_task(3, 2),
    )
    return TaskDag(tasks=tasks, edges=((0, 1), (0, 2), (1, 3), (2, 3))).validate()


@pytest.fixture
def env_factory(small_workload, small_cluster):
    """Build a SchedulingEnv on the small workload, keyword arguments go to EnvConfig."""

    def factory(cluster=None, record_trace=True, **env_kwargs):
        config = EnvConfig(**env_kwargs)
        return SchedulingEnv(small_workload, cluster or small_cluster, config, record_trace=record_trace)

    return factory
