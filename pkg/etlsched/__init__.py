"""
etlsched: a discrete-event ETL scheduling simulator with a hand-written DQN scheduler.

For more information, see ``docs/source`` or run ``etlsched --help``.
"""

from typing import Any, Dict, Optional, Sequence

from .agents import AgentConfig, DQNAgent, HeuristicAgent, TabularQAgent, make_agent
from .cluster import ClusterSimulator, ClusterSpec, build_cluster
from .config import SchedConfig, load_run_config
from .env import EnvConfig, RewardWeights, SchedulingEnv, compute_reward
from .errors import EtlSchedError
from .experiments import RunConfig, derive_run_seed, run_bench, run_sweep, run_train
from .log import configure_logging, get_logger
from .metrics import compare_reports, compute_metrics
from .neuralnet import QNetwork, grad_check
from .workload import TaskDag, WorkloadConfig, generate_dag

__version__ = "0.1.0"


def setup(config_file: Optional[str] = None, overrides: Optional[Sequence[str]] = None) -> Dict[str, Any]:
    """
    Load a run configuration and apply its logging block.

    Args:
        config_file: Optional path to a run config
        overrides: ``"dotted.path=value"`` strings
    """
    config = load_run_config(config_file, overrides)
    configure_logging(config["logging"])
    return config


__all__ = [
    "AgentConfig",
    "ClusterSimulator",
    "ClusterSpec",
    "DQNAgent",
    "EnvConfig",
    "EtlSchedError",
    "HeuristicAgent",
    "QNetwork",
    "RewardWeights",
    "RunConfig",
    "SchedConfig",
    "SchedulingEnv",
    "TabularQAgent",
    "TaskDag",
    "WorkloadConfig",
    "build_cluster",
    "compare_reports",
    "compute_metrics",
    "compute_reward",
    "derive_run_seed",
    "generate_dag",
    "get_logger",
    "grad_check",
    "load_run_config",
    "make_agent",
    "run_bench",
    "run_sweep",
    "run_train",
    "setup",
]
