"""
Small deterministic MDPs with known optimal values.

They exercise the learning agents against an exact oracle: value iteration
gives ``Q*`` and the optimal greedy policy, and :class:`ToyEnv` exposes the
same ``reset``/``step``/``legal_actions`` surface as
:class:`~etlsched.env.SchedulingEnv`, with one-hot observations.

Canned instances:
    - :func:`two_state_mdp`: from s0, "stay" (reward 0) or "go" to the
      terminal s1 (reward 1); gamma 0.5 gives Q*(s0) = (0.5, 1.0)
    - :func:`chain_mdp`: five states in a row; "left", "right" (reward 2 when
      leaving the last state, terminal) and "cash" (terminal, 1.5 in s0 and
      0.1 elsewhere); gamma 0.9
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import UsageError


@dataclass(frozen=True)
class FiniteMDP:
    """
    Deterministic finite MDP.

    ``next_state[s, a]``, ``reward[s, a]`` and ``terminal[s, a]`` describe the
    transition taken by action ``a`` in state ``s``. A terminal transition ends
    the episode, so its ``next_state`` is never bootstrapped from.
    """

    next_state: np.ndarray
    reward: np.ndarray
    terminal: np.ndarray
    gamma: float
    start_states: Tuple[int, ...] = (0,)
    action_names: Tuple[str, ...] = ()

    @property
    def n_states(self) -> int:
        return int(self.next_state.shape[0])

    @property
    def n_actions(self) -> int:
        return int(self.next_state.shape[1])


def value_iteration(mdp: FiniteMDP, tol: float = 1e-12, max_iter: int = 100000) -> np.ndarray:
    """Optimal action values ``Q*`` of ``mdp`` (shape ``(n_states, n_actions)``)."""
    q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(max_iter):
        v = q.max(axis=1)
        updated = mdp.reward + mdp.gamma * np.where(mdp.terminal, 0.0, v[mdp.next_state])
        if np.max(np.abs(updated - q)) < tol:
            return updated
        q = updated
    return q


def optimal_policy(q: np.ndarray) -> List[int]:
    return [int(a) for a in np.argmax(q, axis=1)]


def two_state_mdp() -> FiniteMDP:
    # s1 is only reachable through a terminal transition
    return FiniteMDP(
        next_state=np.array([[0, 1], [1, 1]]),
        reward=np.array([[0.0, 1.0], [0.0, 0.0]]),
        terminal=np.array([[False, True], [True, True]]),
        gamma=0.5,
        start_states=(0,),
        action_names=("stay", "go"),
    )


def chain_mdp(n_states: int = 5, end_reward: float = 2.0, home_cash: float = 1.5, cash: float = 0.1) -> FiniteMDP:
    left, right, cash_out = 0, 1, 2
    next_state = np.zeros((n_states, 3), dtype=np.int64)
    reward = np.zeros((n_states, 3))
    terminal = np.zeros((n_states, 3), dtype=bool)
    for s in range(n_states):
        next_state[s, left] = max(s - 1, 0)
        next_state[s, right] = min(s + 1, n_states - 1)
        next_state[s, cash_out] = s
        terminal[s, cash_out] = True
        reward[s, cash_out] = home_cash if s == 0 else cash
    reward[n_states - 1, right] = end_reward
    terminal[n_states - 1, right] = True
    return FiniteMDP(
        next_state=next_state,
        reward=reward,
        terminal=terminal,
        gamma=0.9,
        start_states=tuple(range(n_states)),
        action_names=("left", "right", "cash"),
    )


class ToyStep(NamedTuple):
    next_state: np.ndarray
    reward: float
    terminal: bool
    info: Dict[str, Any]


@dataclass
class ToyEnv:
    """
    Episodic wrapper around a :class:`FiniteMDP`.

    Episodes start in a state drawn uniformly from ``start_states`` and are
    truncated after ``max_steps`` (reported as ``info["truncated"]``).
    """

    mdp: FiniteMDP
    seed: int = 0
    max_steps: int = 50
    _rng: np.random.Generator = field(init=False, repr=False)
    _state: Optional[int] = field(default=None, init=False)
    _steps: int = field(default=0, init=False)
    _terminal: bool = field(default=False, init=False)

    def __post_init__(self) -> None:
        self._rng = np.random.default_rng(self.seed)

    @property
    def n_states(self) -> int:
        return self.mdp.n_states

    @property
    def state_dim(self) -> int:
        return self.mdp.n_states

    @property
    def n_actions(self) -> int:
        return self.mdp.n_actions

    @property
    def terminal(self) -> bool:
        return self._terminal

    def one_hot(self, state: int) -> np.ndarray:
        vec = np.zeros(self.mdp.n_states)
        vec[state] = 1.0
        return vec

    def legal_actions(self) -> List[int]:
        return list(range(self.mdp.n_actions))

    def reset(self, seed: Optional[int] = None, start: Optional[int] = None) -> np.ndarray:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        starts: Sequence[int] = self.mdp.start_states
        self._state = int(starts[int(self._rng.integers(len(starts)))]) if start is None else start
        self._steps = 0
        self._terminal = False
        return self.one_hot(self._state)

    def step(self, action: int) -> ToyStep:
        if self._state is None or self._terminal:
            raise UsageError("step() called on a terminal episode; call reset()")
        if not 0 <= action < self.mdp.n_actions:
            raise UsageError(f"action {action} outside 0..{self.mdp.n_actions - 1}")
        s = self._state
        reward = float(self.mdp.reward[s, action])
        done = bool(self.mdp.terminal[s, action])
        self._state = int(self.mdp.next_state[s, action])
        self._steps += 1
        truncated = not done and self._steps >= self.max_steps
        self._terminal = done or truncated
        return ToyStep(self.one_hot(self._state), reward, self._terminal, {"truncated": truncated})
