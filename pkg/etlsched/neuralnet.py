"""
Dense Q-network with hand-derived gradients.

Layout (64-bit floats throughout)::

    z1 = W1 s + b1         a1 = relu(z1)
    z2 = W2 a1 + b2        h  = sigmoid(z2)     (embedding, "relu" ablation available)
    Q  = W3 h + b3                              (linear head, unbounded)

Training minimizes the mean squared TD error over a batch, with the gradient
flowing only through the Q output of the action taken. :func:`grad_check`
compares the analytic gradient with central finite differences.

Example:
    >>> rng = np.random.default_rng(0)
    >>> net = QNetwork.initialize(input_dim=44, n_actions=9, rng=rng)
    >>> q = net.q_values(np.zeros(44))
"""

import json
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, NumericError, ShapeError

NET_FORMAT = "qnet-v1"
PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")
EMBEDDINGS = ("sigmoid", "relu")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class ForwardCache:
    states: np.ndarray
    z1: np.ndarray
    a1: np.ndarray
    z2: np.ndarray
    h: np.ndarray
    q: np.ndarray


@dataclass
class QNetwork:
    """Parameters of the embedding and the Q head."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray
    embedding: str = "sigmoid"

    def __post_init__(self) -> None:
        for name in PARAM_NAMES:
            setattr(self, name, np.array(getattr(self, name), dtype=np.float64))
        if self.embedding not in EMBEDDINGS:
            raise ConfigurationError(f"unknown embedding '{self.embedding}'", path="agent.embedding")
        h1, d = self.W1.shape
        h2 = self.W2.shape[0]
        a = self.W3.shape[0]
        expected = {"b1": (h1,), "W2": (h2, h1), "b2": (h2,), "W3": (a, h2), "b3": (a,)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @classmethod
    def initialize(
        cls,
        input_dim: int,
        n_actions: int,
        rng: np.random.Generator,
        hidden: Sequence[int] = (64, 32),
        embedding: str = "sigmoid",
    ) -> "QNetwork":
        """
        Seeded initialization.

        W1 uses He-uniform fan-in scaling (it feeds a relu), W2 and W3 use
        Xavier-uniform; biases start at zero.
        """
        if len(hidden) != 2 or min(hidden) < 1:
            raise ConfigurationError("needs two positive sizes", path="agent.hidden")
        h1, h2 = int(hidden[0]), int(hidden[1])

        def xavier(fan_out: int, fan_in: int) -> np.ndarray:
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-limit, limit, size=(fan_out, fan_in))

        he = math.sqrt(6.0 / input_dim)
        return cls(
            W1=rng.uniform(-he, he, size=(h1, input_dim)),
            b1=np.zeros(h1),
            W2=xavier(h2, h1),
            b2=np.zeros(h2),
            W3=xavier(n_actions, h2),
            b3=np.zeros(n_actions),
            embedding=embedding,
        )

    @classmethod
    def zeros(cls, input_dim: int, hidden: Sequence[int], n_actions: int, embedding: str = "sigmoid") -> "QNetwork":
        h1, h2 = hidden
        return cls(
            W1=np.zeros((h1, input_dim)),
            b1=np.zeros(h1),
            W2=np.zeros((h2, h1)),
            b2=np.zeros(h2),
            W3=np.zeros((n_actions, h2)),
            b3=np.zeros(n_actions),
            embedding=embedding,
        )

    @property
    def input_dim(self) -> int:
        return int(self.W1.shape[1])

    @property
    def hidden(self) -> Tuple[int, int]:
        return int(self.W1.shape[0]), int(self.W2.shape[0])

    @property
    def n_actions(self) -> int:
        return int(self.W3.shape[0])

    def parameters(self) -> Dict[str, np.ndarray]:
        """Parameter arrays by name; updating them in place updates the network."""
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def named_parameters(self) -> Iterator[Tuple[str, np.ndarray]]:
        return iter(self.parameters().items())

    # -- evaluation ----------------------------------------------------------

    def _as_batch(self, states: Any) -> np.ndarray:
        batch = np.asarray(states, dtype=np.float64)
        if batch.ndim == 1:
            batch = batch[None, :]
        if batch.ndim != 2 or batch.shape[1] != self.input_dim:
            raise ShapeError(f"state batch has shape {batch.shape}, network expects (*, {self.input_dim})")
        return batch

    def forward_batch(self, states: Any) -> ForwardCache:
        """Evaluate a ``(B, D)`` batch and keep the intermediates for :meth:`backward`."""
        s = self._as_batch(states)
        z1 = s @ self.W1.T + self.b1
        a1 = np.maximum(z1, 0.0)
        z2 = a1 @ self.W2.T + self.b2
        h = _sigmoid(z2) if self.embedding == "sigmoid" else np.maximum(z2, 0.0)
        q = h @ self.W3.T + self.b3
        return ForwardCache(states=s, z1=z1, a1=a1, z2=z2, h=h, q=q)

    def embed(self, state: Any) -> np.ndarray:
        """Embedding ``h`` of one state (``(H2,)``) or of a batch (``(B, H2)``)."""
        cache = self.forward_batch(state)
        return cache.h[0] if np.asarray(state).ndim == 1 else cache.h

    def q_values(self, state: Any) -> np.ndarray:
        """Q values of one state (``(A,)``) or of a batch (``(B, A)``)."""
        cache = self.forward_batch(state)
        return cache.q[0] if np.asarray(state).ndim == 1 else cache.q

    # -- training ------------------------------------------------------------

    def loss(self, states: Any, actions: Any, targets: Any) -> float:
        q = self.forward_batch(states).q
        idx = np.asarray(actions, dtype=np.int64)
        err = q[np.arange(len(idx)), idx] - np.asarray(targets, dtype=np.float64)
        return float(np.mean(err * err))

    def backward(self, states: Any, actions: Any, targets: Any) -> Tuple[Dict[str, np.ndarray], float]:
        """
        Gradients of the mean squared TD error.

        Args:
            states: ``(B, D)`` batch
            actions: ``(B,)`` action indices; only these Q outputs get gradient
            targets: ``(B,)`` TD targets

        Returns:
            ``(grads, loss)`` with one gradient array per parameter name

        Raises:
            ShapeError: Batch dimensions do not match
            NumericError: Non-finite targets, activations or gradients
        """
        y = np.asarray(targets, dtype=np.float64).reshape(-1)
        idx = np.asarray(actions, dtype=np.int64).reshape(-1)
        cache = self.forward_batch(states)
        batch = cache.states.shape[0]
        if batch == 0:
            raise ShapeError("empty batch")
        if y.shape[0] != batch or idx.shape[0] != batch:
            raise ShapeError(f"batch of {batch} states with {idx.shape[0]} actions and {y.shape[0]} targets")
        if np.any((idx < 0) | (idx >= self.n_actions)):
            raise ShapeError(f"action index outside 0..{self.n_actions - 1}")
        if not np.all(np.isfinite(y)):
            raise NumericError("non-finite TD target", {"batch": batch})
        if not np.all(np.isfinite(cache.q)):
            raise NumericError("non-finite Q value in forward pass", {"max_abs_h": float(np.max(np.abs(cache.h)))})

        rows = np.arange(batch)
        err = cache.q[rows, idx] - y
        loss = float(np.mean(err * err))

        d_q = np.zeros_like(cache.q)
        d_q[rows, idx] = 2.0 * err / batch
        grads: Dict[str, np.ndarray] = {}
        grads["W3"] = d_q.T @ cache.h
        grads["b3"] = d_q.sum(axis=0)
        d_h = d_q @ self.W3
        if self.embedding == "sigmoid":
            d_z2 = d_h * cache.h * (1.0 - cache.h)
        else:
            d_z2 = d_h * (cache.z2 > 0)
        grads["W2"] = d_z2.T @ cache.a1
        grads["b2"] = d_z2.sum(axis=0)
        d_a1 = d_z2 @ self.W2
        d_z1 = d_a1 * (cache.z1 > 0)
        grads["W1"] = d_z1.T @ cache.states
        grads["b1"] = d_z1.sum(axis=0)

        for name, grad in grads.items():
            if not np.all(np.isfinite(grad)):
                raise NumericError("non-finite gradient", {"param": name, "loss": loss})
        return grads, loss

    # -- copies and persistence ---------------------------------------------

    def copy(self) -> "QNetwork":
        return QNetwork(embedding=self.embedding, **{k: v.copy() for k, v in self.parameters().items()})

    def copy_from(self, other: "QNetwork") -> None:
        """Overwrite every parameter with ``other``'s (hard target sync)."""
        for name in PARAM_NAMES:
            np.copyto(getattr(self, name), getattr(other, name))

    def equals(self, other: "QNetwork") -> bool:
        """Bitwise equality of all parameters."""
        return self.embedding == other.embedding and all(
            np.array_equal(getattr(self, n), getattr(other, n)) for n in PARAM_NAMES
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format": NET_FORMAT,
            "embedding": self.embedding,
            "shapes": {n: list(getattr(self, n).shape) for n in PARAM_NAMES},
            "params": {n: getattr(self, n).reshape(-1).tolist() for n in PARAM_NAMES},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "QNetwork":
        if data.get("format") != NET_FORMAT:
            raise ConfigurationError(f"not a {NET_FORMAT} checkpoint (format={data.get('format')!r})")
        try:
            arrays = {
                n: np.array(data["params"][n], dtype=np.float64).reshape(tuple(data["shapes"][n])) for n in PARAM_NAMES
            }
        except (KeyError, ValueError) as exc:
            raise ShapeError(f"corrupt {NET_FORMAT} checkpoint: {exc}") from exc
        return cls(embedding=data.get("embedding", "sigmoid"), **arrays)


def save_network(net: QNetwork, path: str) -> None:
    """Write ``net`` as ``qnet-v1`` JSON (row-major arrays, ``repr`` floats, so reloads are exact)."""
    with open(path, mode="w", encoding="utf-8") as f:
        json.dump(net.to_dict(), f, sort_keys=True)
        f.write("\n")


def load_network(path: str) -> QNetwork:
    with open(path, mode="r", encoding="utf-8") as f:
        return QNetwork.from_dict(json.load(f))


def grad_check(
    net: QNetwork,
    batch: Tuple[Any, Any, Any],
    fd_step: float = 1e-6,
    analytic: Optional[Mapping[str, np.ndarray]] = None,
) -> float:
    """
    Largest relative disagreement between analytic and finite-difference gradients.

    For every parameter entry the numeric gradient is
    ``(L(p + h) - L(p - h)) / 2h`` and the error ``|a - n| / max(1, |n|)``.

    Args:
        net: Network to check; parameters are restored afterwards
        batch: ``(states, actions, targets)``
        fd_step: Finite-difference step ``h`` in ``[1e-8, 1e-4]``
        analytic: Gradients to check instead of ``net.backward(...)``

    Returns:
        The maximum error over all parameters
    """
    if not 1e-8 <= fd_step <= 1e-4:
        raise ConfigurationError(f"fd_step {fd_step} outside [1e-8, 1e-4]")
    states, actions, targets = batch
    if analytic is None:
        analytic, _ = net.backward(states, actions, targets)
    worst = 0.0
    for name, param in net.named_parameters():
        grad = analytic[name]
        flat = param.reshape(-1)
        flat_grad = np.asarray(grad).reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + fd_step
            plus = net.loss(states, actions, targets)
            flat[i] = original - fd_step
            minus = net.loss(states, actions, targets)
            flat[i] = original
            numeric = (plus - minus) / (2.0 * fd_step)
            worst = max(worst, abs(flat_grad[i] - numeric) / max(1.0, abs(numeric)))
    return worst


@dataclass
class OptimizerState:
    """Adaptive-moment state: first/second moments per parameter and a step counter."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "step": self.step,
            "m": {k: a.reshape(-1).tolist() for k, a in sorted(self.m.items())},
            "v": {k: a.reshape(-1).tolist() for k, a in sorted(self.v.items())},
        }


class Adam:
    """
    Bias-corrected adaptive-moment optimizer over named parameter arrays.

    Args:
        lr: Learning rate
        beta1: First-moment decay
        beta2: Second-moment decay
        eps: Denominator guard
    """

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        if not lr > 0:
            raise ConfigurationError("must be > 0", path="agent.lr")
        self.state = OptimizerState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        """
        Update ``params`` in place.

        Raises:
            ShapeError: A gradient does not match its parameter
            NumericError: The update produced a non-finite value
        """
        st = self.state
        st.step += 1
        correction1 = 1.0 - st.beta1**st.step
        correction2 = 1.0 - st.beta2**st.step
        updates: Dict[str, np.ndarray] = {}
        for name, param in params.items():
            grad = np.asarray(grads[name], dtype=np.float64)
            if grad.shape != param.shape:
                raise ShapeError(f"gradient for {name} has shape {grad.shape}, parameter {param.shape}")
            m = st.m.get(name)
            v = st.v.get(name)
            if m is None or v is None:
                m = np.zeros_like(param)
                v = np.zeros_like(param)
            m = st.beta1 * m + (1.0 - st.beta1) * grad
            v = st.beta2 * v + (1.0 - st.beta2) * grad * grad
            update = st.lr * (m / correction1) / (np.sqrt(v / correction2) + st.eps)
            if not np.all(np.isfinite(update)):
                raise NumericError("non-finite optimizer update", {"param": name, "step": st.step})
            st.m[name] = m
            st.v[name] = v
            updates[name] = update
        for name, update in updates.items():
            params[name] -= update  # type: ignore[index]


def optimizer_step(net: QNetwork, grads: Mapping[str, np.ndarray], optimizer: Adam) -> QNetwork:
    """Apply one optimizer update to ``net`` and return it."""
    optimizer.step(net.parameters(), grads)
    return net
