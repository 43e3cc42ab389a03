"""Named parameter storage, seeded initialization and the Adam optimizer."""
import hashlib
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Tuple

import numpy as np

from src.errors import ConfigurationError, DimensionError, MissingGradientError
from src.tensor import Tensor


def name_seed(name: str) -> int:
    """Stable 64-bit integer derived from a parameter name."""
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")


def glorot_uniform(shape: Tuple[int, ...], name: str, seed: int, fan_in: int, fan_out: int) -> np.ndarray:
    """Draw a Glorot-uniform array seeded by ``(seed, name)``.

    Args:
        shape: Shape of the array to draw.
        name: Parameter name; combined with ``seed`` so that every parameter
            gets its own reproducible stream.
        seed: Run seed.
        fan_in: Number of inputs feeding one output unit.
        fan_out: Number of outputs fed by one input unit.

    Returns:
        Array with entries uniform in ``[-sqrt(6/(fan_in+fan_out)), +...]``.
    """
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    rng = np.random.default_rng([seed, name_seed(name)])
    return rng.uniform(-limit, limit, size=shape)


class ParameterStore:
    """Mapping of unique names to learnable tensors.

    Iteration is always lexicographic by name so optimizer updates and
    checkpoint layouts are reproducible.
    """

    def __init__(self) -> None:
        self._params: Dict[str, Tensor] = {}

    def add(self, name: str, values: np.ndarray) -> Tensor:
        """Register a new parameter.

        Raises:
            ConfigurationError: If the name is already taken.
        """
        if name in self._params:
            raise ConfigurationError(f"duplicate parameter name '{name}'")
        tensor = Tensor(np.array(values, dtype=np.float64), requires_grad=True)
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> List[str]:
        return sorted(self._params)

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        for name in self.names():
            yield name, self._params[name]

    def count(self) -> int:
        """Total number of scalar parameters."""
        return int(np.sum([tensor.values.size for tensor in self._params.values()]))

    def zero_grad(self) -> None:
        for tensor in self._params.values():
            tensor.zero_grad()

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: tensor.values.copy() for name, tensor in self.items()}

    def restore(self, values: Dict[str, np.ndarray]) -> None:
        """Overwrite parameter values in place from a snapshot.

        Raises:
            DimensionError: On missing names or shape mismatches.
        """
        for name, tensor in self.items():
            if name not in values:
                raise DimensionError(f"snapshot lacks parameter '{name}'")
            array = np.asarray(values[name], dtype=np.float64)
            if array.shape != tensor.shape:
                raise DimensionError(f"parameter '{name}' expects shape {tensor.shape}, got {array.shape}")
            tensor.values = array.copy()


@dataclass
class AdamState:
    """Moment accumulators and hyperparameters of an Adam optimizer.

    Attributes:
        lr: Learning rate.
        beta1: Decay of the first-moment estimate.
        beta2: Decay of the second-moment estimate.
        eps: Denominator guard.
        step: Number of updates applied so far.
        first_moment: Per-parameter running mean of gradients.
        second_moment: Per-parameter running mean of squared gradients.
    """
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParameterStore, state: AdamState) -> None:
    """Apply one bias-corrected Adam update to every parameter.

    Args:
        params: Parameters whose ``grad`` fields are populated.
        state: Optimizer state, updated in place.

    Raises:
        MissingGradientError: If any parameter has no gradient.
    """
    for name, tensor in params.items():
        if tensor.grad is None:
            raise MissingGradientError(name)

    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for name, tensor in params.items():
        grad = tensor.grad
        m = state.first_moment.get(name, np.zeros_like(tensor.values))
        v = state.second_moment.get(name, np.zeros_like(tensor.values))
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.first_moment[name] = m
        state.second_moment[name] = v
        m_hat = m / correction1
        v_hat = v / correction2
        tensor.values = tensor.values - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
