"""Central finite-difference checks for the autodiff engine."""
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from src.tensor import Tensor, backward, branch_signature


@dataclass
class GradCheckResult:
    """Outcome of one gradient check.

    Attributes:
        max_rel_error: Largest relative error over the checked coordinates.
        checked: Number of coordinates or directions compared.
        skipped: Steps dropped because they crossed a ReLU or max kink.
    """
    max_rel_error: float
    checked: int
    skipped: int = 0

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.checked > 0 and self.max_rel_error <= tolerance


def relative_error(analytic: float, numeric: float, floor: float = 1e-4) -> float:
    """Relative error with a floor on the denominator for near-zero gradients."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _same_branches(first: List[np.ndarray], second: List[np.ndarray]) -> bool:
    return len(first) == len(second) and all(np.array_equal(a, b) for a, b in zip(first, second))


def _evaluate(loss_fn: Callable[[], Tensor]) -> Tuple[float, List[np.ndarray]]:
    loss = loss_fn()
    return loss.item(), branch_signature(loss)


def _analytic(loss_fn: Callable[[], Tensor], inputs: Sequence[Tensor]) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    for tensor in inputs:
        tensor.zero_grad()
    loss = loss_fn()
    base = branch_signature(loss)
    backward(loss)
    return [np.zeros_like(t.values) if t.grad is None else t.grad.copy() for t in inputs], base


def check_gradients(
    loss_fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    max_coords: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    skip_kinks: bool = False,
) -> GradCheckResult:
    """Compare reverse-mode gradients with central differences.

    Args:
        loss_fn: Rebuilds the scalar loss from the current input values.
        inputs: Leaf tensors to differentiate; their values are perturbed in
            place and restored.
        h: Finite-difference step.
        max_coords: If set, only this many randomly chosen coordinates per
            input are checked.
        rng: Generator used to pick coordinates.
        skip_kinks: Drop coordinates whose ``±h`` step changes the branch of
            any ReLU, maximum or max-pool in the graph.

    Returns:
        The largest relative error found.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    analytic, base = _analytic(loss_fn, inputs)

    worst, checked, skipped = 0.0, 0, 0
    for tensor, grad in zip(inputs, analytic):
        flat = tensor.values.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for index in coords:
            original = flat[index]
            flat[index] = original + h
            plus, plus_branches = _evaluate(loss_fn)
            flat[index] = original - h
            minus, minus_branches = _evaluate(loss_fn)
            flat[index] = original
            if skip_kinks and not (_same_branches(base, plus_branches) and _same_branches(base, minus_branches)):
                skipped += 1
                continue
            numeric = (plus - minus) / (2.0 * h)
            worst = max(worst, relative_error(float(grad.reshape(-1)[index]), numeric))
            checked += 1
    return GradCheckResult(max_rel_error=worst, checked=checked, skipped=skipped)


def check_directional(
    loss_fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    directions: int = 3,
    rng: Optional[np.random.Generator] = None,
    skip_kinks: bool = False,
    max_draws: int = 20,
) -> GradCheckResult:
    """Compare <grad, v> with a central difference along random directions v.

    Cheaper than :func:`check_gradients` for whole models: every direction
    costs two forward passes regardless of the parameter count. With
    ``skip_kinks`` a direction whose step changes a ReLU or max branch is
    re-drawn, up to ``max_draws`` draws in total.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    analytic, base = _analytic(loss_fn, inputs)
    originals = [t.values.copy() for t in inputs]

    worst, checked, skipped = 0.0, 0, 0
    while checked < directions and checked + skipped < max_draws:
        vectors = [rng.standard_normal(t.shape) for t in inputs]
        norm = np.sqrt(np.sum([np.sum(v * v) for v in vectors]))
        vectors = [v / norm for v in vectors]
        predicted = float(np.sum([np.sum(g * v) for g, v in zip(analytic, vectors)]))

        for tensor, base_values, v in zip(inputs, originals, vectors):
            tensor.values = base_values + h * v
        plus, plus_branches = _evaluate(loss_fn)
        for tensor, base_values, v in zip(inputs, originals, vectors):
            tensor.values = base_values - h * v
        minus, minus_branches = _evaluate(loss_fn)
        for tensor, base_values in zip(inputs, originals):
            tensor.values = base_values.copy()

        if skip_kinks and not (_same_branches(base, plus_branches) and _same_branches(base, minus_branches)):
            skipped += 1
            continue
        worst = max(worst, relative_error(predicted, (plus - minus) / (2.0 * h)))
        checked += 1
    return GradCheckResult(max_rel_error=worst, checked=checked, skipped=skipped)
