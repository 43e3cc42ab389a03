"""Reverse-mode automatic differentiation over dense float64 tensors.

Only the operations the forecasting networks need are provided. Every
operation records its parents and a closure mapping the output gradient to
one gradient per parent; :func:`backward` walks the recorded graph in reverse
topological order.
"""
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.errors import DimensionError, UsageError

GradFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
Operand = Union["Tensor", np.ndarray, float, int]


class Tensor:
    """A float64 array that can take part in a differentiable graph.

    Attributes:
        values: The float64 array holding the data (row-major).
        requires_grad: Whether gradients should flow into this tensor.
        grad: Accumulated gradient for leaf tensors, same shape as ``values``.
        parents: Tensors this one was computed from.
        op: Name of the producing operation, ``"leaf"`` for inputs.
        branch: Selector of a piecewise-linear op (which side of a ReLU or
            max each element took), ``None`` for smooth ops.
    """

    def __init__(
        self,
        values: Union[np.ndarray, float, Sequence],
        requires_grad: bool = False,
        parents: Tuple["Tensor", ...] = (),
        grad_fn: Optional[GradFn] = None,
        op: str = "leaf",
    ) -> None:
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.parents = parents
        self.grad_fn = grad_fn
        self.op = op
        self.branch: Optional[np.ndarray] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def item(self) -> float:
        """Return the value of a single-element tensor as a Python float."""
        return float(self.values.reshape(-1)[0])

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other: Operand) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: Operand) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: Operand) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: Operand) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: Operand) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: Operand) -> "Tensor":
        return mul(other, self)

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)

    def __truediv__(self, other: float) -> "Tensor":
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other: Operand) -> "Tensor":
        return matmul(self, other)


def as_tensor(value: Operand) -> Tensor:
    """Wrap a constant in a non-differentiable tensor (tensors pass through)."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _node(values: np.ndarray, parents: Tuple[Tensor, ...], grad_fn: GradFn, op: str,
          branch: Optional[np.ndarray] = None) -> Tensor:
    if any(parent.requires_grad for parent in parents):
        node = Tensor(values, requires_grad=True, parents=parents, grad_fn=grad_fn, op=op)
        node.branch = branch
        return node
    return Tensor(values, op=op)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# Elementwise arithmetic

def add(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def grad_fn(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.values + b.values, (a, b), grad_fn, "add")


def sub(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def grad_fn(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.values - b.values, (a, b), grad_fn, "sub")


def mul(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def grad_fn(g: np.ndarray):
        return _unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)

    return _node(a.values * b.values, (a, b), grad_fn, "mul")


def maximum(a: Operand, b: Operand) -> Tensor:
    """Elementwise maximum; on ties the gradient goes to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.values >= b.values

    def grad_fn(g: np.ndarray):
        return _unbroadcast(g * take_a, a.shape), _unbroadcast(g * ~take_a, b.shape)

    return _node(np.maximum(a.values, b.values), (a, b), grad_fn, "maximum", branch=take_a)


# Linear algebra

def matmul(a: Operand, b: Operand) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs operands with ndim >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    def grad_fn(g: np.ndarray):
        grad_a = g @ np.swapaxes(b.values, -1, -2)
        grad_b = np.swapaxes(a.values, -1, -2) @ g
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

    return _node(a.values @ b.values, (a, b), grad_fn, "matmul")


def einsum(subscripts: str, a: Operand, b: Operand) -> Tensor:
    """Two-operand einsum without repeated or ellipsis indices.

    Args:
        subscripts: Explicit form such as ``"bct,cth->bch"``.
        a: First operand.
        b: Second operand.

    Returns:
        The contracted tensor.

    Raises:
        DimensionError: If the subscripts cannot be differentiated by
            swapping operands (an input index missing from both the other
            operand and the output).
    """
    a, b = as_tensor(a), as_tensor(b)
    inputs, out = subscripts.replace(" ", "").split("->")
    sub_a, sub_b = inputs.split(",")
    for own, other in ((sub_a, sub_b), (sub_b, sub_a)):
        if "." in own or len(set(own)) != len(own):
            raise DimensionError(f"unsupported einsum subscripts '{subscripts}'")
        for index in own:
            if index not in out and index not in other:
                raise DimensionError(f"index '{index}' of '{subscripts}' is summed out alone")

    def grad_fn(g: np.ndarray):
        grad_a = np.einsum(f"{out},{sub_b}->{sub_a}", g, b.values)
        grad_b = np.einsum(f"{sub_a},{out}->{sub_b}", a.values, g)
        return grad_a, grad_b

    return _node(np.einsum(subscripts, a.values, b.values), (a, b), grad_fn, "einsum")


# Activations

def relu(x: Tensor) -> Tensor:
    """Rectified linear unit with relu'(0) = 0."""
    positive = x.values > 0

    def grad_fn(g: np.ndarray):
        return (g * positive,)

    return _node(np.where(positive, x.values, 0.0), (x,), grad_fn, "relu", branch=positive)


def _stable_sigmoid(values: np.ndarray) -> np.ndarray:
    out = np.empty_like(values)
    positive = values >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-values[positive]))
    exp_neg = np.exp(values[~positive])
    out[~positive] = exp_neg / (1.0 + exp_neg)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _stable_sigmoid(x.values)

    def grad_fn(g: np.ndarray):
        return (g * s * (1.0 - s),)

    return _node(s, (x,), grad_fn, "sigmoid")


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax along the last axis, computed with max subtraction."""
    shifted = x.values - x.values.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    s = exp / exp.sum(axis=-1, keepdims=True)

    def grad_fn(g: np.ndarray):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _node(s, (x,), grad_fn, "softmax_rows")


# Pooling, convolution and normalization

def maxpool_over_rows(x: Tensor) -> Tensor:
    """Column-wise maximum over the row axis (second to last).

    The result keeps a row axis of size one, so ``[rows x cols]`` becomes
    ``[1 x cols]``. The gradient is routed to the first maximal row.

    Raises:
        DimensionError: If the input has no rows.
    """
    if x.ndim < 2 or x.shape[-2] == 0:
        raise DimensionError(f"maxpool_over_rows needs at least one row, got shape {x.shape}")
    winners = np.argmax(x.values, axis=-2)[..., np.newaxis, :]
    pooled = np.take_along_axis(x.values, winners, axis=-2)

    def grad_fn(g: np.ndarray):
        grad = np.zeros_like(x.values)
        np.put_along_axis(grad, winners, g, axis=-2)
        return (grad,)

    return _node(pooled, (x,), grad_fn, "maxpool_over_rows", branch=winners)


def conv1d_dilated_causal(x: Tensor, kernels: Tensor, dilation: int) -> Tensor:
    """Causal dilated 1D convolution over ``[..., channels_in, time]``.

    Tap ``j`` of a width-``W`` kernel reads input position
    ``t - (W - 1 - j) * dilation``; the input is left zero-padded so the
    output keeps the input time length.

    Args:
        x: Input of shape ``[..., channels_in, time]``.
        kernels: Kernels of shape ``[channels_out, channels_in, width]``.
        dilation: Spacing between kernel taps.

    Returns:
        Output of shape ``[..., channels_out, time]``.

    Raises:
        DimensionError: On channel mismatch or malformed shapes.
        UsageError: If dilation or width is below one.
    """
    if kernels.ndim != 3 or x.ndim < 2:
        raise DimensionError(f"conv1d expects [..., C, T] input and [O, C, W] kernels, got {x.shape}, {kernels.shape}")
    out_channels, in_channels, width = kernels.shape
    if x.shape[-2] != in_channels:
        raise DimensionError(f"kernels expect {in_channels} input channels, input has {x.shape[-2]}")
    if width < 1 or dilation < 1:
        raise UsageError(f"conv1d needs width >= 1 and dilation >= 1, got {width}, {dilation}")
    time = x.shape[-1]
    if time < 1:
        raise DimensionError("conv1d needs an input time length of at least 1")

    pad = (width - 1) * dilation
    pad_spec = [(0, 0)] * (x.ndim - 1) + [(pad, 0)]
    padded = np.pad(x.values, pad_spec)
    out = np.zeros(x.shape[:-2] + (out_channels, time))
    for tap in range(width):
        window = padded[..., tap * dilation: tap * dilation + time]
        out += np.einsum("oc,...ct->...ot", kernels.values[:, :, tap], window)

    def grad_fn(g: np.ndarray):
        grad_padded = np.zeros_like(padded)
        grad_kernels = np.zeros_like(kernels.values)
        for tap in range(width):
            start = tap * dilation
            window = padded[..., start: start + time]
            flat_g = g.reshape(-1, out_channels, time)
            flat_window = window.reshape(-1, in_channels, time)
            grad_kernels[:, :, tap] = np.einsum("bot,bct->oc", flat_g, flat_window)
            grad_padded[..., start: start + time] += np.einsum("oc,...ot->...ct", kernels.values[:, :, tap], g)
        return grad_padded[..., pad:], grad_kernels

    return _node(out, (x, kernels), grad_fn, "conv1d_dilated_causal")


@dataclass
class BatchNormStats:
    """Running statistics of one batch-normalization layer.

    Attributes:
        mean: Running per-feature mean.
        var: Running per-feature (biased) variance.
    """
    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def fresh(cls, features: int) -> "BatchNormStats":
        return cls(mean=np.zeros(features), var=np.ones(features))


def batchnorm_1d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    training: bool,
    running_stats: Optional[BatchNormStats] = None,
    momentum: float = 0.9,
    eps: float = 1e-5,
    update_stats: bool = True,
) -> Tensor:
    """Batch normalization over every axis except the feature axis (axis 1).

    ``[batch x features]`` and ``[batch x channels x time]`` inputs are both
    accepted. Training mode normalizes with batch statistics and, unless
    ``update_stats`` is off, folds them into ``running_stats`` as
    ``running = momentum * running + (1 - momentum) * batch``. Eval mode uses
    the running statistics.

    Raises:
        UsageError: For a batch of one in training mode, or eval mode without
            running statistics.
    """
    features = x.shape[1]
    axes = (0,) + tuple(range(2, x.ndim))
    view = (1, features) + (1,) * (x.ndim - 2)
    scale = gamma.values.reshape(view)

    if training:
        if x.shape[0] < 2:
            raise UsageError("batchnorm_1d in train mode needs a batch of at least 2")
        mean = x.values.mean(axis=axes, keepdims=True)
        var = ((x.values - mean) ** 2).mean(axis=axes, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + eps)
        normalized = (x.values - mean) * inv_std
        count = x.values.size // features
        if running_stats is not None and update_stats:
            running_stats.mean = momentum * running_stats.mean + (1.0 - momentum) * mean.reshape(-1)
            running_stats.var = momentum * running_stats.var + (1.0 - momentum) * var.reshape(-1)

        def grad_fn(g: np.ndarray):
            grad_norm = g * scale
            grad_x = inv_std / count * (
                count * grad_norm
                - grad_norm.sum(axis=axes, keepdims=True)
                - normalized * (grad_norm * normalized).sum(axis=axes, keepdims=True)
            )
            return grad_x, (g * normalized).sum(axis=axes), g.sum(axis=axes)
    else:
        if running_stats is None:
            raise UsageError("batchnorm_1d in eval mode needs running statistics")
        inv_std = 1.0 / np.sqrt(running_stats.var.reshape(view) + eps)
        normalized = (x.values - running_stats.mean.reshape(view)) * inv_std

        def grad_fn(g: np.ndarray):
            return g * scale * inv_std, (g * normalized).sum(axis=axes), g.sum(axis=axes)

    out = normalized * scale + beta.values.reshape(view)
    return _node(out, (x, gamma, beta), grad_fn, "batchnorm_1d")


# Indexing and shape manipulation

def embedding(table: Tensor, indices: np.ndarray) -> Tensor:
    """Row lookup: ``table[indices]`` with shape ``indices.shape + (width,)``."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= table.shape[0]):
        raise DimensionError(f"embedding index out of range for table with {table.shape[0]} rows")

    def grad_fn(g: np.ndarray):
        grad = np.zeros_like(table.values)
        np.add.at(grad, indices, g)
        return (grad,)

    return _node(table.values[indices], (table,), grad_fn, "embedding")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    values = np.concatenate([t.values for t in tensors], axis=axis)
    axis = axis % values.ndim
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def grad_fn(g: np.ndarray):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(values, tensors, grad_fn, "concat")


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    def grad_fn(g: np.ndarray):
        return (g.reshape(x.shape),)

    return _node(x.values.reshape(shape), (x,), grad_fn, "reshape")


def swapaxes(x: Tensor, axis1: int, axis2: int) -> Tensor:
    def grad_fn(g: np.ndarray):
        return (np.swapaxes(g, axis1, axis2),)

    return _node(np.swapaxes(x.values, axis1, axis2), (x,), grad_fn, "swapaxes")


# Reductions

def reduce_sum(x: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    def grad_fn(g: np.ndarray):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node(x.values.sum(axis=axis, keepdims=keepdims), (x,), grad_fn, "reduce_sum")


def reduce_mean(x: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    count = x.values.size if axis is None else x.shape[axis]
    return mul(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# Reverse pass

def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def branch_signature(loss: Tensor) -> List[np.ndarray]:
    """Branch selectors of every piecewise-linear op the loss depends on, in graph order.

    Two evaluations with equal signatures lie on the same linear piece of
    every ReLU, maximum and max-pool, so the loss is smooth between them.
    """
    return [node.branch for node in _topological_order(loss) if node.branch is not None]


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``grad`` of every reachable leaf.

    Raises:
        UsageError: If ``loss`` is not a single-element tensor.
    """
    if loss.values.size != 1:
        raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    pending = {id(loss): np.ones_like(loss.values)}
    for node in reversed(_topological_order(loss)):
        grad = pending.pop(id(node), None)
        if grad is None:
            continue
        if node.grad_fn is None:
            node.grad = grad.copy() if node.grad is None else node.grad + grad
            continue
        for parent, parent_grad in zip(node.parents, node.grad_fn(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = parent_grad if key not in pending else pending[key] + parent_grad
