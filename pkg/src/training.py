"""Quantile-loss training and AQL evaluation of forecasting models."""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from src.errors import ConfigurationError, DivergenceError, UsageError
from src.features import ForecastWindow, stack_windows
from src.forecaster import EpochRecord, Forecaster, TrainedModel
from src.optim import AdamState, adam_step
from src.tensor import BatchNormStats, Tensor, add, backward, maximum, mul, reduce_mean, reduce_sum, sub

logger = logging.getLogger(__name__)

EVAL_QUANTILES: Tuple[float, float, float] = (0.1, 0.5, 0.9)


@dataclass
class TrainingConfig:
    """Optimization settings.

    Attributes:
        batch_size: Windows per mini-batch; at least 2 for batch normalization.
        epochs: Passes over the training windows.
        lr: Adam learning rate.
        l2_lambda: Weight of the squared-norm penalty on convolution kernels.
        eval_quantiles: Quantile levels of the AQL metric.
        seed: Seed of shuffling and quantile sampling.
    """
    batch_size: int = 16
    epochs: int = 200
    lr: float = 1e-4
    l2_lambda: float = 1e-3
    eval_quantiles: Tuple[float, ...] = EVAL_QUANTILES
    seed: int = 0

    def __post_init__(self) -> None:
        self.eval_quantiles = tuple(float(q) for q in self.eval_quantiles)

    def validate(self) -> None:
        if self.batch_size < 2:
            raise ConfigurationError(f"batch size must be at least 2, got {self.batch_size}")
        if self.epochs < 0 or self.lr <= 0 or self.l2_lambda < 0:
            raise ConfigurationError("epochs and l2_lambda must be non-negative and lr positive")
        check_quantiles(self.eval_quantiles)


def check_quantiles(quantiles: Sequence[float]) -> np.ndarray:
    """Return ``quantiles`` as an array, rejecting levels outside (0, 1)."""
    levels = np.asarray(quantiles, dtype=np.float64).reshape(-1)
    if levels.size == 0 or np.any(levels <= 0.0) or np.any(levels >= 1.0):
        raise ConfigurationError(f"quantile levels must lie in (0, 1), got {list(levels)}")
    return levels


def quantile_loss(targets: np.ndarray, predictions: np.ndarray, quantiles: Sequence[float]) -> float:
    """Mean pinball loss ``max(q e, (q - 1) e)`` with ``e = y - y_hat``.

    Args:
        targets: Array of any shape.
        predictions: ``targets.shape + (len(quantiles),)``.
        quantiles: Quantile levels in (0, 1).

    Returns:
        The loss averaged over every target and quantile.
    """
    levels = check_quantiles(quantiles)
    targets = np.asarray(targets, dtype=np.float64)
    predictions = np.asarray(predictions, dtype=np.float64)
    if predictions.shape != targets.shape + (levels.size,):
        raise ConfigurationError(f"predictions of shape {predictions.shape} do not match targets {targets.shape}")
    errors = targets[..., np.newaxis] - predictions
    return float(np.mean(np.maximum(levels * errors, (levels - 1.0) * errors)))


def pinball_loss(targets: np.ndarray, predictions: Tensor, quantiles: np.ndarray) -> Tensor:
    """Differentiable mean pinball loss with one quantile level per sample row."""
    q = np.asarray(quantiles, dtype=np.float64).reshape((-1,) + (1,) * (predictions.ndim - 1))
    errors = sub(targets, predictions)
    return reduce_mean(maximum(mul(errors, q), mul(errors, q - 1.0)))


def kernel_penalty(model: TrainedModel) -> Tensor:
    terms = [reduce_sum(mul(kernel, kernel)) for kernel in model.network.conv_kernels()]
    total = terms[0]
    for term in terms[1:]:
        total = add(total, term)
    return total


def evaluate_aql(model: Forecaster, windows: Sequence[ForecastWindow],
                 quantiles: Sequence[float] = EVAL_QUANTILES) -> float:
    """Average quantile loss on the normalized scale.

    Raises:
        UsageError: For an empty window set.
    """
    if not windows:
        raise UsageError("evaluate_aql needs at least one window")
    predictions = model.predict_normalized(windows, quantiles)
    return quantile_loss(np.stack([window.target for window in windows]), predictions, quantiles)


def _snapshot_stats(stats: Dict[str, BatchNormStats]) -> Dict[str, BatchNormStats]:
    return {name: BatchNormStats(s.mean.copy(), s.var.copy()) for name, s in stats.items()}


def train(
    model: TrainedModel,
    windows: Sequence[ForecastWindow],
    config: TrainingConfig,
    val_windows: Optional[Sequence[ForecastWindow]] = None,
    show_progress: bool = False,
) -> TrainedModel:
    """Fit ``model`` in place with Adam on the pinball loss.

    Each sample in a batch draws its own quantile level from U(0, 1). The
    parameters of the epoch with the lowest validation AQL are kept; without
    validation windows the last epoch is kept.

    Args:
        model: Model to train.
        windows: Training windows.
        config: Optimization settings.
        val_windows: Windows used for model selection.
        show_progress: Display a progress bar over epochs.

    Returns:
        The same model, with history and best epoch filled in.

    Raises:
        UsageError: With fewer than two training windows.
        DivergenceError: If a batch loss stops being finite.
    """
    config.validate()
    if config.epochs == 0:
        return model
    if len(windows) < 2:
        raise UsageError("training needs at least two windows for batch normalization")

    network = model.network
    rng = np.random.default_rng(config.seed)
    state = AdamState(lr=config.lr)
    best_aql, best_params, best_stats = math.inf, None, None
    last_finite: Optional[float] = None
    logger.info("Training %s on %d windows for %d epochs", model.variant.value, len(windows), config.epochs)

    for epoch in tqdm(range(config.epochs), desc=model.variant.value, disable=not show_progress):
        order = rng.permutation(len(windows))
        losses: List[float] = []
        for batch_index, start in enumerate(range(0, len(order), config.batch_size)):
            members = order[start:start + config.batch_size]
            if len(members) < 2:
                continue
            batch = stack_windows([windows[i] for i in members])
            quantiles = rng.uniform(0.0, 1.0, size=len(members))
            network.params.zero_grad()
            data_loss = pinball_loss(batch.target, network.forward(batch, quantiles, training=True), quantiles)
            loss = add(data_loss, mul(kernel_penalty(model), config.l2_lambda))
            if not loss.is_finite():
                logger.error("Loss diverged in epoch %d, batch %d", epoch, batch_index)
                raise DivergenceError(epoch, batch_index, last_finite)
            backward(loss)
            adam_step(network.params, state)
            last_finite = data_loss.item()
            losses.append(last_finite)

        val_aql = evaluate_aql(model, val_windows, config.eval_quantiles) if val_windows else math.nan
        model.history.append(EpochRecord(epoch=epoch, train_loss=float(np.mean(losses)), val_aql=val_aql))
        if not val_windows or val_aql < best_aql or best_params is None:
            best_aql = val_aql if val_windows else best_aql
            best_params = network.params.snapshot()
            best_stats = _snapshot_stats(network.bn_stats)
            model.best_epoch = epoch

    network.params.restore(best_params)
    network.bn_stats = best_stats
    logger.info("Finished %s: best epoch %d, validation AQL %.6g", model.variant.value, model.best_epoch, best_aql)
    return model
