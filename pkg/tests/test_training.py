import dataclasses

import numpy as np
import pytest

from src.errors import ConfigurationError, DivergenceError, UsageError
from src.forecaster import OracleForecaster, assemble_model
from src.layers import ModelVariant
from src.tensor import Tensor
from src.training import (
    TrainingConfig,
    evaluate_aql,
    kernel_penalty,
    pinball_loss,
    quantile_loss,
    train,
)
from tests.conftest import TOY_DIMS, make_windows


def test_quantile_loss_examples():
    assert quantile_loss(np.array([1.0]), np.array([[0.0]]), [0.9]) == pytest.approx(0.9, rel=0, abs=1e-12)
    assert quantile_loss(np.array([1.0]), np.array([[0.0]]), [0.1]) == pytest.approx(0.1, rel=0, abs=1e-12)
    assert quantile_loss(np.array([0.0]), np.array([[1.0]]), [0.9]) == pytest.approx(0.1, rel=0, abs=1e-12)
    targets = np.arange(6.0).reshape(2, 3)
    assert quantile_loss(targets, np.repeat(targets[..., None], 3, axis=-1), [0.1, 0.5, 0.9]) == 0.0


def test_median_loss_is_half_the_mean_absolute_error():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        y, y_hat = rng.standard_normal(50), rng.standard_normal(50)
        assert quantile_loss(y, y_hat[:, None], [0.5]) == pytest.approx(0.5 * np.mean(np.abs(y - y_hat)), rel=1e-12)


def test_quantile_loss_rejects_bad_levels_and_shapes():
    with pytest.raises(ConfigurationError):
        quantile_loss(np.zeros(2), np.zeros((2, 1)), [1.0])
    with pytest.raises(ConfigurationError):
        quantile_loss(np.zeros(2), np.zeros((2, 1)), [0.0])
    with pytest.raises(ConfigurationError):
        quantile_loss(np.zeros(2), np.zeros((2, 2)), [0.5])


def test_pinball_loss_matches_quantile_loss_per_sample():
    rng = np.random.default_rng(1)
    targets, predictions = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    quantiles = np.array([0.1, 0.3, 0.6, 0.9])
    expected = np.mean([quantile_loss(targets[i], predictions[i][:, None], [q]) for i, q in enumerate(quantiles)])
    assert pinball_loss(targets, Tensor(predictions), quantiles).item() == pytest.approx(expected)


def test_kernel_penalty_sums_squared_kernels():
    model = assemble_model(ModelVariant.NOX, TOY_DIMS)
    expected = sum(np.sum(kernel.values ** 2) for kernel in model.network.conv_kernels())
    assert kernel_penalty(model).item() == pytest.approx(expected)


def test_evaluate_aql():
    windows = make_windows(5, 4, 2, seed=0)
    assert evaluate_aql(OracleForecaster(), windows) == 0.0
    with pytest.raises(UsageError):
        evaluate_aql(OracleForecaster(), [])


def test_zero_epochs_leave_the_model_unchanged():
    model = assemble_model(ModelVariant.FC, TOY_DIMS, seed=2)
    before = model.network.params.snapshot()
    train(model, make_windows(6, 4, 2, seed=0), TrainingConfig(epochs=0))
    after = model.network.params.snapshot()
    assert all(np.array_equal(before[name], after[name]) for name in before)
    assert model.history == [] and model.best_epoch is None


def test_training_is_deterministic():
    config = TrainingConfig(batch_size=4, epochs=3, lr=1e-2, seed=9)
    windows = make_windows(10, 4, 2, seed=1)
    runs = [train(assemble_model(ModelVariant.ATT_PE, TOY_DIMS, seed=1), windows, config, windows[:4])
            for _ in range(2)]
    assert runs[0].history == runs[1].history
    first, second = runs[0].network.params.snapshot(), runs[1].network.params.snapshot()
    assert all(np.array_equal(first[name], second[name]) for name in first)


def test_training_reduces_the_loss_on_a_learnable_target():
    windows = [dataclasses.replace(window, target=np.ones(2)) for window in make_windows(16, 4, 2, seed=2)]
    model = train(assemble_model(ModelVariant.IND, TOY_DIMS, seed=0), windows,
                  TrainingConfig(batch_size=8, epochs=40, lr=1e-2, seed=0))
    assert len(model.history) == 40
    assert model.history[-1].train_loss < 0.8 * model.history[0].train_loss
    assert model.best_epoch == 39


def test_best_validation_epoch_is_kept():
    windows = make_windows(12, 4, 2, seed=3)
    model = train(assemble_model(ModelVariant.FC, TOY_DIMS, seed=0), windows[:8],
                  TrainingConfig(batch_size=4, epochs=5, lr=5e-2), val_windows=windows[8:])
    aqls = [record.val_aql for record in model.history]
    assert model.best_epoch == int(np.argmin(aqls))
    assert evaluate_aql(model, windows[8:]) == pytest.approx(min(aqls))


def test_training_needs_two_windows():
    with pytest.raises(UsageError):
        train(assemble_model(ModelVariant.NOX, TOY_DIMS), make_windows(1, 4, 2, seed=0), TrainingConfig(epochs=1))


def test_divergence_is_reported():
    windows = [dataclasses.replace(window, target=np.full(2, np.nan)) for window in make_windows(4, 4, 2, seed=0)]
    with pytest.raises(DivergenceError) as info:
        train(assemble_model(ModelVariant.NOX, TOY_DIMS), windows, TrainingConfig(batch_size=2, epochs=1))
    assert info.value.epoch == 0 and info.value.batch == 0
    assert info.value.last_finite_loss is None


def test_training_config_validation():
    with pytest.raises(ConfigurationError):
        TrainingConfig(batch_size=1).validate()
    with pytest.raises(ConfigurationError):
        TrainingConfig(eval_quantiles=(0.5, 1.5)).validate()
