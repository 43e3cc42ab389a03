"""Shared fixtures and the ``slow`` marker."""
from typing import List

import numpy as np
import pytest

from src.config import ExperimentConfig
from src.consumer import ConsumerSpec
from src.features import ForecastWindow
from src.forecaster import ModelDims
from src.market_sim import DAYS_PER_MONTH, calendar_features
from src.training import TrainingConfig

TOY_DIMS = ModelDims(
    d=3,
    d_prime=4,
    conv_filters=2,
    conv_layers=2,
    conv_kernel=2,
    dilations=(1, 2),
    cwfc_units=2,
    local_filters=2,
    calendar_embed=2,
    tariff_embed=3,
    head_units=(4, 3, 1),
    iqn_basis=3,
    input_len=4,
    horizon=2,
)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance reproduction")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def make_windows(n: int, input_len: int, horizon: int, seed: int, with_shift_indicator: bool = False,
                 ) -> List[ForecastWindow]:
    """Random windows of arbitrary length for small-model checks."""
    rng = np.random.default_rng(seed)
    windows = []
    for i in range(n):
        past_levels = rng.integers(0, 3, size=input_len)
        future_levels = rng.integers(0, 3, size=horizon)
        day = int(rng.integers(1, 300))
        past_calendar = np.stack([
            np.arange(input_len) % 24,
            np.full(input_len, (day - 1) % 7),
            np.full(input_len, ((day - 1) // DAYS_PER_MONTH) % 12),
        ], axis=1)
        indicator = None
        if with_shift_indicator:
            indicator = np.zeros(horizon)
            indicator[int(rng.integers(horizon))] = 1.0
        target = rng.standard_normal(horizon)
        windows.append(ForecastWindow(
            consumer_id=f"toy{i:02d}",
            day_index=day,
            profile_id=f"toy{i:02d}",
            past_consumption=rng.standard_normal(input_len),
            past_tariffs=0.2 + 0.3 * past_levels,
            past_calendar=past_calendar,
            future_tariffs=0.2 + 0.3 * future_levels,
            future_calendar=calendar_features(day)[:horizon],
            target=target,
            target_kwh=target * 2.0 + 5.0,
            norm_mean=5.0,
            norm_std=2.0,
            future_shift_indicator=indicator,
        ))
    return windows


def make_consumer(**overrides) -> ConsumerSpec:
    values = dict(
        consumer_id="c00",
        sub_consumers=3,
        working_days_per_week=4,
        work_start_hour=9,
        break_start_hour=13,
        work_duration_hours=8,
        shiftable_kw=600.0,
        per_sub_load_kw=50.0,
        idle_load_kw=10.0,
        noise_sigma=0.0,
    )
    values.update(overrides)
    return ConsumerSpec(**values)


@pytest.fixture
def consumer() -> ConsumerSpec:
    return make_consumer()


@pytest.fixture
def tiny_config(tmp_path) -> ExperimentConfig:
    """A run small enough for end-to-end tests: two consumers, three months."""
    return ExperimentConfig(
        seed=7,
        n_consumers=2,
        months=3,
        split_months=(1, 1, 1),
        t_in_sizes=(2, 3),
        t_out_size=3,
        variants=("NoX", "FC", "AttPE", "UB"),
        output_dir=str(tmp_path / "run"),
        replicates=1,
        training=TrainingConfig(batch_size=8, epochs=2, lr=1e-3, seed=0),
        dims=ModelDims(d=4, d_prime=5, conv_filters=3, local_filters=4, calendar_embed=2, tariff_embed=3,
                       head_units=(6, 4, 1), iqn_basis=4),
    )
