"""Windowing of simulated datasets into forecasting samples."""
import dataclasses
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.consumer import ConsumerSpec
from src.errors import DimensionError, UsageError
from src.market_sim import DAYS_PER_MONTH, SimDataset, simulate_day
from src.tariff import HOURS, TariffProfile, rate_levels

logger = logging.getLogger(__name__)

INPUT_LEN = 168
HORIZON = HOURS
WINDOW_SHIFT = 24
STD_FLOOR = 1e-6
SPLIT_NAMES = ("train", "val", "test")

Normalization = Dict[str, Tuple[float, float]]


def split_bounds(split_months: Sequence[int]) -> Dict[str, Tuple[int, int]]:
    """Day ranges ``[start, end)`` of the train, validation and test splits."""
    bounds = {}
    start = 0
    for name, months in zip(SPLIT_NAMES, split_months):
        end = start + months * DAYS_PER_MONTH
        bounds[name] = (start, end)
        start = end
    return bounds


def fit_normalization(dataset: SimDataset, train_days: Tuple[int, int]) -> Normalization:
    """Per-consumer mean and std of consumption over the training days only.

    The std is floored at ``1e-6`` so constant series normalize to zero.
    """
    start, end = train_days
    stats = {}
    for spec in dataset.consumers:
        series = dataset.consumption(spec.consumer_id)[start * HOURS:end * HOURS]
        if series.size == 0:
            raise DimensionError(f"training split {train_days} holds no data for '{spec.consumer_id}'")
        stats[spec.consumer_id] = (float(series.mean()), max(float(series.std()), STD_FLOOR))
    return stats


@dataclass(frozen=True)
class ForecastWindow:
    """One 168-hour history and the 24-hour day that follows it.

    Attributes:
        consumer_id: Consumer the window belongs to.
        day_index: Index of the forecast day.
        profile_id: Profile offered on the forecast day.
        past_consumption: Z-normalized consumption over the lookback.
        past_tariffs: Rates in force over the lookback.
        past_calendar: ``[168 x 3]`` hour-of-day, day-of-week and month.
        future_tariffs: Rates of the forecast day.
        future_calendar: ``[24 x 3]`` calendar of the forecast day.
        target: Z-normalized consumption of the forecast day.
        target_kwh: Consumption of the forecast day in kWh.
        norm_mean: Consumer mean used for normalization.
        norm_std: Consumer std used for normalization.
        future_shift_indicator: Hour the shiftable block lands in, if known.
    """
    consumer_id: str
    day_index: int
    profile_id: str
    past_consumption: np.ndarray
    past_tariffs: np.ndarray
    past_calendar: np.ndarray
    future_tariffs: np.ndarray
    future_calendar: np.ndarray
    target: np.ndarray
    target_kwh: np.ndarray
    norm_mean: float
    norm_std: float
    future_shift_indicator: Optional[np.ndarray] = None

    def denormalize(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values) * self.norm_std + self.norm_mean


def featurize(
    dataset: SimDataset,
    days: Tuple[int, int],
    normalization: Normalization,
    with_shift_indicator: bool = False,
) -> List[ForecastWindow]:
    """Cut every consumer's series within ``days`` into forecasting windows.

    Windows never reach outside the split: the first forecast day is the
    eighth day of the split, and windows advance by one day.

    Args:
        dataset: Simulated dataset.
        days: ``[start, end)`` day range of the split.
        normalization: Train-split statistics from :func:`fit_normalization`.
        with_shift_indicator: Attach the shiftable-block indicator (UB only).

    Returns:
        Windows ordered by consumer then day.

    Raises:
        DimensionError: If the split is shorter than 168 + 24 hours.
        UsageError: If shift indicators are requested from a dataset loaded
            without its day table.
    """
    start, end = days
    hours = (end - start) * HOURS
    if hours < INPUT_LEN + HORIZON:
        raise DimensionError(f"split of {end - start} days is shorter than {INPUT_LEN + HORIZON} hours")
    if with_shift_indicator and not dataset.has_day_details:
        raise UsageError("shift indicators need the dataset's day table (days.csv)")

    rates = {profile.id: profile.as_array() for profile in dataset.profiles}
    windows = []
    for spec in dataset.consumers:
        cid = spec.consumer_id
        mean, std = normalization[cid]
        records = dataset.days[cid]
        load = dataset.consumption(cid)[start * HOURS:end * HOURS]
        tariffs = dataset.tariff_rates(cid)[start * HOURS:end * HOURS]
        calendar = dataset.calendar(cid)[start * HOURS:end * HOURS]
        for offset in range(0, hours - INPUT_LEN - HORIZON + 1, WINDOW_SHIFT):
            cut = offset + INPUT_LEN
            record = records[start + cut // HOURS]
            windows.append(ForecastWindow(
                consumer_id=cid,
                day_index=record.day_index,
                profile_id=record.profile_id,
                past_consumption=(load[offset:cut] - mean) / std,
                past_tariffs=tariffs[offset:cut],
                past_calendar=calendar[offset:cut],
                future_tariffs=rates[record.profile_id],
                future_calendar=calendar[cut:cut + HORIZON],
                target=(load[cut:cut + HORIZON] - mean) / std,
                target_kwh=load[cut:cut + HORIZON].copy(),
                norm_mean=mean,
                norm_std=std,
                future_shift_indicator=record.shift_indicator() if with_shift_indicator else None,
            ))
    logger.debug("Built %d windows over days %d-%d", len(windows), start, end)
    return windows


def counterfactual_window(
    window: ForecastWindow,
    profile: TariffProfile,
    spec: ConsumerSpec,
    noise_seed: int,
) -> ForecastWindow:
    """The same window had ``profile`` been offered on its forecast day.

    The history is unchanged; the target and shift indicator are regenerated
    by the simulator.
    """
    record = simulate_day(spec, window.day_index, noise_seed, profile)
    return dataclasses.replace(
        window,
        profile_id=profile.id,
        future_tariffs=profile.as_array(),
        target=(record.total_load - window.norm_mean) / window.norm_std,
        target_kwh=record.total_load,
        future_shift_indicator=record.shift_indicator() if window.future_shift_indicator is not None else None,
    )


@dataclass
class WindowBatch:
    """Windows stacked into arrays along a leading batch axis."""
    past_consumption: np.ndarray
    past_levels: np.ndarray
    past_calendar: np.ndarray
    future_levels: np.ndarray
    future_rates: np.ndarray
    future_calendar: np.ndarray
    target: np.ndarray
    shift_indicator: Optional[np.ndarray]

    def __len__(self) -> int:
        return self.target.shape[0]


def stack_windows(windows: Sequence[ForecastWindow]) -> WindowBatch:
    if not windows:
        raise UsageError("cannot stack an empty list of windows")
    has_shift = all(window.future_shift_indicator is not None for window in windows)
    future_rates = np.stack([window.future_tariffs for window in windows])
    return WindowBatch(
        past_consumption=np.stack([window.past_consumption for window in windows]),
        past_levels=rate_levels(np.stack([window.past_tariffs for window in windows])),
        past_calendar=np.stack([window.past_calendar for window in windows]).astype(np.int64),
        future_levels=rate_levels(future_rates),
        future_rates=future_rates,
        future_calendar=np.stack([window.future_calendar for window in windows]).astype(np.int64),
        target=np.stack([window.target for window in windows]),
        shift_indicator=np.stack([window.future_shift_indicator for window in windows]) if has_shift else None,
    )
