"""Office-complex consumers with fixed (Type-I) and shiftable (Type-II) load."""
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.artifacts import replace_on_success
from src.errors import ConfigurationError
from src.tariff import FLOAT_FORMAT, HOURS, TariffProfile

DAYS_PER_WEEK = 7


@dataclass
class ConsumerRanges:
    """Value ranges consumers are sampled from.

    Attributes:
        sub_consumers: Choices for the number of sub-consumers.
        working_days: Choices for working days per week.
        work_start_base: Base work start hours, jittered by ``work_start_jitter``.
        work_start_jitter: Maximum absolute jitter of the work start hour.
        break_start_base: Base break start hours, jittered by ``break_start_jitter``.
        break_start_jitter: Maximum absolute jitter of the break start hour.
        work_duration_base: Base length of a working day in hours.
        work_duration_jitter: Maximum absolute jitter of the work duration.
        shiftable_kw: Choices for the size of the shiftable block.
        per_sub_load_kw: Fixed load per sub-consumer during work hours.
        idle_load_kw: Load drawn at all hours.
        noise_sigma: Standard deviation of the multiplicative work-load noise.
    """
    sub_consumers: Tuple[int, ...] = (3, 5)
    working_days: Tuple[int, ...] = (3, 4)
    work_start_base: Tuple[int, ...] = (8, 9, 10)
    work_start_jitter: int = 1
    break_start_base: Tuple[int, ...] = (13, 14)
    break_start_jitter: int = 1
    work_duration_base: int = 8
    work_duration_jitter: int = 1
    shiftable_kw: Tuple[float, ...] = (600.0, 2400.0)
    per_sub_load_kw: float = 50.0
    idle_load_kw: float = 10.0
    noise_sigma: float = 0.05

    def validate(self) -> None:
        """Raise ConfigurationError for empty or out-of-domain ranges."""
        for name in ("sub_consumers", "working_days", "work_start_base", "break_start_base", "shiftable_kw"):
            if len(getattr(self, name)) == 0:
                raise ConfigurationError(f"consumer range '{name}' is empty")
        if self.per_sub_load_kw <= 0 or self.idle_load_kw < 0 or self.noise_sigma < 0:
            raise ConfigurationError("consumer load magnitudes must be positive and noise non-negative")
        latest_end = (max(self.work_start_base) + self.work_start_jitter
                      + self.work_duration_base + self.work_duration_jitter)
        if latest_end > HOURS:
            raise ConfigurationError("work start plus duration can exceed 24 hours")
        if max(self.working_days) > DAYS_PER_WEEK or min(self.working_days) < 0:
            raise ConfigurationError("working days per week must lie in 0..7")


@dataclass(frozen=True)
class ConsumerSpec:
    """Realized schedule of one consumer.

    Attributes:
        consumer_id: Unique consumer identifier.
        sub_consumers: Number of sub-consumers.
        working_days_per_week: Working days, taken as the first days of each week.
        work_start_hour: First working hour; also the preferred hour of the shiftable block.
        break_start_hour: One-hour break during which work load stops.
        work_duration_hours: Length of the working day.
        shiftable_kw: Size of the Type-II block.
        per_sub_load_kw: Fixed load per sub-consumer during work hours.
        idle_load_kw: Load drawn at all hours.
        noise_sigma: Standard deviation of multiplicative work-load noise.
    """
    consumer_id: str
    sub_consumers: int
    working_days_per_week: int
    work_start_hour: int
    break_start_hour: int
    work_duration_hours: int
    shiftable_kw: float
    per_sub_load_kw: float
    idle_load_kw: float
    noise_sigma: float

    @property
    def preferred_hour(self) -> int:
        return self.work_start_hour

    def is_working_day(self, day: int) -> bool:
        return day % DAYS_PER_WEEK < self.working_days_per_week

    def work_mask(self) -> np.ndarray:
        """1.0 during work hours except the break hour, 0.0 elsewhere."""
        mask = np.zeros(HOURS)
        end = self.work_start_hour + self.work_duration_hours
        mask[self.work_start_hour:end] = 1.0
        mask[self.break_start_hour] = 0.0
        return mask


def sample_consumer(ranges: ConsumerRanges, seed: int, consumer_id: str = "c00") -> ConsumerSpec:
    """Draw one consumer from ``ranges`` deterministically.

    Args:
        ranges: Value ranges to sample from.
        seed: Seed of the draw.
        consumer_id: Identifier given to the consumer.

    Returns:
        The sampled consumer.

    Raises:
        ConfigurationError: If a range is empty or inconsistent.
    """
    ranges.validate()
    rng = np.random.default_rng(seed)

    def jittered(bases: Sequence[int], jitter: int) -> int:
        return int(rng.choice(bases)) + int(rng.integers(-jitter, jitter + 1))

    return ConsumerSpec(
        consumer_id=consumer_id,
        sub_consumers=int(rng.choice(ranges.sub_consumers)),
        working_days_per_week=int(rng.choice(ranges.working_days)),
        work_start_hour=jittered(ranges.work_start_base, ranges.work_start_jitter),
        break_start_hour=jittered(ranges.break_start_base, ranges.break_start_jitter),
        work_duration_hours=ranges.work_duration_base + int(
            rng.integers(-ranges.work_duration_jitter, ranges.work_duration_jitter + 1)),
        shiftable_kw=float(rng.choice(ranges.shiftable_kw)),
        per_sub_load_kw=float(ranges.per_sub_load_kw),
        idle_load_kw=float(ranges.idle_load_kw),
        noise_sigma=float(ranges.noise_sigma),
    )


def base_load_day(spec: ConsumerSpec, day: int, seed: int) -> np.ndarray:
    """Type-I consumption of one day in kWh.

    ``idle + sub_consumers * per_sub * w(h) * (1 + eps_h)`` where ``w`` is the
    work mask on working days and zero otherwise, and ``eps_h`` is Gaussian
    noise clipped to three standard deviations.

    Args:
        spec: The consumer.
        day: Day index from the start of the simulation.
        seed: The consumer's noise seed; each day draws from ``(seed, day)``.
    """
    rng = np.random.default_rng([seed, day])
    noise = rng.standard_normal(HOURS) * spec.noise_sigma
    noise = np.clip(noise, -3.0 * spec.noise_sigma, 3.0 * spec.noise_sigma)
    mask = spec.work_mask() if spec.is_working_day(day) else np.zeros(HOURS)
    return spec.idle_load_kw + spec.sub_consumers * spec.per_sub_load_kw * mask * (1.0 + noise)


def respond_to_tariff(
    base_load: np.ndarray,
    shiftable_kw: float,
    preferred_hour: int,
    profile: Union[TariffProfile, np.ndarray, Sequence[float]],
) -> Tuple[np.ndarray, Optional[int]]:
    """Place the shiftable block given the day's tariff profile.

    The whole block moves to the cheapest hour (earliest on ties) when that
    hour is strictly cheaper than the preferred hour; otherwise it stays.
    Works for any horizon length, so toy profiles shorter than 24 hours are
    accepted as plain rate sequences.

    Args:
        base_load: Type-I consumption per hour.
        shiftable_kw: Size of the Type-II block.
        preferred_hour: Hour the block is used at by default.
        profile: Tariff profile or raw rates, one per hour.

    Returns:
        ``(total_load, shift_target)`` where ``shift_target`` is ``None`` when
        the block stayed at the preferred hour.
    """
    rates = profile.as_array() if isinstance(profile, TariffProfile) else np.asarray(profile, dtype=np.float64)
    base_load = np.asarray(base_load, dtype=np.float64)
    if not 0 <= preferred_hour < len(rates) or len(rates) != len(base_load):
        raise ConfigurationError("preferred hour and base load must match the profile horizon")
    cheapest = int(np.argmin(rates))
    shift_target = cheapest if rates[cheapest] < rates[preferred_hour] else None
    total = base_load.copy()
    total[preferred_hour if shift_target is None else shift_target] += shiftable_kw
    return total, shift_target


def write_consumers(consumers: List[ConsumerSpec], path: str, noise_seeds: Optional[Dict[str, int]] = None) -> None:
    """Write consumers as CSV, with a ``noise_seed`` column when seeds are given."""
    frame = pd.DataFrame([asdict(spec) for spec in consumers])
    if noise_seeds is not None:
        frame["noise_seed"] = [str(noise_seeds[spec.consumer_id]) for spec in consumers]
    with replace_on_success(path) as temporary:
        frame.to_csv(temporary, index=False, float_format=FLOAT_FORMAT)


def read_noise_seeds(path: str) -> Dict[str, int]:
    frame = pd.read_csv(path, dtype={"consumer_id": str, "noise_seed": str})
    if "noise_seed" not in frame.columns:
        return {}
    return {str(row.consumer_id): int(row.noise_seed) for row in frame.itertuples(index=False)}


def read_consumers(path: str) -> List[ConsumerSpec]:
    frame = pd.read_csv(path, dtype={"consumer_id": str}, float_precision="round_trip")
    specs = []
    for record in frame.to_dict(orient="records"):
        specs.append(ConsumerSpec(
            consumer_id=str(record["consumer_id"]),
            sub_consumers=int(record["sub_consumers"]),
            working_days_per_week=int(record["working_days_per_week"]),
            work_start_hour=int(record["work_start_hour"]),
            break_start_hour=int(record["break_start_hour"]),
            work_duration_hours=int(record["work_duration_hours"]),
            shiftable_kw=float(record["shiftable_kw"]),
            per_sub_load_kw=float(record["per_sub_load_kw"]),
            idle_load_kw=float(record["idle_load_kw"]),
            noise_sigma=float(record["noise_sigma"]),
        ))
    return specs
