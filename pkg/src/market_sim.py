"""Desk-scale market simulator: biased tariff histories and consumer response.

Historical profiles are curated by a peak-pricing heuristic and allocated by
a greedy revenue policy, which concentrates high rates at the hours where
consumers usually peak (temporal bias). Out-of-distribution profiles are
drawn uniformly and kept disjoint from the historical set.
"""
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from src.artifacts import replace_on_success
from src.consumer import (
    ConsumerSpec,
    base_load_day,
    read_consumers,
    read_noise_seeds,
    respond_to_tariff,
    write_consumers,
)
from src.errors import ConfigurationError, CurationError, MissingArtifactError, UsageError
from src.seeding import derive_seed
from src.tariff import (
    FLOAT_FORMAT,
    HOURS,
    TARIFF_LEVELS,
    TariffProfile,
    WholesaleOption,
    profiles_by_id,
    read_profiles,
    read_wholesale,
    write_profiles,
    write_wholesale,
)

logger = logging.getLogger(__name__)

DAYS_PER_MONTH = 30
POLICY_WINDOW_DAYS = 7
QUARTILE_HOURS = HOURS // 4
CURATION_RETRIES = 1000
WARMUP_DAYS = 28

DATASET_FILE = "dataset.csv"
DAYS_FILE = "days.csv"
CONSUMERS_FILE = "consumers.csv"
PROFILES_FILE = "profiles.csv"
WHOLESALE_FILE = "wholesale.csv"


def calendar_features(day: int) -> np.ndarray:
    """``[24 x 3]`` integer array of (hour_of_day, day_of_week, month)."""
    hours = np.arange(HOURS)
    return np.stack([
        hours,
        np.full(HOURS, day % 7),
        np.full(HOURS, (day // DAYS_PER_MONTH) % 12),
    ], axis=1)


@dataclass(frozen=True)
class DayRecord:
    """One simulated day of one consumer.

    Detail fields are ``None`` when a dataset was loaded without its day
    table; the hourly consumption and allocated profile are always present.

    Attributes:
        day_index: Day from the start of the simulation.
        profile_id: Profile allocated for the day.
        total_load: Realized hourly consumption in kWh.
        base_load: Type-I consumption in kWh.
        preferred_hour: Hour the shiftable block is used at by default.
        shift_target: Hour the block moved to, ``None`` if it stayed.
        scheduled: Whether the shiftable block was used that day.
    """
    day_index: int
    profile_id: str
    total_load: np.ndarray
    base_load: Optional[np.ndarray] = None
    preferred_hour: Optional[int] = None
    shift_target: Optional[int] = None
    scheduled: Optional[bool] = None

    @property
    def has_details(self) -> bool:
        return self.base_load is not None and self.scheduled is not None

    def landing_hour(self) -> Optional[int]:
        """Hour holding the shiftable block, ``None`` on days without it."""
        if not self.scheduled:
            return None
        return self.preferred_hour if self.shift_target is None else self.shift_target

    def shift_indicator(self) -> np.ndarray:
        """Binary 24-vector marking the hour the shiftable block lands in.

        Raises:
            UsageError: If the record carries no shift details.
        """
        if not self.has_details:
            raise UsageError(f"day {self.day_index} has no shift details; load the dataset with its day table")
        indicator = np.zeros(HOURS)
        hour = self.landing_hour()
        if hour is not None:
            indicator[hour] = 1.0
        return indicator


@dataclass
class SimDataset:
    """Simulated hourly history of a consumer population.

    Attributes:
        consumers: Simulated consumers.
        profiles: The historical profile set T_in used for allocation.
        days: Per-consumer day records, contiguous from day 0.
        noise_seeds: Per-consumer seed of the daily noise stream.
        wholesale: Wholesale price options, repeating daily.
    """
    consumers: List[ConsumerSpec]
    profiles: List[TariffProfile]
    days: Dict[str, List[DayRecord]]
    noise_seeds: Dict[str, int]
    wholesale: List[WholesaleOption] = field(default_factory=list)

    @property
    def n_days(self) -> int:
        return len(next(iter(self.days.values()))) if self.days else 0

    @property
    def has_day_details(self) -> bool:
        return all(record.has_details for records in self.days.values() for record in records)

    def consumer(self, consumer_id: str) -> ConsumerSpec:
        for spec in self.consumers:
            if spec.consumer_id == consumer_id:
                return spec
        raise KeyError(consumer_id)

    def profile(self, profile_id: str) -> TariffProfile:
        for profile in self.profiles:
            if profile.id == profile_id:
                return profile
        raise KeyError(profile_id)

    def consumption(self, consumer_id: str) -> np.ndarray:
        """Contiguous hourly consumption of one consumer."""
        return np.concatenate([record.total_load for record in self.days[consumer_id]])

    def tariff_rates(self, consumer_id: str) -> np.ndarray:
        rates = {profile.id: profile.as_array() for profile in self.profiles}
        return np.concatenate([rates[record.profile_id] for record in self.days[consumer_id]])

    def calendar(self, consumer_id: str) -> np.ndarray:
        return np.concatenate([calendar_features(record.day_index) for record in self.days[consumer_id]])

    def price_series(self, tag: str) -> np.ndarray:
        """Hourly wholesale price p_t of one option over the whole horizon."""
        for option in self.wholesale:
            if option.tag == tag:
                return np.tile(option.as_array(), self.n_days)
        raise KeyError(tag)

    def hourly_frame(self) -> pd.DataFrame:
        """Flattened hourly series of every consumer."""
        frames = []
        for spec in self.consumers:
            records = self.days[spec.consumer_id]
            calendar = self.calendar(spec.consumer_id)
            frames.append(pd.DataFrame({
                "consumer_id": spec.consumer_id,
                "hour_index": np.arange(len(records) * HOURS),
                "consumption_kwh": self.consumption(spec.consumer_id),
                "tariff_rate": self.tariff_rates(spec.consumer_id),
                "profile_id": np.repeat([record.profile_id for record in records], HOURS),
                "hour_of_day": calendar[:, 0],
                "day_of_week": calendar[:, 1],
                "month": calendar[:, 2],
            }))
        return pd.concat(frames, ignore_index=True)


def quartile_profile(avg_load: np.ndarray) -> np.ndarray:
    """Peak-pricing heuristic as level indices (0 low, 1 medium, 2 high).

    The top quarter of hours by consumption get the high rate, the bottom
    quarter the low rate. Ties are ordered by hour.
    """
    order = np.argsort(np.asarray(avg_load, dtype=np.float64), kind="stable")
    levels = np.ones(HOURS, dtype=np.int64)
    levels[order[:QUARTILE_HOURS]] = 0
    levels[order[-QUARTILE_HOURS:]] = 2
    return levels


def _perturb(levels: np.ndarray, rng: np.random.Generator, hours: int = 2) -> np.ndarray:
    perturbed = levels.copy()
    for hour in rng.choice(HOURS, size=hours, replace=False):
        step = int(rng.choice([-1, 1]))
        moved = perturbed[hour] + step
        perturbed[hour] = moved if 0 <= moved <= 2 else perturbed[hour] - step
    return perturbed


def curate_profiles_in(
    consumer_avg_profiles: Sequence[np.ndarray],
    k: int,
    seed: int,
    id_prefix: str = "in",
) -> List[TariffProfile]:
    """Build the historical profile set T_in with temporal bias.

    Slot ``i`` takes consumer ``(i + offset) mod n`` with a seeded offset,
    prices it with :func:`quartile_profile` and moves two random hours by one
    level; perturbations are redrawn until the profile is new.

    Args:
        consumer_avg_profiles: Average daily load of each consumer.
        k: Number of profiles to curate.
        seed: Seed of the offset and perturbations.
        id_prefix: Prefix of generated profile ids.

    Returns:
        ``k`` distinct profiles.

    Raises:
        ConfigurationError: If ``k < 1`` or no average profiles are given.
        CurationError: If a distinct profile cannot be found for a slot.
    """
    if k < 1:
        raise ConfigurationError(f"need at least one historical profile, got k={k}")
    if not consumer_avg_profiles:
        raise ConfigurationError("curation needs at least one consumer average profile")
    rng = np.random.default_rng(seed)
    offset = int(rng.integers(len(consumer_avg_profiles)))
    seen = set()
    profiles = []
    for slot in range(k):
        base = quartile_profile(consumer_avg_profiles[(slot + offset) % len(consumer_avg_profiles)])
        for _ in range(CURATION_RETRIES):
            levels = _perturb(base, rng)
            if tuple(levels) not in seen:
                break
        else:
            raise CurationError(f"could not find a distinct profile for slot {slot} of {k}")
        seen.add(tuple(levels))
        profiles.append(TariffProfile.from_levels(f"{id_prefix}{k:02d}-{slot:02d}", levels))
    return profiles


def sample_profiles_out(
    m: int,
    seed: int,
    exclude: Iterable[TariffProfile] = (),
    id_prefix: str = "out",
) -> List[TariffProfile]:
    """Draw ``m`` distinct uniform profiles disjoint from ``exclude``.

    Raises:
        ConfigurationError: If ``m`` is negative or exceeds the profiles left.
    """
    excluded = {tuple(profile.levels()) for profile in exclude}
    if m < 0 or m > 3 ** HOURS - len(excluded):
        raise ConfigurationError(f"cannot draw {m} out-of-distribution profiles")
    rng = np.random.default_rng(seed)
    profiles: List[TariffProfile] = []
    while len(profiles) < m:
        levels = rng.integers(0, 3, size=HOURS)
        if tuple(levels) in excluded:
            continue
        excluded.add(tuple(levels))
        profiles.append(TariffProfile.from_levels(f"{id_prefix}-{len(profiles):03d}", levels))
    return profiles


def policy_allocate(recent_avg_load: np.ndarray, candidates: Sequence[TariffProfile]) -> TariffProfile:
    """Greedy historical policy: the candidate maximizing sum(rates * load).

    Raises:
        UsageError: If there are no candidates.
    """
    if not candidates:
        raise UsageError("policy_allocate needs at least one candidate profile")
    ordered = profiles_by_id(candidates)
    rates = np.stack([profile.as_array() for profile in ordered])
    return ordered[int(np.argmax(rates @ np.asarray(recent_avg_load, dtype=np.float64)))]


def consumer_average_profiles(
    consumers: Sequence[ConsumerSpec],
    noise_seeds: Dict[str, int],
    days: int = WARMUP_DAYS,
) -> List[np.ndarray]:
    """Average daily load of each consumer under a flat tariff."""
    flat = np.full(HOURS, TARIFF_LEVELS[1])
    averages = []
    for spec in consumers:
        loads = []
        for day in range(days):
            base = base_load_day(spec, day, noise_seeds[spec.consumer_id])
            shiftable = spec.shiftable_kw if spec.is_working_day(day) else 0.0
            loads.append(respond_to_tariff(base, shiftable, spec.preferred_hour, flat)[0])
        averages.append(np.mean(loads, axis=0))
    return averages


def consumer_noise_seeds(consumers: Sequence[ConsumerSpec], seed: int) -> Dict[str, int]:
    return {spec.consumer_id: derive_seed(seed, "noise", spec.consumer_id) for spec in consumers}


def simulate_day(
    spec: ConsumerSpec,
    day: int,
    noise_seed: int,
    profile: TariffProfile,
) -> DayRecord:
    """Ground-truth response of one consumer to one profile on one day."""
    base = base_load_day(spec, day, noise_seed)
    scheduled = spec.is_working_day(day)
    if scheduled:
        total, target = respond_to_tariff(base, spec.shiftable_kw, spec.preferred_hour, profile)
    else:
        total, target = base.copy(), None
    return DayRecord(
        day_index=day,
        profile_id=profile.id,
        total_load=total,
        base_load=base,
        preferred_hour=spec.preferred_hour,
        shift_target=target,
        scheduled=scheduled,
    )


def simulate(
    consumers: Sequence[ConsumerSpec],
    profiles_in: Sequence[TariffProfile],
    months: int,
    seed: int,
    wholesale: Optional[Sequence[WholesaleOption]] = None,
) -> SimDataset:
    """Run the allocation policy and consumer response day by day.

    The profile for each day is chosen from the trailing 7-day mean of the
    realized load up to the end of the previous day (zeros before any
    history, which selects the lowest id).

    Args:
        consumers: Consumers to simulate.
        profiles_in: Historical profile set available to the policy.
        months: Number of 30-day months.
        seed: Root seed of the daily noise streams.
        wholesale: Wholesale options to attach; defaults to both options.

    Returns:
        The simulated dataset.

    Raises:
        ConfigurationError: If ``months < 1``.
    """
    if months < 1:
        raise ConfigurationError(f"simulation needs at least one month, got {months}")
    noise_seeds = consumer_noise_seeds(consumers, seed)
    n_days = months * DAYS_PER_MONTH
    days: Dict[str, List[DayRecord]] = {}
    for spec in consumers:
        records: List[DayRecord] = []
        for day in range(n_days):
            recent = records[-POLICY_WINDOW_DAYS:]
            recent_avg = np.mean([r.total_load for r in recent], axis=0) if recent else np.zeros(HOURS)
            profile = policy_allocate(recent_avg, profiles_in)
            records.append(simulate_day(spec, day, noise_seeds[spec.consumer_id], profile))
        days[spec.consumer_id] = records
    if wholesale is None:
        wholesale = [WholesaleOption.default("Option1"), WholesaleOption.default("Option2")]
    logger.info("Simulated %d consumers over %d days with %d historical profiles",
                len(consumers), n_days, len(profiles_in))
    return SimDataset(list(consumers), profiles_by_id(profiles_in), days, noise_seeds, list(wholesale))


def bias_report(dataset: SimDataset) -> pd.DataFrame:
    """Empirical frequency of each tariff level at each hour over allocated days.

    Returns:
        ``24 x 3`` frame indexed by hour with one column per rate; rows sum to 1.

    Raises:
        UsageError: For an empty dataset.
    """
    counts = np.zeros((HOURS, len(TARIFF_LEVELS)))
    levels = {profile.id: profile.levels() for profile in dataset.profiles}
    for records in dataset.days.values():
        for record in records:
            counts[np.arange(HOURS), levels[record.profile_id]] += 1.0
    total = counts.sum(axis=1, keepdims=True)
    if not np.all(total > 0):
        raise UsageError("bias_report needs at least one allocated day")
    frame = pd.DataFrame(counts / total, columns=[str(rate) for rate in TARIFF_LEVELS])
    frame.index.name = "hour"
    return frame


def high_rate_spread(report: pd.DataFrame) -> float:
    """Max over min of the per-hour high-rate frequency (``inf`` if some hour never sees it)."""
    high = report[str(TARIFF_LEVELS[-1])].to_numpy()
    return float("inf") if high.min() == 0 else float(high.max() / high.min())


# Persistence

def write_dataset(dataset: SimDataset, directory: str) -> None:
    """Write the dataset, day table, consumers, profiles and prices as CSV."""
    os.makedirs(directory, exist_ok=True)
    with replace_on_success(os.path.join(directory, DATASET_FILE)) as temporary:
        dataset.hourly_frame().to_csv(temporary, index=False, float_format=FLOAT_FORMAT)

    day_rows = []
    for consumer_id, records in dataset.days.items():
        for record in records:
            row = {
                "consumer_id": consumer_id,
                "day_index": record.day_index,
                "profile_id": record.profile_id,
                "preferred_hour": record.preferred_hour,
                "shift_target": -1 if record.shift_target is None else record.shift_target,
                "scheduled": int(bool(record.scheduled)),
            }
            row.update({f"base_{h}": value for h, value in enumerate(record.base_load)})
            day_rows.append(row)
    with replace_on_success(os.path.join(directory, DAYS_FILE)) as temporary:
        pd.DataFrame(day_rows).to_csv(temporary, index=False, float_format=FLOAT_FORMAT)

    write_consumers(dataset.consumers, os.path.join(directory, CONSUMERS_FILE), dataset.noise_seeds)
    write_profiles(dataset.profiles, os.path.join(directory, PROFILES_FILE))
    write_wholesale(dataset.wholesale, os.path.join(directory, WHOLESALE_FILE))


def read_dataset(directory: str) -> SimDataset:
    """Load a dataset written by :func:`write_dataset`.

    The day table is optional; without it day records carry no shift details.

    Raises:
        MissingArtifactError: If a required file is absent.
    """
    for name in (DATASET_FILE, CONSUMERS_FILE, PROFILES_FILE):
        path = os.path.join(directory, name)
        if not os.path.exists(path):
            raise MissingArtifactError("dataset file", path)

    consumers = read_consumers(os.path.join(directory, CONSUMERS_FILE))
    noise_seeds = read_noise_seeds(os.path.join(directory, CONSUMERS_FILE))
    profiles = read_profiles(os.path.join(directory, PROFILES_FILE))
    wholesale_path = os.path.join(directory, WHOLESALE_FILE)
    wholesale = read_wholesale(wholesale_path) if os.path.exists(wholesale_path) else []

    hourly = pd.read_csv(os.path.join(directory, DATASET_FILE), dtype={"consumer_id": str, "profile_id": str},
                         float_precision="round_trip")
    details: Dict[tuple, dict] = {}
    days_path = os.path.join(directory, DAYS_FILE)
    if os.path.exists(days_path):
        day_frame = pd.read_csv(days_path, dtype={"consumer_id": str, "profile_id": str},
                                float_precision="round_trip")
        base_columns = [f"base_{h}" for h in range(HOURS)]
        for row in day_frame.to_dict(orient="records"):
            details[(row["consumer_id"], int(row["day_index"]))] = {
                "base_load": np.array([row[column] for column in base_columns], dtype=np.float64),
                "preferred_hour": int(row["preferred_hour"]),
                "shift_target": None if int(row["shift_target"]) < 0 else int(row["shift_target"]),
                "scheduled": bool(row["scheduled"]),
            }

    days: Dict[str, List[DayRecord]] = {}
    for spec in consumers:
        rows = hourly[hourly["consumer_id"] == spec.consumer_id].sort_values("hour_index")
        loads = rows["consumption_kwh"].to_numpy(dtype=np.float64).reshape(-1, HOURS)
        profile_ids = rows["profile_id"].to_numpy()[::HOURS]
        days[spec.consumer_id] = [
            DayRecord(day, str(profile_ids[day]), loads[day], **details.get((spec.consumer_id, day), {}))
            for day in range(loads.shape[0])
        ]
    return SimDataset(consumers, profiles, days, noise_seeds, wholesale)
