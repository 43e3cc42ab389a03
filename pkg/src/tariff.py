"""Tariff profiles, wholesale price options and their CSV persistence."""
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np
import pandas as pd

from src.artifacts import replace_on_success
from src.errors import ConfigurationError

HOURS = 24
TARIFF_LEVELS: Tuple[float, float, float] = (0.2, 0.5, 0.8)
FLOAT_FORMAT = "%.17g"


def rate_levels(rates: np.ndarray) -> np.ndarray:
    """Map rates in {0.2, 0.5, 0.8} to level indices {0, 1, 2}."""
    return np.rint((np.asarray(rates, dtype=np.float64) - TARIFF_LEVELS[0]) / 0.3).astype(np.int64)


@dataclass(frozen=True)
class TariffProfile:
    """An hourly time-of-use tariff offered for one day.

    Attributes:
        id: Unique profile identifier; ties are broken by lowest id.
        rates: 24 hourly rates, each one of ``TARIFF_LEVELS``.
    """
    id: str
    rates: Tuple[float, ...]

    def __post_init__(self) -> None:
        rates = tuple(float(r) for r in self.rates)
        if len(rates) != HOURS:
            raise ConfigurationError(f"profile '{self.id}' has {len(rates)} rates, expected {HOURS}")
        if any(r not in TARIFF_LEVELS for r in rates):
            raise ConfigurationError(f"profile '{self.id}' has rates outside {TARIFF_LEVELS}")
        object.__setattr__(self, "rates", rates)

    @classmethod
    def from_levels(cls, profile_id: str, levels: Iterable[int]) -> "TariffProfile":
        return cls(profile_id, tuple(TARIFF_LEVELS[int(level)] for level in levels))

    def as_array(self) -> np.ndarray:
        return np.array(self.rates, dtype=np.float64)

    def levels(self) -> np.ndarray:
        return rate_levels(self.as_array())


def profiles_by_id(profiles: Iterable[TariffProfile]) -> List[TariffProfile]:
    """Return profiles sorted by id (the tie-break order)."""
    return sorted(profiles, key=lambda profile: profile.id)


def write_profiles(profiles: Iterable[TariffProfile], path: str) -> None:
    """Write profiles as ``profile_id, r0..r23`` rows."""
    rows = [[profile.id, *profile.rates] for profile in profiles_by_id(profiles)]
    frame = pd.DataFrame(rows, columns=["profile_id"] + [f"r{h}" for h in range(HOURS)])
    with replace_on_success(path) as temporary:
        frame.to_csv(temporary, index=False, float_format=FLOAT_FORMAT)


def read_profiles(path: str) -> List[TariffProfile]:
    frame = pd.read_csv(path, dtype={"profile_id": str}, float_precision="round_trip")
    rate_columns = [f"r{h}" for h in range(HOURS)]
    return [
        TariffProfile(row.profile_id, tuple(getattr(row, column) for column in rate_columns))
        for row in frame.itertuples(index=False)
    ]


OPTION_VALUES = {
    "Option1": (0.2, 0.8),
    "Option2": (0.2, 0.5, 0.8),
}


@dataclass(frozen=True)
class WholesaleOption:
    """Known day-ahead wholesale prices the broker pays.

    Attributes:
        tag: ``Option1`` (values 0.2/0.8) or ``Option2`` (0.2/0.5/0.8).
        prices: 24 hourly prices drawn from the option's value set.
    """
    tag: str
    prices: Tuple[float, ...]

    def __post_init__(self) -> None:
        if self.tag not in OPTION_VALUES:
            raise ConfigurationError(f"unknown wholesale option '{self.tag}'")
        prices = tuple(float(p) for p in self.prices)
        if len(prices) != HOURS:
            raise ConfigurationError(f"wholesale option '{self.tag}' needs {HOURS} prices")
        if any(p not in OPTION_VALUES[self.tag] for p in prices):
            raise ConfigurationError(f"wholesale option '{self.tag}' uses prices outside {OPTION_VALUES[self.tag]}")
        object.__setattr__(self, "prices", prices)

    @classmethod
    def default(cls, tag: str) -> "WholesaleOption":
        """Peak-priced arrangement: 0.8 over hours 9-17, Option2 adds 0.5 shoulders."""
        prices = np.full(HOURS, 0.2)
        prices[9:18] = 0.8
        if tag == "Option2":
            prices[[7, 8, 18, 19]] = 0.5
        return cls(tag, tuple(prices))

    @classmethod
    def sample(cls, tag: str, seed: int) -> "WholesaleOption":
        """Seeded random arrangement of the option's value set."""
        if tag not in OPTION_VALUES:
            raise ConfigurationError(f"unknown wholesale option '{tag}'")
        rng = np.random.default_rng(seed)
        return cls(tag, tuple(rng.choice(OPTION_VALUES[tag], size=HOURS)))

    def as_array(self) -> np.ndarray:
        return np.array(self.prices, dtype=np.float64)


def write_wholesale(options: Sequence[WholesaleOption], path: str) -> None:
    frame = pd.DataFrame({"hour": np.arange(HOURS)})
    for option in options:
        frame[option.tag] = option.as_array()
    with replace_on_success(path) as temporary:
        frame.to_csv(temporary, index=False, float_format=FLOAT_FORMAT)


def read_wholesale(path: str) -> List[WholesaleOption]:
    frame = pd.read_csv(path, float_precision="round_trip")
    return [WholesaleOption(tag, tuple(frame[tag])) for tag in frame.columns if tag != "hour"]
