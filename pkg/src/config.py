"""Experiment configuration loaded from JSON and overridden from the command line."""
import dataclasses
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from src.consumer import ConsumerRanges
from src.errors import ConfigurationError
from src.forecaster import ModelDims, parse_variant
from src.layers import ModelVariant
from src.tariff import OPTION_VALUES
from src.training import TrainingConfig

WORKERS_ENV = "TARIFF_WORKERS"
DEFAULT_T_IN_SIZES: Tuple[int, ...] = (2, 5, 8, 10, 12, 15, 20, 25, 30, 35)


@dataclass
class ExperimentConfig:
    """Everything a sweep needs, rooted in a single seed.

    Attributes:
        seed: Root seed; every random stream is derived from it.
        n_consumers: Number of simulated consumers.
        months: Simulated months (30 days each).
        split_months: Train, validation and test months.
        t_in_sizes: Sizes of the historical profile set to sweep over.
        t_out_size: Number of out-of-distribution profiles.
        variants: Forecasting methods to train and compare.
        wholesale_options: Wholesale price option tags.
        wholesale_seed: Seed of random wholesale arrangements, ``None`` for the default peak arrangement.
        output_dir: Root directory of every artifact.
        replicates: Model seeds per sweep cell; the simulated data is shared by all of them.
        training: Optimization settings.
        dims: Network widths.
        ranges: Consumer sampling ranges.
        show_progress: Display progress bars.
    """
    seed: int = 0
    n_consumers: int = 12
    months: int = 6
    split_months: Tuple[int, int, int] = (4, 1, 1)
    t_in_sizes: Tuple[int, ...] = DEFAULT_T_IN_SIZES
    t_out_size: int = 40
    variants: Tuple[str, ...] = tuple(variant.value for variant in ModelVariant)
    wholesale_options: Tuple[str, ...] = ("Option1", "Option2")
    wholesale_seed: Optional[int] = None
    output_dir: str = "runs/default"
    replicates: int = 3
    training: TrainingConfig = field(default_factory=TrainingConfig)
    dims: ModelDims = field(default_factory=ModelDims)
    ranges: ConsumerRanges = field(default_factory=ConsumerRanges)
    show_progress: bool = False

    def __post_init__(self) -> None:
        self.split_months = tuple(int(m) for m in self.split_months)
        self.t_in_sizes = tuple(int(k) for k in self.t_in_sizes)
        self.variants = tuple(str(v) for v in self.variants)
        self.wholesale_options = tuple(str(o) for o in self.wholesale_options)

    @property
    def model_variants(self) -> List[ModelVariant]:
        return [parse_variant(tag) for tag in self.variants]

    def validate(self) -> None:
        """Raise ConfigurationError for any inconsistent field."""
        if self.n_consumers < 1 or self.months < 1:
            raise ConfigurationError("need at least one consumer and one month")
        if len(self.split_months) != 3 or min(self.split_months) < 1:
            raise ConfigurationError(f"split_months must be three positive counts, got {self.split_months}")
        if sum(self.split_months) != self.months:
            raise ConfigurationError(f"split months {self.split_months} do not sum to {self.months}")
        if not self.t_in_sizes or min(self.t_in_sizes) < 1:
            raise ConfigurationError("t_in_sizes must be a non-empty list of positive sizes")
        if self.t_out_size < 0 or self.replicates < 1:
            raise ConfigurationError("t_out_size must be non-negative and replicates positive")
        for option in self.wholesale_options:
            if option not in OPTION_VALUES:
                raise ConfigurationError(f"unknown wholesale option '{option}'")
        if not self.model_variants:
            raise ConfigurationError("at least one model variant is required")
        self.training.validate()
        self.dims.validate()
        self.ranges.validate()

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigurationError(f"unknown config fields: {sorted(unknown)}")
        values = dict(values)
        nested = {"training": TrainingConfig, "dims": ModelDims, "ranges": ConsumerRanges}
        for name, kind in nested.items():
            if name in values:
                try:
                    values[name] = kind(**values[name])
                except TypeError as error:
                    raise ConfigurationError(f"invalid '{name}' section: {error}") from None
        if "ranges" in values:
            ranges = values["ranges"]
            for name in ("sub_consumers", "working_days", "work_start_base", "break_start_base", "shiftable_kw"):
                setattr(ranges, name, tuple(getattr(ranges, name)))
        return cls(**values)

    @classmethod
    def from_json(cls, path: str) -> "ExperimentConfig":
        if not os.path.exists(path):
            raise ConfigurationError(f"config file not found: {path}")
        with open(path, "r", encoding="utf-8") as handle:
            try:
                values = json.load(handle)
            except json.JSONDecodeError as error:
                raise ConfigurationError(f"config file {path} is not valid JSON: {error}") from None
        return cls.from_dict(values)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def with_overrides(self, **overrides: Any) -> "ExperimentConfig":
        """Copy with the given fields replaced; ``None`` values are ignored."""
        changes = {name: value for name, value in overrides.items() if value is not None}
        return dataclasses.replace(self, **changes)


def worker_count() -> int:
    """Worker pool size from ``TARIFF_WORKERS`` (default 1)."""
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        workers = int(raw)
    except ValueError:
        raise ConfigurationError(f"{WORKERS_ENV} must be an integer, got '{raw}'") from None
    if workers < 1:
        raise ConfigurationError(f"{WORKERS_ENV} must be at least 1, got {workers}")
    return workers
