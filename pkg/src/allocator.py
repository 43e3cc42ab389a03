"""Greedy tariff allocation from forecasts and its evaluation against the simulator."""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.artifacts import replace_on_success
from src.consumer import ConsumerSpec
from src.errors import UsageError
from src.features import ForecastWindow, counterfactual_window
from src.forecaster import Forecaster
from src.market_sim import simulate_day
from src.tariff import FLOAT_FORMAT, TariffProfile, WholesaleOption, profiles_by_id

logger = logging.getLogger(__name__)

MEDIAN = 0.5
GAIN_COLUMNS = [
    "consumer_id", "day_index", "method", "scenario", "wholesale_option",
    "chosen_profile_id", "estimated_gain", "realized_gain",
]


def _margin_gain(profile: TariffProfile, wholesale: WholesaleOption, load: np.ndarray) -> float:
    return float(np.dot(profile.as_array() - wholesale.as_array(), np.asarray(load, dtype=np.float64)))


def estimate_gain(forecast_median: np.ndarray, profile: TariffProfile, wholesale: WholesaleOption) -> float:
    """Estimated broker profit ``sum_h (rate_h - p_h) * e_hat_h`` for one day."""
    return _margin_gain(profile, wholesale, forecast_median)


def realized_gain(
    spec: ConsumerSpec,
    profile: TariffProfile,
    wholesale: WholesaleOption,
    day: int,
    noise_seed: int,
) -> float:
    """Profit the broker actually makes once the consumer responds to ``profile``."""
    return _margin_gain(profile, wholesale, simulate_day(spec, day, noise_seed, profile).total_load)


def _sorted_candidates(candidates: Sequence[TariffProfile]) -> List[TariffProfile]:
    if not candidates:
        raise UsageError("allocation needs at least one candidate profile")
    return profiles_by_id(candidates)


@dataclass
class AllocationDecision:
    """Outcome of a greedy allocation for one consumer and day.

    Attributes:
        profile: The chosen profile.
        estimated_gain: Its estimated gain.
        candidate_estimates: Estimated gain of every candidate, by profile id.
    """
    profile: TariffProfile
    estimated_gain: float
    candidate_estimates: Dict[str, float] = field(default_factory=dict)


def choose_profile(
    window: ForecastWindow,
    candidates: Sequence[TariffProfile],
    model: Forecaster,
    wholesale: WholesaleOption,
    spec: ConsumerSpec,
    noise_seed: int,
) -> AllocationDecision:
    """Offer the candidate with the highest estimated gain (lowest id on ties).

    Each candidate is forecast at the median with its own counterfactual
    window, since the forecast depends on the offered profile.

    Raises:
        UsageError: If there are no candidates.
    """
    ordered = _sorted_candidates(candidates)
    return _greedy(ordered, median_forecasts(window, ordered, model, spec, noise_seed), wholesale)


def median_forecasts(
    window: ForecastWindow,
    ordered: Sequence[TariffProfile],
    model: Forecaster,
    spec: ConsumerSpec,
    noise_seed: int,
) -> np.ndarray:
    """``[candidates x horizon]`` median forecasts, one counterfactual window per candidate."""
    scenario_windows = [counterfactual_window(window, profile, spec, noise_seed) for profile in ordered]
    return model.predict(scenario_windows, [MEDIAN])[..., 0]


def _greedy(ordered: Sequence[TariffProfile], loads: np.ndarray, wholesale: WholesaleOption) -> AllocationDecision:
    estimates = [estimate_gain(load, profile, wholesale) for load, profile in zip(loads, ordered)]
    best = int(np.argmax(estimates))
    return AllocationDecision(
        profile=ordered[best],
        estimated_gain=estimates[best],
        candidate_estimates={profile.id: gain for profile, gain in zip(ordered, estimates)},
    )


def oracle_choose(
    spec: ConsumerSpec,
    candidates: Sequence[TariffProfile],
    wholesale: WholesaleOption,
    day: int,
    noise_seed: int,
) -> TariffProfile:
    """Exhaustive argmax of realized gain over the candidates."""
    ordered = _sorted_candidates(candidates)
    gains = [realized_gain(spec, profile, wholesale, day, noise_seed) for profile in ordered]
    return ordered[int(np.argmax(gains))]


@dataclass
class GainReport:
    """Allocation result of one method for one consumer and day.

    Attributes:
        consumer_id: Consumer the profile is offered to.
        day_index: Day the profile applies to.
        method: Forecasting method tag, or ``oracle``.
        scenario: ``IID`` (candidates from T_in) or ``OOD`` (T_in and T_out).
        wholesale_option: Wholesale price option tag.
        chosen_profile_id: Chosen profile; it attains the maximum estimate.
        estimated_gain: Estimated gain of the chosen profile.
        realized_gain: Realized gain of the chosen profile.
        candidate_gains: ``profile_id -> (estimated, realized)`` for every candidate.
    """
    consumer_id: str
    day_index: int
    method: str
    scenario: str
    wholesale_option: str
    chosen_profile_id: str
    estimated_gain: float
    realized_gain: float
    candidate_gains: Dict[str, Tuple[float, float]] = field(default_factory=dict)

    def row(self) -> dict:
        return {column: getattr(self, column) for column in GAIN_COLUMNS}


def allocate_window(
    window: ForecastWindow,
    candidates: Sequence[TariffProfile],
    model: Optional[Forecaster],
    method: str,
    scenario: str,
    options: Sequence[WholesaleOption],
    spec: ConsumerSpec,
    noise_seed: int,
) -> List[GainReport]:
    """Allocate one window under every wholesale option and score the choices.

    The forecasts are made once and reused across options. With ``model``
    set to ``None`` the realized consumption stands in for the forecast,
    which makes the choice the oracle's.

    Returns:
        One report per option, in the order of ``options``.
    """
    ordered = _sorted_candidates(candidates)
    actual = np.stack([simulate_day(spec, window.day_index, noise_seed, profile).total_load for profile in ordered])
    loads = actual if model is None else median_forecasts(window, ordered, model, spec, noise_seed)
    reports = []
    for wholesale in options:
        decision = _greedy(ordered, loads, wholesale)
        realized = {profile.id: _margin_gain(profile, wholesale, load) for profile, load in zip(ordered, actual)}
        reports.append(GainReport(
            consumer_id=window.consumer_id,
            day_index=window.day_index,
            method=method,
            scenario=scenario,
            wholesale_option=wholesale.tag,
            chosen_profile_id=decision.profile.id,
            estimated_gain=decision.estimated_gain,
            realized_gain=realized[decision.profile.id],
            candidate_gains={pid: (decision.candidate_estimates[pid], realized[pid]) for pid in realized},
        ))
    return reports


def pct_gain_vs_fc(method_total: float, fc_total: float) -> Optional[float]:
    """Percent change of a method's total gain over FC's, ``None`` when FC's is zero."""
    if fc_total == 0:
        return None
    return 100.0 * (method_total - fc_total) / abs(fc_total)


def write_gain_reports(reports: Sequence[GainReport], path: str) -> None:
    frame = pd.DataFrame([report.row() for report in reports], columns=GAIN_COLUMNS)
    with replace_on_success(path) as temporary:
        frame.to_csv(temporary, index=False, float_format=FLOAT_FORMAT)


def read_gain_reports(path: str) -> pd.DataFrame:
    return pd.read_csv(path, dtype={"consumer_id": str, "chosen_profile_id": str}, float_precision="round_trip")


def gain_summary(frame: pd.DataFrame) -> pd.DataFrame:
    """Total realized gain per method, scenario and option, with percent gain over FC."""
    totals = (frame.groupby(["scenario", "wholesale_option", "method"], sort=True)["realized_gain"]
              .sum().reset_index(name="total_realized_gain"))
    pct = []
    for row in totals.itertuples(index=False):
        fc = totals[(totals["scenario"] == row.scenario) & (totals["wholesale_option"] == row.wholesale_option)
                    & (totals["method"] == "FC")]["total_realized_gain"]
        pct.append(pct_gain_vs_fc(row.total_realized_gain, float(fc.iloc[0])) if len(fc) else None)
    totals["pct_gain_vs_fc"] = pct
    return totals
