import dataclasses

import numpy as np
import pandas as pd
import pytest

from src.allocator import (
    allocate_window,
    choose_profile,
    estimate_gain,
    gain_summary,
    oracle_choose,
    pct_gain_vs_fc,
    read_gain_reports,
    realized_gain,
    write_gain_reports,
)
from src.errors import UsageError
from src.forecaster import OracleForecaster
from src.market_sim import simulate_day
from src.tariff import TariffProfile, WholesaleOption
from tests.conftest import make_consumer, make_windows

OPTION1 = WholesaleOption.default("Option1")
OPTION2 = WholesaleOption.default("Option2")


class FixedForecaster:
    """Returns preset kWh forecasts, one row per window in call order."""

    def __init__(self, loads):
        self.loads = np.asarray(loads, dtype=np.float64)

    def predict_normalized(self, windows, quantiles):
        return self.predict(windows, quantiles)

    def predict(self, windows, quantiles):
        return np.repeat(self.loads[:len(windows), :, None], len(quantiles), axis=-1)


def _window(day=8):
    return dataclasses.replace(make_windows(1, 168, 24, seed=0)[0], consumer_id="c00", day_index=day)


def _random_profile(rng, profile_id):
    return TariffProfile.from_levels(profile_id, rng.integers(0, 3, size=24))


def test_estimate_gain_examples():
    high_at_zero = TariffProfile.from_levels("p", [2] + [0] * 23)
    load = np.zeros(24)
    load[0] = 10.0
    assert estimate_gain(load, high_at_zero, OPTION1) == pytest.approx(6.0)
    assert estimate_gain(np.zeros(24), high_at_zero, OPTION1) == 0.0
    matching = TariffProfile("m", OPTION1.prices)
    assert estimate_gain(np.full(24, 7.0), matching, OPTION1) == 0.0


def test_choose_profile_is_the_argmax_of_estimates():
    rng = np.random.default_rng(0)
    spec = make_consumer()
    window = _window()
    for _ in range(1000):
        count = int(rng.integers(1, 6))
        candidates = [_random_profile(rng, f"p{i}") for i in rng.permutation(count)]
        loads = rng.uniform(0.0, 200.0, size=(count, 24))
        option = OPTION1 if rng.random() < 0.5 else OPTION2
        decision = choose_profile(window, candidates, FixedForecaster(loads), option, spec, noise_seed=1)

        ordered = sorted(candidates, key=lambda p: p.id)
        gains = [float(np.sum((p.as_array() - option.as_array()) * load)) for p, load in zip(ordered, loads)]
        assert decision.profile.id == ordered[int(np.argmax(gains))].id
        assert decision.estimated_gain == pytest.approx(max(gains))
        assert decision.estimated_gain == max(decision.candidate_estimates.values())


def test_ties_go_to_the_lowest_id():
    rates = TariffProfile.from_levels("x", [1] * 24).rates
    candidates = [TariffProfile("b", rates), TariffProfile("a", rates), TariffProfile("c", rates)]
    decision = choose_profile(_window(), candidates, FixedForecaster(np.ones((3, 24))), OPTION1, make_consumer(), 0)
    assert decision.profile.id == "a"


def test_empty_candidates_are_rejected():
    spec = make_consumer()
    with pytest.raises(UsageError):
        choose_profile(_window(), [], OracleForecaster(), OPTION1, spec, 0)
    with pytest.raises(UsageError):
        oracle_choose(spec, [], OPTION1, 8, 0)


def test_oracle_forecaster_reproduces_the_oracle_choice():
    rng = np.random.default_rng(1)
    spec = make_consumer(noise_sigma=0.05, shiftable_kw=2400.0)
    for day in range(7, 27):
        window = _window(day)
        candidates = [_random_profile(rng, f"p{i:02d}") for i in range(6)]
        for option in (OPTION1, OPTION2):
            decision = choose_profile(window, candidates, OracleForecaster(), option, spec, noise_seed=4)
            assert decision.profile == oracle_choose(spec, candidates, option, day, noise_seed=4)


def test_allocate_window_reports_every_option():
    rng = np.random.default_rng(2)
    spec = make_consumer()
    window = _window(9)
    candidates = [_random_profile(rng, f"p{i}") for i in range(4)]
    oracle = allocate_window(window, candidates, None, "oracle", "OOD", [OPTION1, OPTION2], spec, 3)
    forecast = allocate_window(window, candidates, OracleForecaster(), "FC", "OOD", [OPTION1, OPTION2], spec, 3)
    assert [r.wholesale_option for r in oracle] == ["Option1", "Option2"]
    for by_oracle, by_forecast, option in zip(oracle, forecast, (OPTION1, OPTION2)):
        assert by_oracle.chosen_profile_id == by_forecast.chosen_profile_id
        assert by_oracle.realized_gain == pytest.approx(by_oracle.estimated_gain)
        chosen = next(p for p in candidates if p.id == by_oracle.chosen_profile_id)
        assert by_oracle.realized_gain == pytest.approx(realized_gain(spec, chosen, option, 9, 3))
        assert by_oracle.realized_gain == max(g for _, g in by_oracle.candidate_gains.values())
        assert set(by_oracle.candidate_gains) == {p.id for p in candidates}


def test_realized_gain_uses_the_simulated_response():
    spec = make_consumer()
    profile = TariffProfile.from_levels("cheap3", [2, 2, 2, 0] + [1] * 20)
    load = simulate_day(spec, 0, 0, profile).total_load
    assert realized_gain(spec, profile, OPTION1, 0, 0) == pytest.approx(
        float(np.sum((profile.as_array() - OPTION1.as_array()) * load)))


def test_pct_gain_vs_fc():
    assert pct_gain_vs_fc(110.0, 100.0) == pytest.approx(10.0)
    assert pct_gain_vs_fc(-90.0, -100.0) == pytest.approx(10.0)
    assert pct_gain_vs_fc(50.0, 100.0) == pytest.approx(-50.0)
    assert pct_gain_vs_fc(5.0, 0.0) is None


def test_gain_summary_and_persistence(tmp_path):
    spec = make_consumer()
    candidates = [TariffProfile.from_levels("a", [1] * 24), TariffProfile.from_levels("b", [2] * 12 + [0] * 12)]
    reports = []
    for day in (7, 8):
        window = _window(day)
        reports += allocate_window(window, candidates, None, "oracle", "IID", [OPTION1], spec, 0)
        reports += allocate_window(window, candidates, OracleForecaster(), "FC", "IID", [OPTION1], spec, 0)
    path = str(tmp_path / "gains.csv")
    write_gain_reports(reports, path)
    frame = read_gain_reports(path)
    assert len(frame) == 4 and frame["consumer_id"].tolist() == ["c00"] * 4

    summary = gain_summary(frame)
    assert list(summary.columns) == ["scenario", "wholesale_option", "method", "total_realized_gain",
                                     "pct_gain_vs_fc"]
    totals = summary.set_index("method")["total_realized_gain"]
    assert totals["oracle"] == pytest.approx(sum(r.realized_gain for r in reports if r.method == "oracle"))
    fc_row = summary[summary["method"] == "FC"].iloc[0]
    assert fc_row["pct_gain_vs_fc"] == pytest.approx(0.0)


def test_gain_summary_without_fc_rows():
    frame = pd.DataFrame({"scenario": ["IID"], "wholesale_option": ["Option1"], "method": ["Att"],
                          "realized_gain": [3.0]})
    summary = gain_summary(frame)
    assert summary["pct_gain_vs_fc"].isna().all()


def test_scaling_the_forecasts_scales_every_estimate_and_keeps_the_choice():
    rng = np.random.default_rng(3)
    spec, window = make_consumer(), _window()
    for _ in range(200):
        count = int(rng.integers(2, 6))
        candidates = [_random_profile(rng, f"p{i}") for i in range(count)]
        loads = rng.uniform(0.0, 200.0, size=(count, 24))
        scale = float(rng.uniform(0.1, 10.0))
        base = choose_profile(window, candidates, FixedForecaster(loads), OPTION2, spec, 0)
        scaled = choose_profile(window, candidates, FixedForecaster(loads * scale), OPTION2, spec, 0)
        assert scaled.profile == base.profile
        for profile_id, gain in base.candidate_estimates.items():
            assert scaled.candidate_estimates[profile_id] == pytest.approx(scale * gain, rel=1e-9, abs=1e-9)


def test_a_wholesale_priced_candidate_never_displaces_a_profitable_one():
    rng = np.random.default_rng(4)
    spec, window = make_consumer(), _window()
    compared = 0
    for _ in range(300):
        option = OPTION1 if rng.random() < 0.5 else OPTION2
        count = int(rng.integers(1, 5))
        candidates = [_random_profile(rng, f"p{i}") for i in range(count)]
        loads = rng.uniform(0.0, 200.0, size=(count, 24))
        incumbent = choose_profile(window, candidates, FixedForecaster(loads), option, spec, 0)
        if incumbent.estimated_gain <= 0:
            continue
        at_cost = TariffProfile("0-at-cost", option.prices)
        with_load = np.vstack([rng.uniform(0.0, 200.0, size=(1, 24)), loads])
        decision = choose_profile(window, [at_cost] + candidates, FixedForecaster(with_load), option, spec, 0)
        assert decision.candidate_estimates["0-at-cost"] == 0.0
        assert decision.profile == incumbent.profile
        compared += 1
    assert compared > 50
