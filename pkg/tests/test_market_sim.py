import numpy as np
import pandas as pd
import pytest

from src.consumer import ConsumerRanges, sample_consumer
from src.errors import ConfigurationError, MissingArtifactError, UsageError
from src.market_sim import (
    DayRecord,
    SimDataset,
    bias_report,
    calendar_features,
    consumer_average_profiles,
    consumer_noise_seeds,
    curate_profiles_in,
    high_rate_spread,
    policy_allocate,
    quartile_profile,
    read_dataset,
    sample_profiles_out,
    simulate,
    write_dataset,
)
from src.tariff import TariffProfile
from tests.conftest import make_consumer


def _default_consumers(n=12, seed=0):
    return [sample_consumer(ConsumerRanges(), seed * 1000 + i, consumer_id=f"c{i:02d}") for i in range(n)]


def _flat(profile_id, high_hour=None):
    levels = np.ones(24, dtype=int)
    if high_hour is not None:
        levels[high_hour] = 2
    return TariffProfile.from_levels(profile_id, levels)


def test_calendar_features():
    calendar = calendar_features(37)
    assert calendar.shape == (24, 3)
    np.testing.assert_array_equal(calendar[:, 0], np.arange(24))
    assert set(calendar[:, 1]) == {2} and set(calendar[:, 2]) == {1}


def test_quartile_profile_prices_peak_hours_high():
    avg = np.ones(24)
    avg[9:13] = 5.0
    avg[0:3] = 0.5
    levels = quartile_profile(avg)
    assert np.all(levels[9:13] == 2)
    assert np.all(levels[0:3] == 0)
    assert np.sum(levels == 2) == 6 and np.sum(levels == 0) == 6


def test_curated_profiles_are_distinct_and_biased():
    consumers = _default_consumers()
    averages = consumer_average_profiles(consumers, consumer_noise_seeds(consumers, 0))
    profiles = curate_profiles_in(averages, 10, seed=1)
    assert len(profiles) == 10
    assert len({profile.rates for profile in profiles}) == 10
    assert len({profile.id for profile in profiles}) == 10
    high = np.mean([profile.levels() == 2 for profile in profiles], axis=0)
    assert high.max() > 0
    assert high.max() >= 2.0 * high.min()


def test_curation_single_profile_and_errors():
    avg = np.arange(24.0)
    assert len(curate_profiles_in([avg], 1, seed=0)) == 1
    with pytest.raises(ConfigurationError):
        curate_profiles_in([avg], 0, seed=0)
    with pytest.raises(ConfigurationError):
        curate_profiles_in([], 3, seed=0)


def test_curation_is_deterministic():
    averages = [np.arange(24.0), np.arange(24.0)[::-1]]
    assert curate_profiles_in(averages, 6, seed=3) == curate_profiles_in(averages, 6, seed=3)


def test_out_of_distribution_profiles_are_disjoint():
    averages = [np.arange(24.0), np.roll(np.arange(24.0), 6)]
    profiles_in = curate_profiles_in(averages, 5, seed=2)
    profiles_out = sample_profiles_out(40, seed=4, exclude=profiles_in)
    assert len(profiles_out) == 40
    assert len({profile.rates for profile in profiles_out}) == 40
    assert not {profile.rates for profile in profiles_out} & {profile.rates for profile in profiles_in}
    assert not {profile.id for profile in profiles_out} & {profile.id for profile in profiles_in}
    assert sample_profiles_out(0, seed=4) == []
    with pytest.raises(ConfigurationError):
        sample_profiles_out(-1, seed=4)


def test_policy_allocate():
    load = np.full(24, 10.0)
    load[10] = 100.0
    single = _flat("p0")
    assert policy_allocate(load, [single]) == single
    winner = _flat("b", high_hour=10)
    assert policy_allocate(load, [_flat("a", high_hour=3), winner]) == winner
    assert policy_allocate(np.zeros(24), [_flat("z"), _flat("y", high_hour=4)]).id == "y"
    with pytest.raises(UsageError):
        policy_allocate(load, [])


def test_sampled_profiles_are_uniform_per_hour():
    levels = np.stack([profile.levels() for profile in sample_profiles_out(10000, seed=7)])
    for level in range(3):
        np.testing.assert_allclose((levels == level).mean(axis=0), 1 / 3, rtol=0, atol=0.02)


def _brute_force_choice(load, candidates):
    scores = {profile.id: sum(rate * value for rate, value in zip(profile.rates, load)) for profile in candidates}
    best = max(scores.values())
    return min(profile_id for profile_id, score in scores.items() if score >= best - 1e-9)


def test_policy_allocate_matches_brute_force():
    rng = np.random.default_rng(11)
    for case in range(100):
        load = rng.uniform(0.0, 5.0, size=24)
        n = int(rng.integers(1, 8))
        ids = rng.permutation(n)
        candidates = [TariffProfile.from_levels(f"p{ids[i]}", rng.integers(0, 3, size=24)) for i in range(n)]
        if n > 1 and case % 3 == 0:
            candidates[0] = TariffProfile(candidates[0].id, candidates[-1].rates)
        assert policy_allocate(load, candidates).id == _brute_force_choice(load, candidates), case


def test_simulate_shapes_and_determinism():
    consumers = _default_consumers(n=2)
    profiles = [_flat("a", 9), _flat("b", 14), _flat("c")]
    first = simulate(consumers, profiles, months=1, seed=5)
    second = simulate(consumers, profiles, months=1, seed=5)
    for spec in consumers:
        assert first.consumption(spec.consumer_id).shape == (720,)
        assert first.tariff_rates(spec.consumer_id).shape == (720,)
        np.testing.assert_array_equal(first.consumption(spec.consumer_id), second.consumption(spec.consumer_id))
        assert first.days[spec.consumer_id][0].profile_id == "a"
    assert first.n_days == 30
    assert first.has_day_details
    assert [option.tag for option in first.wholesale] == ["Option1", "Option2"]
    assert first.price_series("Option1").shape == (720,)


def test_simulate_rejects_zero_months():
    with pytest.raises(ConfigurationError):
        simulate([make_consumer()], [_flat("a")], months=0, seed=0)


def test_simulated_days_respond_to_their_profile():
    spec = make_consumer()
    dataset = simulate([spec], [_flat("a", 9)], months=1, seed=0)
    for record in dataset.days[spec.consumer_id]:
        assert record.total_load.sum() == pytest.approx(
            record.base_load.sum() + (spec.shiftable_kw if record.scheduled else 0.0))
        indicator = record.shift_indicator()
        assert indicator.sum() == (1.0 if record.scheduled else 0.0)


def test_bias_report_single_day_is_profile_indicator():
    profile = TariffProfile.from_levels("p", [0, 1, 2] * 8)
    record = DayRecord(0, "p", np.zeros(24))
    dataset = SimDataset([make_consumer()], [profile], {"c00": [record]}, {"c00": 0})
    report = bias_report(dataset)
    expected = np.zeros((24, 3))
    expected[np.arange(24), profile.levels()] = 1.0
    np.testing.assert_array_equal(report.to_numpy(), expected)
    assert list(report.columns) == ["0.2", "0.5", "0.8"]


def test_bias_report_rows_sum_to_one_and_show_bias():
    consumers = _default_consumers(n=4)
    averages = consumer_average_profiles(consumers, consumer_noise_seeds(consumers, 0))
    dataset = simulate(consumers, curate_profiles_in(averages, 5, seed=0), months=1, seed=0)
    report = bias_report(dataset)
    np.testing.assert_allclose(report.sum(axis=1), 1.0)
    assert report.to_numpy().max() > 0.5
    assert high_rate_spread(report) >= 2.0


def test_bias_report_rejects_empty_dataset():
    with pytest.raises(UsageError):
        bias_report(SimDataset([], [], {}, {}))


def test_high_rate_spread():
    report = pd.DataFrame({"0.2": [0.5, 0.5], "0.5": [0.0, 0.25], "0.8": [0.5, 0.25]})
    assert high_rate_spread(report) == 2.0
    report["0.8"] = [0.5, 0.0]
    assert high_rate_spread(report) == float("inf")


def test_dataset_round_trip(tmp_path):
    consumers = _default_consumers(n=2)
    dataset = simulate(consumers, [_flat("a", 9), _flat("b", 15)], months=1, seed=3)
    write_dataset(dataset, str(tmp_path))
    loaded = read_dataset(str(tmp_path))
    assert loaded.consumers == dataset.consumers
    assert loaded.profiles == dataset.profiles
    assert loaded.noise_seeds == dataset.noise_seeds
    assert loaded.wholesale == dataset.wholesale
    for spec in consumers:
        np.testing.assert_array_equal(loaded.consumption(spec.consumer_id), dataset.consumption(spec.consumer_id))
        for original, restored in zip(dataset.days[spec.consumer_id], loaded.days[spec.consumer_id]):
            assert restored.profile_id == original.profile_id
            assert restored.shift_target == original.shift_target
            np.testing.assert_array_equal(restored.shift_indicator(), original.shift_indicator())


def test_dataset_without_day_table(tmp_path):
    dataset = simulate([make_consumer()], [_flat("a", 9)], months=1, seed=0)
    write_dataset(dataset, str(tmp_path))
    (tmp_path / "days.csv").unlink()
    loaded = read_dataset(str(tmp_path))
    assert not loaded.has_day_details
    with pytest.raises(UsageError):
        loaded.days["c00"][0].shift_indicator()


def test_read_dataset_reports_missing_files(tmp_path):
    with pytest.raises(MissingArtifactError):
        read_dataset(str(tmp_path / "absent"))
