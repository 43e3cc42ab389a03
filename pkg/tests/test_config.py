import json

import pytest

from src.config import DEFAULT_T_IN_SIZES, ExperimentConfig, worker_count
from src.errors import ConfigurationError
from src.layers import ModelVariant


def test_defaults_are_valid():
    config = ExperimentConfig()
    config.validate()
    assert config.t_in_sizes == DEFAULT_T_IN_SIZES
    assert config.model_variants == list(ModelVariant)
    assert config.split_months == (4, 1, 1) and config.replicates == 3


def test_from_json_builds_nested_sections(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({
        "seed": 3,
        "months": 3,
        "split_months": [1, 1, 1],
        "t_in_sizes": [2, 4],
        "variants": ["FC", "AttPE"],
        "training": {"epochs": 5, "eval_quantiles": [0.25, 0.75]},
        "dims": {"d": 6, "dilations": [1, 2, 4]},
        "ranges": {"sub_consumers": [4]},
    }))
    config = ExperimentConfig.from_json(str(path))
    config.validate()
    assert config.split_months == (1, 1, 1) and config.t_in_sizes == (2, 4)
    assert config.training.epochs == 5 and config.training.eval_quantiles == (0.25, 0.75)
    assert config.dims.d == 6 and config.dims.dilations == (1, 2, 4)
    assert config.ranges.sub_consumers == (4,)
    assert config.model_variants == [ModelVariant.FC, ModelVariant.ATT_PE]


def test_from_dict_rejects_unknown_fields():
    with pytest.raises(ConfigurationError, match="colour"):
        ExperimentConfig.from_dict({"colour": "blue"})
    with pytest.raises(ConfigurationError, match="training"):
        ExperimentConfig.from_dict({"training": {"momentum": 0.5}})


def test_from_json_errors(tmp_path):
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_json(str(tmp_path / "missing.json"))
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_json(str(broken))


@pytest.mark.parametrize("overrides", [
    {"split_months": (4, 1, 2)},
    {"t_in_sizes": ()},
    {"t_in_sizes": (0, 2)},
    {"variants": ("FC", "GRU")},
    {"variants": ()},
    {"wholesale_options": ("Option3",)},
    {"replicates": 0},
    {"t_out_size": -1},
])
def test_validate_rejects_inconsistent_configs(overrides):
    with pytest.raises(ConfigurationError):
        ExperimentConfig().with_overrides(**overrides).validate()


def test_with_overrides_ignores_none():
    config = ExperimentConfig().with_overrides(seed=None, output_dir="elsewhere")
    assert config.seed == 0 and config.output_dir == "elsewhere"


def test_to_dict_round_trips():
    config = ExperimentConfig(seed=4, t_in_sizes=(3,))
    assert ExperimentConfig.from_dict(config.to_dict()) == config


def test_worker_count(monkeypatch):
    monkeypatch.delenv("TARIFF_WORKERS", raising=False)
    assert worker_count() == 1
    monkeypatch.setenv("TARIFF_WORKERS", "4")
    assert worker_count() == 4
    for bad in ("zero", "0"):
        monkeypatch.setenv("TARIFF_WORKERS", bad)
        with pytest.raises(ConfigurationError):
            worker_count()
