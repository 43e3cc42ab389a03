import numpy as np
import pytest

from src.errors import ConfigurationError, DimensionError, MissingGradientError
from src.optim import AdamState, ParameterStore, adam_step, glorot_uniform


def _store_with(values, grad) -> ParameterStore:
    store = ParameterStore()
    tensor = store.add("w", np.asarray(values, dtype=np.float64))
    tensor.grad = np.asarray(grad, dtype=np.float64)
    return store


def test_adam_first_step_closed_form():
    expected_step = -1e-4 / (1.0 + 1e-8)
    store = _store_with([0.0, 0.0], [1.0, -1.0])
    adam_step(store, AdamState(lr=1e-4, eps=1e-8))
    np.testing.assert_allclose(store["w"].values, [expected_step, -expected_step], rtol=1e-12)
    assert store["w"].values[0] == pytest.approx(-9.99999e-5, rel=1e-5)

    start = np.array([0.5, -2.0])
    store = _store_with(start, [1.0, 1.0])
    adam_step(store, AdamState(lr=1e-4, eps=1e-8))
    np.testing.assert_allclose(store["w"].values, start + expected_step, rtol=0, atol=4 * np.spacing(2.0))


def test_adam_zero_gradient_leaves_parameters_unchanged():
    store = _store_with([0.3, 0.7], [0.0, 0.0])
    state = AdamState()
    for _ in range(5):
        adam_step(store, state)
    np.testing.assert_array_equal(store["w"].values, [0.3, 0.7])
    assert state.step == 5


def test_adam_is_deterministic():
    def run() -> np.ndarray:
        rng = np.random.default_rng(4)
        store = ParameterStore()
        store.add("a", glorot_uniform((3, 2), "a", seed=1, fan_in=3, fan_out=2))
        state = AdamState(lr=1e-2)
        for _ in range(20):
            store["a"].grad = rng.standard_normal((3, 2))
            adam_step(store, state)
        return store["a"].values

    np.testing.assert_array_equal(run(), run())


def test_adam_names_missing_gradient():
    store = ParameterStore()
    store.add("head0.weight", np.ones(2)).grad = np.ones(2)
    store.add("head1.weight", np.ones(2))
    with pytest.raises(MissingGradientError, match="head1.weight"):
        adam_step(store, AdamState())


def test_parameter_store_rejects_duplicates_and_iterates_by_name():
    store = ParameterStore()
    store.add("zeta", np.zeros(2))
    store.add("alpha", np.zeros((2, 3)))
    with pytest.raises(ConfigurationError):
        store.add("alpha", np.zeros(1))
    assert [name for name, _ in store.items()] == ["alpha", "zeta"]
    assert store.count() == 8
    assert len(store) == 2 and "zeta" in store


def test_snapshot_and_restore():
    store = ParameterStore()
    store.add("w", np.arange(3.0))
    saved = store.snapshot()
    store["w"].values = np.zeros(3)
    store.restore(saved)
    np.testing.assert_array_equal(store["w"].values, [0.0, 1.0, 2.0])
    with pytest.raises(DimensionError):
        store.restore({"w": np.zeros(4)})
    with pytest.raises(DimensionError):
        store.restore({})


def test_glorot_uniform_is_bounded_and_reproducible():
    first = glorot_uniform((20, 30), "cwfc.weight", seed=3, fan_in=20, fan_out=30)
    limit = np.sqrt(6.0 / 50.0)
    assert np.all(np.abs(first) <= limit)
    np.testing.assert_array_equal(first, glorot_uniform((20, 30), "cwfc.weight", seed=3, fan_in=20, fan_out=30))
    assert not np.array_equal(first, glorot_uniform((20, 30), "local.weight", seed=3, fan_in=20, fan_out=30))
    assert not np.array_equal(first, glorot_uniform((20, 30), "cwfc.weight", seed=4, fan_in=20, fan_out=30))
