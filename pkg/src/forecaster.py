"""Quantile forecasting network: DCNN history branch, tariff branch and IQN head."""
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from src.artifacts import replace_on_success
from src.errors import ConfigurationError, CorruptArtifactError, DimensionError, MissingArtifactError, UsageError
from src.features import ForecastWindow, Normalization, WindowBatch, stack_windows
from src.layers import (
    ModelVariant,
    add_dense,
    add_embedding,
    calendar_embedding,
    categorical_embedding,
    dense,
    pe_query_net,
    tariff_attention,
    tou_features,
)
from src.optim import ParameterStore, glorot_uniform
from src.tensor import (
    BatchNormStats,
    Tensor,
    batchnorm_1d,
    concat,
    conv1d_dilated_causal,
    einsum,
    mul,
    relu,
    reshape,
    swapaxes,
)

logger = logging.getLogger(__name__)

TARIFF_LEVEL_COUNT = 3
CALENDAR_SIZES = {"embed.hour": 24, "embed.dow": 7, "embed.month": 12}
PREDICT_CHUNK = 256


def parse_variant(tag: str) -> ModelVariant:
    """Look up a variant by tag.

    Raises:
        ConfigurationError: For an unknown tag.
    """
    try:
        return ModelVariant(tag)
    except ValueError:
        known = ", ".join(variant.value for variant in ModelVariant)
        raise ConfigurationError(f"unknown model variant '{tag}' (expected one of {known})") from None


@dataclass
class ModelDims:
    """Layer widths of the forecasting network.

    Attributes:
        d: Width of tariff embeddings and attention heads.
        d_prime: Output width of the permutation-equivariant query net.
        conv_filters: Filters per causal convolution layer.
        conv_layers: Number of causal convolution layers.
        conv_kernel: Kernel width of each convolution.
        dilations: Dilation of each convolution layer.
        cwfc_units: Output length of the channel-wise fully connected layer.
        local_filters: Filters of the locally connected layer.
        calendar_embed: Width of each calendar embedding.
        tariff_embed: Width of the tariff-level embedding.
        head_units: Widths of the per-hour output stack.
        iqn_basis: Number of cosine basis terms of the quantile embedding.
        input_len: Lookback length in hours.
        horizon: Forecast length in hours.
    """
    d: int = 10
    d_prime: int = 20
    conv_filters: int = 16
    conv_layers: int = 3
    conv_kernel: int = 2
    dilations: Tuple[int, ...] = (1, 2, 4)
    cwfc_units: int = 24
    local_filters: int = 10
    calendar_embed: int = 5
    tariff_embed: int = 10
    head_units: Tuple[int, ...] = (40, 10, 1)
    iqn_basis: int = 8
    input_len: int = 168
    horizon: int = 24

    def __post_init__(self) -> None:
        self.dilations = tuple(int(d) for d in self.dilations)
        self.head_units = tuple(int(u) for u in self.head_units)

    def validate(self) -> None:
        """Raise ConfigurationError for inconsistent widths."""
        scalars = {name: value for name, value in asdict(self).items() if isinstance(value, int)}
        for name, value in scalars.items():
            if value < 1:
                raise ConfigurationError(f"model dimension '{name}' must be positive, got {value}")
        if len(self.dilations) != self.conv_layers or min(self.dilations, default=1) < 1:
            raise ConfigurationError("need one positive dilation per convolution layer")
        if self.cwfc_units != self.horizon:
            raise ConfigurationError("channel-wise FC units must equal the forecast horizon")
        if not self.head_units or self.head_units[-1] != 1 or min(self.head_units) < 1:
            raise ConfigurationError("head units must be positive and end in a single output")

    def context_width(self, variant: ModelVariant) -> int:
        if variant is ModelVariant.NOX:
            return 0
        if variant is ModelVariant.PE:
            return self.d_prime
        return self.d

    def fused_width(self, variant: ModelVariant) -> int:
        extra = 1 if variant.needs_shift_indicator else 0
        return self.local_filters + self.context_width(variant) + 3 * self.calendar_embed + extra


class ForecastNetwork:
    """Parameters and forward pass of one forecasting variant.

    Attributes:
        variant: Tariff-processing variant.
        dims: Layer widths.
        seed: Initialization seed.
        params: Learnable parameters, named ``<layer>.<tensor>``.
        bn_stats: Running batch-normalization statistics per convolution layer.
    """

    def __init__(self, variant: ModelVariant, dims: ModelDims, seed: int) -> None:
        dims.validate()
        self.variant = variant
        self.dims = dims
        self.seed = seed
        self.params = ParameterStore()
        self.bn_stats: Dict[str, BatchNormStats] = {}
        self._build()

    def _build(self) -> None:
        dims, store, seed = self.dims, self.params, self.seed
        add_embedding(store, "embed.tariff", TARIFF_LEVEL_COUNT, dims.tariff_embed, seed)
        for name, rows in CALENDAR_SIZES.items():
            add_embedding(store, name, rows, dims.calendar_embed, seed)

        channels = 1 + dims.tariff_embed + 3 * dims.calendar_embed
        for layer in range(dims.conv_layers):
            name = f"conv{layer}"
            shape = (dims.conv_filters, channels, dims.conv_kernel)
            store.add(f"{name}.kernel", glorot_uniform(shape, f"{name}.kernel", seed,
                                                       channels * dims.conv_kernel, dims.conv_filters * dims.conv_kernel))
            store.add(f"{name}.bn.gamma", np.ones(dims.conv_filters))
            store.add(f"{name}.bn.beta", np.zeros(dims.conv_filters))
            self.bn_stats[name] = BatchNormStats.fresh(dims.conv_filters)
            channels = dims.conv_filters

        store.add("cwfc.weight", glorot_uniform((dims.conv_filters, dims.input_len, dims.cwfc_units),
                                                "cwfc.weight", seed, dims.input_len, dims.cwfc_units))
        store.add("cwfc.bias", np.zeros((dims.conv_filters, dims.cwfc_units)))
        store.add("local.weight", glorot_uniform((dims.horizon, dims.conv_filters, dims.local_filters),
                                                 "local.weight", seed, dims.conv_filters, dims.local_filters))
        store.add("local.bias", np.zeros((dims.horizon, dims.local_filters)))

        variant = self.variant
        if variant is ModelVariant.FC:
            add_dense(store, "fc", dims.horizon, dims.horizon * dims.d, seed)
        elif variant is not ModelVariant.NOX:
            add_dense(store, "tou", dims.tariff_embed, dims.d, seed)
        if variant.uses_pe_query:
            store.add("pe.lambda", glorot_uniform((dims.d, dims.d_prime), "pe.lambda", seed, dims.d, dims.d_prime))
            store.add("pe.gamma", glorot_uniform((dims.d, dims.d_prime), "pe.gamma", seed, dims.d, dims.d_prime))
        if variant.uses_attention:
            keyed = dims.d if variant is ModelVariant.ATT_NO_HOD else dims.d + dims.calendar_embed
            add_dense(store, "att.key", keyed, dims.d, seed)
            add_dense(store, "att.value", keyed, dims.d, seed)
            add_dense(store, "att.query", dims.d_prime if variant.uses_pe_query else keyed, dims.d, seed)

        fused = dims.fused_width(variant)
        add_dense(store, "iqn", dims.iqn_basis, fused, seed)
        width = fused
        for index, units in enumerate(dims.head_units):
            add_dense(store, f"head{index}", width, units, seed)
            width = units

    def conv_kernels(self) -> List[Tensor]:
        return [self.params[f"conv{layer}.kernel"] for layer in range(self.dims.conv_layers)]

    def _history_branch(self, batch: WindowBatch, training: bool, update_stats: bool) -> Tensor:
        """DCNN over the lookback, then channel-wise FC and the locally connected layer."""
        store, dims = self.params, self.dims
        consumption = Tensor(batch.past_consumption[..., np.newaxis])
        inputs = concat([
            consumption,
            categorical_embedding(store, "embed.tariff", batch.past_levels),
            calendar_embedding(store, batch.past_calendar),
        ], axis=-1)
        x = swapaxes(inputs, -1, -2)
        for layer, dilation in enumerate(dims.dilations):
            name = f"conv{layer}"
            x = conv1d_dilated_causal(x, store[f"{name}.kernel"], dilation)
            x = batchnorm_1d(x, store[f"{name}.bn.gamma"], store[f"{name}.bn.beta"], training,
                             self.bn_stats[name], update_stats=update_stats)
            x = relu(x)
        x = relu(einsum("bct,cth->bch", x, store["cwfc.weight"]) + store["cwfc.bias"])
        x = swapaxes(x, -1, -2)
        return relu(einsum("bhc,hcf->bhf", x, store["local.weight"]) + store["local.bias"])

    def tariff_branch(self, batch: WindowBatch) -> Optional[Tensor]:
        """Per-hour tariff context ``[batch x horizon x width]``, ``None`` for NoX."""
        store, dims, variant = self.params, self.dims, self.variant
        if variant is ModelVariant.NOX:
            return None
        if variant is ModelVariant.FC:
            flat = dense(store, "fc", Tensor(batch.future_rates), activation=True)
            return reshape(flat, (len(batch), dims.horizon, dims.d))
        tariff = tou_features(store, batch.future_levels)
        if variant is ModelVariant.IND:
            return tariff
        if variant is ModelVariant.PE:
            return pe_query_net(tariff, store["pe.lambda"], store["pe.gamma"])
        hours = None
        if variant is not ModelVariant.ATT_NO_HOD:
            hours = categorical_embedding(store, "embed.hour", batch.future_calendar[..., 0])
        return tariff_attention(store, tariff, hours, variant)

    def quantile_embedding(self, quantiles: np.ndarray) -> Tensor:
        """``ReLU(dense(cos(pi i q)))`` for ``i = 0..iqn_basis-1``, one row per sample."""
        basis = np.cos(np.pi * np.outer(quantiles, np.arange(self.dims.iqn_basis)))
        return dense(self.params, "iqn", Tensor(basis), activation=True)

    def forward(
        self,
        batch: WindowBatch,
        quantiles: np.ndarray,
        training: bool = False,
        update_stats: bool = True,
    ) -> Tensor:
        """Normalized forecasts ``[batch x horizon]``, one quantile level per sample.

        Raises:
            DimensionError: If the batch does not match the network's lengths.
            UsageError: If a UB batch lacks shift indicators.
        """
        dims = self.dims
        if batch.past_consumption.shape[-1] != dims.input_len or batch.future_levels.shape[-1] != dims.horizon:
            raise DimensionError(
                f"network expects {dims.input_len}h lookback and {dims.horizon}h horizon, got "
                f"{batch.past_consumption.shape[-1]}h and {batch.future_levels.shape[-1]}h")
        quantiles = np.broadcast_to(np.asarray(quantiles, dtype=np.float64), (len(batch),))

        parts = [self._history_branch(batch, training, update_stats)]
        context = self.tariff_branch(batch)
        if context is not None:
            parts.append(context)
        parts.append(calendar_embedding(self.params, batch.future_calendar))
        if self.variant.needs_shift_indicator:
            if batch.shift_indicator is None:
                raise UsageError("UB forecasts need future shift indicators")
            parts.append(Tensor(batch.shift_indicator[..., np.newaxis]))
        fused = concat(parts, axis=-1)

        phi = self.quantile_embedding(quantiles)
        x = mul(fused, reshape(phi, (len(batch), 1, phi.shape[-1])))
        last = len(dims.head_units) - 1
        for index in range(len(dims.head_units)):
            x = dense(self.params, f"head{index}", x, activation=index < last)
        return reshape(x, (len(batch), dims.horizon))


def assemble_model(variant: ModelVariant, dims: Optional[ModelDims] = None, seed: int = 0) -> "TrainedModel":
    """Build an untrained model of ``variant``.

    Raises:
        ConfigurationError: For an unknown variant or inconsistent dims.
    """
    if not isinstance(variant, ModelVariant):
        variant = parse_variant(variant)
    network = ForecastNetwork(variant, dims if dims is not None else ModelDims(), seed)
    logger.debug("Assembled %s with %d parameters", variant.value, network.params.count())
    return TrainedModel(network)


class Forecaster(Protocol):
    """Anything that produces normalized and kWh quantile forecasts for windows."""

    def predict_normalized(self, windows: Sequence[ForecastWindow], quantiles: Sequence[float]) -> np.ndarray:
        ...

    def predict(self, windows: Sequence[ForecastWindow], quantiles: Sequence[float]) -> np.ndarray:
        ...


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_aql: float


@dataclass
class TrainedModel:
    """A forecasting network with its training state.

    Attributes:
        network: The network and its parameters.
        normalization: Per-consumer ``(mean, std)`` from the training split.
        history: One record per trained epoch.
        best_epoch: Epoch whose parameters were kept, ``None`` if untrained.
    """
    network: ForecastNetwork
    normalization: Normalization = field(default_factory=dict)
    history: List[EpochRecord] = field(default_factory=list)
    best_epoch: Optional[int] = None

    @property
    def variant(self) -> ModelVariant:
        return self.network.variant

    @property
    def dims(self) -> ModelDims:
        return self.network.dims

    @property
    def seed(self) -> int:
        return self.network.seed

    def predict_normalized(self, windows: Sequence[ForecastWindow], quantiles: Sequence[float]) -> np.ndarray:
        """Eval-mode forecasts ``[n x horizon x len(quantiles)]`` on the normalized scale."""
        if not windows:
            raise UsageError("predict needs at least one window")
        out = np.empty((len(windows), self.dims.horizon, len(quantiles)))
        for start in range(0, len(windows), PREDICT_CHUNK):
            batch = stack_windows(windows[start:start + PREDICT_CHUNK])
            for column, q in enumerate(quantiles):
                out[start:start + len(batch), :, column] = self.network.forward(batch, np.full(len(batch), q)).values
        return out

    def predict(self, windows: Sequence[ForecastWindow], quantiles: Sequence[float]) -> np.ndarray:
        """Forecasts in kWh, denormalized with each window's consumer statistics."""
        normalized = self.predict_normalized(windows, quantiles)
        std = np.array([window.norm_std for window in windows])[:, np.newaxis, np.newaxis]
        mean = np.array([window.norm_mean for window in windows])[:, np.newaxis, np.newaxis]
        return normalized * std + mean


def predict(model: Forecaster, windows: Sequence[ForecastWindow], quantiles: Sequence[float]) -> np.ndarray:
    return model.predict(windows, quantiles)


class OracleForecaster:
    """Returns the realized target of each window for every quantile."""

    variant_tag = "oracle"

    def predict_normalized(self, windows: Sequence[ForecastWindow], quantiles: Sequence[float]) -> np.ndarray:
        return np.repeat(np.stack([w.target for w in windows])[..., np.newaxis], len(quantiles), axis=-1)

    def predict(self, windows: Sequence[ForecastWindow], quantiles: Sequence[float]) -> np.ndarray:
        return np.repeat(np.stack([w.target_kwh for w in windows])[..., np.newaxis], len(quantiles), axis=-1)


# Checkpoints

def save_checkpoint(model: TrainedModel, path: str) -> None:
    """Write the model as JSON; floats keep their shortest round-trip repr."""
    network = model.network
    payload = {
        "variant": model.variant.value,
        "dims": asdict(model.dims),
        "seed": model.seed,
        "best_epoch": model.best_epoch,
        "parameters": {
            name: {"shape": list(tensor.shape), "values": tensor.values.reshape(-1).tolist()}
            for name, tensor in network.params.items()
        },
        "batchnorm_stats": {
            name: {"mean": stats.mean.tolist(), "var": stats.var.tolist()}
            for name, stats in sorted(network.bn_stats.items())
        },
        "normalization": {cid: list(stats) for cid, stats in sorted(model.normalization.items())},
        "loss_history": [asdict(record) for record in model.history],
    }
    with replace_on_success(path) as temporary:
        with open(temporary, "w", encoding="utf-8") as handle:
            json.dump(payload, handle)


def load_checkpoint(path: str) -> TrainedModel:
    """Rebuild a model saved by :func:`save_checkpoint`.

    Raises:
        MissingArtifactError: If the file does not exist.
        CorruptArtifactError: If the file is truncated or lacks a field.
        DimensionError: If stored parameters do not fit the stored dims.
    """
    if not os.path.exists(path):
        raise MissingArtifactError("checkpoint", path)
    try:
        with open(path, "r", encoding="utf-8") as handle:
            payload = json.load(handle)
        return _model_from_payload(payload, path)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as error:
        raise CorruptArtifactError("checkpoint", path, f"{type(error).__name__}: {error}") from error


def _model_from_payload(payload: dict, path: str) -> TrainedModel:
    model = assemble_model(parse_variant(payload["variant"]), ModelDims(**payload["dims"]), int(payload["seed"]))
    values = {
        name: np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in payload["parameters"].items()
    }
    if set(values) != set(model.network.params.names()):
        raise DimensionError(f"checkpoint {path} does not match the parameters of {payload['variant']}")
    model.network.params.restore(values)
    for name, entry in payload["batchnorm_stats"].items():
        model.network.bn_stats[name] = BatchNormStats(np.array(entry["mean"]), np.array(entry["var"]))
    model.normalization = {cid: (float(mean), float(std)) for cid, (mean, std) in payload["normalization"].items()}
    model.history = [EpochRecord(**record) for record in payload["loss_history"]]
    model.best_epoch = payload["best_epoch"]
    return model
