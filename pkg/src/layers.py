"""Building blocks of the forecasting network's tariff branch.

Layers are plain functions over named parameters held in a
:class:`~src.optim.ParameterStore`; ``add_*`` helpers register the
parameters a layer reads.
"""
from enum import Enum
from typing import Optional

import numpy as np

from src.errors import UsageError
from src.optim import ParameterStore, glorot_uniform
from src.tensor import (
    Tensor,
    concat,
    embedding,
    maxpool_over_rows,
    relu,
    sigmoid,
    softmax_rows,
    sub,
    swapaxes,
)


class ModelVariant(str, Enum):
    """Forecasting methods, differing in how future tariffs are processed."""
    NOX = "NoX"
    IND = "Ind"
    FC = "FC"
    PE = "PE"
    ATT = "Att"
    ATT_NO_HOD = "AttNoHOD"
    ATT_PE = "AttPE"
    UB = "UB"

    @property
    def uses_attention(self) -> bool:
        return self in (ModelVariant.ATT, ModelVariant.ATT_NO_HOD, ModelVariant.ATT_PE, ModelVariant.UB)

    @property
    def uses_pe_query(self) -> bool:
        return self in (ModelVariant.PE, ModelVariant.ATT_PE, ModelVariant.UB)

    @property
    def needs_shift_indicator(self) -> bool:
        return self is ModelVariant.UB


def add_dense(store: ParameterStore, name: str, fan_in: int, fan_out: int, seed: int, bias: bool = True) -> None:
    store.add(f"{name}.weight", glorot_uniform((fan_in, fan_out), f"{name}.weight", seed, fan_in, fan_out))
    if bias:
        store.add(f"{name}.bias", np.zeros(fan_out))


def dense(store: ParameterStore, name: str, x: Tensor, activation: bool = False) -> Tensor:
    """``x @ W + b`` over the last axis, optionally followed by ReLU."""
    out = x @ store[f"{name}.weight"]
    if f"{name}.bias" in store:
        out = out + store[f"{name}.bias"]
    return relu(out) if activation else out


def add_embedding(store: ParameterStore, name: str, rows: int, width: int, seed: int) -> None:
    store.add(name, glorot_uniform((rows, width), name, seed, rows, width))


def categorical_embedding(store: ParameterStore, name: str, indices: np.ndarray) -> Tensor:
    return embedding(store[name], indices)


def calendar_embedding(store: ParameterStore, calendar: np.ndarray, include_hour: bool = True) -> Tensor:
    """Concatenated hour-of-day, day-of-week and month embeddings of ``[..., 3]`` indices."""
    parts = [
        categorical_embedding(store, "embed.dow", calendar[..., 1]),
        categorical_embedding(store, "embed.month", calendar[..., 2]),
    ]
    if include_hour:
        parts.insert(0, categorical_embedding(store, "embed.hour", calendar[..., 0]))
    return concat(parts, axis=-1)


def tou_features(store: ParameterStore, levels: np.ndarray) -> Tensor:
    """``ReLU(embed(TOU) . theta_TOU)``, the per-hour tariff representation."""
    return dense(store, "tou", categorical_embedding(store, "embed.tariff", levels), activation=True)


def pe_query_net(x: Tensor, lam: Tensor, gamma: Tensor) -> Tensor:
    """Permutation-equivariant map ``sigmoid(x Lam - 1 maxpool(x) Gam)``.

    Each output row depends on its own input row and on the column-wise
    maximum over all rows, so permuting the rows of ``x`` permutes the output
    rows the same way.

    Args:
        x: ``[..., H, d]`` per-hour tariff features.
        lam: ``[d, d']`` per-row weights.
        gamma: ``[d, d']`` weights applied to the pooled row.

    Returns:
        ``[..., H, d']`` features.
    """
    return sigmoid(sub(x @ lam, maxpool_over_rows(x) @ gamma))


def scaled_dot_attention(query: Tensor, key: Tensor, value: Tensor) -> Tensor:
    """``softmax(Q K^T / sqrt(d)) V`` with every query attending to every key."""
    scores = query @ swapaxes(key, -1, -2)
    return softmax_rows(scores / np.sqrt(key.shape[-1])) @ value


def tariff_attention(
    store: ParameterStore,
    tariff_features: Tensor,
    hour_features: Optional[Tensor],
    variant: ModelVariant,
) -> Tensor:
    """Attention context over the 24 future tariff positions.

    Att feeds tariff and hour features to the query, key and value heads;
    AttNoHOD only tariff features. AttPE and UB key on tariff and hour
    features but build the query from :func:`pe_query_net`, so it depends on
    the entire profile.

    Args:
        store: Parameters holding ``att.*`` heads (and ``pe.*`` for PE queries).
        tariff_features: ``[..., H, d]`` output of :func:`tou_features`.
        hour_features: ``[..., H, k]`` hour-of-day embeddings.
        variant: One of the attention variants.

    Returns:
        ``[..., H, d]`` context.

    Raises:
        UsageError: If a variant that keys on hour of day gets none, or the
            variant does not use attention.
    """
    if not variant.uses_attention:
        raise UsageError(f"variant {variant.value} has no attention branch")
    if variant is ModelVariant.ATT_NO_HOD:
        keyed = tariff_features
    elif hour_features is None:
        raise UsageError(f"variant {variant.value} needs hour-of-day features")
    else:
        keyed = concat([tariff_features, hour_features], axis=-1)

    key = dense(store, "att.key", keyed)
    value = dense(store, "att.value", keyed)
    if variant.uses_pe_query:
        query = dense(store, "att.query", pe_query_net(tariff_features, store["pe.lambda"], store["pe.gamma"]))
    else:
        query = dense(store, "att.query", keyed)
    return scaled_dot_attention(query, key, value)
