"""The seven forecasting architectures, built from :mod:`stockbot.layers`.

Every model maps a normalized window ``[k, 1]`` (or a batch ``[B, k, 1]``) to a
forecast block ``[h]`` (or ``[B, h]``). Parameters live in one flat, ordered
name -> Tensor map so checkpoints and the optimizer need no knowledge of the
architecture.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from stockbot import autodiff as ad
from stockbot import layers
from stockbot.autodiff import Tensor
from stockbot.errors import ConfigError, DimensionError
from stockbot.layers import (
    BahdanauParams,
    CausalConvParams,
    LstmLayerParams,
    Mode,
    MultiHeadParams,
)

logger = logging.getLogger(__name__)


class ModelKind(str, Enum):
    LSTM = "LSTM"
    TRANSFORMER = "Transformer"
    ATTENTION_LSTM = "AttentionLSTM"
    MULTI_HEAD_ATTENTION_LSTM = "MultiHeadAttentionLSTM"
    INFORMER = "Informer"
    TCN = "TCN"
    TFT = "TFT"


# Report row order.
MODEL_KINDS: List[ModelKind] = list(ModelKind)

DISPLAY_NAMES: Dict[ModelKind, str] = {
    ModelKind.LSTM: "LSTM",
    ModelKind.TRANSFORMER: "Transformer",
    ModelKind.ATTENTION_LSTM: "Attention LSTM",
    ModelKind.MULTI_HEAD_ATTENTION_LSTM: "MultiHeadAttention LSTM",
    ModelKind.INFORMER: "Informer",
    ModelKind.TCN: "TCN",
    ModelKind.TFT: "TFT",
}

_HEADED = {
    ModelKind.MULTI_HEAD_ATTENTION_LSTM,
    ModelKind.INFORMER,
    ModelKind.TRANSFORMER,
    ModelKind.TFT,
}


class ModelSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: ModelKind = ModelKind.LSTM
    past_history: int = Field(default=60, ge=2, description="Input window length k in trading days")
    forward_look: int = Field(default=1, ge=1, description="Forecast block length h in trading days")
    hidden: int = Field(default=64, ge=1)
    ff_dim: int = Field(default=128, ge=1)
    heads: int = Field(default=4, ge=1)
    encoder_layers: int = Field(default=2, ge=1)
    lstm_layers: int = Field(default=2, ge=1)
    kernel_size: int = Field(default=3, ge=1)
    dropout: float = Field(default=0.1, ge=0.0, lt=1.0)
    seed: int = 0

    @model_validator(mode="after")
    def _heads_divide_hidden(self) -> "ModelSpec":
        check_spec(self)
        return self

    @property
    def d_k(self) -> int:
        return self.hidden // self.heads


def check_spec(spec: ModelSpec) -> None:
    if spec.past_history < 2:
        raise ConfigError(f"past_history must be >= 2, got {spec.past_history}")
    if spec.forward_look < 1:
        raise ConfigError(f"forward_look must be >= 1, got {spec.forward_look}")
    if spec.kernel_size < 1:
        raise ConfigError(f"kernel_size must be >= 1, got {spec.kernel_size}")
    if spec.kind in _HEADED and spec.hidden % spec.heads:
        raise ConfigError(f"heads={spec.heads} must divide hidden={spec.hidden} for {spec.kind.value}")


@dataclass
class ModelState:
    spec: ModelSpec
    parameters: Dict[str, Tensor]
    step_count: int = 0

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: t.numpy() for name, t in self.parameters.items()}

    def with_arrays(self, arrays: Mapping[str, np.ndarray], step_count: Optional[int] = None) -> "ModelState":
        """New state with the same inventory and replaced values."""
        if set(arrays) != set(self.parameters):
            missing = sorted(set(self.parameters) ^ set(arrays))
            raise DimensionError(f"parameter inventory differs from {self.spec.kind.value}: {missing}")
        params: Dict[str, Tensor] = {}
        for name, current in self.parameters.items():
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != current.shape:
                raise DimensionError(f"{name}: expected shape {current.shape}, got {value.shape}")
            params[name] = Tensor(value, requires_grad=True)
        return ModelState(self.spec, params, self.step_count if step_count is None else step_count)

    def copy(self) -> "ModelState":
        return self.with_arrays(self.arrays())

    @property
    def size(self) -> int:
        return sum(t.size for t in self.parameters.values())


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


@dataclass
class _Inventory:
    rng: np.random.Generator
    arrays: Dict[str, np.ndarray] = field(default_factory=dict)

    def add(self, prefix: str, values: Mapping[str, np.ndarray]) -> None:
        for name, value in values.items():
            self.arrays[f"{prefix}.{name}"] = value


def _lstm_layers(inv: _Inventory, spec: ModelSpec) -> None:
    d_in = 1
    for i in range(spec.lstm_layers):
        inv.add(f"lstm.{i}", layers.init_lstm_layer(inv.rng, d_in, spec.hidden))
        d_in = spec.hidden


def _encoder(inv: _Inventory, spec: ModelSpec) -> None:
    d = spec.hidden
    inv.add("embed", layers.init_linear(inv.rng, 1, d))
    for i in range(spec.encoder_layers):
        inv.add(f"enc.{i}.mha", layers.init_mha(inv.rng, d))
        inv.add(f"enc.{i}.ln1", layers.init_layernorm(d))
        inv.add(f"enc.{i}.ffn", _init_ffn(inv.rng, d, spec.ff_dim))
        inv.add(f"enc.{i}.ln2", layers.init_layernorm(d))


def _init_ffn(rng: np.random.Generator, d: int, ff: int) -> Dict[str, np.ndarray]:
    inner = layers.init_linear(rng, d, ff)
    outer = layers.init_linear(rng, ff, d)
    return {"W1": inner["W"], "b1": inner["b"], "W2": outer["W"], "b2": outer["b"]}


def _head(inv: _Inventory, spec: ModelSpec) -> None:
    inv.add("head", layers.init_linear(inv.rng, spec.hidden, spec.forward_look))


def _build_lstm(inv: _Inventory, spec: ModelSpec) -> None:
    _lstm_layers(inv, spec)
    _head(inv, spec)


def _build_attention_lstm(inv: _Inventory, spec: ModelSpec) -> None:
    _lstm_layers(inv, spec)
    d = spec.hidden
    inv.add(
        "attn",
        {
            "W1": layers.glorot_uniform(inv.rng, (d, d)),
            "W2": layers.glorot_uniform(inv.rng, (d, d)),
            "v": layers.glorot_uniform(inv.rng, (d,)),
        },
    )
    _head(inv, spec)


def _build_mha_lstm(inv: _Inventory, spec: ModelSpec) -> None:
    _lstm_layers(inv, spec)
    inv.add("mha", layers.init_mha(inv.rng, spec.hidden))
    _head(inv, spec)


def _build_tcn(inv: _Inventory, spec: ModelSpec) -> None:
    inv.add("conv.0", layers.init_conv(inv.rng, spec.kernel_size, 1, spec.hidden))
    inv.add("conv.1", layers.init_conv(inv.rng, spec.kernel_size, spec.hidden, spec.hidden))
    _head(inv, spec)


def _build_informer(inv: _Inventory, spec: ModelSpec) -> None:
    _encoder(inv, spec)
    _head(inv, spec)


def _build_transformer(inv: _Inventory, spec: ModelSpec) -> None:
    _build_informer(inv, spec)
    # Drawn last so every other tensor matches the Informer built from the same seed.
    inv.add("pos", {"P": layers.glorot_uniform(inv.rng, (spec.past_history, spec.hidden))})


def _build_tft(inv: _Inventory, spec: ModelSpec) -> None:
    d = spec.hidden
    _lstm_layers(inv, spec)
    inv.add("mha", layers.init_mha(inv.rng, d, project=False))
    inv.add("attn_ln", layers.init_layernorm(d))
    inv.add("gate", layers.init_linear(inv.rng, d, d))
    _head(inv, spec)


_BUILDERS: Dict[ModelKind, Callable[[_Inventory, ModelSpec], None]] = {
    ModelKind.LSTM: _build_lstm,
    ModelKind.TRANSFORMER: _build_transformer,
    ModelKind.ATTENTION_LSTM: _build_attention_lstm,
    ModelKind.MULTI_HEAD_ATTENTION_LSTM: _build_mha_lstm,
    ModelKind.INFORMER: _build_informer,
    ModelKind.TCN: _build_tcn,
    ModelKind.TFT: _build_tft,
}


def build(spec: ModelSpec, rng: Optional[np.random.Generator] = None) -> ModelState:
    """Initialize a model. Without ``rng`` the stream is seeded from ``spec.seed``."""
    check_spec(spec)
    try:
        builder = _BUILDERS[ModelKind(spec.kind)]
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"unknown model kind {spec.kind!r}") from exc
    inv = _Inventory(rng if rng is not None else np.random.default_rng(spec.seed))
    builder(inv, spec)
    params = {name: Tensor(value, requires_grad=True) for name, value in inv.arrays.items()}
    state = ModelState(spec=spec, parameters=params)
    logger.debug("built %s with %d parameters", spec.kind.value, state.size)
    return state


def parameter_count(spec: ModelSpec) -> int:
    """Closed-form parameter count for ``spec``."""
    k, h, d, ff, K = spec.past_history, spec.forward_look, spec.hidden, spec.ff_dim, spec.kernel_size

    def lstm(d_in: int) -> int:
        return 4 * (d_in * d + d * d + d)

    recurrent = lstm(1) + (spec.lstm_layers - 1) * lstm(d)
    head = d * h + h
    block = 4 * d * d + 2 * (2 * d) + (d * ff + ff + ff * d + d)
    encoder = (d + d) + spec.encoder_layers * block

    counts = {
        ModelKind.LSTM: recurrent + head,
        ModelKind.ATTENTION_LSTM: recurrent + (2 * d * d + d) + head,
        ModelKind.MULTI_HEAD_ATTENTION_LSTM: recurrent + 4 * d * d + head,
        ModelKind.TCN: (K * d + d) + (K * d * d + d) + head,
        ModelKind.INFORMER: encoder + head,
        ModelKind.TRANSFORMER: encoder + k * d + head,
        ModelKind.TFT: recurrent + 3 * d * d + 2 * d + (d * d + d) + head,
    }
    return counts[ModelKind(spec.kind)]


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------


@dataclass
class _Pass:
    params: Dict[str, Tensor]
    spec: ModelSpec
    mode: Mode
    rate: float
    rng: Optional[np.random.Generator]

    def drop(self, x: Tensor) -> Tensor:
        return layers.dropout(x, self.rate, self.mode, self.rng)

    def recurrent(self, X: Tensor) -> Tensor:
        stack = [LstmLayerParams.from_params(self.params, f"lstm.{i}") for i in range(self.spec.lstm_layers)]
        return layers.lstm_stack(stack, X, self.rate, self.mode, self.rng)

    def head(self, z: Tensor) -> Tensor:
        return layers.affine(z, self.params["head.W"], self.params["head.b"])

    def encode(self, X: Tensor, positions: Tensor) -> Tensor:
        H = layers.affine(X, self.params["embed.W"], self.params["embed.b"])
        H = H + ad.broadcast_to(positions, H.shape)
        for i in range(self.spec.encoder_layers):
            p = f"enc.{i}"
            mha = MultiHeadParams.from_params(self.params, self.spec.heads, f"{p}.mha")
            A = layers.multi_head_self_attention(mha, H)
            H = ad.layernorm(H + A, self.params[f"{p}.ln1.gain"], self.params[f"{p}.ln1.bias"])
            inner = ad.gelu(layers.affine(H, self.params[f"{p}.ffn.W1"], self.params[f"{p}.ffn.b1"]))
            F = self.drop(layers.affine(inner, self.params[f"{p}.ffn.W2"], self.params[f"{p}.ffn.b2"]))
            H = ad.layernorm(H + F, self.params[f"{p}.ln2.gain"], self.params[f"{p}.ln2.bias"])
        return H


def _forward_lstm(p: _Pass, X: Tensor) -> Tensor:
    H = p.recurrent(X)
    return p.head(ad.take(H, -1, axis=1))


def _forward_attention_lstm(p: _Pass, X: Tensor) -> Tensor:
    H = p.recurrent(X)
    context, _ = layers.bahdanau_attend(BahdanauParams.from_params(p.params, "attn"), H)
    return p.head(context)


def _forward_mha_lstm(p: _Pass, X: Tensor) -> Tensor:
    H = p.recurrent(X)
    A = layers.multi_head_self_attention(MultiHeadParams.from_params(p.params, p.spec.heads, "mha"), H)
    return p.head(ad.mean(A, axis=1))


def _forward_tcn(p: _Pass, X: Tensor) -> Tensor:
    H = layers.causal_conv1d(CausalConvParams.from_params(p.params, "conv.0"), X)
    H = layers.causal_conv1d(CausalConvParams.from_params(p.params, "conv.1"), H)
    return p.head(ad.mean(H, axis=1))


def _forward_informer(p: _Pass, X: Tensor) -> Tensor:
    table = Tensor(layers.sinusoidal_positions(p.spec.past_history, p.spec.hidden))
    return p.head(ad.mean(p.encode(X, table), axis=1))


def _forward_transformer(p: _Pass, X: Tensor) -> Tensor:
    return p.head(ad.mean(p.encode(X, p.params["pos.P"]), axis=1))


def _forward_tft(p: _Pass, X: Tensor) -> Tensor:
    H2 = p.recurrent(X)
    heads = layers.multi_head_self_attention(MultiHeadParams.from_params(p.params, p.spec.heads, "mha"), H2)
    A = ad.layernorm(heads, p.params["attn_ln.gain"], p.params["attn_ln.bias"])
    G = ad.sigmoid(layers.affine(A, p.params["gate.W"], p.params["gate.b"]))
    H = H2 + G * A
    return p.head(ad.mean(H, axis=1))


_FORWARDS: Dict[ModelKind, Callable[[_Pass, Tensor], Tensor]] = {
    ModelKind.LSTM: _forward_lstm,
    ModelKind.TRANSFORMER: _forward_transformer,
    ModelKind.ATTENTION_LSTM: _forward_attention_lstm,
    ModelKind.MULTI_HEAD_ATTENTION_LSTM: _forward_mha_lstm,
    ModelKind.INFORMER: _forward_informer,
    ModelKind.TCN: _forward_tcn,
    ModelKind.TFT: _forward_tft,
}


def forward(
    state: ModelState,
    X: ad.ArrayLike,
    mode: Mode = "eval",
    rng: Optional[np.random.Generator] = None,
    dropout: Optional[float] = None,
) -> Tensor:
    """Forecast block(s) for a window ``[k, 1]`` or a batch ``[B, k, 1]``.

    ``dropout`` overrides ``state.spec.dropout``; train mode needs ``rng``.
    """
    spec = state.spec
    X = ad.as_tensor(X)
    k = spec.past_history
    if X.ndim == 2 and X.shape == (k, 1):
        batch, squeeze = ad.reshape(X, (1, k, 1)), True
    elif X.ndim == 3 and X.shape[1:] == (k, 1):
        batch, squeeze = X, False
    else:
        raise DimensionError(f"{spec.kind.value} expects a window of shape ({k}, 1) or (B, {k}, 1), got {X.shape}")
    rate = spec.dropout if dropout is None else dropout
    run = _Pass(state.parameters, spec, mode, rate, rng)
    out = _FORWARDS[ModelKind(spec.kind)](run, batch)
    return ad.reshape(out, (spec.forward_look,)) if squeeze else out
