"""Layer primitives: LSTM, Bahdanau attention, multi-head self-attention,
causal convolution, dropout, affine heads and the fixed sinusoidal position table.

Every layer accepts either an unbatched sequence ``[T, d]`` or a batch
``[B, T, d]`` and returns the matching rank. Parameters use the row-vector
convention, so ``W_f`` maps ``x_t[d_in]`` to ``[d]`` as ``x_t @ W_f``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Literal, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from stockbot import autodiff as ad
from stockbot.autodiff import Tensor
from stockbot.errors import ConfigError, ContractError, DimensionError

Mode = Literal["train", "eval"]

FORGET_BIAS = 1.0
GATES = ("f", "i", "o", "c")


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------


def glorot_uniform(rng: np.random.Generator, shape: Sequence[int]) -> np.ndarray:
    shape = tuple(shape)
    if len(shape) == 1:
        fan_in, fan_out = shape[0], 1
    elif len(shape) == 2:
        fan_in, fan_out = shape
    else:
        receptive = int(np.prod(shape[:-2]))
        fan_in, fan_out = receptive * shape[-2], receptive * shape[-1]
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_lstm_layer(rng: np.random.Generator, d_in: int, d: int) -> Dict[str, np.ndarray]:
    params: Dict[str, np.ndarray] = {}
    for g in GATES:
        params[f"W_{g}"] = glorot_uniform(rng, (d_in, d))
    for g in GATES:
        params[f"U_{g}"] = glorot_uniform(rng, (d, d))
    for g in GATES:
        params[f"b_{g}"] = np.full(d, FORGET_BIAS) if g == "f" else np.zeros(d)
    return params


def init_mha(rng: np.random.Generator, d: int, project: bool = True) -> Dict[str, np.ndarray]:
    names = ("W_Q", "W_K", "W_V", "W_O") if project else ("W_Q", "W_K", "W_V")
    return {name: glorot_uniform(rng, (d, d)) for name in names}


def init_conv(rng: np.random.Generator, kernel_size: int, d_in: int, d_out: int) -> Dict[str, np.ndarray]:
    if kernel_size < 1:
        raise ConfigError(f"kernel size must be >= 1, got {kernel_size}")
    return {"W": glorot_uniform(rng, (kernel_size, d_in, d_out)), "b": np.zeros(d_out)}


def init_linear(rng: np.random.Generator, d_in: int, d_out: int) -> Dict[str, np.ndarray]:
    return {"W": glorot_uniform(rng, (d_in, d_out)), "b": np.zeros(d_out)}


def init_layernorm(d: int) -> Dict[str, np.ndarray]:
    return {"gain": np.ones(d), "bias": np.zeros(d)}


def sinusoidal_positions(steps: int, d: int) -> np.ndarray:
    """Fixed ``[steps x d]`` position table: sine on even columns, cosine on odd ones."""
    position = np.arange(steps, dtype=np.float64)[:, None]
    rates = np.exp(-math.log(10000.0) * (np.arange(0, d, 2, dtype=np.float64) / d))
    table = np.zeros((steps, d))
    table[:, 0::2] = np.sin(position * rates)
    table[:, 1::2] = np.cos(position * rates[: d // 2])
    return table



# ---------------------------------------------------------------------------
# parameter views
# ---------------------------------------------------------------------------


def _scoped(params: Mapping[str, Tensor], prefix: str) -> Dict[str, Tensor]:
    stem = f"{prefix}." if prefix else ""
    return {name[len(stem):]: t for name, t in params.items() if name.startswith(stem)}


def _expect(name: str, t: Tensor, shape: Tuple[int, ...]) -> None:
    if t.shape != shape:
        raise DimensionError(f"{name} has shape {t.shape}, expected {shape}")


@dataclass(frozen=True)
class LstmLayerParams:
    W_f: Tensor
    W_i: Tensor
    W_o: Tensor
    W_c: Tensor
    U_f: Tensor
    U_i: Tensor
    U_o: Tensor
    U_c: Tensor
    b_f: Tensor
    b_i: Tensor
    b_o: Tensor
    b_c: Tensor

    def __post_init__(self) -> None:
        if self.W_f.ndim != 2:
            raise DimensionError(f"W_f must be a matrix, got shape {self.W_f.shape}")
        d_in, d = self.W_f.shape
        for g in GATES:
            _expect(f"W_{g}", getattr(self, f"W_{g}"), (d_in, d))
            _expect(f"U_{g}", getattr(self, f"U_{g}"), (d, d))
            _expect(f"b_{g}", getattr(self, f"b_{g}"), (d,))

    @property
    def d_in(self) -> int:
        return self.W_f.shape[0]

    @property
    def d(self) -> int:
        return self.W_f.shape[1]

    @classmethod
    def from_params(cls, params: Mapping[str, Tensor], prefix: str = "") -> "LstmLayerParams":
        scoped = _scoped(params, prefix)
        return cls(**{f"{kind}_{g}": scoped[f"{kind}_{g}"] for kind in ("W", "U", "b") for g in GATES})

    def fused(self) -> Tuple[Tensor, Tensor, Tensor]:
        """Gate matrices concatenated in f, i, o, c order."""
        W = ad.concat([self.W_f, self.W_i, self.W_o, self.W_c], axis=1)
        U = ad.concat([self.U_f, self.U_i, self.U_o, self.U_c], axis=1)
        b = ad.concat([self.b_f, self.b_i, self.b_o, self.b_c], axis=0)
        return W, U, b


@dataclass(frozen=True)
class BahdanauParams:
    W1: Tensor
    W2: Tensor
    v: Tensor

    def __post_init__(self) -> None:
        if self.W1.ndim != 2 or self.W1.shape[1] < 1:
            raise ConfigError(f"W1 must be [d x d_a] with d_a > 0, got {self.W1.shape}")
        d, d_a = self.W1.shape
        _expect("W2", self.W2, (d, d_a))
        _expect("v", self.v, (d_a,))

    @classmethod
    def from_params(cls, params: Mapping[str, Tensor], prefix: str = "") -> "BahdanauParams":
        scoped = _scoped(params, prefix)
        return cls(W1=scoped["W1"], W2=scoped["W2"], v=scoped["v"])


@dataclass(frozen=True)
class MultiHeadParams:
    """Per-head projections fused column-wise: head ``h`` owns columns ``h*d_k:(h+1)*d_k``."""

    W_Q: Tensor
    W_K: Tensor
    W_V: Tensor
    heads: int
    W_O: Optional[Tensor] = None

    def __post_init__(self) -> None:
        d = self.W_Q.shape[0]
        if self.heads < 1 or d % self.heads:
            raise ConfigError(f"heads={self.heads} must divide the model dimension d={d}")
        for name in ("W_Q", "W_K", "W_V"):
            _expect(name, getattr(self, name), (d, d))
        if self.W_O is not None:
            _expect("W_O", self.W_O, (d, d))

    @property
    def d(self) -> int:
        return self.W_Q.shape[0]

    @property
    def d_k(self) -> int:
        return self.d // self.heads

    @classmethod
    def from_params(cls, params: Mapping[str, Tensor], heads: int, prefix: str = "") -> "MultiHeadParams":
        scoped = _scoped(params, prefix)
        return cls(W_Q=scoped["W_Q"], W_K=scoped["W_K"], W_V=scoped["W_V"], heads=heads, W_O=scoped.get("W_O"))


@dataclass(frozen=True)
class CausalConvParams:
    """``W[k]`` is the ``[d_in x d_out]`` kernel applied to ``x_{t-k}``."""

    W: Tensor
    b: Tensor

    def __post_init__(self) -> None:
        if self.W.ndim != 3:
            raise DimensionError(f"conv kernel must be [K x d_in x d_out], got {self.W.shape}")
        if self.W.shape[0] < 1:
            raise ConfigError(f"kernel size must be >= 1, got {self.W.shape[0]}")
        _expect("b", self.b, (self.W.shape[2],))

    @property
    def kernel_size(self) -> int:
        return self.W.shape[0]

    @classmethod
    def from_params(cls, params: Mapping[str, Tensor], prefix: str = "") -> "CausalConvParams":
        scoped = _scoped(params, prefix)
        return cls(W=scoped["W"], b=scoped["b"])


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _batched(X: Tensor, rank: int) -> Tuple[Tensor, bool]:
    """Add a leading batch axis when ``X`` has ``rank - 1`` dims."""
    if X.ndim == rank - 1:
        return ad.reshape(X, (1,) + X.shape), True
    if X.ndim != rank:
        raise DimensionError(f"expected a {rank - 1}-d sequence or {rank}-d batch, got shape {X.shape}")
    return X, False


def _unbatched(Y: Tensor, squeeze: bool) -> Tensor:
    return ad.reshape(Y, Y.shape[1:]) if squeeze else Y


def affine(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """``x @ W + b`` over the last axis of ``x``; ``x`` may be a vector."""
    if x.ndim == 1:
        return _unbatched(affine(ad.reshape(x, (1,) + x.shape), W, b), True)
    out = ad.matmul(x, W)
    return ad.add(out, ad.broadcast_to(b, out.shape))


def repeat_over_time(x: Tensor, steps: int) -> Tensor:
    """``[B, d] -> [B, steps, d]``."""
    spread = ad.broadcast_to(x, (steps,) + x.shape)
    return ad.transpose(spread, (1, 0, 2))


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------


def _lstm_step(z: Tensor, c_prev: Tensor, d: int) -> Tuple[Tensor, Tensor]:
    f = ad.sigmoid(ad.narrow(z, 0, d, axis=-1))
    i = ad.sigmoid(ad.narrow(z, d, 2 * d, axis=-1))
    o = ad.sigmoid(ad.narrow(z, 2 * d, 3 * d, axis=-1))
    c_tilde = ad.tanh(ad.narrow(z, 3 * d, 4 * d, axis=-1))
    c = f * c_prev + i * c_tilde
    h = o * ad.tanh(c)
    return h, c


def lstm_cell(params: LstmLayerParams, x_t: Tensor, h_prev: Tensor, c_prev: Tensor) -> Tuple[Tensor, Tensor]:
    """One step of the gated recurrence for ``x_t[d_in]`` or a batch ``x_t[B, d_in]``."""
    x_t, h_prev, c_prev = ad.as_tensor(x_t), ad.as_tensor(h_prev), ad.as_tensor(c_prev)
    d = params.d
    if x_t.shape[-1] != params.d_in or h_prev.shape[-1] != d or c_prev.shape != h_prev.shape:
        raise DimensionError(
            f"lstm_cell shapes: x {x_t.shape}, h {h_prev.shape}, c {c_prev.shape} for d_in={params.d_in}, d={d}"
        )
    W, U, b = params.fused()
    z = affine(x_t, W, b) + _matvec(h_prev, U)
    return _lstm_step(z, c_prev, d)


def _matvec(x: Tensor, W: Tensor) -> Tensor:
    if x.ndim == 1:
        return ad.reshape(ad.matmul(ad.reshape(x, (1,) + x.shape), W), (W.shape[1],))
    return ad.matmul(x, W)


def lstm_layer(params: LstmLayerParams, X: Tensor) -> Tensor:
    """Run one layer over ``X[B, T, d_in]`` from zero state; returns ``[B, T, d]``."""
    B, T, d_in = X.shape
    if d_in != params.d_in:
        raise DimensionError(f"lstm input width {d_in} != layer d_in {params.d_in}")
    d = params.d
    W, U, b = params.fused()
    XW = affine(X, W, b)
    h = ad.Tensor(np.zeros((B, d)))
    c = ad.Tensor(np.zeros((B, d)))
    hs: List[Tensor] = []
    for t in range(T):
        z = ad.take(XW, t, axis=1) + ad.matmul(h, U)
        h, c = _lstm_step(z, c, d)
        hs.append(h)
    return ad.stack(hs, axis=1)


def lstm_stack(
    layers: Sequence[LstmLayerParams],
    X: Tensor,
    dropout_rate: float = 0.0,
    mode: Mode = "eval",
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Stacked LSTM; layer ``l`` consumes layer ``l-1``'s full hidden sequence."""
    if not layers:
        raise ConfigError("lstm_stack needs at least one layer")
    X = ad.as_tensor(X)
    H, squeeze = _batched(X, 3)
    if H.shape[1] < 1:
        raise DimensionError("lstm_stack needs at least one time step")
    for layer in layers:
        H = lstm_layer(layer, H)
        H = dropout(H, dropout_rate, mode, rng)
    return _unbatched(H, squeeze)


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------


def bahdanau_attend(params: BahdanauParams, H: Tensor) -> Tuple[Tensor, Tensor]:
    """Additive attention with the temporal mean as query.

    Returns ``(context, weights)`` shaped ``([d], [T])`` or ``([B, d], [B, T])``.
    """
    H = ad.as_tensor(H)
    Hb, squeeze = _batched(H, 3)
    B, T, d = Hb.shape
    if params.W1.shape[0] != d:
        raise DimensionError(f"attention expects hidden width {params.W1.shape[0]}, got {d}")
    q = ad.mean(Hb, axis=1)
    keys = ad.matmul(Hb, params.W1)
    query = repeat_over_time(ad.matmul(q, params.W2), T)
    d_a = params.v.shape[0]
    scores = ad.matmul(ad.tanh(keys + query), ad.reshape(params.v, (d_a, 1)))
    weights = ad.softmax(ad.reshape(scores, (B, T)), axis=-1)
    context = ad.matmul(ad.reshape(weights, (B, 1, T)), Hb)
    context = ad.reshape(context, (B, d))
    if squeeze:
        return ad.reshape(context, (d,)), ad.reshape(weights, (T,))
    return context, weights


def _split_heads(X: Tensor, heads: int) -> Tensor:
    B, T, d = X.shape
    return ad.transpose(ad.reshape(X, (B, T, heads, d // heads)), (0, 2, 1, 3))


def multi_head_self_attention(
    params: MultiHeadParams,
    H: Tensor,
    return_weights: bool = False,
) -> Union[Tensor, Tuple[Tensor, Tensor]]:
    """Scaled dot-product self-attention, heads concatenated then projected by ``W_O``.

    Without ``W_O`` the concatenated heads are returned as is. No causal mask.
    Weights, when requested, are ``[B, heads, T, T]`` (or ``[heads, T, T]``).
    """
    H = ad.as_tensor(H)
    Hb, squeeze = _batched(H, 3)
    B, T, d = Hb.shape
    if d != params.d:
        raise DimensionError(f"attention expects width {params.d}, got {d}")
    Q = _split_heads(ad.matmul(Hb, params.W_Q), params.heads)
    K = _split_heads(ad.matmul(Hb, params.W_K), params.heads)
    V = _split_heads(ad.matmul(Hb, params.W_V), params.heads)
    scores = ad.matmul(Q, ad.swap_last(K)) * (1.0 / math.sqrt(params.d_k))
    weights = ad.softmax(scores, axis=-1)
    heads_out = ad.matmul(weights, V)
    out = ad.reshape(ad.transpose(heads_out, (0, 2, 1, 3)), (B, T, d))
    if params.W_O is not None:
        out = ad.matmul(out, params.W_O)
    out = _unbatched(out, squeeze)
    if return_weights:
        return out, _unbatched(weights, squeeze)
    return out


# ---------------------------------------------------------------------------
# convolution, dropout
# ---------------------------------------------------------------------------


def causal_conv1d(params: CausalConvParams, X: Tensor, activation: bool = True) -> Tensor:
    """``relu(sum_k x_{t-k} @ W[k] + b)`` with zero left padding."""
    X = ad.as_tensor(X)
    Xb, squeeze = _batched(X, 3)
    if Xb.shape[-1] != params.W.shape[1]:
        raise DimensionError(f"conv expects input width {params.W.shape[1]}, got {Xb.shape[-1]}")
    out: Optional[Tensor] = None
    for k in range(params.kernel_size):
        term = ad.matmul(ad.shift(Xb, k, axis=1), ad.take(params.W, k, axis=0))
        out = term if out is None else out + term
    out = ad.add(out, ad.broadcast_to(params.b, out.shape))
    if activation:
        out = ad.relu(out)
    return _unbatched(out, squeeze)


def dropout(x: Tensor, rate: float, mode: Mode = "eval", rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout in train mode, identity in eval mode."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("train-mode dropout needs an explicit rng")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return ad.mul(x, ad.Tensor(keep))
