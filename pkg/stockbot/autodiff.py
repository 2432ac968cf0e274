"""Reverse-mode automatic differentiation over dense float64 tensors.

Tensors are immutable numpy-backed values. Operations executed while a
:class:`Tape` is active are recorded on it; ``Tape.backward`` then walks the
recorded nodes once, in reverse order, accumulating adjoints into every leaf
that requires a gradient. Without an active tape the same operations simply
compute, which is how evaluation runs.

Broadcasting is limited to scalar/tensor and same-shape operands. Layers that
need a bias or an embedding spread over leading axes call
:func:`broadcast_to` explicitly.
"""

from __future__ import annotations

import logging
import math
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from stockbot.errors import ContractError, DimensionError, DomainError, NumericError

logger = logging.getLogger(__name__)

DTYPE = np.float64
GELU_C = math.sqrt(2.0 / math.pi)
LAYERNORM_EPS = 1e-5

# The tape that records operations for the current training step, if any.
active_tape_var: ContextVar[Optional["Tape"]] = ContextVar("active_tape", default=None)

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[Any]]


class Tensor:
    """Immutable dense tensor. ``requires_grad`` marks trainable leaves."""

    __slots__ = ("data", "requires_grad", "__weakref__")

    def __init__(self, data: Any, requires_grad: bool = False) -> None:
        arr = np.array(data, dtype=DTYPE)
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = requires_grad

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        out = object.__new__(cls)
        arr = np.asarray(arr, dtype=DTYPE)
        arr.setflags(write=False)
        out.data = arr
        out.requires_grad = False
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return np.array(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: float) -> "Tensor":
        if isinstance(other, Tensor):
            raise ContractError("tensor / tensor is not supported; divide by a Python number")
        return mul(self, 1.0 / float(other))

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def as_tensor(value: ArrayLike) -> Tensor:
    """Constants (numbers, arrays) become non-trainable tensors."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


@dataclass
class _Scatter:
    """Adjoint contribution that only touches ``key`` of the input's adjoint."""

    key: Tuple[Any, ...]
    value: np.ndarray


Contribution = Optional[Union[np.ndarray, _Scatter]]
VJP = Callable[[np.ndarray], Sequence[Contribution]]


@dataclass
class Node:
    kind: str
    inputs: Tuple[Optional[int], ...]
    tensor: Tensor
    vjp: Optional[VJP] = None


class Tape:
    """Append-only record of one forward pass.

    Use as a context manager so that operations inside the block are recorded::

        with Tape() as tape:
            loss = mean(x * x)
        grads = tape.backward(loss)
    """

    def __init__(self) -> None:
        self.nodes: List[Node] = []
        self.grads: Dict[int, np.ndarray] = {}
        self._index: Dict[int, int] = {}
        self._owned: set[int] = set()
        self._backpropagated = False
        self._tokens: List[Any] = []

    def __enter__(self) -> "Tape":
        self._tokens.append(active_tape_var.set(self))
        return self

    def __exit__(self, *exc: Any) -> None:
        active_tape_var.reset(self._tokens.pop())

    def __len__(self) -> int:
        return len(self.nodes)

    def _node_of(self, tensor: Tensor) -> Optional[int]:
        idx = self._index.get(id(tensor))
        if idx is not None:
            return idx
        if not tensor.requires_grad:
            return None
        self._index[id(tensor)] = len(self.nodes)
        self.nodes.append(Node(kind="leaf", inputs=(), tensor=tensor))
        return len(self.nodes) - 1

    def record(
        self,
        kind: str,
        inputs: Sequence[Tensor],
        out: Tensor,
        vjp: VJP,
    ) -> None:
        if self._backpropagated:
            raise ContractError("tape already ran backward; call reset() before recording again")
        ids = tuple(self._node_of(t) for t in inputs)
        if all(i is None for i in ids):
            return
        out.requires_grad = True
        self._index[id(out)] = len(self.nodes)
        self.nodes.append(Node(kind=kind, inputs=ids, tensor=out, vjp=vjp))

    def reset(self) -> None:
        """Forget the recorded graph and all adjoints."""
        self.nodes.clear()
        self.grads.clear()
        self._index.clear()
        self._owned.clear()
        self._backpropagated = False

    def _accumulate(self, idx: int, contribution: Union[np.ndarray, _Scatter]) -> None:
        current = self.grads.get(idx)
        if isinstance(contribution, _Scatter):
            if current is None:
                current = np.zeros(self.nodes[idx].tensor.shape, dtype=DTYPE)
                self._owned.add(idx)
            elif idx not in self._owned:
                current = np.array(current)
                self._owned.add(idx)
            current[contribution.key] += contribution.value
            self.grads[idx] = current
            return
        if current is None:
            self.grads[idx] = contribution
        elif idx in self._owned:
            current += contribution
        else:
            self.grads[idx] = current + contribution
            self._owned.add(idx)

    def backward(self, loss: Tensor) -> Dict[Tensor, np.ndarray]:
        """Populate adjoints and return ``{leaf: gradient}`` for every tracked leaf."""
        if self._backpropagated:
            raise ContractError("backward already ran on this tape; call reset() first")
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        start = self._index.get(id(loss))
        if start is None:
            raise ContractError("loss was not computed on this tape")

        self.grads = {start: np.ones(loss.shape, dtype=DTYPE)}
        self._owned = {start}
        for i in range(start, -1, -1):
            g = self.grads.get(i)
            node = self.nodes[i]
            if g is None or node.vjp is None:
                continue
            for input_idx, contribution in zip(node.inputs, node.vjp(g)):
                if input_idx is None or contribution is None:
                    continue
                self._accumulate(input_idx, contribution)
        self._backpropagated = True

        leaves: Dict[Tensor, np.ndarray] = {}
        for i, node in enumerate(self.nodes):
            if node.kind == "leaf":
                grad = self.grads.get(i)
                leaves[node.tensor] = grad if grad is not None else np.zeros(node.tensor.shape, dtype=DTYPE)
        return leaves


def backward(tape: Tape, loss: Tensor) -> Dict[Tensor, np.ndarray]:
    return tape.backward(loss)


def _emit(
    kind: str,
    inputs: Sequence[Tensor],
    out_arr: np.ndarray,
    vjp: VJP,
) -> Tensor:
    if not np.all(np.isfinite(out_arr)):
        raise NumericError(f"{kind} produced non-finite values (input shapes {[t.shape for t in inputs]})")
    out = Tensor._wrap(out_arr)
    tape = active_tape_var.get()
    if tape is not None:
        tape.record(kind, inputs, out, vjp)
    return out


def _reduce_to(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Adjoint of a scalar operand that was spread over a tensor."""
    if grad.shape == shape:
        return grad
    return np.asarray(grad.sum()).reshape(shape)


def _check_broadcast(kind: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    raise DimensionError(f"{kind}: cannot broadcast shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """``a @ b`` for ``a[..., m, k]`` and either ``b[k, n]`` or ``b[..., k, n]`` with equal batch dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    shared = b.ndim == 2
    if not shared and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul batch dimensions differ: {a.shape} @ {b.shape}")

    a_data, b_data = a.data, b.data

    def vjp(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        ga = g @ np.swapaxes(b_data, -1, -2)
        if shared:
            k, n = b_data.shape
            gb = a_data.reshape(-1, k).T @ g.reshape(-1, n)
        else:
            gb = np.swapaxes(a_data, -1, -2) @ g
        return ga, gb

    return _emit("matmul", (a, b), a_data @ b_data, vjp)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return _emit("add", (a, b), a.data + b.data, lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)))


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return _emit("sub", (a, b), a.data - b.data, lambda g: (_reduce_to(g, sa), _reduce_to(-g, sb)))


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    a_data, b_data = a.data, b.data
    return _emit(
        "mul",
        (a, b),
        a_data * b_data,
        lambda g: (_reduce_to(g * b_data, a_data.shape), _reduce_to(g * a_data, b_data.shape)),
    )


def neg(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    return _emit("neg", (x,), -x.data, lambda g: (-g,))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    s = _stable_sigmoid(x.data)
    return _emit("sigmoid", (x,), s, lambda g: (g * s * (1.0 - s),))


def tanh(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    t = np.tanh(x.data)
    return _emit("tanh", (x,), t, lambda g: (g * (1.0 - t * t),))


def relu(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    active = x.data > 0
    return _emit("relu", (x,), np.where(active, x.data, 0.0), lambda g: (g * active,))


def gelu(x: ArrayLike) -> Tensor:
    """Tanh approximation ``0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))``."""
    x = as_tensor(x)
    xd = x.data
    t = np.tanh(GELU_C * (xd + 0.044715 * xd**3))
    out = 0.5 * xd * (1.0 + t)

    def vjp(g: np.ndarray) -> Tuple[np.ndarray]:
        du = GELU_C * (1.0 + 3 * 0.044715 * xd**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du),)

    return _emit("gelu", (x,), out, vjp)


def exp(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return _emit("exp", (x,), out, lambda g: (g * out,))


_UNARY: Dict[str, Callable[[ArrayLike], Tensor]] = {
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "gelu": gelu,
    "exp": exp,
    "neg": neg,
}
_BINARY: Dict[str, Callable[[ArrayLike, ArrayLike], Tensor]] = {"add": add, "sub": sub, "mul": mul}


def elementwise(kind: str, *args: ArrayLike) -> Tensor:
    """Dispatch an elementwise op by name."""
    if kind in _UNARY:
        if len(args) != 1:
            raise ContractError(f"{kind} takes one argument, got {len(args)}")
        return _UNARY[kind](args[0])
    if kind in _BINARY:
        if len(args) != 2:
            raise ContractError(f"{kind} takes two arguments, got {len(args)}")
        return _BINARY[kind](args[0], args[1])
    raise ContractError(f"unknown elementwise kind {kind!r}")


# ---------------------------------------------------------------------------
# reductions and normalizations
# ---------------------------------------------------------------------------


def _norm_axis(x: Tensor, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"axis {axis} out of range for shape {x.shape}")
    return axis % x.ndim


def softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    ax = _norm_axis(x, axis)
    if x.shape[ax] < 1:
        raise DimensionError(f"softmax over empty axis of shape {x.shape}")
    shifted = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=ax, keepdims=True)

    def vjp(g: np.ndarray) -> Tuple[np.ndarray]:
        return (s * (g - (g * s).sum(axis=ax, keepdims=True)),)

    return _emit("softmax", (x,), s, vjp)


def reduce(kind: str, x: ArrayLike, axis: Optional[int] = None) -> Tensor:
    """``mean`` or ``sum`` over one axis, or over everything when ``axis`` is None."""
    x = as_tensor(x)
    if kind not in ("mean", "sum"):
        raise ContractError(f"unknown reduction {kind!r}")
    if axis is None:
        n = x.size
        if n == 0:
            raise DomainError(f"{kind} over an empty tensor")
        summed = x.data.sum()
        shape = x.shape
        out = summed / n if kind == "mean" else summed
        scale = 1.0 / n if kind == "mean" else 1.0
        return _emit(kind, (x,), np.asarray(out), lambda g: (np.full(shape, float(g) * scale),))

    ax = _norm_axis(x, axis)
    n = x.shape[ax]
    if n == 0:
        raise DomainError(f"{kind} over empty axis {axis} of shape {x.shape}")
    out = x.data.mean(axis=ax) if kind == "mean" else x.data.sum(axis=ax)
    scale = 1.0 / n if kind == "mean" else 1.0
    shape = x.shape

    def vjp(g: np.ndarray) -> Tuple[np.ndarray]:
        return (np.broadcast_to(np.expand_dims(g * scale, ax), shape),)

    return _emit(kind, (x,), out, vjp)


def mean(x: ArrayLike, axis: Optional[int] = None) -> Tensor:
    return reduce("mean", x, axis)


def total(x: ArrayLike, axis: Optional[int] = None) -> Tensor:
    return reduce("sum", x, axis)


def layernorm(x: ArrayLike, gain: ArrayLike, bias: ArrayLike, eps: float = LAYERNORM_EPS) -> Tensor:
    """Normalize the last axis to zero mean and unit (population) variance, then apply ``gain``/``bias``."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1] if x.ndim else 0
    if d < 1:
        raise DimensionError(f"layernorm needs a non-empty last axis, got shape {x.shape}")
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layernorm gain/bias must be ({d},), got {gain.shape} and {bias.shape}")

    xd = x.data
    centered = xd - xd.mean(axis=-1, keepdims=True)
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    gain_d = gain.data
    out = xhat * gain_d + bias.data

    def vjp(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        dxhat = g * gain_d
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        flat_g = g.reshape(-1, d)
        return dx, (flat_g * xhat.reshape(-1, d)).sum(axis=0), flat_g.sum(axis=0)

    return _emit("layernorm", (x, gain, bias), out, vjp)


# ---------------------------------------------------------------------------
# structural ops
# ---------------------------------------------------------------------------


def reshape(x: ArrayLike, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    src = x.shape
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {src} to {tuple(shape)}") from exc
    return _emit("reshape", (x,), out, lambda g: (g.reshape(src),))


def transpose(x: ArrayLike, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise DimensionError(f"invalid permutation {axes} for shape {x.shape}")
    inverse = tuple(np.argsort([a % x.ndim for a in axes]))
    return _emit("transpose", (x,), np.transpose(x.data, axes), lambda g: (np.transpose(g, inverse),))


def swap_last(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def broadcast_to(x: ArrayLike, shape: Sequence[int]) -> Tensor:
    """Spread ``x`` over new leading axes; ``x.shape`` must equal the trailing part of ``shape``."""
    x = as_tensor(x)
    shape = tuple(shape)
    lead = len(shape) - x.ndim
    if lead < 0 or shape[lead:] != x.shape:
        raise DimensionError(f"cannot broadcast {x.shape} to {shape}")
    src = x.shape
    return _emit(
        "broadcast",
        (x,),
        np.broadcast_to(x.data, shape).copy(),
        lambda g: (g.reshape((-1,) + src).sum(axis=0) if lead else g,),
    )


def concat(tensors: Sequence[ArrayLike], axis: int = -1) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise DimensionError("concat of an empty list")
    ax = _norm_axis(parts[0], axis)
    try:
        out = np.concatenate([p.data for p in parts], axis=ax)
    except ValueError as exc:
        raise DimensionError(f"concat shapes disagree: {[p.shape for p in parts]}") from exc
    bounds = np.cumsum([0] + [p.shape[ax] for p in parts])

    def vjp(g: np.ndarray) -> List[np.ndarray]:
        index: List[Any] = [slice(None)] * g.ndim
        grads = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            index[ax] = slice(lo, hi)
            grads.append(g[tuple(index)])
        return grads

    return _emit("concat", parts, out, vjp)


def stack(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise DimensionError("stack of an empty list")
    if any(p.shape != parts[0].shape for p in parts):
        raise DimensionError(f"stack shapes disagree: {[p.shape for p in parts]}")
    ax = axis % (parts[0].ndim + 1)
    out = np.stack([p.data for p in parts], axis=ax)

    def vjp(g: np.ndarray) -> List[np.ndarray]:
        return [np.take(g, i, axis=ax) for i in range(len(parts))]

    return _emit("stack", parts, out, vjp)


def take(x: ArrayLike, index: int, axis: int = 0) -> Tensor:
    """Select one position along ``axis``, dropping that axis."""
    x = as_tensor(x)
    ax = _norm_axis(x, axis)
    if not -x.shape[ax] <= index < x.shape[ax]:
        raise DimensionError(f"index {index} out of range for axis {axis} of shape {x.shape}")
    key: List[Any] = [slice(None)] * x.ndim
    key[ax] = index
    key_t = tuple(key)
    return _emit("take", (x,), x.data[key_t], lambda g: (_Scatter(key_t, g),))


def narrow(x: ArrayLike, start: int, stop: int, axis: int = -1) -> Tensor:
    """Slice ``[start, stop)`` along ``axis``, keeping the axis."""
    x = as_tensor(x)
    ax = _norm_axis(x, axis)
    if not 0 <= start < stop <= x.shape[ax]:
        raise DimensionError(f"slice [{start}, {stop}) out of range for axis {axis} of shape {x.shape}")
    key: List[Any] = [slice(None)] * x.ndim
    key[ax] = slice(start, stop)
    key_t = tuple(key)
    return _emit("narrow", (x,), x.data[key_t], lambda g: (_Scatter(key_t, g),))


def shift(x: ArrayLike, steps: int, axis: int = 0) -> Tensor:
    """Delay along ``axis``: ``out[t] = x[t - steps]`` with zeros for ``t < steps``."""
    x = as_tensor(x)
    ax = _norm_axis(x, axis)
    if steps < 0:
        raise DomainError(f"shift needs steps >= 0, got {steps}")
    n = x.shape[ax]
    if steps == 0:
        return x
    out = np.zeros_like(x.data)
    if steps >= n:
        return _emit("shift", (x,), out, lambda g: (None,))
    dst: List[Any] = [slice(None)] * x.ndim
    src: List[Any] = [slice(None)] * x.ndim
    dst[ax] = slice(steps, n)
    src[ax] = slice(0, n - steps)
    dst_t, src_t = tuple(dst), tuple(src)
    out[dst_t] = x.data[src_t]
    return _emit("shift", (x,), out, lambda g: (_Scatter(src_t, g[dst_t]),))
