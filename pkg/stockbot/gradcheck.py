"""Finite-difference oracle for the autodiff engine."""

from __future__ import annotations

from typing import Callable, Dict, Optional, Sequence

import numpy as np

from stockbot.autodiff import Tape, Tensor

FD_STEP = 1e-5
# Denominator floor: below it the check is absolute, so a relative error under
# 1e-4 means an absolute error under 1e-7.
REL_FLOOR = 1e-3


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def numeric_gradient(
    loss_fn: Callable[[], Tensor],
    tensor: Tensor,
    step: float = FD_STEP,
    indices: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """Central differences of ``loss_fn()`` w.r.t. ``tensor``'s entries.

    ``tensor.data`` is temporarily made writable and perturbed in place, so
    ``loss_fn`` must read the tensor rather than a copy of it. Only the flat
    positions in ``indices`` are probed when given; others stay zero.
    """
    data = tensor.data
    data.setflags(write=True)
    flat = data.reshape(-1)
    grad = np.zeros(flat.shape, dtype=np.float64)
    probe = range(flat.size) if indices is None else indices
    try:
        for i in probe:
            original = flat[i]
            flat[i] = original + step
            plus = loss_fn().item()
            flat[i] = original - step
            minus = loss_fn().item()
            flat[i] = original
            grad[i] = (plus - minus) / (2.0 * step)
    finally:
        data.setflags(write=False)
    return grad.reshape(data.shape)


def analytic_gradients(loss_fn: Callable[[], Tensor], tensors: Sequence[Tensor]) -> Dict[Tensor, np.ndarray]:
    with Tape() as tape:
        loss = loss_fn()
    grads = tape.backward(loss)
    return {t: grads.get(t, np.zeros(t.shape)) for t in tensors}


def check_gradients(
    loss_fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    step: float = FD_STEP,
    max_probes: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Max relative error between reverse-mode and finite-difference gradients.

    ``tensors`` must have ``requires_grad=True``. With ``max_probes`` set, a
    random subset of entries per tensor is probed.
    """
    analytic = analytic_gradients(loss_fn, tensors)
    worst = 0.0
    for t in tensors:
        indices = None
        if max_probes is not None and t.size > max_probes:
            rng = rng or np.random.default_rng(0)
            indices = rng.choice(t.size, size=max_probes, replace=False)
        numeric = numeric_gradient(loss_fn, t, step=step, indices=indices)
        a = analytic[t]
        if indices is not None:
            a = a.reshape(-1)[indices]
            numeric = numeric.reshape(-1)[indices]
        worst = max(worst, relative_error(a, numeric))
    return worst
