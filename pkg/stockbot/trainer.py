"""Mini-batch Adam training with MSE loss and early stopping."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from stockbot import autodiff as ad
from stockbot.autodiff import Tape, Tensor
from stockbot.data import WindowedDataset
from stockbot.errors import ContractError, DimensionError, InsufficientDataError, NonFiniteGradientError
from stockbot.models import ModelState, forward

logger = logging.getLogger(__name__)

EVAL_BATCH = 256


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lr: float = Field(default=1e-3, gt=0)
    batch_size: int = Field(default=64, ge=1)
    max_epochs: int = Field(default=500, ge=1)
    dropout: Optional[float] = Field(
        default=None, ge=0.0, lt=1.0, description="Training dropout rate; None uses the model spec's rate"
    )
    patience: int = Field(default=20, ge=1)
    min_delta: float = Field(default=1e-6, ge=0.0)
    val_fraction: float = Field(default=0.1, gt=0.0, lt=0.5)
    seed: int = 0
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps: float = Field(default=1e-8, gt=0)


class TrainReport(BaseModel):
    train_loss: List[float] = Field(default_factory=list, description="Mean train MSE per epoch")
    val_loss: List[float] = Field(default_factory=list, description="Validation MSE per epoch")
    stopped_epoch: int = 0
    best_epoch: int = 0
    best_val_loss: float = math.inf
    wall_time: float = Field(default=0.0, exclude=True)

    def loss_curve(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "epoch": np.arange(1, len(self.train_loss) + 1),
                "train_mse": self.train_loss,
                "val_mse": self.val_loss,
            }
        )


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    moments: AdamState,
    config: TrainConfig,
) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; inputs are left untouched."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NonFiniteGradientError(f"gradient of {name} has {bad} non-finite entries at step {moments.t + 1}")

    t = moments.t + 1
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    new_params: Dict[str, np.ndarray] = {}
    new_m: Dict[str, np.ndarray] = {}
    new_v: Dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = b1 * moments.m.get(name, np.zeros_like(p)) + (1.0 - b1) * g
        v = b2 * moments.v.get(name, np.zeros_like(p)) + (1.0 - b2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        new_params[name] = p - config.lr * m_hat / (np.sqrt(v_hat) + config.eps)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(m=new_m, v=new_v, t=t)


def mse_loss(pred: Tensor, target: ad.ArrayLike) -> Tensor:
    target = ad.as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    return ad.mean(diff * diff)


def evaluate_mse(state: ModelState, dataset: WindowedDataset, batch_size: int = EVAL_BATCH) -> float:
    """Eval-mode MSE over every window of ``dataset``."""
    if len(dataset) == 0:
        raise InsufficientDataError("cannot evaluate on an empty dataset")
    squared = 0.0
    for lo in range(0, len(dataset), batch_size):
        X, Y = dataset.batch(np.arange(lo, min(lo + batch_size, len(dataset))))
        pred = forward(state, X, mode="eval").data
        squared += float(np.sum((pred - Y) ** 2))
    return squared / (len(dataset) * dataset.forward_look)


def carve_validation(dataset: WindowedDataset, fraction: float) -> Tuple[WindowedDataset, WindowedDataset]:
    """Chronological tail of ``fraction`` of the windows becomes validation."""
    n_val = max(1, int(len(dataset) * fraction))
    cut = len(dataset) - n_val
    return dataset.subset(0, cut), dataset.subset(cut)


EpochHook = Callable[[int, float, float], None]


def fit(
    state: ModelState,
    dataset: WindowedDataset,
    config: TrainConfig,
    on_epoch: Optional[EpochHook] = None,
) -> Tuple[ModelState, TrainReport]:
    """Train ``state`` and return the parameters of the best validation epoch."""
    if dataset.split != "train":
        raise ContractError(f"fit needs a train-split dataset, got {dataset.split!r}")
    fit_set, val_set = carve_validation(dataset, config.val_fraction)
    n_batches = math.ceil(len(fit_set) / config.batch_size)
    if n_batches < 2:
        raise InsufficientDataError(
            f"{len(fit_set)} training windows make {n_batches} batch(es) of {config.batch_size}; need at least 2"
        )

    rate = state.spec.dropout if config.dropout is None else config.dropout
    names = list(state.parameters)
    moments = AdamState()
    current = state
    best_arrays = current.arrays()
    best_steps = current.step_count
    report = TrainReport()
    waited = 0
    started = time.perf_counter()

    for epoch in range(1, config.max_epochs + 1):
        rng = np.random.default_rng([config.seed, epoch])
        order = rng.permutation(len(fit_set))
        weighted = 0.0
        for lo in range(0, len(order), config.batch_size):
            X, Y = fit_set.batch(order[lo : lo + config.batch_size])
            with Tape() as tape:
                loss = mse_loss(forward(current, X, mode="train", rng=rng, dropout=rate), Y)
            leaf_grads = tape.backward(loss)
            grads = {name: leaf_grads.get(t, np.zeros(t.shape)) for name, t in current.parameters.items()}
            arrays, moments = adam_step(current.arrays(), grads, moments, config)
            current = current.with_arrays({n: arrays[n] for n in names}, step_count=current.step_count + 1)
            weighted += loss.item() * len(Y)

        train_loss = weighted / len(fit_set)
        val_loss = evaluate_mse(current, val_set)
        report.train_loss.append(train_loss)
        report.val_loss.append(val_loss)
        report.stopped_epoch = epoch
        logger.debug("epoch %d: train %.6g val %.6g", epoch, train_loss, val_loss)
        if on_epoch is not None:
            on_epoch(epoch, train_loss, val_loss)

        if val_loss < report.best_val_loss - config.min_delta:
            report.best_val_loss = val_loss
            report.best_epoch = epoch
            best_arrays = current.arrays()
            best_steps = current.step_count
            waited = 0
        else:
            waited += 1
            if waited >= config.patience:
                logger.debug("early stop at epoch %d (best %d)", epoch, report.best_epoch)
                break

    report.wall_time = time.perf_counter() - started
    return state.with_arrays(best_arrays, step_count=best_steps), report
