"""Test-period rollouts in autoregressive and teacher-forcing modes."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Optional, Protocol, Sequence, Tuple

import numpy as np
import pandas as pd

from stockbot.data import NormStats, invert_norm
from stockbot.errors import ContractError, DimensionError, DomainError, NumericError
from stockbot.models import ModelState, forward

logger = logging.getLogger(__name__)


class ForecastMode(str, Enum):
    AUTOREGRESSIVE = "autoregressive"
    TEACHER_FORCING = "teacher_forcing"


class Predictor(Protocol):
    past_history: int
    forward_look: int

    def predict(self, window: np.ndarray) -> np.ndarray:
        """Forecast block ``[h]`` for a normalized window ``[k]``."""
        ...


class ModelPredictor:
    def __init__(self, state: ModelState) -> None:
        self.state = state
        self.past_history = state.spec.past_history
        self.forward_look = state.spec.forward_look

    def predict(self, window: np.ndarray) -> np.ndarray:
        return forward(self.state, np.asarray(window, dtype=np.float64)[:, None], mode="eval").numpy()


@dataclass(frozen=True)
class ForecastRun:
    mode: ForecastMode
    forward_look: int
    indices: np.ndarray  # absolute series index of each prediction
    emissions: np.ndarray  # absolute index at which the block holding it was emitted
    predictions: np.ndarray  # normalized
    targets: np.ndarray  # normalized
    rmse: Optional[float]
    diverged: bool = False
    diverged_at: Optional[int] = None

    def __len__(self) -> int:
        return len(self.predictions)

    def prices(self, stats: NormStats) -> np.ndarray:
        return invert_norm(self.predictions, stats)

    def to_frame(self, dates: np.ndarray, true_prices: np.ndarray, stats: NormStats) -> pd.DataFrame:
        """One row per prediction: ``date, emission, true_price, predicted_price, mode``."""
        return pd.DataFrame(
            {
                "date": [str(d) for d in dates[self.indices]],
                "emission": [str(d) for d in dates[self.emissions]],
                "true_price": np.asarray(true_prices)[self.indices],
                "predicted_price": self.prices(stats),
                "mode": self.mode.value,
            }
        )


def rmse(pred: Sequence[float], target: Sequence[float]) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"rmse needs equal lengths, got {pred.shape} and {target.shape}")
    if pred.size == 0:
        raise DomainError("rmse of empty series")
    return float(np.sqrt(np.mean((pred - target) ** 2)))


def _check_bounds(z: np.ndarray, test_start: int, k: int, h: int) -> None:
    if k < 1 or h < 1:
        raise ContractError(f"window sizes must be >= 1, got k={k}, h={h}")
    if not k <= test_start < len(z):
        raise ContractError(f"test start {test_start} must lie in [{k}, {len(z)}) for k={k}")


def _safe_predict(predictor: Predictor, window: np.ndarray, h: int) -> Optional[np.ndarray]:
    """The predicted block, or None when the model produced non-finite values."""
    try:
        block = np.asarray(predictor.predict(window), dtype=np.float64)
    except NumericError:
        return None
    if block.shape != (h,):
        raise DimensionError(f"predictor returned shape {block.shape}, expected ({h},)")
    if not np.all(np.isfinite(block)):
        return None
    return block


WindowSource = Callable[[int, List[float]], np.ndarray]


def _rollout(
    predictor: Predictor,
    mode: ForecastMode,
    window_at: WindowSource,
    test_start: int,
    length: int,
    k: int,
    h: int,
) -> Tuple[List[int], List[int], List[float], Optional[int]]:
    indices: List[int] = []
    emissions: List[int] = []
    preds: List[float] = []
    emitted: List[float] = []
    for t in range(test_start, length, h):
        block = _safe_predict(predictor, window_at(t, emitted), h)
        if block is None:
            logger.warning("%s rollout diverged at index %d", mode.value, t)
            return indices, emissions, preds, t
        n = min(h, length - t)
        indices.extend(range(t, t + n))
        emissions.extend([t] * n)
        preds.extend(block[:n])
        emitted.extend(block)
    return indices, emissions, preds, None


def _finish(
    mode: ForecastMode,
    h: int,
    z: np.ndarray,
    result: Tuple[List[int], List[int], List[float], Optional[int]],
) -> ForecastRun:
    indices, emissions, preds, diverged_at = result
    idx = np.asarray(indices, dtype=np.int64)
    predictions = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(z, dtype=np.float64)[idx] if len(idx) else np.zeros(0)
    score = rmse(predictions, targets) if len(idx) else None
    return ForecastRun(
        mode=mode,
        forward_look=h,
        indices=idx,
        emissions=np.asarray(emissions, dtype=np.int64),
        predictions=predictions,
        targets=targets,
        rmse=score,
        diverged=diverged_at is not None,
        diverged_at=diverged_at,
    )


def rollout_teacher_forcing(predictor: Predictor, z: np.ndarray, test_start: int) -> ForecastRun:
    """Each block of ``h`` predictions reads the true ``z[t-k:t]``; stride ``h``."""
    z = np.asarray(z, dtype=np.float64)
    k, h = predictor.past_history, predictor.forward_look
    _check_bounds(z, test_start, k, h)

    def window_at(t: int, _emitted: List[float]) -> np.ndarray:
        return z[t - k : t]

    result = _rollout(predictor, ForecastMode.TEACHER_FORCING, window_at, test_start, len(z), k, h)
    return _finish(ForecastMode.TEACHER_FORCING, h, z, result)


def autoregressive_predictions(
    predictor: Predictor, history: np.ndarray, steps: int
) -> Tuple[List[int], List[int], List[float], Optional[int]]:
    """Roll forward ``steps`` values from ``history`` alone (relative indices)."""
    history = np.asarray(history, dtype=np.float64)
    k, h = predictor.past_history, predictor.forward_look
    if len(history) != k:
        raise DimensionError(f"autoregressive history must have length {k}, got {len(history)}")

    def window_at(t: int, emitted: List[float]) -> np.ndarray:
        working = np.concatenate([history, np.asarray(emitted, dtype=np.float64)])
        return working[-k:]

    return _rollout(predictor, ForecastMode.AUTOREGRESSIVE, window_at, 0, steps, k, h)


def rollout_autoregressive(predictor: Predictor, z: np.ndarray, test_start: int) -> ForecastRun:
    """Feed each emitted block back as input; no ground truth past ``test_start`` is read."""
    z = np.asarray(z, dtype=np.float64)
    k, h = predictor.past_history, predictor.forward_look
    _check_bounds(z, test_start, k, h)
    rel_idx, rel_emit, preds, rel_div = autoregressive_predictions(
        predictor, z[test_start - k : test_start], len(z) - test_start
    )
    result = (
        [test_start + i for i in rel_idx],
        [test_start + i for i in rel_emit],
        preds,
        None if rel_div is None else test_start + rel_div,
    )
    return _finish(ForecastMode.AUTOREGRESSIVE, h, z, result)


ROLLOUTS = {
    ForecastMode.AUTOREGRESSIVE: rollout_autoregressive,
    ForecastMode.TEACHER_FORCING: rollout_teacher_forcing,
}


def run_mode(predictor: Predictor, mode: ForecastMode, z: np.ndarray, test_start: int) -> ForecastRun:
    return ROLLOUTS[ForecastMode(mode)](predictor, z, test_start)
