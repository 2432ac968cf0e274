"""Price ingestion, chronological split, z-score normalization and windowing."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Tuple, Union

import numpy as np
import pandas as pd

from stockbot.errors import (
    ConfigError,
    DataError,
    DegenerateSeriesError,
    FormatError,
    InputNotFoundError,
    InsufficientDataError,
)

logger = logging.getLogger(__name__)

DATE_COLUMN = "Date"
PRICE_COLUMN = "Adj Close"
MIN_STD = 1e-12

Split = Literal["train", "test"]
DateLike = Union[str, np.datetime64, pd.Timestamp]


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PriceSeries:
    ticker: str
    dates: np.ndarray  # datetime64[D], strictly increasing
    close: np.ndarray  # float64, > 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "dates", _frozen(np.asarray(self.dates, dtype="datetime64[D]")))
        object.__setattr__(self, "close", _frozen(np.asarray(self.close, dtype=np.float64)))
        if self.dates.shape != self.close.shape or self.close.ndim != 1:
            raise DataError(f"dates {self.dates.shape} and prices {self.close.shape} do not align")

    def __len__(self) -> int:
        return len(self.close)

    def slice(self, start: int, stop: Optional[int] = None) -> "PriceSeries":
        return PriceSeries(self.ticker, self.dates[start:stop], self.close[start:stop])

    def between(self, start: Optional[DateLike] = None, end: Optional[DateLike] = None) -> "PriceSeries":
        """Rows with ``start <= date <= end``; either bound may be omitted."""
        mask = np.ones(len(self), dtype=bool)
        if start is not None:
            mask &= self.dates >= np.datetime64(pd.Timestamp(start).date(), "D")
        if end is not None:
            mask &= self.dates <= np.datetime64(pd.Timestamp(end).date(), "D")
        return PriceSeries(self.ticker, self.dates[mask], self.close[mask])

    def date_strings(self) -> list[str]:
        return [str(d) for d in self.dates]


def ingest_csv(path: Union[str, Path], ticker: Optional[str] = None, min_rows: Optional[int] = None) -> PriceSeries:
    """Read a ``Date``/``Adj Close`` CSV into a date-sorted :class:`PriceSeries`.

    Row numbers in errors count the header as line 1.
    """
    path = Path(path)
    if not path.is_file():
        raise InputNotFoundError(f"price CSV not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise FormatError(f"cannot parse {path}: {exc}") from exc
    frame.columns = [str(c).strip() for c in frame.columns]
    missing = [c for c in (DATE_COLUMN, PRICE_COLUMN) if c not in frame.columns]
    if missing:
        raise FormatError(f"{path.name} is missing column(s): {', '.join(missing)}")

    dates = pd.to_datetime(frame[DATE_COLUMN].str.strip(), format="%Y-%m-%d", errors="coerce")
    prices = pd.to_numeric(frame[PRICE_COLUMN].str.strip(), errors="coerce")
    for i in range(len(frame)):
        row = i + 2
        if pd.isna(dates.iat[i]):
            raise DataError(f"row {row}: unparseable date {frame[DATE_COLUMN].iat[i]!r}")
        price = prices.iat[i]
        if pd.isna(price) or not np.isfinite(price):
            raise DataError(f"row {row}: unparseable price {frame[PRICE_COLUMN].iat[i]!r}")
        if price <= 0:
            raise DataError(f"row {row}: price must be positive, got {price}")

    duplicated = dates[dates.duplicated()]
    if len(duplicated):
        raise DataError(f"duplicate date {duplicated.iat[0].date().isoformat()}")

    order = np.argsort(dates.to_numpy(), kind="stable")
    series = PriceSeries(
        ticker=ticker or path.stem,
        dates=dates.to_numpy()[order].astype("datetime64[D]"),
        close=prices.to_numpy(dtype=np.float64)[order],
    )
    if min_rows is not None and len(series) < min_rows:
        raise InsufficientDataError(f"{path.name} has {len(series)} rows, need at least {min_rows}")
    logger.debug("ingested %d rows for %s from %s", len(series), series.ticker, path)
    return series


def split_point(length: int, ratio: float) -> int:
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"train ratio must be in (0, 1), got {ratio}")
    return int(Fraction(str(ratio)) * length)


def split_train_test(
    series: PriceSeries,
    ratio: float = 0.8,
    past_history: int = 0,
    forward_look: int = 0,
) -> Tuple[PriceSeries, PriceSeries]:
    """First ``floor(ratio * T)`` points train, the rest test. No shuffling."""
    cut = split_point(len(series), ratio)
    train, test = series.slice(0, cut), series.slice(cut)
    need = past_history + forward_look
    for name, part in (("train", train), ("test", test)):
        if len(part) < max(need, 1):
            raise InsufficientDataError(f"{name} slice has {len(part)} points, need at least {max(need, 1)}")
    return train, test


@dataclass(frozen=True)
class NormStats:
    mean: float
    std: float
    source_range: Tuple[int, int]

    def to_dict(self) -> Dict[str, Any]:
        return {"mean": self.mean, "std": self.std, "source_range": list(self.source_range)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NormStats":
        lo, hi = data["source_range"]
        return cls(mean=float(data["mean"]), std=float(data["std"]), source_range=(int(lo), int(hi)))


def fit_norm(train: Union[PriceSeries, np.ndarray], source_range: Optional[Tuple[int, int]] = None) -> NormStats:
    """Population mean/std of the training prices."""
    values = train.close if isinstance(train, PriceSeries) else np.asarray(train, dtype=np.float64)
    if len(values) < 2:
        raise InsufficientDataError(f"normalization needs at least 2 training points, got {len(values)}")
    std = float(np.std(values))
    if std < MIN_STD:
        raise DegenerateSeriesError(f"training prices are constant (std={std:.3g})")
    return NormStats(mean=float(np.mean(values)), std=std, source_range=source_range or (0, len(values)))


def apply_norm(x: Any, stats: NormStats) -> np.ndarray:
    return (np.asarray(x, dtype=np.float64) - stats.mean) / stats.std


def invert_norm(z: Any, stats: NormStats) -> np.ndarray:
    return np.asarray(z, dtype=np.float64) * stats.std + stats.mean


@dataclass(frozen=True)
class WindowedDataset:
    """``inputs[j] = z[j:j+k]`` and ``targets[j] = z[j+k:j+k+h]``."""

    inputs: np.ndarray  # [N, k]
    targets: np.ndarray  # [N, h]
    past_history: int
    forward_look: int
    split: Split

    def __len__(self) -> int:
        return len(self.inputs)

    def batch(self, index: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Model-ready ``([B, k, 1], [B, h])`` arrays for the given window indices."""
        return self.inputs[index][..., None], self.targets[index]

    def subset(self, start: int, stop: Optional[int] = None) -> "WindowedDataset":
        return WindowedDataset(
            self.inputs[start:stop], self.targets[start:stop], self.past_history, self.forward_look, self.split
        )


def make_windows(z: Any, past_history: int, forward_look: int, split: Split = "train") -> WindowedDataset:
    z = np.asarray(z, dtype=np.float64)
    if past_history < 1 or forward_look < 1:
        raise ConfigError(f"window sizes must be >= 1, got k={past_history}, h={forward_look}")
    span = past_history + forward_look
    if len(z) < span:
        raise InsufficientDataError(f"series of length {len(z)} is shorter than k + h = {span}")
    frames = np.lib.stride_tricks.sliding_window_view(z, span)
    return WindowedDataset(
        inputs=_frozen(frames[:, :past_history]),
        targets=_frozen(frames[:, past_history:]),
        past_history=past_history,
        forward_look=forward_look,
        split=split,
    )


@dataclass(frozen=True)
class PreparedSeries:
    """Everything downstream of ingestion for one ticker and window spec."""

    series: PriceSeries
    split_index: int
    stats: NormStats
    z: np.ndarray  # full normalized series; test history may reach back across the split
    train: WindowedDataset

    @property
    def test_prices(self) -> np.ndarray:
        return self.series.close[self.split_index:]

    @property
    def test_dates(self) -> np.ndarray:
        return self.series.dates[self.split_index:]


def prepare(series: PriceSeries, ratio: float, past_history: int, forward_look: int) -> PreparedSeries:
    train, _ = split_train_test(series, ratio, past_history, forward_look)
    cut = len(train)
    stats = fit_norm(train, source_range=(0, cut))
    z = _frozen(apply_norm(series.close, stats))
    return PreparedSeries(
        series=series,
        split_index=cut,
        stats=stats,
        z=z,
        train=make_windows(z[:cut], past_history, forward_look, "train"),
    )
