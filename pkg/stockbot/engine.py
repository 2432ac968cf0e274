"""StockBot: curvature-based buy/sell decisions and a single-asset backtest.

``delta[i] = sign(c[i+1] - c[i])`` and ``curvature[i] = delta[i+1] - delta[i]``.
A curvature of +2 marks a trough on day ``i+1`` (buy there), -2 a peak
(sell there); everything else holds. The bot is flat outside the forecast
window, which is expressed by padding ``delta`` with -1 on both ends: a
rising first step buys on day 0 and a rising last step sells on the final day.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from stockbot.errors import DimensionError, DomainError, InsufficientDataError

logger = logging.getLogger(__name__)

INITIAL_CASH = 1.0
MIN_DECISION_DAYS = 3


class Action(str, Enum):
    BUY = "buy"
    SELL = "sell"
    HOLD = "hold"


@dataclass(frozen=True)
class DecisionTrace:
    deltas: np.ndarray  # [n-1] in {-1, 0, 1}
    curvatures: np.ndarray  # [n-2] in {-2..2}
    decisions: List[Action]  # [n]

    def __len__(self) -> int:
        return len(self.decisions)


def decide(prices: Sequence[float]) -> DecisionTrace:
    c = np.asarray(prices, dtype=np.float64)
    if c.ndim != 1 or len(c) < MIN_DECISION_DAYS:
        raise InsufficientDataError(
            f"decide needs a trajectory of at least {MIN_DECISION_DAYS} prices, got {c.shape}"
        )
    deltas = np.sign(np.diff(c)).astype(np.int64)
    curvatures = np.diff(deltas)
    padded = np.diff(np.concatenate([[-1], deltas, [-1]]))
    decisions = [Action.BUY if p == 2 else Action.SELL if p == -2 else Action.HOLD for p in padded]
    return DecisionTrace(deltas=deltas, curvatures=curvatures, decisions=decisions)


@dataclass(frozen=True)
class TradeEvent:
    day: int
    action: Action
    price: float
    shares: float
    cash: float


@dataclass
class TradeLedger:
    prices: np.ndarray
    actions: List[Action]  # executed actions; infeasible requests are holds
    shares: np.ndarray
    cash: np.ndarray
    values: np.ndarray
    events: List[TradeEvent] = field(default_factory=list)
    initial_cash: float = INITIAL_CASH

    @property
    def final_value(self) -> float:
        return float(self.values[-1])

    @property
    def final_multiple(self) -> float:
        return self.final_value / self.initial_cash

    @property
    def trade_count(self) -> int:
        return len(self.events)

    def to_frame(self, dates: Optional[Sequence] = None) -> pd.DataFrame:
        n = len(self.prices)
        labels = [str(d) for d in dates] if dates is not None else list(range(n))
        if len(labels) != n:
            raise DimensionError(f"{len(labels)} dates for a ledger of {n} days")
        return pd.DataFrame(
            {
                "date": labels,
                "action": [a.value for a in self.actions],
                "price": self.prices,
                "shares": self.shares,
                "cash": self.cash,
                "value": self.values,
            }
        )


def backtest(
    prices: Sequence[float],
    decisions: Union[DecisionTrace, Sequence[Union[Action, str]]],
    initial_cash: float = INITIAL_CASH,
) -> TradeLedger:
    """All-in buys and all-out sells at each day's close."""
    c = np.asarray(prices, dtype=np.float64)
    requested = decisions.decisions if isinstance(decisions, DecisionTrace) else [Action(d) for d in decisions]
    if len(requested) != len(c):
        raise DimensionError(f"{len(requested)} decisions for {len(c)} prices")
    if len(c) == 0:
        raise InsufficientDataError("backtest needs at least one price")
    if np.any(c <= 0) or not np.all(np.isfinite(c)):
        raise DomainError("backtest prices must be finite and positive")

    cash, held = float(initial_cash), 0.0
    actions: List[Action] = []
    shares_path = np.zeros(len(c))
    cash_path = np.zeros(len(c))
    values = np.zeros(len(c))
    events: List[TradeEvent] = []
    for day, (price, want) in enumerate(zip(c, requested)):
        done = Action.HOLD
        if want is Action.BUY and held == 0.0 and cash > 0.0:
            held, cash, done = cash / price, 0.0, Action.BUY
        elif want is Action.SELL and held > 0.0:
            held, cash, done = 0.0, held * price, Action.SELL
        elif want is not Action.HOLD:
            logger.debug("day %d: infeasible %s treated as hold", day, want.value)
        if done is not Action.HOLD:
            events.append(TradeEvent(day=day, action=done, price=float(price), shares=held, cash=cash))
        actions.append(done)
        shares_path[day], cash_path[day] = held, cash
        values[day] = cash + held * price
    return TradeLedger(
        prices=c,
        actions=actions,
        shares=shares_path,
        cash=cash_path,
        values=values,
        events=events,
        initial_cash=float(initial_cash),
    )


def baseline_buy_and_hold(prices: Sequence[float], initial_cash: float = INITIAL_CASH) -> TradeLedger:
    n = len(prices)
    return backtest(prices, [Action.BUY] + [Action.HOLD] * (n - 1), initial_cash)
