from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field

from stockbot.forecaster import ForecastMode


class ForecastModeResult(BaseModel):
    mode: ForecastMode
    rmse: Optional[float] = Field(default=None, description="RMSE in z-score units; None when nothing finite was predicted")
    diverged: bool = False
    diverged_at: Optional[str] = Field(default=None, description="Date of the first non-finite emission")
    predictions: int = Field(description="Number of predicted test days")


class ForecastSummary(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    ticker: str
    model: str
    past_history: int
    forward_look: int
    seed: int
    units: str = "normalized"
    test_start: str = Field(description="First test date")
    runs: List[ForecastModeResult]


class BacktestModeResult(BaseModel):
    mode: str
    days: int
    final_multiple: float
    trade_count: int
    buy_and_hold_multiple: float
    # forecast too short to decide on (diverged early); every day is a hold
    too_short: bool = False


class BacktestSummary(BaseModel):
    initial_cash: float = 1.0
    runs: List[BacktestModeResult]


class RunInfo(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    ticker: str
    run: str
    model: Optional[str] = None
    forward_look: Optional[int] = None
    seed: Optional[int] = None
    files: List[str] = Field(default_factory=list)


class ErrorDetail(BaseModel):
    kind: str
    message: str
    module: str


class ErrorPayload(BaseModel):
    error: ErrorDetail
