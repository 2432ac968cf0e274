from stockbot.data import PriceSeries, ingest_csv, prepare
from stockbot.engine import backtest, decide
from stockbot.forecaster import ForecastMode, rollout_autoregressive, rollout_teacher_forcing
from stockbot.models import ModelKind, ModelSpec, build, forward
from stockbot.trainer import TrainConfig, fit

__all__ = [
    "PriceSeries",
    "ingest_csv",
    "prepare",
    "ModelKind",
    "ModelSpec",
    "build",
    "forward",
    "TrainConfig",
    "fit",
    "ForecastMode",
    "rollout_autoregressive",
    "rollout_teacher_forcing",
    "decide",
    "backtest",
]

# Resolve version from installed package metadata to avoid hard-coding.
try:
    from importlib.metadata import version as _pkg_version, PackageNotFoundError
except Exception:  # pragma: no cover
    _pkg_version = None
    PackageNotFoundError = Exception

try:
    __version__ = _pkg_version("stockbot") if _pkg_version else "0.0.0"
except PackageNotFoundError:
    __version__ = "0.0.0"
