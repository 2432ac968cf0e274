from __future__ import annotations

import io
import json
import os
import re
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple, Union

import pandas as pd
from pydantic import BaseModel

from stockbot.errors import FormatError, InputNotFoundError

CHECKPOINT = "checkpoint.stkb"
RUN_CONFIG = "run_config.json"
TRAIN_REPORT = "train_report.json"
LOSS_CURVE = "loss_curve.csv"
FORECAST_SUMMARY = "forecast_summary.json"
BACKTEST_SUMMARY = "backtest_summary.json"
BACKTEST_PLOT = "backtest.svg"

_SAFE_NAME_PATTERN = re.compile(r"[^a-zA-Z0-9_.-]")


def forecast_csv(mode: str) -> str:
    return f"forecast_{mode}.csv"


def ledger_csv(mode: str) -> str:
    return f"ledger_{mode}.csv"


def _sanitize_name(name: str) -> str:
    """Only alphanumerics, dot, dash and underscore survive."""
    return _SAFE_NAME_PATTERN.sub("", name).lstrip(".")


def run_name(model: str, forward_look: int, seed: int) -> str:
    return _sanitize_name(f"{model}_h{forward_look}_s{seed}")


def _parse_run_name(name: str) -> Tuple[Optional[str], Optional[int], Optional[int]]:
    match = re.fullmatch(r"(.+)_h(\d+)_s(-?\d+)", name)
    if not match:
        return None, None, None
    return match.group(1), int(match.group(2)), int(match.group(3))


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with tempfile.NamedTemporaryFile("wb", delete=False, dir=str(path.parent)) as tmp:
        tmp.write(data)
        tmp_path = Path(tmp.name)
    os.replace(tmp_path, path)


def to_json_text(data: Union[BaseModel, Dict[str, Any]]) -> str:
    if isinstance(data, BaseModel):
        data = data.model_dump(mode="json")
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def _atomic_write_json(path: Path, data: Union[BaseModel, Dict[str, Any]]) -> None:
    _atomic_write_bytes(path, to_json_text(data).encode("utf-8"))


def write_csv(path: Union[str, Path], frame: pd.DataFrame) -> Path:
    path = Path(path)
    buf = io.StringIO()
    frame.to_csv(buf, index=False, lineterminator="\n")
    _atomic_write_bytes(path, buf.getvalue().encode("utf-8"))
    return path


def read_csv(path: Union[str, Path], required: Optional[List[str]] = None) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise InputNotFoundError(f"file not found: {path}")
    frame = pd.read_csv(path)
    missing = [c for c in required or [] if c not in frame.columns]
    if missing:
        raise FormatError(f"{path.name} is missing column(s): {', '.join(missing)}")
    return frame


def write_json(path: Union[str, Path], data: Union[BaseModel, Dict[str, Any]]) -> Path:
    path = Path(path)
    _atomic_write_json(path, data)
    return path


def read_json(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise InputNotFoundError(f"file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path.name} is not valid JSON: {exc}") from exc


@dataclass
class RunStore:
    """Output root laid out as ``{base_dir}/{ticker}/{model}_h{h}_s{seed}/``."""

    base_dir: Path

    def __init__(self, base_dir: Union[str, Path] = "runs") -> None:
        self.base_dir = Path(base_dir)

    def run_dir(self, ticker: str, run: str, create: bool = False) -> Path:
        path = self.base_dir / (_sanitize_name(ticker) or "default") / _sanitize_name(run)
        if create:
            path.mkdir(parents=True, exist_ok=True)
        return path

    def existing_run_dir(self, ticker: str, run: str) -> Path:
        path = self.run_dir(ticker, run)
        if not path.is_dir():
            raise InputNotFoundError(f"run {ticker}/{run} not found under {self.base_dir}")
        return path

    def list_tickers(self) -> List[str]:
        if not self.base_dir.is_dir():
            return []
        return sorted(d.name for d in self.base_dir.iterdir() if d.is_dir())

    def list_runs(self, ticker: Optional[str] = None) -> List[Tuple[str, str]]:
        """``(ticker, run)`` pairs for every run directory with at least one artifact."""
        tickers = [ticker] if ticker else self.list_tickers()
        found = []
        for t in tickers:
            tdir = self.base_dir / _sanitize_name(t)
            if not tdir.is_dir():
                continue
            for rdir in sorted(tdir.iterdir()):
                if rdir.is_dir() and any(rdir.iterdir()):
                    found.append((t, rdir.name))
        return found

    def run_info(self, ticker: str, run: str) -> Dict[str, Any]:
        path = self.existing_run_dir(ticker, run)
        model, h, seed = _parse_run_name(run)
        return {
            "ticker": ticker,
            "run": run,
            "model": model,
            "forward_look": h,
            "seed": seed,
            "files": sorted(p.name for p in path.iterdir() if p.is_file()),
        }

    def iter_forecast_summaries(self) -> Iterator[Tuple[str, str, Dict[str, Any]]]:
        for ticker, run in self.list_runs():
            path = self.run_dir(ticker, run) / FORECAST_SUMMARY
            if path.is_file():
                yield ticker, run, read_json(path)
