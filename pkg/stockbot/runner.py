"""Train / forecast / backtest pipelines and the concurrent sweep runner."""

from __future__ import annotations

import asyncio
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Coroutine, Dict, List, Mapping, Optional, Sequence, TypeVar, Union

import numpy as np
import pandas as pd

from stockbot.checkpoint import load_checkpoint, save_checkpoint
from stockbot.config import RunConfig
from stockbot.data import NormStats, PriceSeries, apply_norm, ingest_csv, prepare
from stockbot.engine import MIN_DECISION_DAYS, Action, backtest, baseline_buy_and_hold, decide
from stockbot.errors import ConfigError, DataError, InsufficientDataError, SpecMismatchError, StockBotError
from stockbot.forecaster import ForecastMode, ModelPredictor, run_mode
from stockbot.gradcheck import check_gradients
from stockbot.models import MODEL_KINDS, ModelKind, ModelSpec, ModelState, build, forward
from stockbot.plots import ModePanel, backtest_svg
from stockbot.schemas import (
    BacktestModeResult,
    BacktestSummary,
    ForecastModeResult,
    ForecastSummary,
)
from stockbot.storage import (
    BACKTEST_PLOT,
    BACKTEST_SUMMARY,
    CHECKPOINT,
    FORECAST_SUMMARY,
    LOSS_CURVE,
    RUN_CONFIG,
    TRAIN_REPORT,
    RunStore,
    _atomic_write_bytes,
    forecast_csv,
    ledger_csv,
    read_csv,
    run_name,
    write_csv,
    write_json,
)
from stockbot.trainer import EpochHook, TrainReport, fit, mse_loss

logger = logging.getLogger(__name__)

T = TypeVar("T")

FORECAST_COLUMNS = ["date", "true_price", "predicted_price"]


def _run_sweep_loop(make_sweep: Callable[[], Coroutine[Any, Any, T]]) -> T:
    """``asyncio.run`` a sweep; from inside a running loop, on a worker thread of its own."""
    try:
        asyncio.get_running_loop()
    except RuntimeError:
        return asyncio.run(make_sweep())
    with ThreadPoolExecutor(max_workers=1, thread_name_prefix="stockbot-sweep") as pool:
        return pool.submit(lambda: asyncio.run(make_sweep())).result()


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    run_dir: Path
    state: ModelState
    report: TrainReport


def load_series(config: RunConfig) -> PriceSeries:
    """Ingest the configured CSV and keep the configured date range."""
    if not config.data.csv:
        raise ConfigError("data.csv is required (pass --csv or set it in the config file)")
    spec = config.model
    need = spec.past_history + spec.forward_look + 2
    series = ingest_csv(config.data.csv, ticker=config.data.resolved_ticker())
    series = series.between(config.data.start_date, config.data.end_date)
    if len(series) < need:
        raise InsufficientDataError(
            f"{len(series)} rows between {config.data.start_date} and {config.data.end_date}; "
            f"k={spec.past_history}, h={spec.forward_look} need at least {need}"
        )
    return series


def default_run_dir(config: RunConfig, store: Optional[RunStore] = None) -> Path:
    store = store or RunStore(config.out)
    spec = config.model
    return store.run_dir(config.data.resolved_ticker(), run_name(spec.kind.value, spec.forward_look, spec.seed))


def train_run(
    config: RunConfig,
    store: Optional[RunStore] = None,
    on_epoch: Optional[EpochHook] = None,
) -> TrainResult:
    series = load_series(config)
    spec = config.model
    prepared = prepare(series, config.data.train_ratio, spec.past_history, spec.forward_look)
    logger.debug(
        "%s: %d rows, split at %d (%s)", series.ticker, len(series), prepared.split_index, series.dates[prepared.split_index]
    )
    state, report = fit(build(spec), prepared.train, config.train, on_epoch=on_epoch)

    run_dir = default_run_dir(config, store)
    run_dir.mkdir(parents=True, exist_ok=True)
    metadata = {
        "ticker": series.ticker,
        "rows": len(series),
        "first_date": str(series.dates[0]),
        "last_date": str(series.dates[-1]),
        "split_index": prepared.split_index,
        "norm": prepared.stats.to_dict(),
    }
    save_checkpoint(run_dir / CHECKPOINT, state, metadata)
    write_json(run_dir / TRAIN_REPORT, report)
    write_csv(run_dir / LOSS_CURVE, report.loss_curve())
    write_json(run_dir / RUN_CONFIG, config.model_dump(mode="json", exclude={"out"}))
    return TrainResult(run_dir=run_dir, state=state, report=report)


# ---------------------------------------------------------------------------
# forecast
# ---------------------------------------------------------------------------


@dataclass
class ForecastResult:
    run_dir: Path
    summary: ForecastSummary
    frames: Dict[ForecastMode, pd.DataFrame]


def check_spec_match(spec: ModelSpec, explicit: Mapping[str, Any]) -> None:
    """Fields the user set on purpose must agree with the checkpoint's spec."""
    stored = spec.model_dump(mode="json")
    for name, value in explicit.items():
        if name not in stored:
            continue
        want = value.value if isinstance(value, ModelKind) else value
        if stored[name] != want:
            raise SpecMismatchError(f"checkpoint has {name}={stored[name]!r} but the config asks for {want!r}")


def forecast_run(
    config: RunConfig,
    checkpoint: Optional[Union[str, Path]] = None,
    store: Optional[RunStore] = None,
    explicit: Optional[Mapping[str, Any]] = None,
) -> ForecastResult:
    """Roll the checkpointed model over the test slice in every configured mode."""
    path = Path(checkpoint) if checkpoint is not None else default_run_dir(config, store) / CHECKPOINT
    state, metadata = load_checkpoint(path)
    check_spec_match(state.spec, explicit or {})
    spec = state.spec

    series = load_series(config.model_copy(update={"model": spec}))
    if len(series) != metadata.get("rows") or str(series.dates[0]) != metadata.get("first_date"):
        raise SpecMismatchError(
            f"series has {len(series)} rows from {series.dates[0]}; checkpoint was trained on "
            f"{metadata.get('rows')} rows from {metadata.get('first_date')}"
        )
    stats = NormStats.from_dict(metadata["norm"])
    test_start = int(metadata["split_index"])
    z = apply_norm(series.close, stats)
    predictor = ModelPredictor(state)

    run_dir = path.parent
    results: List[ForecastModeResult] = []
    frames: Dict[ForecastMode, pd.DataFrame] = {}
    for mode in config.modes:
        run = run_mode(predictor, mode, z, test_start)
        frame = run.to_frame(series.dates, series.close, stats)
        write_csv(run_dir / forecast_csv(mode.value), frame)
        frames[mode] = frame
        results.append(
            ForecastModeResult(
                mode=mode,
                rmse=run.rmse,
                diverged=run.diverged,
                diverged_at=None if run.diverged_at is None else str(series.dates[run.diverged_at]),
                predictions=len(run),
            )
        )
    summary = ForecastSummary(
        ticker=metadata.get("ticker", series.ticker),
        model=spec.kind.value,
        past_history=spec.past_history,
        forward_look=spec.forward_look,
        seed=spec.seed,
        test_start=str(series.dates[test_start]),
        runs=results,
    )
    write_json(run_dir / FORECAST_SUMMARY, summary)
    return ForecastResult(run_dir=run_dir, summary=summary, frames=frames)


# ---------------------------------------------------------------------------
# backtest
# ---------------------------------------------------------------------------


@dataclass
class BacktestResult:
    out_dir: Path
    summary: BacktestSummary
    ledgers: Dict[str, pd.DataFrame]


def _mode_label(frame: pd.DataFrame, path: Path) -> str:
    if "mode" in frame.columns and len(frame):
        return str(frame["mode"].iloc[0])
    return path.stem.removeprefix("forecast_")


def _true_prices(frame: pd.DataFrame, truth: Optional[PriceSeries]) -> np.ndarray:
    if truth is None:
        return frame["true_price"].to_numpy(dtype=np.float64)
    lookup = dict(zip(truth.date_strings(), truth.close))
    missing = [d for d in frame["date"] if d not in lookup]
    if missing:
        raise DataError(f"true-price CSV has no row for {missing[0]} ({len(missing)} date(s) missing)")
    return np.asarray([lookup[d] for d in frame["date"]], dtype=np.float64)


def backtest_run(
    forecast_csvs: Sequence[Union[str, Path]],
    out_dir: Union[str, Path],
    true_csv: Optional[Union[str, Path]] = None,
    title: Optional[str] = None,
) -> BacktestResult:
    """Trade on predicted prices, settle at true prices, one ledger per forecast file."""
    if not forecast_csvs:
        raise ConfigError("at least one forecast CSV is required")
    out_dir = Path(out_dir)
    truth = ingest_csv(true_csv) if true_csv is not None else None

    runs: List[BacktestModeResult] = []
    ledgers: Dict[str, pd.DataFrame] = {}
    panels: List[ModePanel] = []
    for raw in forecast_csvs:
        path = Path(raw)
        frame = read_csv(path, required=FORECAST_COLUMNS)
        mode = _mode_label(frame, path)
        if any(r.mode == mode for r in runs):
            raise ConfigError(f"forecast mode {mode!r} given twice")
        predicted = frame["predicted_price"].to_numpy(dtype=np.float64)
        true_prices = _true_prices(frame, truth)
        dates = frame["date"].astype(str).tolist()

        too_short = len(predicted) < MIN_DECISION_DAYS
        if too_short:
            logger.warning("%s: only %d predicted day(s), holding cash throughout", mode, len(predicted))
        if not len(predicted):
            runs.append(
                BacktestModeResult(
                    mode=mode,
                    days=0,
                    final_multiple=1.0,
                    trade_count=0,
                    buy_and_hold_multiple=1.0,
                    too_short=True,
                )
            )
            continue

        decisions = [Action.HOLD] * len(predicted) if too_short else decide(predicted)
        ledger = backtest(true_prices, decisions)
        baseline = baseline_buy_and_hold(true_prices)
        ledger_frame = ledger.to_frame(dates)
        write_csv(out_dir / ledger_csv(mode), ledger_frame)
        ledgers[mode] = ledger_frame
        runs.append(
            BacktestModeResult(
                mode=mode,
                days=len(true_prices),
                final_multiple=ledger.final_multiple,
                trade_count=ledger.trade_count,
                buy_and_hold_multiple=baseline.final_multiple,
                too_short=too_short,
            )
        )
        panels.append(
            ModePanel(
                mode=mode,
                dates=np.asarray(dates, dtype="datetime64[D]"),
                true_prices=true_prices,
                predicted_prices=predicted,
                portfolio=ledger.values / ledger.initial_cash,
                buy_and_hold=baseline.values / baseline.initial_cash,
            )
        )
        logger.debug("%s: %d trades, final multiple %.4f", mode, ledger.trade_count, ledger.final_multiple)

    summary = BacktestSummary(runs=runs)
    write_json(out_dir / BACKTEST_SUMMARY, summary)
    _atomic_write_bytes(out_dir / BACKTEST_PLOT, backtest_svg(title or f"StockBot: {out_dir.name}", panels))
    return BacktestResult(out_dir=out_dir, summary=summary, ledgers=ledgers)


def backtest_forecast(forecast: ForecastResult) -> BacktestResult:
    """Backtest every mode a forecast run just wrote, into the same run directory."""
    csvs = [forecast.run_dir / forecast_csv(m.value) for m in forecast.frames]
    title = f"{forecast.summary.ticker}: {forecast.summary.model}, h={forecast.summary.forward_look}"
    return backtest_run(csvs, forecast.run_dir, title=title)


# ---------------------------------------------------------------------------
# gradient check on a tiny model
# ---------------------------------------------------------------------------


def gradcheck_model(kind: ModelKind, forward_look: int = 1, seed: int = 0, max_probes: int = 8) -> float:
    """Max relative error of reverse-mode vs finite differences on a tiny ``kind``."""
    spec = ModelSpec(
        kind=kind,
        past_history=6,
        forward_look=forward_look,
        hidden=8,
        ff_dim=8,
        heads=2,
        encoder_layers=1,
        lstm_layers=1,
        dropout=0.0,
        seed=seed,
    )
    state = build(spec)
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((3, spec.past_history, 1))
    Y = rng.standard_normal((3, forward_look))
    return check_gradients(
        lambda: mse_loss(forward(state, X, mode="eval"), Y),
        list(state.parameters.values()),
        max_probes=max_probes,
        rng=rng,
    )


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


@dataclass
class SweepJob:
    config: RunConfig

    @property
    def name(self) -> str:
        spec = self.config.model
        return f"{self.config.data.resolved_ticker()}/{run_name(spec.kind.value, spec.forward_look, spec.seed)}"


@dataclass
class SweepOutcome:
    job: SweepJob
    forecast: Optional[ForecastSummary] = None
    error: Optional[Dict[str, Any]] = None


@dataclass
class SweepSummary:
    outcomes: List[SweepOutcome] = field(default_factory=list)

    @property
    def failed(self) -> List[SweepOutcome]:
        return [o for o in self.outcomes if o.error is not None]


def sweep_jobs(
    config: RunConfig,
    kinds: Optional[Sequence[ModelKind]] = None,
    seeds: Optional[Sequence[int]] = None,
) -> List[SweepJob]:
    """One job per (kind, seed); each job owns its model and shuffling seeds."""
    kinds = list(kinds or MODEL_KINDS)
    seeds = list(seeds if seeds is not None else [config.model.seed])
    jobs = []
    for seed in seeds:
        for kind in kinds:
            spec = {**config.model.model_dump(), "kind": kind, "seed": seed}
            train = config.train.model_copy(update={"seed": seed})
            jobs.append(SweepJob(config.model_copy(update={"model": ModelSpec(**spec), "train": train})))
    return jobs


class SweepRunner:
    def __init__(self, concurrency: int = 1, store: Optional[RunStore] = None):
        if concurrency < 1:
            raise ValueError(f"concurrency must be at least 1, got {concurrency}")
        self.concurrency = concurrency
        self.store = store

    def run_job(self, job: SweepJob) -> SweepOutcome:
        try:
            train_run(job.config, store=self.store)
            forecast = forecast_run(job.config, store=self.store)
            backtest_forecast(forecast)
        except StockBotError as e:
            logger.warning("%s failed: %s", job.name, e)
            return SweepOutcome(job=job, error=e.to_payload())
        return SweepOutcome(job=job, forecast=forecast.summary)

    async def run_all_async(
        self,
        jobs: Sequence[SweepJob],
        on_start: Optional[Callable[[SweepJob], None]] = None,
        on_complete: Optional[Callable[[SweepOutcome], None]] = None,
    ) -> List[SweepOutcome]:
        semaphore = asyncio.Semaphore(self.concurrency)
        outcomes: List[SweepOutcome] = []

        async def run_single(job: SweepJob) -> SweepOutcome:
            async with semaphore:
                if on_start:
                    on_start(job)
                outcome = await asyncio.to_thread(self.run_job, job)
                if on_complete:
                    on_complete(outcome)
                return outcome

        tasks = []
        job_iter = iter(jobs)

        def launch_next():
            try:
                job = next(job_iter)
            except StopIteration:
                return False
            tasks.append(asyncio.create_task(run_single(job)))
            return True

        for _ in range(self.concurrency):
            if not launch_next():
                break

        while tasks:
            done, pending = await asyncio.wait(tasks, return_when=asyncio.FIRST_COMPLETED)
            for d in done:
                outcomes.append(d.result())
            tasks = list(pending)
            while len(tasks) < self.concurrency and launch_next():
                pass

        # completion order depends on scheduling; report in job order
        order = {id(job): i for i, job in enumerate(jobs)}
        return sorted(outcomes, key=lambda o: order[id(o.job)])

    def run(
        self,
        jobs: Sequence[SweepJob],
        on_start: Optional[Callable[[SweepJob], None]] = None,
        on_complete: Optional[Callable[[SweepOutcome], None]] = None,
    ) -> SweepSummary:
        if not jobs:
            return SweepSummary()
        outcomes = _run_sweep_loop(
            lambda: self.run_all_async(jobs, on_start=on_start, on_complete=on_complete)
        )
        return SweepSummary(outcomes=outcomes)
