import functools
import json
import logging
import socket
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import click
from pydantic import ValidationError
from rich.console import Console
from rich.logging import RichHandler

from stockbot.config import RunConfig, explicit_model_fields, load_config
from stockbot.errors import ConfigError, StockBotError
from stockbot.export import build_report, collect_records, export_report, horizons
from stockbot.formatters import (
    format_backtest_table,
    format_forecast_table,
    format_report_table,
    format_train_table,
)
from stockbot.forecaster import ForecastMode
from stockbot.models import MODEL_KINDS, ModelKind
from stockbot.runner import (
    SweepRunner,
    backtest_run,
    forecast_run,
    gradcheck_model,
    sweep_jobs,
    train_run,
)
from stockbot.schemas import ErrorPayload
from stockbot.storage import RunStore

console = Console()

MODEL_CHOICES = [k.value for k in MODEL_KINDS]
MODE_CHOICES = [m.value for m in ForecastMode]
GRADCHECK_TOLERANCE = 1e-4


def _configure_logging(verbose: bool) -> None:
    log = logging.getLogger("stockbot")
    if not any(isinstance(h, RichHandler) for h in log.handlers):
        log.addHandler(RichHandler(console=Console(stderr=True), show_path=False))
    log.setLevel(logging.DEBUG if verbose else logging.WARNING)
    log.propagate = False


def _fail(payload: Dict[str, Any], exit_code: int) -> None:
    click.echo(json.dumps(ErrorPayload.model_validate(payload).model_dump(), sort_keys=True))
    sys.exit(exit_code)


def handle_errors(fn):
    """Report pipeline errors as one JSON line on stdout and exit with the error's code."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except StockBotError as e:
            _fail(e.to_payload(), e.exit_code)
        except ValidationError as e:
            err = ConfigError(str(e))
            _fail(err.to_payload(), err.exit_code)

    return wrapper


def run_options(fn):
    """Flags shared by every command that builds a RunConfig."""
    options = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), help="JSON run config"),
        click.option("--csv", "csv_path", type=str, help="Date/Adj Close price CSV"),
        click.option("--ticker", type=str, help="Ticker label (defaults to the CSV file stem)"),
        click.option("--model", "model", type=click.Choice(MODEL_CHOICES), help="Architecture"),
        click.option("--seed", type=int, help="Seed for initialization and shuffling"),
        click.option("--mode", "modes", multiple=True, type=click.Choice(MODE_CHOICES), help="Forecast mode(s)"),
        click.option("--out", type=str, help="Output root directory"),
        click.option("--past-history", type=int, help="Input window length k"),
        click.option("--forward-look", type=int, help="Forecast block length h"),
        click.option("--max-epochs", type=int, help="Training epoch cap"),
        click.option("--verbose", "-v", is_flag=True, help="Debug logging"),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _overrides(
    csv_path: Optional[str] = None,
    ticker: Optional[str] = None,
    model: Optional[str] = None,
    seed: Optional[int] = None,
    modes: Tuple[str, ...] = (),
    out: Optional[str] = None,
    past_history: Optional[int] = None,
    forward_look: Optional[int] = None,
    max_epochs: Optional[int] = None,
) -> Dict[str, Any]:
    flags = {
        "data.csv": csv_path,
        "data.ticker": ticker,
        "model.kind": model,
        "model.seed": seed,
        "train.seed": seed,
        "modes": list(modes) or None,
        "out": out,
        "model.past_history": past_history,
        "model.forward_look": forward_look,
        "train.max_epochs": max_epochs,
    }
    return {k: v for k, v in flags.items() if v is not None}


def _resolve(config_path: Optional[str], verbose: bool, **flags) -> Tuple[RunConfig, Dict[str, Any]]:
    _configure_logging(verbose)
    overrides = _overrides(**flags)
    return load_config(config_path, overrides), overrides


@click.group()
def cli():
    """StockBot - neural price forecasts and a local-extrema trading bot

    Train a model:      stockbot train --csv AAPL.csv --model LSTM
    Forecast the test:  stockbot forecast --csv AAPL.csv --model LSTM
    Trade on it:        stockbot backtest --forecast runs/AAPL/LSTM_h1_s0/forecast_autoregressive.csv
    Tabulate RMSE:      stockbot report --out runs
    """
    pass


@cli.command("train")
@run_options
@handle_errors
def train_cmd(config_path, verbose, **flags):
    """Train one model and write its checkpoint, loss curve and train report."""
    config, _ = _resolve(config_path, verbose, **flags)
    console.print(
        f"Training {config.model.kind.value} on {config.data.resolved_ticker()} "
        f"(k={config.model.past_history}, h={config.model.forward_look}, seed={config.model.seed})..."
    )
    result = train_run(config)
    console.print(format_train_table(config.data.resolved_ticker(), config.model.kind.value, result.report))
    console.print(f"Run directory: {result.run_dir}")


@cli.command("forecast")
@run_options
@click.option("--checkpoint", type=click.Path(dir_okay=False), help="Checkpoint file (defaults to the run directory's)")
@handle_errors
def forecast_cmd(config_path, verbose, checkpoint, **flags):
    """Roll a trained model over the test slice in each forecast mode."""
    config, overrides = _resolve(config_path, verbose, **flags)
    explicit = explicit_model_fields(config_path, overrides)
    result = forecast_run(config, checkpoint=checkpoint, explicit=explicit)
    console.print(format_forecast_table(result.summary))
    console.print(f"Run directory: {result.run_dir}")


@cli.command("backtest")
@click.option("--forecast", "forecasts", multiple=True, required=True, type=click.Path(dir_okay=False), help="Forecast CSV (repeatable, one per mode)")
@click.option("--true-csv", type=click.Path(dir_okay=False), help="Date/Adj Close CSV to settle trades against")
@click.option("--out", type=click.Path(file_okay=False), help="Output directory (defaults to the first forecast's directory)")
@click.option("--verbose", "-v", is_flag=True, help="Debug logging")
@handle_errors
def backtest_cmd(forecasts, true_csv, out, verbose):
    """Trade on forecast prices and compare against buy-and-hold."""
    _configure_logging(verbose)
    out_dir = Path(out) if out else Path(forecasts[0]).parent
    result = backtest_run(list(forecasts), out_dir, true_csv=true_csv)
    console.print(format_backtest_table(result.summary))
    console.print(f"Ledgers and plot written to {result.out_dir}")


@cli.command("report")
@click.option("--out", type=str, help="Output root to scan for runs")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="JSON run config (for its output root)")
@click.option("--dest", type=click.Path(file_okay=False), help="Where to write report_h*.md/.csv (defaults to the output root)")
@click.option("--verbose", "-v", is_flag=True, help="Debug logging")
@handle_errors
def report_cmd(out, config_path, dest, verbose):
    """Tabulate test RMSE per model and mode across every run."""
    config, _ = _resolve(config_path, verbose, out=out)
    store = RunStore(config.out)
    records = collect_records(store)
    for h in horizons(records):
        report = build_report(records, h)
        console.print(format_report_table(report))
        for line in report.echo_lines():
            console.print(f"[dim]{line}[/dim]")
    if not records:
        console.print(f"[yellow]No forecast runs under {store.base_dir}[/yellow]")
    for path in export_report(store, dest):
        console.print(f"Wrote {path}")


def _parse_seeds(seeds: Optional[str]) -> Optional[List[int]]:
    if not seeds:
        return None
    try:
        return [int(s) for s in seeds.split(",") if s.strip()]
    except ValueError as e:
        raise ConfigError(f"--seeds must be comma-separated integers, got {seeds!r}") from e


@cli.command("sweep")
@run_options
@click.option("--models", "kinds", multiple=True, type=click.Choice(MODEL_CHOICES), help="Architectures (default: all seven)")
@click.option("--seeds", type=str, help="Comma-separated seeds, e.g. 0,1,2,3,4")
@click.option("--concurrency", "-c", default=1, type=click.IntRange(min=1), help="Jobs trained at once")
@handle_errors
def sweep_cmd(config_path, verbose, kinds, seeds, concurrency, **flags):
    """Train, forecast and backtest many architectures and seeds, then report."""
    config, _ = _resolve(config_path, verbose, **flags)
    jobs = sweep_jobs(config, kinds=[ModelKind(k) for k in kinds] or None, seeds=_parse_seeds(seeds))
    store = RunStore(config.out)
    console.print(f"Sweeping {len(jobs)} job(s) with concurrency {concurrency}...")

    def on_complete(outcome):
        if outcome.error:
            console.print(f"[red]✗ {outcome.job.name}: {outcome.error['error']['message']}[/red]")
        else:
            console.print(f"[green]✓ {outcome.job.name}[/green]")

    summary = SweepRunner(concurrency=concurrency, store=store).run(jobs, on_complete=on_complete)
    records = collect_records(store)
    for h in horizons(records):
        console.print(format_report_table(build_report(records, h)))
    for path in export_report(store):
        console.print(f"Wrote {path}")
    if summary.failed:
        console.print(f"[red]{len(summary.failed)} of {len(jobs)} job(s) failed[/red]")
        sys.exit(1)


@cli.command("gradcheck")
@click.option("--model", "kinds", multiple=True, type=click.Choice(MODEL_CHOICES), help="Architectures (default: all)")
@click.option("--forward-look", default=1, type=click.IntRange(min=1), help="Forecast block length h")
@click.option("--seed", default=0, type=int)
@click.option("--tolerance", default=GRADCHECK_TOLERANCE, type=float, help="Max relative error")
@handle_errors
def gradcheck_cmd(kinds, forward_look, seed, tolerance):
    """Compare reverse-mode gradients with finite differences on tiny models."""
    _configure_logging(False)
    failed = []
    for kind in [ModelKind(k) for k in kinds] or MODEL_KINDS:
        err = gradcheck_model(kind, forward_look=forward_look, seed=seed)
        ok = err < tolerance
        status = "[green]PASS[/green]" if ok else "[red]FAIL[/red]"
        console.print(f"{status} {kind.value}: max relative error {err:.2e}")
        if not ok:
            failed.append(kind.value)
    if failed:
        sys.exit(1)


def _is_port_available(host: str, port: int) -> bool:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as s:
        try:
            s.bind((host, port))
            return True
        except OSError:
            return False


def _find_available_port(host: str, start_port: int, max_attempts: int = 10) -> int:
    for offset in range(max_attempts):
        port = start_port + offset
        if _is_port_available(host, port):
            return port
    raise click.ClickException(f"No available ports found in range {start_port}-{start_port + max_attempts - 1}")


@cli.command("serve")
@click.option("--out", type=str, help="Output root to browse")
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
@handle_errors
def serve_cmd(out, host, port):
    """Browse runs, plots and reports over HTTP (read-only)."""
    try:
        import uvicorn

        from stockbot.server import create_app
    except Exception:
        console.print("[red]Missing server dependencies. Install with:[/red] \n  pip install fastapi uvicorn")
        raise

    config = load_config(None, {"out": out} if out else None)
    port = _find_available_port(host, port)
    app = create_app(config.out)
    console.print(f"Serving {config.out} at http://{host}:{port}/api/runs (Ctrl+C to stop)")
    server = uvicorn.Server(uvicorn.Config(app, host=host, port=port, log_level="warning", access_log=False))
    server.run()


def main():
    cli()


if __name__ == "__main__":
    main()
