from typing import List, Optional

from rich.table import Table
from rich.text import Text

from stockbot.export import MODE_COLUMNS, ReportTable
from stockbot.models import DISPLAY_NAMES, MODEL_KINDS
from stockbot.schemas import BacktestSummary, ForecastSummary
from stockbot.trainer import TrainReport


def _rmse_text(rmse: Optional[float], diverged: bool) -> Text:
    if rmse is None:
        return Text("n/a", style="red")
    text = Text(f"{rmse:.4f}")
    if diverged:
        text.append(" †", style="red")
    return text


def format_train_table(ticker: str, model: str, report: TrainReport) -> Table:
    table = Table(title=f"Training: {model} on {ticker}", show_header=True, header_style="bold magenta")
    table.add_column("Epochs run", justify="right")
    table.add_column("Best epoch", justify="right")
    table.add_column("Best val MSE", justify="right")
    table.add_column("Final train MSE", justify="right")
    table.add_column("Wall time", justify="right")
    final_train = f"{report.train_loss[-1]:.6f}" if report.train_loss else ""
    table.add_row(
        str(report.stopped_epoch),
        str(report.best_epoch),
        f"{report.best_val_loss:.6f}",
        final_train,
        f"{report.wall_time:.1f}s",
    )
    return table


def format_forecast_table(summary: ForecastSummary) -> Table:
    title = f"Forecast: {summary.model} on {summary.ticker} (k={summary.past_history}, h={summary.forward_look})"
    table = Table(title=title, show_header=True, header_style="bold magenta")
    table.add_column("Mode", style="green")
    table.add_column("RMSE (z)", justify="right")
    table.add_column("Predictions", justify="right")
    table.add_column("Diverged at")
    for run in summary.runs:
        table.add_row(run.mode.value, _rmse_text(run.rmse, run.diverged), str(run.predictions), run.diverged_at or "")
    return table


def format_backtest_table(summary: BacktestSummary) -> Table:
    table = Table(title="Backtest", show_header=True, header_style="bold magenta")
    table.add_column("Forecast", style="green")
    table.add_column("Days", justify="right")
    table.add_column("Trades", justify="right")
    table.add_column("Final multiple", justify="right")
    table.add_column("Buy & hold", justify="right")
    for run in summary.runs:
        style = "green" if run.final_multiple >= run.buy_and_hold_multiple else "red"
        table.add_row(
            f"{run.mode} (too short, held)" if run.too_short else run.mode,
            str(run.days),
            str(run.trade_count),
            Text(f"{run.final_multiple:.4f}", style=style),
            f"{run.buy_and_hold_multiple:.4f}",
        )
    return table


def format_report_table(report: ReportTable) -> Table:
    table = Table(
        title=f"Test RMSE, h={report.forward_look}",
        show_header=True,
        header_style="bold magenta",
        show_lines=True,
    )
    table.add_column("Model", style="green")
    for ticker in report.tickers:
        for label in MODE_COLUMNS.values():
            table.add_column(f"{ticker}\n{label}", justify="right")
    for kind in MODEL_KINDS:
        cells: List[Text] = []
        for ticker in report.tickers:
            for mode in MODE_COLUMNS:
                cell = report.cell(kind, ticker, mode)
                cells.append(_rmse_text(cell.mean, cell.diverged) if cell.values else Text("absent", style="dim"))
        table.add_row(DISPLAY_NAMES[kind], *cells)
    return table
