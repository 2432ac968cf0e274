"""RMSE grid reports (model x mode per ticker) as Markdown and CSV."""

from __future__ import annotations

import csv
import io
import statistics
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

from stockbot.forecaster import ForecastMode
from stockbot.models import DISPLAY_NAMES, MODEL_KINDS, ModelKind
from stockbot.storage import RunStore

DIVERGED_MARK = "†"
ABSENT = "absent"
MODE_COLUMNS = {
    ForecastMode.AUTOREGRESSIVE: "Auto. RMSE",
    ForecastMode.TEACHER_FORCING: "TF RMSE",
}


@dataclass
class Cell:
    values: List[float] = field(default_factory=list)
    seeds: List[int] = field(default_factory=list)
    diverged: bool = False

    @property
    def mean(self) -> Optional[float]:
        return statistics.fmean(self.values) if self.values else None

    def text(self) -> str:
        if self.mean is None:
            return f"{ABSENT}{DIVERGED_MARK}" if self.diverged else ABSENT
        out = f"{self.mean:.4f}"
        return out + DIVERGED_MARK if self.diverged else out


@dataclass
class ReportTable:
    forward_look: int
    tickers: List[str]
    # (model, ticker, mode) -> Cell
    cells: Dict[Tuple[str, str, str], Cell]
    per_seed: Dict[Tuple[str, str, str], Dict[int, float]]

    def cell(self, model: ModelKind, ticker: str, mode: ForecastMode) -> Cell:
        return self.cells.get((model.value, ticker, mode.value), Cell())

    def echo_lines(self) -> List[str]:
        """How often LSTM's autoregressive RMSE is at or below the Transformer's, per ticker."""
        lines = []
        mode = ForecastMode.AUTOREGRESSIVE.value
        for ticker in self.tickers:
            lstm = self.per_seed.get((ModelKind.LSTM.value, ticker, mode), {})
            tf = self.per_seed.get((ModelKind.TRANSFORMER.value, ticker, mode), {})
            seeds = sorted(set(lstm) & set(tf))
            if not seeds:
                continue
            wins = sum(1 for s in seeds if lstm[s] <= tf[s])
            seed_list = ", ".join(str(s) for s in seeds)
            lines.append(
                f"{ticker}: LSTM autoregressive RMSE <= Transformer in {wins} of {len(seeds)} seeds (seeds: {seed_list})"
            )
        return lines


def collect_records(store: RunStore) -> List[Dict[str, Any]]:
    """Flatten every forecast summary under the store into one record per mode."""
    records = []
    for ticker, _run, summary in store.iter_forecast_summaries():
        for r in summary.get("runs", []):
            records.append(
                {
                    "ticker": summary.get("ticker", ticker),
                    "model": summary.get("model"),
                    "forward_look": int(summary.get("forward_look", 0)),
                    "seed": int(summary.get("seed", 0)),
                    "mode": r.get("mode"),
                    "rmse": r.get("rmse"),
                    "diverged": bool(r.get("diverged")),
                }
            )
    return records


def horizons(records: Iterable[Dict[str, Any]]) -> List[int]:
    return sorted({r["forward_look"] for r in records})


def build_report(records: Iterable[Dict[str, Any]], forward_look: int) -> ReportTable:
    cells: Dict[Tuple[str, str, str], Cell] = defaultdict(Cell)
    per_seed: Dict[Tuple[str, str, str], Dict[int, float]] = defaultdict(dict)
    tickers = set()
    for r in records:
        if r["forward_look"] != forward_look:
            continue
        key = (r["model"], r["ticker"], r["mode"])
        tickers.add(r["ticker"])
        cell = cells[key]
        cell.diverged = cell.diverged or r["diverged"]
        if r["rmse"] is not None:
            cell.values.append(float(r["rmse"]))
            cell.seeds.append(r["seed"])
            per_seed[key][r["seed"]] = float(r["rmse"])
    return ReportTable(forward_look=forward_look, tickers=sorted(tickers), cells=dict(cells), per_seed=dict(per_seed))


def _header(report: ReportTable) -> List[str]:
    cols = ["Model"]
    for ticker in report.tickers:
        cols.extend(f"{ticker} {label}" for label in MODE_COLUMNS.values())
    return cols


def _rows(report: ReportTable) -> List[List[str]]:
    rows = []
    for kind in MODEL_KINDS:
        row = [DISPLAY_NAMES[kind]]
        for ticker in report.tickers:
            row.extend(report.cell(kind, ticker, mode).text() for mode in MODE_COLUMNS)
        rows.append(row)
    return rows


def render_markdown(report: ReportTable) -> str:
    days = "one-day" if report.forward_look == 1 else f"{report.forward_look}-day"
    lines = [f"# Test RMSE, {days} forecasts", ""]
    lines.append("RMSE in z-score units of the training slice; cells average all seeds.")
    lines.append(f"{DIVERGED_MARK} marks a rollout that produced non-finite values (RMSE over the finite prefix).")
    lines.append("")
    if not report.tickers:
        lines.append("*No forecast runs found*")
        return "\n".join(lines) + "\n"

    header = _header(report)
    lines.append("| " + " | ".join(header) + " |")
    lines.append("|" + "|".join("---" for _ in header) + "|")
    for row in _rows(report):
        lines.append("| " + " | ".join(v.replace("|", "\\|") for v in row) + " |")

    echo = report.echo_lines()
    if echo:
        lines.append("")
        lines.append("## LSTM vs Transformer (autoregressive)")
        lines.append("")
        lines.extend(f"- {line}" for line in echo)
    return "\n".join(lines) + "\n"


def render_csv(report: ReportTable) -> str:
    output = io.StringIO()
    writer = csv.writer(output, lineterminator="\n")
    writer.writerow(["model", "ticker", "mode", "rmse", "seeds", "diverged"])
    for kind in MODEL_KINDS:
        for ticker in report.tickers:
            for mode in MODE_COLUMNS:
                cell = report.cell(kind, ticker, mode)
                rmse = "" if cell.mean is None else repr(cell.mean)
                seeds = ";".join(str(s) for s in sorted(cell.seeds)) if cell.values else ABSENT
                writer.writerow([kind.value, ticker, mode.value, rmse, seeds, int(cell.diverged)])
    return output.getvalue()


def export_report(store: RunStore, dest: Optional[Union[str, Path]] = None) -> List[Path]:
    """Write ``report_h{H}.md`` and ``report_h{H}.csv`` for every horizon found."""
    dest = Path(dest) if dest is not None else store.base_dir
    dest.mkdir(parents=True, exist_ok=True)
    records = collect_records(store)
    written = []
    for h in horizons(records) or [1]:
        report = build_report(records, h)
        md_path = dest / f"report_h{h}.md"
        csv_path = dest / f"report_h{h}.csv"
        md_path.write_text(render_markdown(report), encoding="utf-8")
        csv_path.write_text(render_csv(report), encoding="utf-8")
        written.extend([md_path, csv_path])
    return written
