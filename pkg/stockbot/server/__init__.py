from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import Response

from stockbot.errors import FormatError, InputNotFoundError
from stockbot.export import build_report, collect_records, render_csv, render_markdown
from stockbot.schemas import RunInfo
from stockbot.storage import (
    BACKTEST_SUMMARY,
    BACKTEST_PLOT,
    FORECAST_SUMMARY,
    TRAIN_REPORT,
    RunStore,
    read_json,
)


def create_app(results_dir: Union[str, Path] = "runs") -> FastAPI:
    """Read-only browser over a StockBot output root."""
    app = FastAPI()
    store = RunStore(results_dir)
    app.state.store = store

    def _run_dir(ticker: str, run: str) -> Path:
        try:
            return store.existing_run_dir(ticker, run)
        except InputNotFoundError:
            raise HTTPException(status_code=404, detail="Run not found")

    def _optional_json(path: Path) -> Optional[Dict[str, Any]]:
        if not path.is_file():
            return None
        try:
            return read_json(path)
        except FormatError as e:
            raise HTTPException(status_code=500, detail=str(e))

    @app.get("/api/runs")
    def list_runs(ticker: Optional[str] = None) -> Dict[str, List[Dict[str, Any]]]:
        runs = [RunInfo(**store.run_info(t, r)).model_dump() for t, r in store.list_runs(ticker)]
        return {"runs": runs}

    @app.get("/api/runs/{ticker}/{run}")
    def run_detail(ticker: str, run: str) -> Dict[str, Any]:
        path = _run_dir(ticker, run)
        return {
            "info": RunInfo(**store.run_info(ticker, run)).model_dump(),
            "train_report": _optional_json(path / TRAIN_REPORT),
            "forecast_summary": _optional_json(path / FORECAST_SUMMARY),
            "backtest_summary": _optional_json(path / BACKTEST_SUMMARY),
        }

    @app.get("/api/runs/{ticker}/{run}/plot")
    def run_plot(ticker: str, run: str) -> Response:
        plot = _run_dir(ticker, run) / BACKTEST_PLOT
        if not plot.is_file():
            raise HTTPException(status_code=404, detail="No backtest plot for this run")
        return Response(content=plot.read_bytes(), media_type="image/svg+xml")

    @app.get("/api/report")
    def report(
        forward_look: int = Query(1, ge=1),
        fmt: str = Query("json", pattern="^(json|md|csv)$", alias="format"),
    ):
        table = build_report(collect_records(store), forward_look)
        if fmt == "md":
            return Response(content=render_markdown(table), media_type="text/markdown")
        if fmt == "csv":
            return Response(content=render_csv(table), media_type="text/csv")
        return {
            "forward_look": forward_look,
            "tickers": table.tickers,
            "rows": [
                {"model": model, "ticker": ticker, "mode": mode, "rmse": cell.mean, "seeds": sorted(cell.seeds), "diverged": cell.diverged}
                for (model, ticker, mode), cell in sorted(table.cells.items())
            ],
            "echo": table.echo_lines(),
        }

    return app
