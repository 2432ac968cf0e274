"""SVG figures: forecast overlays on top, portfolio value underneath, one column per mode."""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import numpy as np
from matplotlib.figure import Figure

# Fixed ids and no timestamp keep the SVG byte-stable across runs.
matplotlib.rcParams["svg.hashsalt"] = "stockbot"
matplotlib.rcParams["svg.fonttype"] = "none"

MODE_TITLES = {
    "autoregressive": "Autoregressive",
    "teacher_forcing": "Teacher forcing",
}


@dataclass(frozen=True)
class ModePanel:
    mode: str
    dates: np.ndarray  # datetime64[D]
    true_prices: np.ndarray
    predicted_prices: np.ndarray
    portfolio: np.ndarray
    buy_and_hold: np.ndarray


def backtest_figure(title: str, panels: Sequence[ModePanel]) -> Figure:
    cols = max(1, len(panels))
    fig = Figure(figsize=(6.0 * cols, 7.0))
    axes = fig.subplots(2, cols, squeeze=False, sharex="col")
    for col, panel in enumerate(panels):
        dates = np.asarray(panel.dates, dtype="datetime64[D]")
        name = MODE_TITLES.get(panel.mode, panel.mode)

        top = axes[0][col]
        top.plot(dates, panel.true_prices, color="black", linewidth=1.0, label="true")
        top.plot(dates, panel.predicted_prices, color="tab:blue", linewidth=1.0, label="predicted")
        top.set_title(f"{name}: price")
        top.set_ylabel("adjusted close")
        top.legend(loc="upper left", fontsize="small")

        bottom = axes[1][col]
        bottom.plot(dates, panel.portfolio, color="tab:green", linewidth=1.0, label="StockBot")
        bottom.plot(dates, panel.buy_and_hold, color="tab:gray", linewidth=1.0, linestyle="--", label="buy & hold")
        bottom.set_title(f"{name}: portfolio value")
        bottom.set_ylabel("multiple of initial cash")
        bottom.legend(loc="upper left", fontsize="small")
        bottom.tick_params(axis="x", labelrotation=30)
    fig.suptitle(title)
    fig.tight_layout()
    return fig


def render_svg(fig: Figure) -> bytes:
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    return buf.getvalue()


def backtest_svg(title: str, panels: Sequence[ModePanel]) -> bytes:
    return render_svg(backtest_figure(title, panels))
