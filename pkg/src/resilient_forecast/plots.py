"""Static SVG charts: forecast with quantile band, filtered points, stability fan."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from resilient_forecast.experiments import StabilityReport  # noqa: E402
from resilient_forecast.model import ForecastResult  # noqa: E402
from resilient_forecast.series import TimeSeriesRecord  # noqa: E402

# Fixed ids and no timestamp, so identical inputs give identical files.
_RC = {"svg.hashsalt": "resilient-forecast", "svg.fonttype": "none"}
_META = {"Date": None, "Creator": None}


def _save(fig, path: str | Path) -> None:
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def forecast_chart(
    record: TimeSeriesRecord,
    forecast: ForecastResult,
    path: str | Path,
    filtered_weeks: Iterable[int] = (),
    history: int = 78,
) -> None:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(8, 3.5))
        lo = max(record.start, forecast.origin - history)
        weeks = np.arange(lo, record.end)
        values = record.values[lo - record.start :]
        ax.plot(weeks, values, color="black", lw=1, label="actual")
        ax.fill_between(forecast.weeks, forecast.quantiles[0], forecast.quantiles[-1],
                        color="tab:blue", alpha=0.25, label="q10-q90")
        ax.plot(forecast.weeks, forecast.point_forecast, color="tab:blue", lw=1.5, label="median")
        marks = [w for w in filtered_weeks if record.value_at(w) is not None]
        if marks:
            ax.scatter(marks, [record.value_at(w) for w in marks], marker="x", color="tab:red",
                       zorder=3, label="filtered")
        ax.axvline(forecast.origin + 0.5, color="grey", ls=":", lw=1)
        ax.set_ylim(0, 1)
        ax.set_xlabel("week")
        ax.set_ylabel("rate")
        ax.set_title(record.series_id)
        ax.legend(loc="lower left", fontsize=8)
        fig.tight_layout()
        _save(fig, path)


def stability_chart(report: StabilityReport, record: TimeSeriesRecord, path: str | Path, history: int = 52) -> None:
    i = report.series_ids.index(record.series_id)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(8, 3.5))
        lo = max(record.start, report.origin - history)
        hi = min(record.end, report.origin + 1 + report.point_forecasts.shape[2])
        ax.plot(np.arange(lo, hi), record.values[lo - record.start : hi - record.start], color="black", lw=1)
        steps = np.arange(report.origin + 1, report.origin + 1 + report.point_forecasts.shape[2])
        for run in report.point_forecasts[:, i]:
            ax.plot(steps, run, lw=0.8, alpha=0.7)
        ax.axvline(report.origin + 0.5, color="grey", ls=":", lw=1)
        ax.set_ylim(0, 1)
        ax.set_title(f"{record.series_id}: {report.run_count} re-runs, mean spread {report.mean_spread:.4f}")
        fig.tight_layout()
        _save(fig, path)
