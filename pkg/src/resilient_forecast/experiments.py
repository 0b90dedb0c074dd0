"""Seed-replicated experiments: forecast stability, retraining benefit, baselines."""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from resilient_forecast.anomaly import FilterConfig, FilterReport, _entries_for_series
from resilient_forecast.backtest import history_at
from resilient_forecast.metrics import score_forecasts
from resilient_forecast.model import ModelConfig, forecast_dataset
from resilient_forecast.series import Dataset
from resilient_forecast.training import SamplerConfig, TrainConfig, select_and_average, train


@dataclass(eq=False)
class StabilityReport:
    """Spread (max - min across runs) of point forecasts per (series, step)."""

    series_ids: list[str]
    origin: int
    point_forecasts: np.ndarray  # (runs, series, horizon)
    run_wmae: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.point_forecasts.shape[0] < 2:
            raise ValueError("stability needs at least two runs")

    @property
    def run_count(self) -> int:
        return self.point_forecasts.shape[0]

    @property
    def spreads(self) -> np.ndarray:
        return self.point_forecasts.max(axis=0) - self.point_forecasts.min(axis=0)

    @property
    def mean_spread(self) -> float:
        return float(self.spreads.mean())

    def series_spread(self) -> np.ndarray:
        return self.spreads.mean(axis=1)

    def write_csv(self, path: str | Path) -> None:
        spreads = self.spreads
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["series_id", "week", "step", "spread"])
            for i, sid in enumerate(self.series_ids):
                for k in range(spreads.shape[1]):
                    writer.writerow([sid, self.origin + 1 + k, k + 1, repr(float(spreads[i, k]))])
            writer.writerow(["__mean__", "", "", repr(self.mean_spread)])


def spread_reduction(baseline: StabilityReport, treated: StabilityReport) -> float:
    """Median over series of ``1 - spread_treated / spread_baseline``."""
    b, t = baseline.series_spread(), treated.series_spread()
    ok = b > 0
    return float(np.median(1.0 - t[ok] / b[ok]))


@dataclass(frozen=True)
class _RunSpec:
    dataset: Dataset
    origin: int
    model_config: ModelConfig
    train_config: TrainConfig
    sampler_config: SamplerConfig
    forecast_seed: int
    n_average: int


def _one_run(spec: _RunSpec) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Point forecasts and held-out wMAE for the best and the averaged checkpoint."""
    history = history_at(spec.dataset, spec.origin)
    ledger, _ = train(history, spec.model_config, spec.train_config, spec.sampler_config)
    out = []
    for params in (ledger.best().params, select_and_average(ledger, spec.n_average)):
        fcs = forecast_dataset(params, history, spec.model_config, spec.forecast_seed)
        points = np.stack([fcs[sid].point_forecast for sid in history.ids])
        score = score_forecasts(fcs, spec.dataset)
        out.append((points, score.wmae))
    (pb, wb), (pa, wa) = out
    return pb, pa, wb, wa


def stability_runs(
    dataset: Dataset,
    origin: int,
    model_config: ModelConfig,
    train_config: TrainConfig,
    sampler_config: SamplerConfig,
    num_runs: int = 10,
    seeds: Sequence[int] | None = None,
    forecast_seed: int = 0,
    jobs: int = 1,
) -> tuple[StabilityReport, StabilityReport]:
    """Train ``num_runs`` times and report both selection rules from the same runs.

    Returns (best-checkpoint report, top-``n_average`` averaged report). Each
    run retrains from scratch with its own seed; every run forecasts with the
    same ``forecast_seed`` so sampling noise is common to all runs.
    """
    if seeds is None:
        seeds = [train_config.seed + r for r in range(num_runs)]
    if len(seeds) < 2:
        raise ValueError("num_runs must be >= 2")
    specs = [
        _RunSpec(dataset, origin, model_config, replace(train_config, seed=s), sampler_config,
                 forecast_seed, train_config.n_average)
        for s in seeds
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_one_run, specs))
    else:
        results = [_one_run(s) for s in specs]
    ids = history_at(dataset, origin).ids
    best = StabilityReport(ids, origin, np.stack([r[0] for r in results]), [r[2] for r in results])
    avg = StabilityReport(ids, origin, np.stack([r[1] for r in results]), [r[3] for r in results])
    return best, avg


def stability_experiment(
    dataset: Dataset,
    origin: int,
    model_config: ModelConfig,
    train_config: TrainConfig,
    sampler_config: SamplerConfig,
    num_runs: int = 10,
    use_averaging: bool = True,
    seeds: Sequence[int] | None = None,
    forecast_seed: int = 0,
    jobs: int = 1,
) -> StabilityReport:
    """One arm of the stability comparison; ``n_average`` comes from ``train_config``."""
    best, avg = stability_runs(
        dataset, origin, model_config, train_config, sampler_config, num_runs, seeds, forecast_seed, jobs
    )
    return avg if use_averaging else best


@dataclass(frozen=True)
class RetrainComparison:
    stale_wmae: float
    retrained_wmae: float

    @property
    def improvement(self) -> float:
        return 1.0 - self.retrained_wmae / self.stale_wmae


def retraining_benefit(
    dataset: Dataset,
    stale_origin: int,
    origin: int,
    model_config: ModelConfig,
    train_config: TrainConfig,
    sampler_config: SamplerConfig,
) -> RetrainComparison:
    """Stale model (trained on data up to ``stale_origin``) vs one retrained up to ``origin``.

    Both forecast from ``origin`` conditioned on the same history and are
    scored on the weeks after it.
    """
    if stale_origin >= origin:
        raise ValueError("stale_origin must precede origin")
    current = history_at(dataset, origin)
    scores = []
    for cut in (stale_origin, origin):
        ledger, _ = train(history_at(dataset, cut), model_config, train_config, sampler_config)
        params = select_and_average(ledger, train_config.n_average)
        fcs = forecast_dataset(params, current, model_config, train_config.seed)
        scores.append(score_forecasts(fcs, dataset).wmae)
    return RetrainComparison(*scores)


def naive_threshold_baseline(
    dataset: Dataset, low: float, high: float, max_anomaly_run: int = FilterConfig().max_anomaly_run
) -> FilterReport:
    """Flag every value outside ``[low, high]`` regardless of forecasts.

    Uses the same run-length guard as the residual filter. Only flagged
    weeks are reported; the forecast column is NaN.
    """
    if not 0.0 <= low < high <= 1.0:
        raise ValueError("need 0 <= low < high <= 1")
    config = FilterConfig(max_anomaly_run=max_anomaly_run)
    report = FilterReport()
    for record in dataset:
        present = np.flatnonzero(~np.isnan(record.values))
        ys = record.values[present]
        flags = (ys < low) | (ys > high)
        if not flags.any():
            continue
        refs = np.full(len(ys), np.nan)
        entries, _ = _entries_for_series(record.series_id, record.start + present, ys, refs, flags, config, None)
        report.entries.extend(e for e in entries if e.flagged)
    return report
