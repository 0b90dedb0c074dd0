"""Rolling weekly retraining: filter new actuals, retrain, average, forecast."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from resilient_forecast.anomaly import FilterConfig, FilterReport, filter_incoming, mask_weeks
from resilient_forecast.metrics import MetricReport, score_forecasts
from resilient_forecast.model import ForecastResult, ModelConfig, forecast_dataset
from resilient_forecast.network import ParameterVector
from resilient_forecast.series import Dataset, slice_record
from resilient_forecast.training import SamplerConfig, TrainConfig, select_and_average, train

log = logging.getLogger(__name__)


@dataclass(eq=False)
class OriginResult:
    origin: int
    seed: int
    params: ParameterVector
    forecasts: dict[str, ForecastResult]
    report: FilterReport | None
    training_data: Dataset


def history_at(dataset: Dataset, origin: int, filtered: Iterable[tuple[str, int]] = ()) -> Dataset:
    """Data observable at ``origin`` with filtered weeks masked.

    Every record is cut (or padded with missing weeks) to end at ``origin``.
    """
    cut = dataset.truncate(origin)
    padded = cut.map(lambda r: r if r.end == origin + 1 else slice_record(r, r.start, origin + 1))
    return mask_weeks(padded, filtered)


def _check_schedule(dataset: Dataset, origins: Sequence[int], context_length: int) -> None:
    if not origins:
        raise ValueError("empty origin schedule")
    if any(b <= a for a, b in zip(origins, origins[1:])):
        raise ValueError("origins must be strictly increasing")
    first_week = min(r.start for r in dataset)
    if origins[0] - first_week + 1 < context_length:
        raise ValueError(
            f"origin {origins[0]} leaves fewer than context_length={context_length} weeks of history"
        )


def rolling_retrain(
    dataset: Dataset,
    origins: Sequence[int],
    model_config: ModelConfig,
    train_config: TrainConfig,
    sampler_config: SamplerConfig,
    filter_config: FilterConfig | None = FilterConfig(),
) -> list[OriginResult]:
    """Simulate the weekly cadence over ``origins`` (last observed week of each run).

    At each origin: filter the actuals that arrived since the previous origin
    against that origin's median forecasts (skipped for the first origin or
    when ``filter_config`` is None), retrain from scratch on all data up to
    the origin, average the top ``n_average`` checkpoints and forecast.
    Origin ``k`` trains and forecasts with seed ``train_config.seed + k``.
    """
    _check_schedule(dataset, origins, model_config.context_length)
    results: list[OriginResult] = []
    filtered: set[tuple[str, int]] = set()
    carry: FilterReport | None = None
    for k, origin in enumerate(origins):
        report = None
        if k > 0 and filter_config is not None:
            prev = results[-1]
            arrived = history_at(dataset, origin).map(
                lambda r: slice_record(r, prev.origin + 1, origin + 1)
            )
            _, report = filter_incoming(arrived, prev.forecasts, filter_config, carry)
            filtered -= report.restored_weeks()
            filtered |= report.filtered_weeks()
            carry = report
        history = history_at(dataset, origin, filtered)
        seed = train_config.seed + k
        ledger, _ = train(history, model_config, replace(train_config, seed=seed), sampler_config)
        params = select_and_average(ledger, train_config.n_average)
        forecasts = forecast_dataset(params, history, model_config, seed)
        log.info("origin %d: trained %d epochs, %d filtered weeks so far", origin, len(ledger), len(filtered))
        results.append(OriginResult(origin, seed, params, forecasts, report, history))
    return results


def filtered_weeks(results: Sequence[OriginResult]) -> set[tuple[str, int]]:
    """Weeks filtered at some origin and not restored later."""
    out: set[tuple[str, int]] = set()
    for res in results:
        if res.report is not None:
            out -= res.report.restored_weeks()
            out |= res.report.filtered_weeks()
    return out


def evaluate(
    results: Sequence[OriginResult],
    dataset: Dataset,
    exclude: Iterable[tuple[str, int]] = (),
) -> list[MetricReport]:
    """Score each origin's forecasts against the original actuals.

    Weeks filtered anywhere in the run, plus ``exclude`` (e.g. declared
    closures), are left out; imputed values are never used as truth.
    """
    skip = filtered_weeks(results) | set(exclude)
    return [score_forecasts(res.forecasts, dataset, skip) for res in results]


def closure_weeks(closures: Iterable[tuple[int, int, int]], ids: Sequence[str]) -> set[tuple[str, int]]:
    return {(ids[s], w) for s, start, length in closures for w in range(start, start + length)}

