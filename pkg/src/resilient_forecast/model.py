"""Autoregressive forecaster built on the GRU kernel.

Step ``t`` of an unroll reads the previous week's value as its lag input and
emits the distribution of the current week's value. When the previous value
is missing the lag becomes the mean of the previous step's distribution
(the model imputes itself) and the missing-indicator feature is set. Imputed
lags are constants for the backward pass, and steps with a missing target
are masked out of the loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from resilient_forecast import likelihood as lk
from resilient_forecast.network import (
    DivergenceError,
    NetworkConfig,
    ParameterVector,
    backward,
    cell,
    init_parameters,
    unpack,
)
from resilient_forecast.series import Dataset, TimeSeriesRecord

SEASON_PERIOD = 52
QUANTILE_LEVELS = (0.1, 0.5, 0.9)
# lag, missing indicator, week-of-year sin, week-of-year cos
NUM_BASE_FEATURES = 4


@dataclass(frozen=True)
class ModelConfig:
    context_length: int = 52
    horizon: int = 18
    likelihood: lk.Likelihood = lk.Likelihood.GAUSSIAN
    hidden_size: int = 16
    num_groups: int = 8
    embedding_size: int = 4
    num_sample_paths: int = 100
    # Only "mean" is implemented; sampled imputation during unrolls is not.
    imputation: str = "mean"

    def __post_init__(self) -> None:
        object.__setattr__(self, "likelihood", lk.Likelihood(self.likelihood))
        if self.context_length < 1 or self.horizon < 1:
            raise ValueError("context_length and horizon must be >= 1")
        if self.num_sample_paths < 1:
            raise ValueError("num_sample_paths must be >= 1")
        if self.num_groups < 1:
            raise ValueError("num_groups must be >= 1")
        if self.imputation != "mean":
            raise ValueError(f"imputation mode {self.imputation!r} is not supported (only 'mean')")

    @property
    def network(self) -> NetworkConfig:
        return NetworkConfig(
            input_size=NUM_BASE_FEATURES + self.embedding_size,
            hidden_size=self.hidden_size,
            head_output_size=2,
            embedding_rows=self.num_groups,
            embedding_size=self.embedding_size,
        )

    @property
    def window_length(self) -> int:
        """Weeks per training window: one seed lag plus ``context_length`` targets."""
        return self.context_length + 1


def init_model(config: ModelConfig, seed: int) -> ParameterVector:
    return init_parameters(config.network, seed)


def seasonal_features(weeks) -> tuple[np.ndarray, np.ndarray]:
    angle = 2.0 * np.pi * (np.asarray(weeks) % SEASON_PERIOD) / SEASON_PERIOD
    return np.sin(angle), np.cos(angle)


@dataclass(frozen=True)
class FeatureVector:
    lag_value: float
    missing_indicator: int
    week_of_year_sin: float
    week_of_year_cos: float
    group_embedding: np.ndarray

    def to_array(self) -> np.ndarray:
        return np.concatenate(
            [[self.lag_value, self.missing_indicator, self.week_of_year_sin, self.week_of_year_cos], self.group_embedding]
        )


def build_features(
    record: TimeSeriesRecord,
    position: int,
    previous_value: float | None,
    params: ParameterVector,
    imputed_value: float | None = None,
) -> FeatureVector:
    """Input features for predicting ``record`` at relative ``position``.

    A missing ``previous_value`` sets the indicator and uses ``imputed_value``
    (supplied by the caller: model mean in training, the sample in prediction).
    """
    if previous_value is None or np.isnan(previous_value):
        if imputed_value is None:
            raise ValueError("previous value is missing and no imputed value was supplied")
        lag, indicator = float(imputed_value), 1
    else:
        lag, indicator = float(previous_value), 0
    s, c = seasonal_features(record.start + position)
    emb = params.block("embedding")[record.group] if _has_embedding(params) else np.zeros(0)
    return FeatureVector(lag, indicator, float(s), float(c), np.array(emb))


def _has_embedding(params: ParameterVector) -> bool:
    return any(b.name == "embedding" for b in params.layout)


class _Stepper:
    """Batched single-step evaluation with static features precomputed."""

    def __init__(self, params: ParameterVector, config: ModelConfig, groups: np.ndarray):
        self.w = unpack(params)
        self.kind = config.likelihood
        groups = np.asarray(groups, dtype=np.int64)
        if groups.size and groups.max() >= config.num_groups:
            raise ValueError(f"group {groups.max()} exceeds num_groups={config.num_groups}")
        if _has_embedding(params):
            self.emb = params.block("embedding")[groups]
        else:
            self.emb = np.zeros((len(groups), 0))
        self.batch = len(groups)

    def initial_raw(self, batch: int | None = None) -> np.ndarray:
        """Head output of the all-zero initial state, i.e. the head bias."""
        return np.broadcast_to(self.w.head_b, (batch or self.batch, self.w.head_b.size)).copy()

    def zero_state(self, batch: int | None = None) -> np.ndarray:
        return np.zeros((batch or self.batch, self.w.hidden_size))

    def mean(self, raw: np.ndarray) -> np.ndarray:
        return lk.link(self.kind, raw).mean()

    def inputs(self, lag, missing, weeks, emb=None) -> np.ndarray:
        s, c = seasonal_features(weeks)
        emb = self.emb if emb is None else emb
        return np.column_stack([lag, missing.astype(np.float64), s, c, emb])

    def step(self, h, x):
        h, *_ = cell(self.w, h, x @ self.w.W.T + self.w.b)
        return h, h @ self.w.head_W.T + self.w.head_b


def _unroll(
    stepper: _Stepper,
    first_lag: np.ndarray,
    targets: np.ndarray,
    weeks: np.ndarray,
    h0: np.ndarray | None = None,
    raw0: np.ndarray | None = None,
):
    """Forward pass with in-unroll mean imputation.

    ``first_lag``: (B,) lag for step 0 (NaN = missing). ``targets``/``weeks``:
    (B, T). Returns (inputs (B,T,I), raw outputs (B,T,2), final state).
    """
    B, T = targets.shape
    h = stepper.zero_state(B) if h0 is None else h0
    prev_raw = stepper.initial_raw(B) if raw0 is None else raw0
    lags = np.concatenate([first_lag[:, None], targets[:, :-1]], axis=1)
    missing = np.isnan(lags)
    X = np.empty((B, T, stepper.w.input_size))
    raws = np.empty((B, T, 2))
    for t in range(T):
        lag = lags[:, t]
        if missing[:, t].any():
            lag = np.where(missing[:, t], stepper.mean(prev_raw), lag)
        X[:, t] = stepper.inputs(lag, missing[:, t], weeks[:, t])
        h, prev_raw = stepper.step(h, X[:, t])
        raws[:, t] = prev_raw
    return X, raws, h


@dataclass(frozen=True)
class WindowBatch:
    """Stacked training windows: ``values``/``weeks`` are (B, context_length + 1)."""

    values: np.ndarray
    weeks: np.ndarray
    groups: np.ndarray

    @classmethod
    def from_records(cls, windows: list[TimeSeriesRecord]) -> WindowBatch:
        values = np.stack([w.values for w in windows])
        weeks = np.stack([w.weeks for w in windows])
        groups = np.array([w.group for w in windows], dtype=np.int64)
        return cls(values, weeks, groups)

    def __len__(self) -> int:
        return len(self.groups)


def _step_weights(targets: np.ndarray) -> np.ndarray:
    # Per-window mean over observed targets, then mean over non-empty windows.
    observed = ~np.isnan(targets)
    counts = observed.sum(axis=1)
    nonempty = int((counts > 0).sum())
    if nonempty == 0:
        return np.zeros_like(targets)
    return observed / np.maximum(counts, 1)[:, None] / nonempty


def batch_loss(params: ParameterVector, batch: WindowBatch, config: ModelConfig, with_grad: bool = True):
    """Masked, per-window-normalised NLL of a window batch (and its gradient)."""
    stepper = _Stepper(params, config, batch.groups)
    first_lag, targets = batch.values[:, 0], batch.values[:, 1:]
    weeks = batch.weeks[:, 1:]
    weights = _step_weights(targets)
    lags = batch.values[:, :-1]
    if np.isnan(lags).any() or not with_grad:
        X, raws, _ = _unroll(stepper, first_lag, targets, weeks)
    else:
        s, c = seasonal_features(weeks)
        B, T = targets.shape
        X = np.concatenate(
            [lags[..., None], np.zeros((B, T, 1)), s[..., None], c[..., None],
             np.broadcast_to(stepper.emb[:, None, :], (B, T, stepper.emb.shape[1]))],
            axis=-1,
        )
        raws = None
    if not with_grad:
        observed = weights > 0
        step_nll = lk.nll(lk.link(config.likelihood, raws), np.where(observed, targets, 0.5))
        loss = float(np.sum(np.where(observed, weights * step_nll, 0.0)))
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss {loss}")
        return loss
    loss_fn = lk.LOSS_FUNCTIONS[config.likelihood]
    loss, grad, dX = backward(params, X, targets, weights, loss_fn, return_input_grad=True)
    if _has_embedding(params) and stepper.emb.shape[1]:
        d_emb = np.zeros_like(params.block("embedding"))
        np.add.at(d_emb, batch.groups, dX[:, :, NUM_BASE_FEATURES:].sum(axis=1))
        offset, _ = params.offsets()["embedding"]
        flat = grad.values.copy()
        flat[offset : offset + d_emb.size] = d_emb.ravel()
        grad = grad.with_values(flat)
    return loss, grad


def training_loss(params: ParameterVector, window: TimeSeriesRecord, config: ModelConfig):
    """Loss and gradient of one window of ``context_length + 1`` weeks.

    The first week only seeds the lag input; the remaining ``context_length``
    weeks are targets. A shorter window is left-padded with missing weeks. Loss is the NLL summed over observed targets divided
    by their count (zero, with zero gradient, when none are observed).
    """
    L = config.window_length
    if len(window) > L:
        raise ValueError(f"window has {len(window)} weeks, expected {L}")
    values = np.full(L, np.nan)
    values[L - len(window) :] = window.values
    weeks = np.arange(window.end - L, window.end)
    batch = WindowBatch(values[None, :], weeks[None, :], np.array([window.group], dtype=np.int64))
    return batch_loss(params, batch, config)


# --- prediction -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ForecastResult:
    series_id: str
    origin: int
    sample_paths: np.ndarray  # (num_paths, horizon)
    quantiles: np.ndarray  # (len(QUANTILE_LEVELS), horizon)

    @property
    def point_forecast(self) -> np.ndarray:
        return self.quantiles[QUANTILE_LEVELS.index(0.5)]

    @property
    def horizon(self) -> int:
        return self.sample_paths.shape[1]

    @property
    def weeks(self) -> np.ndarray:
        return np.arange(self.origin + 1, self.origin + 1 + self.horizon)

    def point_at(self, week: int) -> float:
        step = week - self.origin - 1
        if not 0 <= step < self.horizon:
            raise KeyError(f"week {week} outside forecast coverage of origin {self.origin}")
        return float(self.point_forecast[step])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ForecastResult):
            return NotImplemented
        return (
            self.series_id == other.series_id
            and self.origin == other.origin
            and np.array_equal(self.sample_paths, other.sample_paths)
            and np.array_equal(self.quantiles, other.quantiles)
        )

    __hash__ = None  # type: ignore[assignment]


def _history(record: TimeSeriesRecord, length: int) -> tuple[np.ndarray, np.ndarray]:
    """Last ``length`` weeks of ``record`` (left-padded with missing)."""
    end = record.end
    weeks = np.arange(end - length, end)
    values = np.full(length, np.nan)
    take = min(length, len(record))
    values[length - take :] = record.values[len(record) - take :]
    return values, weeks


def condition(params: ParameterVector, record: TimeSeriesRecord, config: ModelConfig, stepper: _Stepper | None = None):
    """Run the context window of ``record``; returns (state, lag, lag_missing).

    The returned lag is the last week's value, or the model mean for it when
    that week is missing, ready to feed the first forecast step.
    """
    stepper = stepper or _Stepper(params, config, np.array([record.group]))
    values, weeks = _history(record, config.window_length)
    _, raws, h = _unroll(stepper, values[:1], values[None, 1:], weeks[None, 1:])
    last = values[-1]
    missing = bool(np.isnan(last))
    lag = float(stepper.mean(raws[:, -1])[0]) if missing else float(last)
    return h, lag, missing


def forecast(params: ParameterVector, record: TimeSeriesRecord, config: ModelConfig, seed: int) -> ForecastResult:
    """Sample ``num_sample_paths`` autoregressive paths over the horizon."""
    rng = np.random.default_rng(seed)
    stepper = _Stepper(params, config, np.array([record.group]))
    h, lag, missing = condition(params, record, config, stepper)
    P, H = config.num_sample_paths, config.horizon
    h = np.repeat(h, P, axis=0)
    emb = np.repeat(stepper.emb, P, axis=0)
    lag = np.full(P, lag)
    miss = np.full(P, missing)
    paths = np.empty((P, H))
    origin = record.end - 1
    for k in range(H):
        x = stepper.inputs(lag, miss, np.full(P, origin + 1 + k), emb)
        h, raw = stepper.step(h, x)
        draw = lk.sample(lk.link(config.likelihood, raw), rng)
        if config.likelihood is lk.Likelihood.GAUSSIAN:
            draw = np.clip(draw, 0.0, 1.0)
        paths[:, k] = draw
        lag, miss = draw, np.zeros(P, dtype=bool)
    quantiles = np.quantile(paths, QUANTILE_LEVELS, axis=0)
    return ForecastResult(record.series_id, origin, paths, quantiles)


def forecast_dataset(params: ParameterVector, dataset: Dataset, config: ModelConfig, seed: int) -> dict[str, ForecastResult]:
    return {r.series_id: forecast(params, r, config, seed) for r in dataset}


def mean_rollout(params: ParameterVector, record: TimeSeriesRecord, config: ModelConfig) -> np.ndarray:
    """Deterministic horizon path feeding each step's mean back as the lag."""
    stepper = _Stepper(params, config, np.array([record.group]))
    h, lag, missing = condition(params, record, config, stepper)
    lag_arr, miss = np.array([lag]), np.array([missing])
    out = np.empty(config.horizon)
    origin = record.end - 1
    for k in range(config.horizon):
        h, raw = stepper.step(h, stepper.inputs(lag_arr, miss, np.array([origin + 1 + k])))
        mean = stepper.mean(raw)
        if config.likelihood is lk.Likelihood.GAUSSIAN:
            mean = np.clip(mean, 0.0, 1.0)
        out[k] = mean[0]
        lag_arr, miss = mean, np.array([False])
    return out


def one_step_means(params: ParameterVector, record: TimeSeriesRecord, config: ModelConfig) -> np.ndarray:
    """Step-ahead distribution means over a single pass of the whole record.

    Entry ``i`` is the prediction for week ``record.start + i`` given the
    weeks before it, with missing weeks replaced by their own prediction.
    """
    stepper = _Stepper(params, config, np.array([record.group]))
    values = record.values[None, :]
    _, raws, _ = _unroll(stepper, np.array([np.nan]), values, record.weeks[None, :])
    return stepper.mean(raws[0])


def impute_history(params: ParameterVector, record: TimeSeriesRecord, config: ModelConfig) -> TimeSeriesRecord:
    """Copy of ``record`` with missing weeks filled by the model's step-ahead mean.

    For reporting only; training never sees these values.
    """
    missing = np.isnan(record.values)
    if not missing.any():
        return record
    means = one_step_means(params, record, config)
    return record.replace_values(np.where(missing, np.clip(means, 0.0, 1.0), record.values))
