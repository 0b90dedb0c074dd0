"""Resilient probabilistic forecasting of [0, 1]-bounded weekly rate series.

An autoregressive GRU forecaster with Gaussian/Beta output heads, top-N
checkpoint parameter averaging, native missing-value handling and a
residual-threshold anomaly filter with a change-point guard.
"""

from resilient_forecast.series import Dataset, TimeSeriesRecord, load_dataset, save_dataset

__version__ = "0.1.0"

__all__ = ["Dataset", "TimeSeriesRecord", "load_dataset", "save_dataset", "__version__"]
