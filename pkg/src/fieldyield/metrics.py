"""Evaluation metrics for one prediction run, in original yield units:
MSE, RMSE, MAE, MAPE (percent, absent when any actual is zero) and max
error."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataValidationError


@dataclass(frozen=True)
class MetricsReport:
    n: int
    mse: float
    rmse: float
    mae: float
    mape: float | None
    max_error: float

    def as_row(self) -> list:
        """Values in metrics-CSV column order (mape empty when absent)."""
        return [
            self.n,
            repr(self.mse),
            repr(self.rmse),
            repr(self.mae),
            "" if self.mape is None else repr(self.mape),
            repr(self.max_error),
        ]


def compute_metrics(actual, forecast) -> MetricsReport:
    """MSE = mean squared error, RMSE = sqrt(MSE), MAE = mean absolute
    error, MAPE = 100/N * sum(|A-F|/A), ME = max(|A-F|)."""
    a = np.asarray(actual, dtype=float)
    f = np.asarray(forecast, dtype=float)
    if a.shape != f.shape or a.ndim != 1:
        raise DataValidationError(f"actual {a.shape} and forecast {f.shape} must be equal 1-d")
    if a.size == 0:
        raise DataValidationError("cannot compute metrics on empty vectors")
    err = a - f
    mse = float(np.mean(err**2))
    mae = float(np.mean(np.abs(err)))
    mape = None
    if not np.any(a == 0):
        mape = float(100.0 / a.size * np.sum(np.abs(err) / a))
    return MetricsReport(
        n=int(a.size),
        mse=mse,
        rmse=math.sqrt(mse),
        mae=mae,
        mape=mape,
        max_error=float(np.max(np.abs(err))),
    )
