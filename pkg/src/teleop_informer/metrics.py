"""Error metrics pooled over windows, steps and axes."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ShapeError

ACCURACY_FORMULA = "accuracy_axis = 100*max(0, 1 - RMSE_axis/range_axis), range_axis = max - min of true values"


@dataclass(frozen=True)
class ErrorSet:
    mse: float
    mae: float
    rmse: float


@dataclass(frozen=True)
class MetricsReport:
    meters: ErrorSet
    normalized: ErrorSet | None
    accuracy: tuple          # percent for x, y, z
    rmse_axis: tuple
    n_windows: int
    n_values: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["accuracy"] = list(self.accuracy)
        d["rmse_axis"] = list(self.rmse_axis)
        d["accuracy_formula"] = ACCURACY_FORMULA
        return d

    @property
    def mse(self) -> float:
        return self.meters.mse


def error_set(pred: np.ndarray, true: np.ndarray) -> ErrorSet:
    d = (np.asarray(pred, float) - np.asarray(true, float)).ravel()
    mse = float(np.mean(d * d))
    return ErrorSet(mse=mse, mae=float(np.mean(np.abs(d))), rmse=float(np.sqrt(mse)))


def compute_metrics(pred, true, pred_norm=None, true_norm=None) -> MetricsReport:
    """Metrics for (..., 3) meter-space predictions; normalized variants when given."""
    pred = np.asarray(pred, dtype=float)
    true = np.asarray(true, dtype=float)
    if pred.shape != true.shape:
        raise ShapeError(f"prediction {pred.shape} vs truth {true.shape}")
    if pred.size == 0:
        raise ShapeError("cannot compute metrics of an empty set")
    if pred.shape[-1] != 3:
        raise ShapeError(f"last axis must be 3 (x, y, z), got {pred.shape[-1]}")
    norm = None
    if pred_norm is not None:
        pn, tn = np.asarray(pred_norm, float), np.asarray(true_norm, float)
        if pn.shape != tn.shape:
            raise ShapeError(f"normalized prediction {pn.shape} vs truth {tn.shape}")
        norm = error_set(pn, tn)
    flat_p, flat_t = pred.reshape(-1, 3), true.reshape(-1, 3)
    rmse_axis = np.sqrt(np.mean((flat_p - flat_t) ** 2, axis=0))
    span = flat_t.max(axis=0) - flat_t.min(axis=0)
    acc = []
    for r, s in zip(rmse_axis, span):
        if s > 0:
            acc.append(100.0 * max(0.0, 1.0 - r / s))
        else:
            acc.append(100.0 if r == 0 else 0.0)
    n_windows = int(np.prod(pred.shape[:-2])) if pred.ndim > 2 else 1
    return MetricsReport(meters=error_set(pred, true), normalized=norm,
                         accuracy=tuple(float(a) for a in acc),
                         rmse_axis=tuple(float(r) for r in rmse_axis),
                         n_windows=n_windows, n_values=int(pred.size))
