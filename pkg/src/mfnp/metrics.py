"""Evaluation metrics and the report structure shared by the CLI."""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad


def rmse(y, yhat):
    """Root mean squared error with all state dimensions summed inside the
    per-sample mean: a sample with unit error in all six states contributes
    sqrt(6), not 1."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape or y.ndim != 2:
        raise ValueError(f"rmse: need aligned N x d arrays, got {y.shape} vs {yhat.shape}")
    return float(np.sqrt(((y - yhat) ** 2).sum(axis=1).mean()))


def nll(y, yhat, var):
    """Average Gaussian negative log-likelihood; the single implementation
    lives in the autodiff core and is reused here on constant tensors."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    if not (y.shape == yhat.shape == var.shape) or y.ndim != 2:
        raise ValueError("nll: need aligned N x d arrays")
    return ad.gaussian_nll(y, yhat, var).item()


@dataclass
class MetricsReport:
    rmse: float
    nll: float
    nll_uncalibrated: float
    coverage: list
    latency_p50_ms: float
    latency_p95_ms: float
    latency_p99_ms: float
    n_predictions: int
    n_fallback: int
    config_hash: str
    dataset_hash: str
    alpha: float

    def __post_init__(self):
        if self.rmse < 0:
            raise ValueError("rmse must be nonnegative")
        if any(not (0.0 <= c <= 1.0) for c in self.coverage):
            raise ValueError("coverage entries must lie in [0, 1]")

    def to_json(self, path=None):
        blob = json.dumps(asdict(self), indent=2, sort_keys=True)
        if path:
            with open(path, "w") as f:
                f.write(blob + "\n")
        return blob

    @staticmethod
    def from_json(path):
        with open(path) as f:
            return MetricsReport(**json.load(f))


def latency_percentiles(latencies_ms):
    if not len(latencies_ms):
        return 0.0, 0.0, 0.0
    arr = np.asarray(latencies_ms, dtype=np.float64)
    p50, p95, p99 = np.percentile(arr, [50, 95, 99])
    return float(p50), float(p95), float(p99)
