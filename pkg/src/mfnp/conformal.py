"""Split conformal calibration of predictive standard deviations.

Nonconformity is the sigma-normalized absolute residual per state
dimension; the fitted quantile multiplies sigma, so the interval
|y - mu| <= sigma*q contains the label exactly when the score is at most
q. Scores are accumulated from held-out (not-yet-trained-on) labels as
they arrive and refit periodically over a sliding window.
"""

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .model.estimator import GaussianPrediction

MIN_SCORES = 10


@dataclass(frozen=True)
class ConformalConfig:
    alpha: float = 0.1
    window: int = 500
    refit_period: int = 100
    inflate_factor: float = 10.0  # used when the rank exceeds the sample size

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError("alpha must lie in [0, 1]")
        if self.window < MIN_SCORES:
            raise ValueError(f"window must be at least {MIN_SCORES}")


@dataclass(frozen=True)
class QuantileVector:
    """Per-dimension calibration multipliers with fit metadata."""

    q: np.ndarray
    n: int = 0
    fit_iteration: int = -1
    inflated: bool = False

    @staticmethod
    def identity(dim=6):
        return QuantileVector(q=np.ones(dim))


class CalibrationSet:
    """Sliding window of per-dimension nonconformity scores."""

    def __init__(self, dim=6, window=500):
        self.scores = [deque(maxlen=window) for _ in range(dim)]

    def add(self, s):
        for d, v in enumerate(s):
            self.scores[d].append(float(v))

    def counts(self):
        return [len(d) for d in self.scores]

    def __len__(self):
        return min(self.counts()) if self.scores else 0


def score(y, pred):
    """Per-dimension |y - mu| / sigma with the pre-calibration sigma."""
    y = np.asarray(y, dtype=np.float64)
    sigma = pred.sigma()
    if np.any(sigma <= 0.0):
        raise ValueError("score: prediction sigma must be positive")
    return np.abs(y - pred.mu) / sigma


def _rank_quantile(sorted_scores, alpha, inflate_factor):
    n = len(sorted_scores)
    rank = math.ceil((n + 1) * (1.0 - alpha))
    if rank > n:
        return sorted_scores[-1] * inflate_factor, True
    return sorted_scores[rank - 1], False


def fit_quantile(cal, alpha, previous=None, inflate_factor=10.0, iteration=-1):
    """Rank-based split-conformal quantile per dimension.

    Refuses to fit (returning `previous`) until every dimension holds at
    least MIN_SCORES scores. When the finite-sample rank exceeds n, the
    max score times `inflate_factor` stands in, flagged via `inflated`.
    """
    if len(cal) < MIN_SCORES:
        return previous
    qs = []
    inflated = False
    for d in cal.scores:
        q, infl = _rank_quantile(sorted(d), alpha, inflate_factor)
        qs.append(q)
        inflated = inflated or infl
    return QuantileVector(
        q=np.array(qs), n=len(cal), fit_iteration=iteration, inflated=inflated
    )


def apply_quantile(pred, quantile):
    """Scale sigma by the quantile (variance by its square); mean unchanged."""
    q = np.asarray(quantile.q if isinstance(quantile, QuantileVector) else quantile)
    return GaussianPrediction(mu=pred.mu, var=pred.var * q * q)


def coverage_eval(labels, preds):
    """Fraction of labels inside [mu - sigma, mu + sigma] per dimension,
    where preds are already calibrated."""
    labels = np.asarray(labels, dtype=np.float64)
    mus = np.array([p.mu for p in preds])
    sigmas = np.array([p.sigma() for p in preds])
    if labels.shape != mus.shape:
        raise ValueError("coverage_eval: label/prediction shapes must align")
    inside = np.abs(labels - mus) <= sigmas
    return inside.mean(axis=0)
