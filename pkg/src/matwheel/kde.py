"""Gaussian kernel density estimate over scalar property labels."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import EmptyInput, NonFiniteInput
from .utils import make_rng

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class KdeModel:
    points: tuple[float, ...]
    bandwidth: float

    def __post_init__(self):
        if len(self.points) == 0:
            raise EmptyInput("KDE needs at least one point")
        if not (math.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise ValueError("bandwidth must be finite and > 0")

    def to_dict(self) -> dict:
        return {"points": list(self.points), "bandwidth": self.bandwidth}

    @classmethod
    def from_dict(cls, blob) -> "KdeModel":
        return cls(tuple(float(x) for x in blob["points"]), float(blob["bandwidth"]))


def silverman_bandwidth(values) -> float:
    """Normal-reference bandwidth ``1.06 * sd * n^(-1/5)``.

    Falls back to ``max(1e-3 * max(|mean|, 1), 1e-9)`` for a single value or
    zero spread.
    """
    x = np.asarray(values, dtype=np.float64)
    n = x.shape[0]
    sd = float(np.std(x, ddof=1)) if n >= 2 else 0.0
    if n < 2 or sd == 0.0:
        return max(1e-3 * max(abs(float(np.mean(x))), 1.0), 1e-9)
    return 1.06 * sd * n ** (-0.2)


def fit_kde(values) -> KdeModel:
    x = np.asarray(values, dtype=np.float64).reshape(-1)
    if x.shape[0] == 0:
        raise EmptyInput("cannot fit a KDE to no values")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("KDE input contains non-finite values")
    return KdeModel(tuple(float(v) for v in x), silverman_bandwidth(x))


def kde_pdf(model: KdeModel, x):
    """Density at ``x`` (scalar or array)."""
    pts = np.asarray(model.points)
    h = model.bandwidth
    xa = np.asarray(x, dtype=np.float64)
    u = (xa[..., None] - pts) / h
    dens = np.exp(-0.5 * u * u).sum(axis=-1) / (pts.shape[0] * h * _SQRT_2PI)
    return float(dens) if dens.ndim == 0 else dens


def kde_cdf(model: KdeModel, x):
    pts = np.asarray(model.points)
    xa = np.asarray(x, dtype=np.float64)
    out = ndtr((xa[..., None] - pts) / model.bandwidth).mean(axis=-1)
    return float(out) if out.ndim == 0 else out


def sample_kde(model: KdeModel, n: int, seed=0) -> np.ndarray:
    """Draw ``n`` values: a uniformly chosen point plus N(0, bandwidth^2) noise."""
    rng = make_rng(seed)
    pts = np.asarray(model.points)
    if n == 0:
        return np.zeros(0)
    idx = rng.integers(0, pts.shape[0], size=n)
    return pts[idx] + model.bandwidth * rng.standard_normal(n)


class PropertyKDE(BaseEstimator):
    """Estimator wrapper: ``fit(y)``, ``pdf``, ``score_samples`` and ``sample``."""

    def fit(self, y, X=None):
        self.model_ = fit_kde(y)
        self.bandwidth_ = self.model_.bandwidth
        return self

    def pdf(self, x):
        check_is_fitted(self, "model_")
        return kde_pdf(self.model_, x)

    def score_samples(self, x):
        return np.log(np.asarray(self.pdf(x)))

    def sample(self, n_samples=1, random_state=0):
        check_is_fitted(self, "model_")
        return sample_kde(self.model_, n_samples, random_state)
