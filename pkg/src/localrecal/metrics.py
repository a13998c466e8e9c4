"""Forecast-evaluation metrics: squared error, interval coverage, the
standardized mean interval score, PIT uniformity statistics, and a
Gaussian-moment KL divergence.

The interval score is reported loss-oriented (positive, smaller is better):
width plus (2/alpha)-weighted miss penalties, standardized by the validation
set's mean absolute response.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DomainError


def _aligned(a, b, names):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or a.size != b.size:
        raise DomainError(f"{names} must be nonempty and aligned")
    return a, b


def mse(predictions, responses):
    p, y = _aligned(predictions, responses, "predictions/responses")
    return float(np.mean((p - y) ** 2))


def rmse(predictions, responses):
    return float(np.sqrt(mse(predictions, responses)))


def coverage(lower, upper, y):
    """Fraction of observations with lower <= y <= upper."""
    lower, upper = _aligned(lower, upper, "lower/upper")
    _, y = _aligned(upper, y, "upper/y")
    return float(np.mean((y >= lower) & (y <= upper)))


def smis(lower, upper, y, alpha, standardizer):
    """Standardized mean interval score at miss level ``alpha``.

    Mean of (upper - lower) + (2/alpha) * (lower - y) for misses below and
    (2/alpha) * (y - upper) for misses above, divided by ``standardizer``
    (the validation set's mean absolute response).
    """
    lower, upper = _aligned(lower, upper, "lower/upper")
    _, y = _aligned(upper, y, "upper/y")
    if not 0.0 < alpha < 1.0:
        raise DomainError("alpha must lie in (0, 1)")
    if not standardizer > 0.0:
        raise DomainError("standardizer must be > 0")
    width = upper - lower
    below = np.maximum(lower - y, 0.0)
    above = np.maximum(y - upper, 0.0)
    score = width + (2.0 / alpha) * (below + above)
    return float(np.mean(score) / standardizer)


class UniformityStats(NamedTuple):
    cramer_von_mises: float
    wasserstein1: float
    frosini: float


def pit_uniformity(pits):
    """Distances of the PIT sample from the uniform grid (2i-1)/(2n):
    Cramér-von Mises, Wasserstein-1, and the Frosini statistic."""
    p = np.sort(np.asarray(pits, dtype=float).ravel())
    if p.size == 0:
        raise DomainError("pits must be nonempty")
    n = p.size
    grid = (2.0 * np.arange(1, n + 1) - 1.0) / (2.0 * n)
    dev = p - grid
    cvm = float(np.sum(dev ** 2) + 1.0 / (12.0 * n))
    w1 = float(np.sum(np.abs(dev)) / n)
    frosini = float(np.sum(np.abs(dev)) / np.sqrt(n))
    return UniformityStats(cvm, w1, frosini)


def gaussian_kl(true_mean, true_sd, est_mean, est_sd):
    """Mean KL(N(true) || N(est)) over points, closed form."""
    mu, sigma = _aligned(true_mean, true_sd, "true_mean/true_sd")
    mu_hat, sigma_hat = _aligned(est_mean, est_sd, "est_mean/est_sd")
    if mu_hat.size != mu.size:
        raise DomainError("true and estimated parameter vectors must be aligned")
    if np.any(sigma <= 0.0) or np.any(sigma_hat <= 0.0):
        raise DomainError("standard deviations must be > 0")
    kl = (np.log(sigma_hat / sigma)
          + (sigma ** 2 + (mu - mu_hat) ** 2) / (2.0 * sigma_hat ** 2) - 0.5)
    return float(np.mean(kl))


@dataclass
class ExperimentReport:
    """Metric table row for one model/configuration on one dataset split."""

    label: str
    mse: float
    rmse: float
    coverage: dict
    smis: float
    cramer_von_mises: float
    wasserstein1: float
    frosini: float
    gaussian_kl: float | None = None
    mse_true_mean: float | None = None
    train_seconds: float = 0.0
    predict_seconds: float = 0.0

    def __post_init__(self):
        for level, value in self.coverage.items():
            if not 0.0 <= value <= 1.0:
                raise DomainError(f"coverage at {level} outside [0, 1]")
        for name in ("mse", "rmse", "smis", "cramer_von_mises", "wasserstein1",
                     "frosini", "gaussian_kl", "mse_true_mean"):
            value = getattr(self, name)
            if value is not None and not np.isfinite(value):
                raise DomainError(f"{name} must be finite")

    def levels(self):
        return sorted(self.coverage)

    def to_kv_text(self):
        lines = [f"label={self.label}",
                 f"mse={self.mse:.4f}",
                 f"rmse={self.rmse:.4f}"]
        for level in self.levels():
            lines.append(f"coverage_{_level_tag(level)}={self.coverage[level]:.4f}")
        lines.append(f"smis={self.smis:.4f}")
        lines.append(f"cramer_von_mises={self.cramer_von_mises:.6f}")
        lines.append(f"wasserstein1={self.wasserstein1:.6f}")
        lines.append(f"frosini={self.frosini:.6f}")
        lines.append("gaussian_kl=" + (f"{self.gaussian_kl:.6f}" if self.gaussian_kl is not None else "NA"))
        lines.append("mse_true_mean=" + (f"{self.mse_true_mean:.4f}" if self.mse_true_mean is not None else "NA"))
        lines.append(f"train_seconds={self.train_seconds:.3f}")
        lines.append(f"predict_seconds={self.predict_seconds:.3f}")
        return "\n".join(lines) + "\n"

    def header_row(self):
        cols = ["label", "mse", "rmse"]
        cols += [f"coverage_{_level_tag(level)}" for level in self.levels()]
        cols += ["smis", "cramer_von_mises", "wasserstein1", "frosini",
                 "gaussian_kl", "mse_true_mean", "train_seconds", "predict_seconds"]
        return cols

    def to_row(self):
        row = [self.label, f"{self.mse:.4f}", f"{self.rmse:.4f}"]
        row += [f"{self.coverage[level]:.4f}" for level in self.levels()]
        row += [f"{self.smis:.4f}", f"{self.cramer_von_mises:.6f}",
                f"{self.wasserstein1:.6f}", f"{self.frosini:.6f}",
                f"{self.gaussian_kl:.6f}" if self.gaussian_kl is not None else "NA",
                f"{self.mse_true_mean:.4f}" if self.mse_true_mean is not None else "NA",
                f"{self.train_seconds:.3f}", f"{self.predict_seconds:.3f}"]
        return row


def _level_tag(level):
    return f"{100.0 * level:g}".replace(".", "_")
