"""One-dimensional predictive distributions with reliable CDF and inverse-CDF evaluation.

Four families: Normal, Gamma and LogNormal (parametric) plus Empirical, an
ordered Monte Carlo sample. Instances are immutable after construction and
``cdf`` / ``quantile`` accept scalars or numpy arrays, so per-point forecast
objects stay cheap while bulk quantile evaluation is vectorized.

The Empirical CDF uses the mid-rank convention with linear interpolation
between order statistics (ties pooled by averaging their mid-ranks) and is
clipped to [1/(2m), 1 - 1/(2m)] so it never emits 0 or 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DomainError, NumericalError

_SQRT2 = float(np.sqrt(2.0))
_SQRT_2PI = float(np.sqrt(2.0 * np.pi))

# Cap for every bracketing / Newton / bisection loop. Exceeding the cap is an
# error, never a silent best-effort value.
MAX_ITERATIONS = 200

# Coefficients of Acklam's rational approximation to the standard normal
# quantile (relative error < 1.2e-9 before refinement).
_PROBIT_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
             1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_PROBIT_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
             6.680131188771972e+01, -1.328068155288572e+01)
_PROBIT_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
             -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_PROBIT_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
             3.754408661907416e+00)
_PROBIT_PLOW = 0.02425


def _as_float_array(x, name):
    arr = np.asarray(x, dtype=float)
    if arr.size and not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite")
    return arr


def _check_prob_open(p):
    arr = np.asarray(p, dtype=float)
    if arr.size and (not np.all(np.isfinite(arr)) or np.any(arr <= 0.0) or np.any(arr >= 1.0)):
        raise DomainError("p must lie in the open interval (0, 1)")
    return arr


def _scalar_like(template, value):
    """Return a python float when the caller passed a scalar."""
    if np.ndim(template) == 0:
        return float(value)
    return value


def std_normal_cdf(z):
    """Standard normal CDF via the complementary error function."""
    z = np.asarray(z, dtype=float)
    return 0.5 * special.erfc(-z / _SQRT2)


def std_normal_quantile(p):
    """Standard normal quantile: Acklam's rational approximation plus one
    Newton refinement, accurate to well below 1e-12 over (1e-300, 1-1e-12)."""
    p_arr = _check_prob_open(p)
    q = np.empty_like(p_arr)

    lo = p_arr < _PROBIT_PLOW
    hi = p_arr > 1.0 - _PROBIT_PLOW
    mid = ~(lo | hi)

    a, b, c, d = _PROBIT_A, _PROBIT_B, _PROBIT_C, _PROBIT_D
    if mid.any():
        u = p_arr[mid] - 0.5
        r = u * u
        num = ((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]
        den = ((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0
        q[mid] = num * u / den
    if lo.any():
        r = np.sqrt(-2.0 * np.log(p_arr[lo]))
        num = ((((c[0] * r + c[1]) * r + c[2]) * r + c[3]) * r + c[4]) * r + c[5]
        den = (((d[0] * r + d[1]) * r + d[2]) * r + d[3]) * r + 1.0
        q[lo] = num / den
    if hi.any():
        r = np.sqrt(-2.0 * np.log1p(-p_arr[hi]))
        num = ((((c[0] * r + c[1]) * r + c[2]) * r + c[3]) * r + c[4]) * r + c[5]
        den = (((d[0] * r + d[1]) * r + d[2]) * r + d[3]) * r + 1.0
        q[hi] = -num / den

    # One Newton step on F(q) - p; skipped where exp(q^2/2) would overflow.
    with np.errstate(over="ignore", invalid="ignore"):
        err = std_normal_cdf(q) - p_arr
        step = err * _SQRT_2PI * np.exp(q * q / 2.0)
        q = np.where(np.isfinite(step), q - step, q)
    return _scalar_like(p, q)


@dataclass(frozen=True)
class Normal:
    """Gaussian predictive distribution with mean and standard deviation."""

    mean: float
    sd: float
    family = "normal"

    def __post_init__(self):
        if not np.isfinite(self.mean):
            raise DomainError("mean must be finite")
        if not (np.isfinite(self.sd) and self.sd > 0.0):
            raise DomainError("sd must be finite and > 0")
        object.__setattr__(self, "mean", float(self.mean))
        object.__setattr__(self, "sd", float(self.sd))

    def cdf(self, y):
        y_arr = _as_float_array(y, "y")
        out = std_normal_cdf((y_arr - self.mean) / self.sd)
        return _scalar_like(y, out)

    def quantile(self, p):
        z = std_normal_quantile(p)
        return _scalar_like(p, self.mean + self.sd * np.asarray(z))


@dataclass(frozen=True)
class Gamma:
    """Gamma predictive distribution parameterized by shape and scale."""

    shape: float
    scale: float
    family = "gamma"

    def __post_init__(self):
        if not (np.isfinite(self.shape) and self.shape > 0.0):
            raise DomainError("shape must be finite and > 0")
        if not (np.isfinite(self.scale) and self.scale > 0.0):
            raise DomainError("scale must be finite and > 0")
        object.__setattr__(self, "shape", float(self.shape))
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def mean(self):
        return self.shape * self.scale

    @property
    def sd(self):
        return float(np.sqrt(self.shape)) * self.scale

    def cdf(self, y):
        y_arr = _as_float_array(y, "y")
        out = np.where(y_arr > 0.0, special.gammainc(self.shape, np.maximum(y_arr, 0.0) / self.scale), 0.0)
        return _scalar_like(y, out)

    def quantile(self, p):
        p_arr = np.atleast_1d(_check_prob_open(p))
        out = _gamma_quantile(self.shape, self.scale, p_arr)
        return _scalar_like(p, out if np.ndim(p) else out[0])


@dataclass(frozen=True)
class LogNormal:
    """Log-normal predictive distribution: log Y is Normal(log_mean, log_sd)."""

    log_mean: float
    log_sd: float
    family = "lognormal"

    def __post_init__(self):
        if not np.isfinite(self.log_mean):
            raise DomainError("log_mean must be finite")
        if not (np.isfinite(self.log_sd) and self.log_sd > 0.0):
            raise DomainError("log_sd must be finite and > 0")
        object.__setattr__(self, "log_mean", float(self.log_mean))
        object.__setattr__(self, "log_sd", float(self.log_sd))

    @property
    def mean(self):
        return float(np.exp(self.log_mean + 0.5 * self.log_sd ** 2))

    @property
    def sd(self):
        s2 = self.log_sd ** 2
        return float(np.sqrt(np.expm1(s2)) * np.exp(self.log_mean + 0.5 * s2))

    def cdf(self, y):
        y_arr = _as_float_array(y, "y")
        pos = y_arr > 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            z = (np.log(np.where(pos, y_arr, 1.0)) - self.log_mean) / self.log_sd
        out = np.where(pos, std_normal_cdf(z), 0.0)
        return _scalar_like(y, out)

    def quantile(self, p):
        z = std_normal_quantile(p)
        return _scalar_like(p, np.exp(self.log_mean + self.log_sd * np.asarray(z)))


class Empirical:
    """Empirical predictive distribution built from a Monte Carlo sample.

    Values are stored sorted ascending. The CDF is the mid-rank estimate with
    linear interpolation between order statistics; repeated values are pooled
    by averaging their mid-ranks, and the result is clipped to
    [1/(2m), 1 - 1/(2m)] so PIT values stay usable in inverse CDFs.
    """

    family = "empirical"

    def __init__(self, values):
        arr = np.asarray(values, dtype=float)
        if arr.ndim != 1 or arr.size < 2:
            raise DomainError("values must be a 1-d sample with at least 2 entries")
        if not np.all(np.isfinite(arr)):
            raise DomainError("values must be finite")
        v = np.sort(arr)
        m = v.size
        midranks = (np.arange(1, m + 1) - 0.5) / m
        xs, inverse = np.unique(v, return_inverse=True)
        counts = np.bincount(inverse)
        fs = np.bincount(inverse, weights=midranks) / counts
        self.values = v
        self._xs = xs
        self._fs = fs
        self._clip_lo = 0.5 / m
        self._clip_hi = 1.0 - 0.5 / m

    def __repr__(self):
        return f"Empirical(m={self.values.size})"

    def __eq__(self, other):
        return isinstance(other, Empirical) and np.array_equal(self.values, other.values)

    @property
    def mean(self):
        return float(self.values.mean())

    @property
    def sd(self):
        return float(self.values.std())

    def cdf(self, y):
        y_arr = _as_float_array(y, "y")
        out = np.clip(np.interp(y_arr, self._xs, self._fs), self._clip_lo, self._clip_hi)
        return _scalar_like(y, out)

    def quantile(self, p):
        p_arr = _check_prob_open(p)
        # Inverse of the interpolated mid-rank CDF; clamps to the extreme
        # order statistics outside its range.
        out = np.interp(p_arr, self._fs, self._xs)
        return _scalar_like(p, out)


PredictiveDistribution = Normal | Gamma | LogNormal | Empirical


def empirical_from_samples(values):
    """Build an Empirical distribution from raw (unsorted) sample values."""
    return Empirical(values)


def _gamma_quantile(shape, scale, p):
    """Invert the Gamma CDF by safeguarded Newton on the regularized lower
    incomplete gamma, vectorized over ``p``.

    The bracket starts at [scale*shape*1e-6, scale*shape*1e3] and is expanded
    geometrically until it straddles every target probability; Newton steps
    that leave the bracket fall back to a geometric bisection. Converged means
    |cdf(x) - p| <= 1e-10.
    """
    n = p.size
    lo = np.full(n, scale * shape * 1e-6)
    hi = np.full(n, scale * shape * 1e3)

    for _ in range(MAX_ITERATIONS):
        need = special.gammainc(shape, lo / scale) > p
        if not need.any():
            break
        lo[need] *= 1e-3
    else:
        raise NumericalError(f"gamma quantile bracket expansion failed low, bracket=({lo.min()}, {hi.max()})")
    for _ in range(MAX_ITERATIONS):
        need = special.gammainc(shape, hi / scale) < p
        if not need.any():
            break
        hi[need] *= 1e3
    else:
        raise NumericalError(f"gamma quantile bracket expansion failed high, bracket=({lo.min()}, {hi.max()})")

    # Wilson-Hilferty starting point, pushed into the open bracket.
    z = np.asarray(std_normal_quantile(np.clip(p, 1e-300, 1.0 - 1e-12)))
    wh = shape * (1.0 - 1.0 / (9.0 * shape) + z / (3.0 * np.sqrt(shape))) ** 3 * scale
    x = np.asarray(wh, dtype=float).copy()
    bad = ~np.isfinite(x) | (x <= lo) | (x >= hi)
    x[bad] = np.sqrt(np.maximum(lo[bad], np.finfo(float).tiny) * hi[bad])

    out = np.empty(n)
    active = np.ones(n, dtype=bool)
    log_norm = special.gammaln(shape) + shape * np.log(scale)
    for _ in range(MAX_ITERATIONS):
        xa = x[active]
        f = special.gammainc(shape, xa / scale) - p[active]
        done = np.abs(f) <= 1e-10
        if done.any():
            idx = np.flatnonzero(active)[done]
            out[idx] = xa[done]
            active[idx] = False
            xa = xa[~done]
            f = f[~done]
        if not active.any():
            break
        la = lo[active]
        ha = hi[active]
        above = f > 0.0
        ha[above] = np.minimum(ha[above], xa[above])
        la[~above] = np.maximum(la[~above], xa[~above])
        with np.errstate(over="ignore", under="ignore", divide="ignore", invalid="ignore"):
            log_pdf = (shape - 1.0) * np.log(xa) - xa / scale - log_norm
            step = f * np.exp(-log_pdf)
            trial = xa - step
        ok = np.isfinite(trial) & (trial > la) & (trial < ha)
        # Geometric bisection keeps progress sane when the root sits many
        # orders of magnitude from the bracket midpoint.
        fallback = np.sqrt(np.maximum(la, np.finfo(float).tiny) * ha)
        x_new = np.where(ok, trial, fallback)
        x[active] = x_new
        lo[active] = la
        hi[active] = ha
    else:
        raise NumericalError(
            "gamma quantile did not converge within "
            f"{MAX_ITERATIONS} iterations; last bracket "
            f"({lo[active].min()}, {hi[active].max()})"
        )
    return out
