"""Local and global recalibration of predictive distributions.

The workflow: compute PIT values of a recalibration set under the base model,
index that set's layer representations, and for every new point re-apply the
PITs of its nearest neighbors through its own inverse predictive CDF, with
kernel weights decaying in representation-space distance. The output per new
point is a weighted sample set; point estimates are weighted means and
intervals come from weighted quantiles.

Setting k = n with a uniform kernel degenerates to global recalibration, and a
pool-adjacent-violators isotonic map over the PITs gives the classic global
baseline.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .knn import KnnIndex, build_index, query_knn, query_radius

PIT_EPS = 1e-12

KERNEL_FAMILIES = ("epanechnikov", "uniform")
BANDWIDTH_RULES = ("kth_neighbor", "fixed_radius")


@dataclass(frozen=True)
class KernelSpec:
    """Smoothing kernel: family plus the rule fixing its scale. The
    ``kth_neighbor`` rule sets the bandwidth to the farthest selected
    neighbor's distance; ``fixed_radius`` uses the given radius."""

    family: str = "epanechnikov"
    bandwidth: str = "kth_neighbor"
    radius: float | None = None

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise DomainError(f"unknown kernel family {self.family!r}")
        if self.bandwidth not in BANDWIDTH_RULES:
            raise DomainError(f"unknown bandwidth rule {self.bandwidth!r}")
        if self.bandwidth == "fixed_radius" and not (self.radius is not None and self.radius > 0.0):
            raise DomainError("fixed_radius bandwidth requires radius > 0")


@dataclass(frozen=True)
class KNearest:
    k: int
    eps: float = 0.0

    def __post_init__(self):
        if self.k < 1:
            raise DomainError("k must be >= 1")
        if not (np.isfinite(self.eps) and self.eps >= 0.0):
            raise DomainError("eps must be >= 0")


@dataclass(frozen=True)
class Radius:
    r: float

    def __post_init__(self):
        if not (np.isfinite(self.r) and self.r > 0.0):
            raise DomainError("r must be > 0")


class WeightedSampleSet:
    """Recalibrated predictive distribution for one new point: values with
    nonnegative weights stored normalized to sum 1."""

    def __init__(self, values, weights, neighbor_ids=None, bandwidth=None):
        values = np.asarray(values, dtype=float).ravel()
        weights = np.asarray(weights, dtype=float).ravel()
        if values.size < 2:
            raise DomainError("a weighted sample set needs at least 2 entries")
        if values.size != weights.size:
            raise DomainError("values and weights must be aligned")
        if not np.all(np.isfinite(values)):
            raise DomainError("values must be finite")
        if np.any(weights < 0.0) or not np.all(np.isfinite(weights)):
            raise DomainError("weights must be finite and nonnegative")
        total = weights.sum()
        if total <= 0.0:
            raise DomainError("weights must not all be zero")
        self.values = values
        self.weights = weights / total
        self.neighbor_ids = None if neighbor_ids is None else np.asarray(neighbor_ids, dtype=np.int64)
        self.bandwidth = bandwidth
        # moments and quantiles run over the sorted view so results do not
        # depend on the neighbor enumeration order
        order = np.argsort(values, kind="stable")
        self._sorted_values = values[order]
        self._sorted_weights = self.weights[order]
        cum = np.cumsum(self._sorted_weights)
        cum[-1] = 1.0
        self._cum_weights = cum

    def __len__(self):
        return self.values.size

    def point_estimate(self):
        """Weighted average of the sample values."""
        return float(self._sorted_weights @ self._sorted_values)

    def weighted_sd(self):
        m = self.point_estimate()
        return float(np.sqrt(self._sorted_weights @ (self._sorted_values - m) ** 2))

    def weighted_quantile(self, p):
        """Left-continuous step inverse: the smallest value whose cumulative
        weight reaches ``p``."""
        p_arr = np.asarray(p, dtype=float)
        if np.any(p_arr <= 0.0) or np.any(p_arr >= 1.0):
            raise DomainError("p must lie in the open interval (0, 1)")
        idx = np.searchsorted(self._cum_weights, p_arr, side="left")
        idx = np.minimum(idx, self.values.size - 1)
        out = self._sorted_values[idx]
        return float(out) if np.ndim(p) == 0 else out

    def cdf(self, y):
        """Total weight of values <= y (the step CDF of the weighted set)."""
        y_arr = np.asarray(y, dtype=float)
        idx = np.searchsorted(self._sorted_values, y_arr, side="right")
        padded = np.concatenate([[0.0], self._cum_weights])
        out = padded[idx]
        return float(out) if np.ndim(y) == 0 else out

    def interval(self, level):
        """Equal-tailed interval [q(alpha/2), q(1 - alpha/2)] at the given
        coverage level."""
        if not 0.0 < level < 1.0:
            raise DomainError("level must lie in (0, 1)")
        alpha = 1.0 - level
        return self.weighted_quantile(alpha / 2.0), self.weighted_quantile(1.0 - alpha / 2.0)

    def resample(self, size, rng):
        """Unweighted sample set of the given size drawn with replacement
        according to the weights (seeded by the caller's generator)."""
        if size < 2:
            raise DomainError("resample size must be >= 2")
        idx = rng.choice(self.values.size, size=size, p=self.weights)
        return WeightedSampleSet(self.values[idx], np.ones(size),
                                 neighbor_ids=self.neighbor_ids, bandwidth=self.bandwidth)


def point_estimate(wss):
    return wss.point_estimate()


def weighted_quantile(wss, p):
    return wss.weighted_quantile(p)


def compute_pits(dists, responses):
    """PIT values of observed responses under per-point predictive
    distributions, clipped into the open interval (0, 1)."""
    responses = np.asarray(responses, dtype=float).ravel()
    if len(dists) != responses.size:
        raise DomainError("dists and responses must be aligned")
    if responses.size and not np.all(np.isfinite(responses)):
        raise DomainError("responses must be finite")
    out = np.empty(responses.size)
    for i, (dist, y) in enumerate(zip(dists, responses)):
        out[i] = dist.cdf(float(y))
    return np.clip(out, PIT_EPS, 1.0 - PIT_EPS)


def _check_pits(pits):
    p = np.asarray(pits, dtype=float).ravel()
    if p.size == 0:
        raise DomainError("pits must be nonempty")
    if np.any(p <= 0.0) or np.any(p >= 1.0) or not np.all(np.isfinite(p)):
        raise DomainError("pits must lie in the open interval (0, 1)")
    return p


@dataclass
class RecalibrationIndex:
    """Frozen pairing of recalibration-set representations with their PIT
    values, wrapped around a KD-tree over the (optionally standardized)
    representations."""

    layer: int
    knn: KnnIndex
    pits: np.ndarray
    kernel: KernelSpec
    neighbor_rule: object
    center: np.ndarray
    scale: np.ndarray
    kept_dims: np.ndarray
    standardized: bool
    input_dim: int

    @property
    def n(self):
        return self.pits.size

    def transform(self, h):
        h = np.asarray(h, dtype=float)
        single = h.ndim == 1
        arr = np.atleast_2d(h)
        if arr.shape[1] != self.input_dim:
            raise DomainError(f"representation has dimension {arr.shape[1]}, index expects {self.input_dim}")
        arr = arr[:, self.kept_dims]
        if self.standardized:
            arr = (arr - self.center) / self.scale
        return arr[0] if single else arr


def build_recalibrator(representations, pits, kernel, neighbor_rule, layer=1,
                       standardize=True, leaf_size=16):
    """Freeze representations + PITs into a queryable recalibration index.

    Representations are standardized per dimension by default (constant
    dimensions are dropped with a warning); pass ``standardize=False`` to
    index raw coordinates, e.g. for fixed-radius selection in raw input units.
    """
    reps = np.atleast_2d(np.asarray(representations, dtype=float))
    if reps.ndim != 2:
        raise DomainError("representations must be an n x d matrix")
    p = _check_pits(pits)
    if reps.shape[0] != p.size:
        raise DomainError("representations and pits must be aligned")
    if not np.all(np.isfinite(reps)):
        raise DomainError("representations must be finite")
    if layer < 1:
        raise DomainError("layer index must be >= 1")
    if not isinstance(neighbor_rule, (KNearest, Radius)):
        raise DomainError("neighbor_rule must be KNearest or Radius")
    if isinstance(neighbor_rule, KNearest) and neighbor_rule.k > p.size:
        raise DomainError(f"k={neighbor_rule.k} exceeds recalibration set size {p.size}")

    d = reps.shape[1]
    if standardize:
        center = reps.mean(axis=0)
        scale = reps.std(axis=0)
        kept = scale > 0.0
        if not kept.any():
            raise DomainError("all representation dimensions have zero spread")
        if not kept.all():
            dropped = [int(i) for i in np.flatnonzero(~kept)]
            warnings.warn(f"dropping zero-spread representation dimensions {dropped}")
        center = center[kept]
        scale = scale[kept]
        coords = (reps[:, kept] - center) / scale
    else:
        kept = np.ones(d, dtype=bool)
        center = np.zeros(d)
        scale = np.ones(d)
        coords = reps

    knn = build_index(coords, leaf_size=leaf_size)
    return RecalibrationIndex(layer=int(layer), knn=knn, pits=p.copy(), kernel=kernel,
                              neighbor_rule=neighbor_rule, center=center, scale=scale,
                              kept_dims=kept, standardized=standardize, input_dim=d)


def select_neighbors(index, h_new):
    """Neighbor list for one new representation under the index's rule.

    A radius query returning fewer than 2 neighbors falls back to the two
    exact nearest with a warning.
    """
    q = index.transform(h_new)
    rule = index.neighbor_rule
    if isinstance(rule, Radius):
        nl = query_radius(index.knn, q, rule.r)
        if len(nl) < 2:
            warnings.warn("radius query returned fewer than 2 neighbors; "
                          "falling back to the 2 nearest")
            nl = query_knn(index.knn, q, 2, 0.0)
        return nl
    return query_knn(index.knn, q, rule.k, rule.eps)


def kernel_weights(kernel, distances, bandwidth_hint=None):
    """Kernel weights for sorted neighbor distances, plus the bandwidth used
    (None for the uniform kernel, whose weights ignore distance).

    Falls back to uniform weights (with a warning) when fewer than 2 strictly
    positive weights remain, e.g. when every distance equals the bandwidth or
    the bandwidth degenerates to zero.
    """
    d = np.asarray(distances, dtype=float)
    if kernel.bandwidth == "fixed_radius":
        u = float(kernel.radius)
    elif bandwidth_hint is not None:
        u = float(bandwidth_hint)
    else:
        u = float(d[-1]) if d.size else 0.0
    if kernel.family == "uniform":
        return np.ones(d.size), None
    if u <= 0.0:
        warnings.warn("kernel bandwidth degenerated to zero; using uniform weights")
        return np.ones(d.size), u
    w = 1.0 - (d / u) ** 2
    np.clip(w, 0.0, None, out=w)
    if np.count_nonzero(w > 0.0) < 2:
        warnings.warn("fewer than 2 positive kernel weights; using uniform weights")
        return np.ones(d.size), u
    return w, u


def recalibrate_point(index, dist_new, h_new, neighbors=None):
    """Recalibrated weighted sample set for one new point.

    Re-applies the PITs of the selected neighbors through ``dist_new``'s
    inverse CDF and weights them by the kernel at the neighbor distances.
    ``neighbors`` may carry a precomputed NeighborList for the same point.
    """
    nl = select_neighbors(index, h_new) if neighbors is None else neighbors
    values = dist_new.quantile(index.pits[nl.ids])
    w, u = kernel_weights(index.kernel, nl.distances)
    return WeightedSampleSet(values, w, neighbor_ids=nl.ids, bandwidth=u)


def global_recalibrate(pits, dist_new):
    """Degenerate k = n case: every PIT re-applied with uniform weight."""
    p = _check_pits(pits)
    values = dist_new.quantile(p)
    return WeightedSampleSet(values, np.ones(p.size))


@dataclass(frozen=True)
class IsotonicMap:
    """Piecewise-linear nondecreasing map of [0,1] onto [0,1], endpoints
    pinned at (0,0) and (1,1)."""

    knots: np.ndarray
    values: np.ndarray

    def evaluate(self, p):
        out = np.interp(np.asarray(p, dtype=float), self.knots, self.values)
        return float(out) if np.ndim(p) == 0 else out

    def inverse(self, q):
        """Generalized (left-continuous) inverse: smallest p with map(p) >= q."""
        keep = np.concatenate([[True], np.diff(self.values) > 0.0])
        ys = self.values[keep]
        xs = self.knots[keep]
        out = np.interp(np.asarray(q, dtype=float), ys, xs)
        return float(out) if np.ndim(q) == 0 else out


def pav(y, weights=None):
    """Pool-adjacent-violators: the nondecreasing least-squares fit to y."""
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0:
        raise DomainError("pav needs at least one value")
    w = np.ones(y.size) if weights is None else np.asarray(weights, dtype=float).ravel()
    means = []
    wsum = []
    counts = []
    for yi, wi in zip(y, w):
        means.append(yi)
        wsum.append(wi)
        counts.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, w2, c2 = means.pop(), wsum.pop(), counts.pop()
            m1, w1, c1 = means.pop(), wsum.pop(), counts.pop()
            wt = w1 + w2
            means.append((m1 * w1 + m2 * w2) / wt)
            wsum.append(wt)
            counts.append(c1 + c2)
    out = np.empty(y.size)
    pos = 0
    for m, c in zip(means, counts):
        out[pos:pos + c] = m
        pos += c
    return out


def fit_isotonic(pits):
    """Isotonic fit of the empirical PIT CDF: targets are the right-continuous
    empirical CDF values at the sorted PITs; duplicates are pooled, the fit is
    run through PAV, and endpoints are pinned to (0,0) and (1,1)."""
    p = _check_pits(pits)
    ps = np.sort(p)
    n = ps.size
    targets = np.searchsorted(ps, ps, side="right") / n
    xs, start = np.unique(ps, return_index=True)
    counts = np.diff(np.append(start, n))
    pooled = np.add.reduceat(targets, start) / counts
    fitted = pav(pooled, counts)
    knots = np.concatenate([[0.0], xs, [1.0]])
    values = np.concatenate([[0.0], np.clip(fitted, 0.0, 1.0), [1.0]])
    values = np.maximum.accumulate(values)
    return IsotonicMap(knots=knots, values=values)


def apply_isotonic(iso, p):
    """Recalibrated probability for a PIT value under the isotonic map."""
    return iso.evaluate(p)


def isotonic_quantile(iso, dist_new, p):
    """Quantile of the isotonic-recalibrated forecast: the base quantile at
    the generalized inverse of the map."""
    q = np.clip(iso.inverse(p), PIT_EPS, 1.0 - PIT_EPS)
    return dist_new.quantile(q)
