"""Seeded synthetic data generators, dataset splitting, and CSV ingestion.

Three simulation designs ship with the package: a heteroscedastic Gaussian
quadratic in one input, a gamma model whose conditional mean is the Rosenbrock
surface, and a 20-input nonlinear regression with correlated Gaussian
features. A fourth generator produces a 9-feature gamma regression surrogate
for the diamond-price task when the canonical CSV is not available.

All generators are deterministic per seed (bit-identical reruns) and store the
true conditional parameters alongside the sample for oracle evaluation.
Uniform draws use the half-open convention [a, b).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, LoadError


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    feature_names: list
    true_params: dict | None = None
    seed: int | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if self.x.ndim == 1:
            self.x = self.x[:, None]
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.x.shape[0] != self.y.size:
            raise DomainError("x and y must have matching lengths")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise DomainError("dataset entries must be finite")
        if len(self.feature_names) != self.x.shape[1]:
            raise DomainError("feature_names must match the number of columns")

    @property
    def n(self):
        return self.y.size

    @property
    def dim(self):
        return self.x.shape[1]

    def take(self, idx):
        tp = None
        if self.true_params is not None:
            tp = {k: v[idx] for k, v in self.true_params.items()}
        return Dataset(self.x[idx], self.y[idx], list(self.feature_names), tp, self.seed)


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.8
    validation: float = 0.1
    test: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("train", "validation", "test"):
            if getattr(self, name) <= 0.0:
                raise DomainError(f"{name} fraction must be > 0")
        if abs(self.train + self.validation + self.test - 1.0) > 1e-12:
            raise DomainError("split fractions must sum to 1")


def split(ds, spec):
    """Seeded permutation then contiguous slicing: floor-sized train and
    validation parts, remainder to test. Exact disjoint partition."""
    if ds.n < 3:
        raise DomainError("need at least 3 rows to split")
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(ds.n)
    n_train = int(np.floor(ds.n * spec.train))
    n_val = int(np.floor(ds.n * spec.validation))
    if n_train < 1 or n_val < 1 or ds.n - n_train - n_val < 1:
        raise DomainError("split produces an empty part")
    parts = (perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:])
    return tuple(ds.take(p) for p in parts)


@dataclass
class Standardizer:
    """Per-column affine map to zero mean / unit sd; constant columns keep
    sd 1 so the transform stays invertible."""

    mean: np.ndarray
    sd: np.ndarray

    @classmethod
    def fit(cls, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        mean = x.mean(axis=0)
        sd = x.std(axis=0)
        sd = np.where(sd > 0.0, sd, 1.0)
        return cls(mean=mean, sd=sd)

    def transform(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.sd

    def inverse(self, z):
        return np.asarray(z, dtype=float) * self.sd + self.mean


def gen_gaussian_quadratic(n, seed):
    """Heteroscedastic quadratic: y = 10 + 5 x^2 + e with e ~ N(0, 30 x) and
    x ~ U(2, 20)."""
    if n < 1:
        raise DomainError("n must be >= 1")
    rng = np.random.default_rng(seed)
    x = rng.uniform(2.0, 20.0, size=n)
    mean = 10.0 + 5.0 * x ** 2
    sd = 30.0 * x
    y = mean + rng.normal(0.0, 1.0, size=n) * sd
    return Dataset(x[:, None], y, ["x"], {"mean": mean, "sd": sd}, seed)


def rosenbrock(x1, x2, a=1.0, b=10.0):
    return (a - x1) ** 2 + b * (x2 - x1 ** 2) ** 2


def gen_rosenbrock_gamma(n, seed):
    """Gamma responses around the Rosenbrock surface (a=1, b=10): shape 100,
    scale mean/100, with x1 ~ U(-2, 2) and x2 ~ U(-1, 5). The measure-zero
    event mean == 0 is redrawn so the scale stays positive."""
    if n < 1:
        raise DomainError("n must be >= 1")
    rng = np.random.default_rng(seed)
    x1 = rng.uniform(-2.0, 2.0, size=n)
    x2 = rng.uniform(-1.0, 5.0, size=n)
    mu = rosenbrock(x1, x2)
    bad = mu == 0.0
    while bad.any():
        m = int(bad.sum())
        x1[bad] = rng.uniform(-2.0, 2.0, size=m)
        x2[bad] = rng.uniform(-1.0, 5.0, size=m)
        mu = rosenbrock(x1, x2)
        bad = mu == 0.0
    shape = 100.0
    y = rng.gamma(shape, mu / shape, size=n)
    x = np.column_stack([x1, x2])
    true = {"mean": mu, "shape": np.full(n, shape), "scale": mu / shape}
    return Dataset(x, y, ["x1", "x2"], true, seed)


def _nonlinear20_mean(x):
    return (5.0 + 10.0 * x[:, 0] + 10.0 / (x[:, 1] ** 2 + 1.0) + 5.0 * x[:, 2] * x[:, 3]
            + 2.0 * x[:, 3] + 5.0 * x[:, 3] ** 2 + 5.0 * x[:, 4] + 2.0 * x[:, 5]
            + 10.0 / (x[:, 6] ** 2 + 1.0) + 5.0 * x[:, 7] * x[:, 8] + 5.0 * x[:, 8] ** 2
            + 5.0 * x[:, 9])


def gen_nonlinear20(n, seed):
    """20 correlated Gaussian inputs (covariance 0.5^|i-j|), a highly
    nonlinear mean in the first ten, unit Gaussian noise; inputs 11..20 are
    non-informative."""
    if n < 1:
        raise DomainError("n must be >= 1")
    rng = np.random.default_rng(seed)
    idx = np.arange(20)
    cov = 0.5 ** np.abs(idx[:, None] - idx[None, :])
    chol = np.linalg.cholesky(cov)
    x = rng.standard_normal((n, 20)) @ chol.T
    mean = _nonlinear20_mean(x)
    y = mean + rng.standard_normal(n)
    names = [f"x{i + 1}" for i in range(20)]
    return Dataset(x, y, names, {"mean": mean, "sd": np.ones(n)}, seed)


def gen_gamma_glm(n, seed):
    """Nine-feature gamma regression surrogate for the diamond-price task.

    Mixes skewed, ordinal and uniform features; the conditional mean follows a
    log-link GLM with interactions, and the shape parameter drifts with one
    feature so a global-shape model is deliberately misspecified.
    """
    if n < 1:
        raise DomainError("n must be >= 1")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, 3))
    z[:, 1] = 0.6 * z[:, 0] + 0.8 * z[:, 1]
    z[:, 2] = 0.4 * z[:, 1] + 0.9 * z[:, 2]
    size = np.exp(0.45 * z[:, 0])
    o1 = rng.integers(1, 6, size=n).astype(float)
    o2 = rng.integers(1, 8, size=n).astype(float)
    o3 = rng.integers(1, 9, size=n).astype(float)
    u = rng.uniform(-1.0, 1.0, size=(n, 3))
    x = np.column_stack([size, z[:, 1], z[:, 2], o1, o2, o3, u])

    eta = (1.6 * np.log(size) + 0.25 * z[:, 1] + 0.45 * z[:, 2] * u[:, 0]
           + 0.08 * o1 + 0.05 * o2 + 0.06 * o3 + 0.6 / (u[:, 1] ** 2 + 0.4)
           + 0.5 * np.sin(3.0 * u[:, 2]) + 0.3 * z[:, 1] * o1 / 5.0)
    mu = 800.0 * np.exp(eta)
    shape = 2.0 + 6.0 / (1.0 + np.exp(-1.5 * z[:, 1]))
    y = rng.gamma(shape, mu / shape, size=n)
    names = ["size", "g1", "g2", "ord1", "ord2", "ord3", "u1", "u2", "u3"]
    true = {"mean": mu, "shape": shape, "scale": mu / shape}
    return Dataset(x, y, names, true, seed)


GENERATORS = {
    "gaussian_quadratic": gen_gaussian_quadratic,
    "rosenbrock_gamma": gen_rosenbrock_gamma,
    "nonlinear20": gen_nonlinear20,
    "gamma_glm": gen_gamma_glm,
}


# Ordinal encodings for the diamond characteristics CSV, worst to best.
DIAMONDS_ORDINALS = {
    "cut": {"Fair": 1, "Good": 2, "Very Good": 3, "Premium": 4, "Ideal": 5},
    "color": {"J": 1, "I": 2, "H": 3, "G": 4, "F": 5, "E": 6, "D": 7},
    "clarity": {"I1": 1, "SI2": 2, "SI1": 3, "VS2": 4, "VS1": 5,
                "VVS2": 6, "VVS1": 7, "IF": 8},
}


def load_csv(path, response, ordinal_maps=None, drop_columns=()):
    """Load a headered CSV into a Dataset.

    Numeric cells are parsed as floats; columns listed in ``ordinal_maps`` are
    translated through their label tables. Unparseable or unknown cells raise
    LoadError naming the row and column (header is row 1).
    """
    ordinal_maps = ordinal_maps or {}
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise LoadError(f"cannot open {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LoadError(f"{path} is empty") from None
        header = [h.strip() for h in header]
        if response not in header:
            raise LoadError(f"response column {response!r} not found in header")
        for col in ordinal_maps:
            if col not in header:
                raise LoadError(f"ordinal column {col!r} not found in header")
        keep = [h for h in header if h != response and h not in drop_columns]
        col_idx = {h: i for i, h in enumerate(header)}
        rows = []
        ys = []
        for rownum, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise LoadError(f"row {rownum}: expected {len(header)} cells, found {len(row)}")
            values = []
            for name in keep:
                cell = row[col_idx[name]].strip()
                if name in ordinal_maps:
                    try:
                        values.append(float(ordinal_maps[name][cell]))
                    except KeyError:
                        raise LoadError(f"row {rownum}, column {name!r}: unknown label {cell!r}") from None
                else:
                    try:
                        values.append(float(cell))
                    except ValueError:
                        raise LoadError(f"row {rownum}, column {name!r}: not numeric: {cell!r}") from None
            cell = row[col_idx[response]].strip()
            try:
                ys.append(float(cell))
            except ValueError:
                raise LoadError(f"row {rownum}, column {response!r}: not numeric: {cell!r}") from None
            rows.append(values)
    if not rows:
        raise LoadError(f"{path} has no data rows")
    return Dataset(np.asarray(rows, dtype=float), np.asarray(ys, dtype=float), keep)


def save_dataset(ds, path):
    """Write a Dataset as CSV with a '#'-prefixed provenance line. True
    conditional parameters, when present, become ``true_``-prefixed columns."""
    true_keys = sorted(ds.true_params) if ds.true_params else []
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# seed={ds.seed if ds.seed is not None else ''} n={ds.n} d={ds.dim}\n")
        writer = csv.writer(fh)
        writer.writerow(list(ds.feature_names) + ["y"] + [f"true_{k}" for k in true_keys])
        cols = [ds.x[:, j] for j in range(ds.dim)] + [ds.y] + [ds.true_params[k] for k in true_keys]
        for row in zip(*cols):
            writer.writerow([repr(float(v)) for v in row])


def load_dataset(path):
    """Read a Dataset written by :func:`save_dataset`."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise LoadError(f"cannot open {path}: {exc}") from None
    with fh:
        first = fh.readline()
        seed = None
        if first.startswith("#"):
            for token in first[1:].split():
                if token.startswith("seed=") and token[5:]:
                    seed = int(token[5:])
        else:
            fh.seek(0)
        reader = csv.reader(fh)
        header = next(reader)
        if "y" not in header:
            raise LoadError(f"{path}: missing response column 'y'")
        y_pos = header.index("y")
        feature_names = header[:y_pos]
        true_keys = [h[5:] for h in header[y_pos + 1:]]
        xs, ys, trues = [], [], {k: [] for k in true_keys}
        for rownum, row in enumerate(reader, start=3):
            try:
                vals = [float(c) for c in row]
            except ValueError as exc:
                raise LoadError(f"{path} row {rownum}: {exc}") from None
            xs.append(vals[:y_pos])
            ys.append(vals[y_pos])
            for j, k in enumerate(true_keys):
                trues[k].append(vals[y_pos + 1 + j])
    true_params = {k: np.asarray(v) for k, v in trues.items()} if true_keys else None
    return Dataset(np.asarray(xs), np.asarray(ys), feature_names, true_params, seed)
