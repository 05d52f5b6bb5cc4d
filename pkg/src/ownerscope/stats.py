"""Correlation, matrix comparison and regression routines.

Undefined results (constant inputs, zero-variance vectors) come back as
``nan`` rather than raising, so sweeps over sparse subsets keep going.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from ownerscope.errors import (
    DegenerateRangeWarning,
    EmptySample,
    InvalidLambda,
    LengthMismatch,
    NotSymmetric,
    RankDeficient,
    ShapeMismatch,
    TooFewSamples,
    UnknownColumn,
    ValidationError,
    ZeroVector,
)

METHODS = ("pearson", "spearman", "kendall")


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise LengthMismatch(f"inputs have lengths {x.size} and {y.size}")
    if x.size < 2:
        raise TooFewSamples(f"need at least 2 samples, got {x.size}")
    if np.isnan(x).any() or np.isnan(y).any():
        raise ValidationError("inputs contain NaN")
    return x, y


def _is_constant(v: np.ndarray) -> bool:
    return bool(np.all(v == v[0]))


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return math.nan
    # sqrt of the product, not product of sqrts: identical inputs give exactly 1
    denom = math.sqrt(sxx * syy)
    if not math.isfinite(denom) or denom == 0.0:
        denom = math.sqrt(sxx) * math.sqrt(syy)
    r = float(dx @ dy) / denom
    return min(1.0, max(-1.0, r))


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    x, y = _pair(x, y)
    if _is_constant(x) or _is_constant(y):
        return math.nan
    return _pearson(x, y)


def rank_with_ties(x: Sequence[float]) -> np.ndarray:
    """1-based ranks, tied values sharing the average of their positions."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0:
        raise TooFewSamples("cannot rank an empty sequence")
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    ranks = np.empty(x.size, dtype=float)
    i = 0
    n = x.size
    while i < n:
        j = i
        while j + 1 < n and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    x, y = _pair(x, y)
    return pearson(rank_with_ties(x), rank_with_ties(y))


def _tied_pairs(sorted_values: Sequence) -> int:
    total = 0
    run = 1
    for prev, cur in zip(sorted_values, sorted_values[1:]):
        if cur == prev:
            run += 1
        else:
            total += run * (run - 1) // 2
            run = 1
    return total + run * (run - 1) // 2


def _count_inversions(values: list) -> tuple[list, int]:
    """Merge sort returning (sorted, number of strictly inverted pairs)."""
    if len(values) <= 1:
        return values, 0
    mid = len(values) // 2
    left, a = _count_inversions(values[:mid])
    right, b = _count_inversions(values[mid:])
    merged = []
    swaps = a + b
    i = j = 0
    while i < len(left) and j < len(right):
        if right[j] < left[i]:
            merged.append(right[j])
            swaps += len(left) - i
            j += 1
        else:
            merged.append(left[i])
            i += 1
    merged.extend(left[i:])
    merged.extend(right[j:])
    return merged, swaps


def kendall(x: Sequence[float], y: Sequence[float]) -> float:
    """Kendall tau-b in O(n log n) (Knight's algorithm)."""
    x, y = _pair(x, y)
    n = x.size
    order = np.lexsort((y, x))
    xs = x[order].tolist()
    ys = y[order].tolist()
    n0 = n * (n - 1) // 2
    x_ties = _tied_pairs(xs)
    joint_ties = _tied_pairs(list(zip(xs, ys)))
    ys_sorted, swaps = _count_inversions(ys)
    y_ties = _tied_pairs(ys_sorted)
    denom = (n0 - x_ties) * (n0 - y_ties)
    if denom == 0:
        return math.nan
    s = n0 - x_ties - y_ties + joint_ties - 2 * swaps
    return min(1.0, max(-1.0, s / math.sqrt(denom)))


_CORRELATORS: dict[str, Callable[[Any, Any], float]] = {
    "pearson": pearson,
    "spearman": spearman,
    "kendall": kendall,
}


def correlate(x, y, method: str = "pearson") -> float:
    try:
        fn = _CORRELATORS[method]
    except KeyError:
        raise ValidationError(f"unknown correlation method {method!r}") from None
    return fn(x, y)


# -- correlation matrices ----------------------------------------------------

@dataclass(frozen=True)
class CorrelationMatrix:
    labels: tuple[str, ...]
    values: np.ndarray
    method: str
    # True where the coefficient was undefined and stored as 0
    mask: np.ndarray = field(default=None)

    def __post_init__(self) -> None:
        k = len(self.labels)
        if self.values.shape != (k, k):
            raise ShapeMismatch(f"values shape {self.values.shape} does not match {k} labels")
        if self.mask is None:
            object.__setattr__(self, "mask", np.zeros((k, k), dtype=bool))

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "labels": list(self.labels),
            "values": [[float(v) for v in row] for row in self.values],
            "masked": [[bool(m) for m in row] for row in self.mask],
        }

    def to_csv(self) -> str:
        lines = ["," + ",".join(self.labels)]
        for label, row in zip(self.labels, self.values):
            lines.append(label + "," + ",".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"


def column(rows: Sequence[Any], name: str) -> np.ndarray:
    """Pull one numeric column from a sequence of mappings or attribute records."""
    out = []
    for row in rows:
        if isinstance(row, Mapping):
            if name not in row:
                raise UnknownColumn(f"no column {name!r}")
            value = row[name]
        else:
            if not hasattr(row, name):
                raise UnknownColumn(f"no column {name!r}")
            value = getattr(row, name)
        if value is None:
            raise ValidationError(f"column {name!r} has missing values")
        out.append(value)
    return np.asarray(out, dtype=float)


def correlation_matrix(rows: Sequence[Any], columns: Sequence[str], method: str = "pearson") -> CorrelationMatrix:
    if len(rows) < 2:
        raise TooFewSamples(f"need at least 2 rows, got {len(rows)}")
    data = [column(rows, c) for c in columns]
    k = len(columns)
    values = np.zeros((k, k))
    mask = np.zeros((k, k), dtype=bool)
    constant = [_is_constant(v) for v in data]
    for i in range(k):
        if constant[i]:
            mask[i, i] = True
        else:
            values[i, i] = 1.0
        for j in range(i + 1, k):
            r = math.nan if constant[i] or constant[j] else correlate(data[i], data[j], method)
            if math.isnan(r):
                mask[i, j] = mask[j, i] = True
            else:
                values[i, j] = values[j, i] = r
    return CorrelationMatrix(tuple(columns), values, method, mask)


def _matrices(a, b) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(a, CorrelationMatrix) and isinstance(b, CorrelationMatrix):
        if a.labels != b.labels:
            raise ShapeMismatch("correlation matrices have different labels")
    a = a.values if isinstance(a, CorrelationMatrix) else np.asarray(a, dtype=float)
    b = b.values if isinstance(b, CorrelationMatrix) else np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes {a.shape} and {b.shape} differ")
    return a, b


def frobenius_distance(a, b) -> float:
    a, b = _matrices(a, b)
    return float(np.sqrt(np.sum((a - b) ** 2)))


def minmax_similarity(distances: Sequence[float]) -> list[float]:
    """Map each distance to 1 - (d - min) / (max - min)."""
    d = np.asarray(distances, dtype=float)
    if d.size == 0:
        raise TooFewSamples("no distances given")
    lo, hi = float(d.min()), float(d.max())
    if hi == lo:
        warnings.warn("all distances are equal; min-max similarity is 1.0 everywhere", DegenerateRangeWarning, stacklevel=2)
        return [1.0] * d.size
    return [float(v) for v in 1.0 - (d - lo) / (hi - lo)]


def expdecay_similarity(d: float, lam: float = 1.0) -> float:
    if not lam > 0:
        raise InvalidLambda(f"lambda must be positive, got {lam}")
    if d < 0:
        raise ValidationError(f"distance must be non-negative, got {d}")
    return math.exp(-lam * d)


def cosine_similarity(a, b) -> float:
    a, b = _matrices(a, b)
    va, vb = a.ravel(), b.ravel()
    na, nb = float(np.linalg.norm(va)), float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine similarity of a zero vector is undefined")
    return min(1.0, max(-1.0, float(va @ vb) / (na * nb)))


# -- Kolmogorov-Smirnov ------------------------------------------------------

def kolmogorov_sf(lam: float) -> float:
    """Survival function of the Kolmogorov distribution, P(K > lam)."""
    if lam <= 0:
        return 1.0
    if lam < 1.18:
        # theta-function form; the alternating series converges slowly here
        total = 0.0
        k = 1
        while True:
            term = math.exp(-((2 * k - 1) ** 2) * math.pi**2 / (8 * lam**2))
            total += term
            if term < 1e-10:
                break
            k += 1
        cdf = math.sqrt(2 * math.pi) / lam * total
        return min(1.0, max(0.0, 1.0 - cdf))
    total = 0.0
    k = 1
    while True:
        term = 2 * (-1) ** (k - 1) * math.exp(-2 * k * k * lam * lam)
        total += term
        if abs(term) < 1e-10:
            break
        k += 1
    return min(1.0, max(0.0, total))


def ks_two_sample(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise EmptySample("both samples must be non-empty")
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / a.size
    cdf_b = np.searchsorted(b, grid, side="right") / b.size
    d = float(np.max(np.abs(cdf_a - cdf_b)))
    en = a.size * b.size / (a.size + b.size)
    return d, kolmogorov_sf(math.sqrt(en) * d)


# -- Mantel ------------------------------------------------------------------

def correlation_to_distance(cm: CorrelationMatrix | np.ndarray) -> np.ndarray:
    """d = 1 - |r| with a zero diagonal."""
    values = cm.values if isinstance(cm, CorrelationMatrix) else np.asarray(cm, dtype=float)
    d = 1.0 - np.abs(values)
    np.fill_diagonal(d, 0.0)
    return d


def _check_distance(m: np.ndarray, name: str) -> None:
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeMismatch(f"{name} is not square")
    if not np.allclose(m, m.T, rtol=0, atol=1e-12):
        raise NotSymmetric(f"{name} is not symmetric")
    if np.any(np.diag(m) != 0):
        raise NotSymmetric(f"{name} must have a zero diagonal")


def mantel(a, b, permutations: int = 999, *, seed: int) -> tuple[float, float]:
    """One-sided (greater) Mantel test between two distance matrices.

    Rows and columns of ``b`` are permuted together; the p-value is
    ``(1 + #{r_perm >= r_obs}) / (permutations + 1)``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_distance(a, "first matrix")
    _check_distance(b, "second matrix")
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes {a.shape} and {b.shape} differ")
    n = a.shape[0]
    if n < 3:
        raise TooFewSamples("Mantel needs at least 3x3 matrices")
    if permutations < 1:
        raise ValidationError("permutations must be >= 1")
    iu, ju = np.triu_indices(n, k=1)
    x = a[iu, ju]
    r_obs = pearson(x, b[iu, ju])
    if math.isnan(r_obs):
        return math.nan, math.nan
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(permutations):
        perm = rng.permutation(n)
        r = _pearson(x, b[perm[iu], perm[ju]])
        if r >= r_obs - 1e-12:
            hits += 1
    return r_obs, (1 + hits) / (permutations + 1)


# -- regression --------------------------------------------------------------

@dataclass(frozen=True)
class RegressionResult:
    names: tuple[str, ...]
    # intercept first, then one per predictor in ``names`` order
    coefficients: tuple[float, ...]
    r_squared: float
    adj_r_squared: float
    f_statistic: float
    n: int
    p: int

    @property
    def intercept(self) -> float:
        return self.coefficients[0]

    def coefficient(self, name: str) -> float:
        return self.coefficients[1 + self.names.index(name)]


def _back_substitute(r: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    k = r.shape[0]
    out = np.zeros(k)
    for i in range(k - 1, -1, -1):
        out[i] = (rhs[i] - r[i, i + 1 :] @ out[i + 1 :]) / r[i, i]
    return out


def ols_fit(x, y, names: Sequence[str] | None = None, rank_tol: float = 1e-10) -> RegressionResult:
    """Least squares with intercept via a Householder QR factorization."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=float).ravel()
    n, p = x.shape
    if y.size != n:
        raise LengthMismatch(f"{n} predictor rows but {y.size} targets")
    names = tuple(names) if names is not None else tuple(f"x{i}" for i in range(1, p + 1))
    if len(names) != p:
        raise LengthMismatch("one name per predictor column required")
    if n <= p + 1:
        raise TooFewSamples(f"need n > p + 1 (n={n}, p={p})")

    design = np.column_stack([np.ones(n), x])
    q, r = np.linalg.qr(design, mode="reduced")
    col_norms = np.linalg.norm(design, axis=0)
    diag = np.abs(np.diag(r))
    bad = [j for j in range(p + 1) if col_norms[j] == 0 or diag[j] <= rank_tol * col_norms[j]]
    if bad:
        labels = ("intercept",) + names
        offending = [labels[j] for j in bad]
        raise RankDeficient(f"collinear predictor columns: {', '.join(offending)}", offending)

    beta = _back_substitute(r, q.T @ y)
    resid = y - design @ beta
    sse = float(resid @ resid)
    sst = float(((y - y.mean()) ** 2).sum())
    r2 = 0.0 if sst == 0.0 else max(0.0, 1.0 - sse / sst)
    dof = n - p - 1
    adj = 1.0 - (1.0 - r2) * (n - 1) / dof
    f = math.inf if r2 == 1.0 else (r2 / p) / ((1.0 - r2) / dof)
    return RegressionResult(names, tuple(float(b) for b in beta), r2, adj, f, n, p)
