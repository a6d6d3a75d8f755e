"""Weighted numerical primitives shared by the estimators.

Everything here is a pure function of its inputs. Weights default to ones
when omitted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import kendalltau, rankdata

from .errors import DataValidationError, DegenerateVariableError, SingularDesignError

_COLLINEAR_RTOL = 1e-10


@dataclass(frozen=True)
class WeightedSample:
    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if v.ndim != 1 or v.shape != w.shape:
            raise DataValidationError("values and weights must be 1-d and of equal length")
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise DataValidationError("weights must be strictly positive")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "weights", w)

    @classmethod
    def of(cls, values, weights=None) -> "WeightedSample":
        values = np.asarray(values, dtype=float)
        if weights is None:
            weights = np.ones_like(values)
        return cls(values, weights)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class OlsFit:
    intercept: float
    slopes: np.ndarray
    residuals: np.ndarray

    def predict(self, *x) -> float:
        return float(self.intercept + np.dot(self.slopes, x))


def weighted_mean(values, weights=None) -> float:
    s = WeightedSample.of(values, weights)
    return float(np.dot(s.weights, s.values) / s.weights.sum())


def weighted_sd(values, weights=None) -> float:
    """Population (divide by total weight) standard deviation."""
    s = WeightedSample.of(values, weights)
    m = np.dot(s.weights, s.values) / s.weights.sum()
    return float(np.sqrt(np.dot(s.weights, (s.values - m) ** 2) / s.weights.sum()))


def standardize(values, weights=None) -> np.ndarray:
    """Return ``values`` shifted and scaled to weighted mean 0, sd 1.

    Raises DegenerateVariableError when the weighted variance is zero.
    """
    s = WeightedSample.of(values, weights)
    if len(s) == 0:
        raise DegenerateVariableError("degenerate-variable: empty input")
    total = s.weights.sum()
    m = np.dot(s.weights, s.values) / total
    centered = s.values - m
    sd = np.sqrt(np.dot(s.weights, centered**2) / total)
    scale = max(1.0, float(np.max(np.abs(s.values))))
    if not np.isfinite(sd) or sd <= 1e-12 * scale:
        raise DegenerateVariableError("degenerate-variable: zero weighted variance")
    z = centered / sd
    # second pass removes the O(eps) mean left over from the first
    return z - np.dot(s.weights, z) / total


def wls(y, X, weights=None) -> OlsFit:
    """Weighted least squares of ``y`` on a constant plus the columns of ``X``.

    ``X`` may be a single vector or an (n, k) array. Solved by QR on the
    sqrt-weight scaled design, which gives the normal-equation solution
    without forming X'WX.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, k = X.shape
    if y.shape != (n,):
        raise DataValidationError("y and X row counts differ")
    w = np.ones(n) if weights is None else WeightedSample.of(y, weights).weights
    if n <= k + 1:
        raise SingularDesignError(f"singular-design: n={n} too small for {k} regressors")

    design = np.column_stack([np.ones(n), X])
    sw = np.sqrt(w)
    A = design * sw[:, None]
    b = y * sw
    q, r = np.linalg.qr(A)
    diag = np.abs(np.diag(r))
    col_norms = np.linalg.norm(A, axis=0)
    if np.any(col_norms == 0) or np.any(diag <= _COLLINEAR_RTOL * col_norms):
        raise SingularDesignError("singular-design: collinear or constant regressor")
    coef = np.linalg.solve(r, q.T @ b)
    residuals = y - design @ coef
    return OlsFit(intercept=float(coef[0]), slopes=coef[1:], residuals=residuals)


def weighted_percentile_ranks(values, weights=None) -> np.ndarray:
    """Percentile rank of each element within its weighted distribution.

    rank_i = 100 * (W_below + W_tied / 2) / W_total, where W_tied is the
    total weight of the block of values equal to value_i. Ties therefore
    share one rank and every rank lies strictly inside (0, 100).
    """
    s = WeightedSample.of(values, weights)
    if len(s) == 0:
        raise DataValidationError("percentile ranks of an empty sample")
    uniq, inverse = np.unique(s.values, return_inverse=True)
    block = np.bincount(inverse, weights=s.weights, minlength=len(uniq))
    below = np.concatenate([[0.0], np.cumsum(block)[:-1]])
    total = block.sum()
    return (100.0 * (below + block / 2.0) / total)[inverse]


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    da = a - a.mean()
    db = b - b.mean()
    denom = np.sqrt(np.dot(da, da) * np.dot(db, db))
    if denom == 0:
        raise DegenerateVariableError("degenerate-variable: zero variance in correlation input")
    return float(np.dot(da, db) / denom)


def kendall_tau_b(a, b) -> float:
    """Tie-adjusted Kendall correlation (tau-b)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise DegenerateVariableError("degenerate-variable: all values tied")
    return float(kendalltau(a, b, variant="b").statistic)


def correlations(a, b) -> tuple[float, float, float]:
    """(Pearson, Spearman, Kendall tau-b) between two aligned vectors."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise DataValidationError("correlations need two equal-length vectors of length >= 2")
    p = pearson(a, b)
    s = pearson(rankdata(a, method="average"), rankdata(b, method="average"))
    k = kendall_tau_b(a, b)
    return p, s, k
