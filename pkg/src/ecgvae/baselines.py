"""Comparators: PCA features, elastic-net logistic regression, sex+age.

PCA works on flattened 12 x 400 beats. Explained variances use the
population normalisation (divide by n), so the mean squared norm of the
reconstruction residual equals total variance minus the retained variance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DataError, ParameterError


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray  # (d,)
    components: np.ndarray  # (k, d), orthonormal rows
    explained_variance: np.ndarray  # (k,), non-increasing
    total_variance: float

    @property
    def k(self) -> int:
        return self.components.shape[0]


def _flatten(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x.reshape(x.shape[0], -1) if x.ndim > 2 else np.atleast_2d(x)


def pca_fit(x, k: int) -> PcaModel:
    """Top-``k`` principal components from the SVD of the centred data.

    Each component's largest-magnitude entry is made positive.
    """
    x = _flatten(x)
    n = x.shape[0]
    if not 1 <= k < n:
        raise ParameterError("k", f"need 1 <= k < n_samples={n}, got {k}")
    mean = x.mean(axis=0)
    xc = x - mean
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    comps = vt[:k].copy()
    lead = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(k), lead])
    comps *= np.where(signs == 0, 1.0, signs)[:, None]
    var = s**2 / n
    return PcaModel(mean, comps, var[:k].copy(), float(np.sum(xc**2) / n))


def pca_transform(model: PcaModel, x) -> np.ndarray:
    """Codes of one flattened beat (returns a k-vector) or of a batch."""
    x = np.asarray(x, dtype=float)
    d = model.mean.size
    # a lone 12 x 400 beat counts as a single record, (1, d) as a batch
    single = x.ndim == 1 or (x.size == d and x.shape[-1] != d)
    flat = x.reshape(1, -1) if single else _flatten(x)
    codes = (flat - model.mean) @ model.components.T
    return codes[0] if single else codes


def pca_inverse(model: PcaModel, codes) -> np.ndarray:
    codes = np.asarray(codes, dtype=float)
    return model.mean + codes @ model.components


def pca_reconstruction_mse(model: PcaModel, x) -> float:
    """Mean squared error over every entry after projecting onto the
    components and back."""
    flat = _flatten(x)
    rec = pca_inverse(model, pca_transform(model, flat))
    return float(np.mean((flat - rec) ** 2))


# ----------------------------------------------------------------------------
# elastic-net logistic regression


@dataclass(frozen=True)
class LogRegModel:
    coef: np.ndarray  # on standardised features
    intercept: float
    l1_weight: float
    l2_weight: float
    feature_mean: np.ndarray
    feature_std: np.ndarray
    n_iter: int = 0
    objective: float = np.nan

    def standardize(self, features) -> np.ndarray:
        return (np.atleast_2d(np.asarray(features, dtype=float)) - self.feature_mean) / self.feature_std


def _bce_mean(score, y) -> float:
    return float(np.mean(np.logaddexp(0.0, score) - y * score))


def logreg_objective(coef, intercept, xs, y, l1, l2) -> float:
    """Mean BCE + l1*|w|_1 + l2*|w|_2^2/2 on already standardised features."""
    coef = np.asarray(coef, dtype=float)
    return _bce_mean(xs @ coef + intercept, y) + l1 * np.sum(np.abs(coef)) + 0.5 * l2 * np.dot(coef, coef)


def _soft_threshold(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def logreg_fit(features, labels, l1_weight: float = 1e-3, l2_weight: float = 1e-3,
               max_iter: int = 20000, tol: float = 1e-12) -> LogRegModel:
    """Proximal gradient with backtracking on the standardised features.

    The smooth part (mean BCE + l2 term) takes a gradient step; the l1 term
    is handled by soft-thresholding. The intercept is unpenalised. Each
    accepted step satisfies the sufficient-decrease condition, so the
    objective never increases; iteration stops once it drops by less than
    ``tol`` in one step.
    """
    x = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(labels, dtype=float).ravel()
    if x.shape[0] != y.size:
        raise ParameterError("labels", f"{y.size} labels for {x.shape[0]} rows")
    if x.shape[1] < 1:
        raise ParameterError("features", "need at least one feature column")
    if l1_weight < 0 or l2_weight < 0:
        raise ParameterError("l1_weight" if l1_weight < 0 else "l2_weight", "must be >= 0")
    if not np.all(np.isin(y, (0.0, 1.0))) or np.unique(y).size < 2:
        raise DataError("logistic regression needs binary labels with both classes present")
    if not np.all(np.isfinite(x)):
        raise DataError("features contain non-finite values")

    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    xs = (x - mean) / std
    n, d = xs.shape

    def smooth(theta):
        w, b = theta[:d], theta[d]
        s = xs @ w + b
        val = _bce_mean(s, y) + 0.5 * l2_weight * np.dot(w, w)
        r = (expit(s) - y) / n
        grad = np.append(xs.T @ r + l2_weight * w, r.sum())
        return val, grad

    def prox(theta, step):
        out = theta.copy()
        out[:d] = _soft_threshold(theta[:d], step * l1_weight)
        return out

    theta = np.zeros(d + 1)
    base = y.mean()
    theta[d] = np.log(base / (1 - base))
    f, g = smooth(theta)
    obj = f + l1_weight * np.sum(np.abs(theta[:d]))
    lip = 1.0
    it = 0
    for it in range(1, max_iter + 1):
        lip = max(lip * 0.5, 1e-8)
        while True:
            cand = prox(theta - g / lip, 1.0 / lip)
            diff = cand - theta
            f_c, g_c = smooth(cand)
            if f_c <= f + g @ diff + 0.5 * lip * (diff @ diff) + 1e-15 * abs(f):
                break
            lip *= 2.0
        obj_c = f_c + l1_weight * np.sum(np.abs(cand[:d]))
        if obj_c > obj:  # rounding-level ascent: keep the better point
            break
        decrease = obj - obj_c
        theta, f, g, obj = cand, f_c, g_c, obj_c
        if decrease < tol:
            break
    return LogRegModel(theta[:d].copy(), float(theta[d]), float(l1_weight), float(l2_weight),
                       mean, std, it, float(obj))


def logreg_predict_proba(model: LogRegModel, features) -> np.ndarray:
    return expit(model.standardize(features) @ model.coef + model.intercept)


def sex_age_table(data) -> np.ndarray:
    """(n, 2) table of sex and age from anything carrying ``sex``/``age``
    arrays (a BeatSet or FeatureTable) or a list of records."""
    if hasattr(data, "sex") and isinstance(data.sex, np.ndarray):
        return np.column_stack([data.sex, data.age]).astype(float)
    return np.array([[r.sex, r.age] for r in data], dtype=float)


def _labels_of(data) -> np.ndarray:
    if hasattr(data, "labels"):
        return np.asarray(data.labels, dtype=float)
    return np.array([np.nan if r.label is None else r.label for r in data], dtype=float)


def sex_age_baseline(train, test, l1_weight: float = 1e-3, l2_weight: float = 1e-3):
    """Fit on the training fold's (sex, age) and score the test records.

    Returns ``(probabilities, model)``.
    """
    y = _labels_of(train)
    keep = ~np.isnan(y)
    model = logreg_fit(sex_age_table(train)[keep], y[keep], l1_weight, l2_weight)
    return logreg_predict_proba(model, sex_age_table(test)), model
