"""Loss terms of the jointly optimised beta-VAE.

Every function accepts a single record or a batch (leading axis). Batch
results are per-record values; ``total_loss`` averages them.
"""

from dataclasses import dataclass

import numpy as np

PHASES = ("pretrain", "head", "full")


@dataclass(frozen=True)
class LossWeights:
    beta: float = 4.0
    gamma: float = 500.0

    def __post_init__(self):
        from ..errors import ParameterError

        if not self.beta >= 0:
            raise ParameterError("beta", f"must be >= 0, got {self.beta}")
        if not self.gamma >= 0:
            raise ParameterError("gamma", f"must be >= 0, got {self.gamma}")


@dataclass(frozen=True)
class LossTerms:
    total: float
    mse: float
    kl: float
    bce: float

    def as_dict(self):
        return {"total": self.total, "mse": self.mse, "kl": self.kl, "bce": self.bce}


def mse_loss(x, x_hat, batched=False):
    """Mean squared error over every entry of a record.

    With ``batched=True`` the leading axis indexes records and a vector of
    per-record errors is returned.
    """
    diff = np.asarray(x_hat, dtype=float) - np.asarray(x, dtype=float)
    if batched:
        return np.mean(diff.reshape(diff.shape[0], -1) ** 2, axis=1)
    return float(np.mean(diff**2))


def kl_loss(mu, logvar):
    """KL divergence of N(mu, exp(logvar)) from the standard normal.

    Summed over the latent axis (the last one).
    """
    mu = np.asarray(mu)
    logvar = np.asarray(logvar)
    kl = 0.5 * np.sum(mu**2 + np.expm1(logvar) - logvar, axis=-1)
    return float(kl) if np.ndim(kl) == 0 else kl


def bce_loss(logit, label):
    """Binary cross-entropy on a logit, stable for any finite logit."""
    logit = np.asarray(logit, dtype=np.float64)
    label = np.asarray(label)
    out = np.log1p(np.exp(-np.abs(logit))) + np.maximum(logit, 0) - logit * label
    return float(out) if np.ndim(out) == 0 else out


def combine_terms(mse, kl, bce, weights: LossWeights, phase: str) -> float:
    """Weighted sum of already-averaged loss components for ``phase``."""
    if phase not in PHASES:
        from ..errors import ParameterError

        raise ParameterError("phase", f"unknown phase {phase!r}")
    total = mse + weights.beta * kl
    if phase != "pretrain":
        total += weights.gamma * bce
    return total


def total_loss(x, x_hat, mu, logvar, logit, label, weights: LossWeights, phase: str):
    """Weighted three-term objective averaged over the batch.

    ``pretrain`` uses MSE + beta*KL; ``head`` and ``full`` add gamma*BCE.
    Records whose label is missing (None or NaN) contribute no BCE.
    Returns ``(total, LossTerms)`` where the terms are batch means.
    """
    x = np.asarray(x, dtype=float)
    single = np.ndim(mu) == 1
    if single:
        x = x[None]
        x_hat = np.asarray(x_hat)[None]
        mu = np.asarray(mu)[None]
        logvar = np.asarray(logvar)[None]
        logit = np.atleast_1d(logit)
        label = np.atleast_1d(np.nan if label is None else label).astype(float)
    n = x.shape[0]
    mse = mse_loss(x, x_hat, batched=True)
    kl = np.atleast_1d(kl_loss(mu, logvar))
    bce = np.zeros(n)
    if phase != "pretrain":
        label = np.asarray(label, dtype=float)
        has = ~np.isnan(label)
        if has.any():
            bce[has] = np.atleast_1d(bce_loss(np.asarray(logit, dtype=float)[has], label[has]))
    m_mse, m_kl, m_bce = float(mse.mean()), float(kl.mean()), float(bce.mean())
    total = combine_terms(m_mse, m_kl, m_bce, weights, phase)
    return total, LossTerms(total, m_mse, m_kl, m_bce)
