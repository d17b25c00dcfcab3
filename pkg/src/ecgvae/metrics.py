"""Reconstruction and prediction metrics, AUROC statistics, traversals."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .errors import DataError, ParameterError

Z95 = 1.959963984540054
SE_FLOOR = 1e-12


def reconstruction_metrics(x, x_hat) -> tuple[float, float]:
    """(MSE over every entry, mean per-record Pearson correlation).

    A single record may be passed as any-shaped array; with a leading
    record axis of length > 1 (3-D input) each record is correlated on its
    flattened samples and the correlations are averaged.
    """
    x = np.asarray(x, dtype=float)
    x_hat = np.asarray(x_hat, dtype=float)
    if x.shape != x_hat.shape:
        raise ParameterError("x_hat", f"shape {x_hat.shape} differs from {x.shape}")
    mse = float(np.mean((x - x_hat) ** 2))
    rows = x.reshape(x.shape[0], -1) if x.ndim == 3 else x.reshape(1, -1)
    rows_hat = x_hat.reshape(rows.shape)
    a = rows - rows.mean(axis=1, keepdims=True)
    b = rows_hat - rows_hat.mean(axis=1, keepdims=True)
    denom = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    corr = np.where(denom > 0, np.sum(a * b, axis=1) / np.where(denom > 0, denom, 1.0), 0.0)
    return mse, float(np.mean(corr))


@dataclass(frozen=True)
class RocResult:
    auroc: float
    se: float
    ci95: tuple[float, float]
    n_pos: int
    n_neg: int

    def to_dict(self):
        d = asdict(self)
        d["ci95"] = list(self.ci95)
        return d


def _split_classes(scores, labels):
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).ravel()
    if scores.size != labels.size:
        raise ParameterError("labels", f"{labels.size} labels for {scores.size} scores")
    if not np.all(np.isin(labels, (0, 1))):
        raise DataError("labels must be 0 or 1")
    pos, neg = scores[labels == 1], scores[labels == 0]
    if pos.size == 0 or neg.size == 0:
        raise DataError("AUROC needs both classes")
    return scores, labels, pos, neg


def auc_value(scores, labels) -> float:
    """Mann-Whitney AUC from average ranks; ties count one half."""
    scores, labels, pos, neg = _split_classes(scores, labels)
    ranks = stats.rankdata(scores)
    # rank sums are multiples of 1/2, so the numerator is exact
    u = ranks[labels == 1].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def hanley_mcneil_se(a: float, n_pos: int, n_neg: int) -> float:
    q1 = a / (2.0 - a)
    q2 = 2.0 * a * a / (1.0 + a)
    var = (a * (1 - a) + (n_pos - 1) * (q1 - a * a) + (n_neg - 1) * (q2 - a * a)) / (n_pos * n_neg)
    return float(math.sqrt(max(var, 0.0)))


def auroc(scores, labels) -> RocResult:
    _, _, pos, neg = _split_classes(scores, labels)
    a = auc_value(scores, labels)
    se = hanley_mcneil_se(a, pos.size, neg.size)
    lo, hi = max(0.0, a - Z95 * se), min(1.0, a + Z95 * se)
    return RocResult(a, se, (lo, hi), int(pos.size), int(neg.size))


def _pearson(a, b) -> float:
    a = a - a.mean()
    b = b - b.mean()
    den = np.linalg.norm(a) * np.linalg.norm(b)
    return float(a @ b / den) if den > 0 else 0.0


def auroc_paired_test(scores_a, scores_b, labels) -> tuple[float, float]:
    """Correlated-AUC comparison of two classifiers on one test set.

    r is the mean of the within-positive and within-negative Pearson
    correlations of the two score vectors, used directly in place of the
    tabulated conversion. Returns (z, two-sided p).
    """
    sa = np.asarray(scores_a, dtype=float).ravel()
    sb = np.asarray(scores_b, dtype=float).ravel()
    if sa.size != sb.size:
        raise ParameterError("scores_b", "score vectors differ in length")
    ra, rb = auroc(sa, labels), auroc(sb, labels)
    lab = np.asarray(labels).ravel()
    r = 0.5 * (_pearson(sa[lab == 1], sb[lab == 1]) + _pearson(sa[lab == 0], sb[lab == 0]))
    var = ra.se**2 + rb.se**2 - 2 * r * ra.se * rb.se
    denom = math.sqrt(max(var, SE_FLOOR**2))
    z = (ra.auroc - rb.auroc) / denom
    if abs(z) < SE_FLOOR:
        return 0.0, 1.0
    return float(z), float(2 * stats.norm.sf(abs(z)))


def _f1(tp, fp, fn) -> float:
    if tp + fp + fn == 0:
        return 1.0
    return 2 * tp / (2 * tp + fp + fn)


def macro_f1(scores, labels, threshold: float = 0.5) -> float:
    """Unweighted mean of the per-class F1 scores at ``score >= threshold``.

    A class with neither predicted nor true members scores 1, one with
    members on only one side scores 0.
    """
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).ravel().astype(int)
    pred = (scores >= threshold).astype(int)
    out = []
    for c in (0, 1):
        tp = int(np.sum((pred == c) & (labels == c)))
        fp = int(np.sum((pred == c) & (labels != c)))
        fn = int(np.sum((pred != c) & (labels == c)))
        out.append(_f1(tp, fp, fn))
    return float(np.mean(out))


# ----------------------------------------------------------------------------
# traversals


@dataclass
class TraversalGrid:
    feature_index: int
    values: np.ndarray
    decoded: np.ndarray  # (n_steps, 12, 400), mV

    def to_csv(self, path, meta: dict | None = None):
        """One waveform per row (value, then the flattened beat); metadata
        goes into a leading ``#`` comment line as JSON."""
        header = {"feature_index": self.feature_index, "n_steps": len(self.values),
                  "shape": list(self.decoded.shape[1:]), **(meta or {})}
        with open(path, "w", newline="") as fh:
            fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
            w = csv.writer(fh)
            w.writerow(["value"] + [f"s{i}" for i in range(int(np.prod(self.decoded.shape[1:])))])
            for v, wave in zip(self.values, self.decoded):
                w.writerow([repr(float(v))] + [repr(float(s)) for s in wave.ravel()])


def latent_stats(z) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature mean and population std of eval-mode codes."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    return z.mean(axis=0), z.std(axis=0)


def factor_traversal(params, feature_index: int, latent_mean, latent_std, n_steps: int = 7) -> TraversalGrid:
    """Decode mu_f + sigma_f * linspace(-3, 3, n_steps) along feature f with
    every other latent entry pinned at its training mean."""
    from .vae.model import decode

    latent_mean = np.asarray(latent_mean, dtype=float)
    latent_std = np.asarray(latent_std, dtype=float)
    L = params.arch.latent_dim
    if not 0 <= feature_index < L:
        raise ParameterError("feature_index", f"{feature_index} outside [0, {L})")
    if latent_mean.shape != (L,) or latent_std.shape != (L,):
        raise ParameterError("latent_stats", f"expected length {L}")
    if n_steps < 1:
        raise ParameterError("n_steps", "must be >= 1")
    values = latent_mean[feature_index] + latent_std[feature_index] * np.linspace(-3.0, 3.0, n_steps)
    z = np.tile(latent_mean, (n_steps, 1))
    z[:, feature_index] = values
    decoded = np.asarray(decode(params, z), dtype=float) / params.arch.signal_scale
    return TraversalGrid(feature_index, values, decoded)


# ----------------------------------------------------------------------------
# reports

REPORT_FIELDS = ("config", "fold", "mse", "correlation", "auroc", "auroc_se", "ci_lo", "ci_hi",
                 "macro_f1", "n_pos", "n_neg", "p_value", "p_value_vs")


def prediction_row(config: str, fold, probs, labels, x=None, x_hat=None, threshold: float = 0.5) -> dict:
    """One report row: reconstruction metrics (when given) and prediction
    metrics of ``probs`` against ``labels``."""
    roc = auroc(probs, labels)
    row = {"config": config, "fold": str(fold), "mse": None, "correlation": None,
           "auroc": roc.auroc, "auroc_se": roc.se, "ci_lo": roc.ci95[0], "ci_hi": roc.ci95[1],
           "macro_f1": macro_f1(probs, labels, threshold), "n_pos": roc.n_pos, "n_neg": roc.n_neg,
           "p_value": None, "p_value_vs": None}
    if x is not None and x_hat is not None:
        row["mse"], row["correlation"] = reconstruction_metrics(x, x_hat)
    return row


def mean_rows(rows: list[dict]) -> list[dict]:
    """Per-config mean over the numeric fold rows (fold = 'mean')."""
    out = []
    for cfg in dict.fromkeys(r["config"] for r in rows if r["fold"] not in ("mean", "pooled")):
        sel = [r for r in rows if r["config"] == cfg and r["fold"] not in ("mean", "pooled")]
        m = {"config": cfg, "fold": "mean", "p_value_vs": sel[0].get("p_value_vs")}
        for k in ("mse", "correlation", "auroc", "auroc_se", "ci_lo", "ci_hi", "macro_f1", "p_value"):
            vals = [r[k] for r in sel if r.get(k) is not None]
            m[k] = float(np.mean(vals)) if vals else None
        for k in ("n_pos", "n_neg"):
            m[k] = sel[0][k]
        out.append(m)
    return out


def write_report(rows: list[dict], json_path=None, csv_path=None, meta: dict | None = None):
    if json_path is not None:
        with open(json_path, "w") as fh:
            json.dump({"meta": meta or {}, "rows": rows}, fh, indent=1, sort_keys=True)
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(REPORT_FIELDS))
            w.writeheader()
            for r in rows:
                w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in REPORT_FIELDS})
