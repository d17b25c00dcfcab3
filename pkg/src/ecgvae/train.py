"""Patient-grouped splits, balanced batches and the three training stages.

Stages share one loop: AdamW with decoupled weight decay, global-norm
gradient clipping, eval-mode validation after every epoch, and early
stopping on the phase's total validation loss. ``finetune_head`` trains the
affine head on frozen eval-mode features; ``finetune_full`` updates every
block with the three-term loss.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import DataError, NumericError, ParameterError
from .prep import MeanBeat
from .vae import model as vm
from .vae.losses import LossWeights, combine_terms

log = logging.getLogger(__name__)


# ----------------------------------------------------------------------------
# data containers


@dataclass
class BeatSet:
    """Column-wise view of a list of MeanBeats.

    ``x`` holds the averaged beats in mV, ``rr`` the raw RR statistics in ms
    and ``labels`` float labels with NaN for unlabeled records.
    """

    x: np.ndarray
    rr: np.ndarray
    labels: np.ndarray
    patient_ids: np.ndarray
    sex: np.ndarray
    age: np.ndarray

    @classmethod
    def from_mean_beats(cls, beats: list[MeanBeat]) -> "BeatSet":
        if not beats:
            raise DataError("no mean beats")
        return cls(
            x=np.stack([b.samples for b in beats]).astype(np.float32),
            rr=np.array([[b.rr_mean_ms, b.rr_std_ms] for b in beats], dtype=float),
            labels=np.array([np.nan if b.label is None else float(b.label) for b in beats]),
            patient_ids=np.array([b.patient_id for b in beats]),
            sex=np.array([b.sex for b in beats], dtype=float),
            age=np.array([b.age for b in beats], dtype=float),
        )

    def __len__(self):
        return self.x.shape[0]

    def subset(self, idx) -> "BeatSet":
        idx = np.asarray(idx, dtype=int)
        return BeatSet(self.x[idx], self.rr[idx], self.labels[idx], self.patient_ids[idx],
                       self.sex[idx], self.age[idx])

    def select_patients(self, patient_ids) -> "BeatSet":
        return self.subset(np.flatnonzero(np.isin(self.patient_ids, list(patient_ids))))

    @property
    def has_labels(self) -> bool:
        return bool(np.any(~np.isnan(self.labels)))

    def unlabeled(self) -> "BeatSet":
        return replace(self, labels=np.full(len(self), np.nan))


def rr_stats(rr) -> np.ndarray:
    """2 x 2 array [mean; std] of the RR features, std floored at 1 ms."""
    rr = np.asarray(rr, dtype=float)
    return np.stack([rr.mean(axis=0), np.maximum(rr.std(axis=0), 1.0)])


def make_batch(params: vm.VaeParams, data: BeatSet, idx=None) -> vm.Batch:
    d = data if idx is None else data.subset(idx)
    dt = params.dtype
    return vm.Batch(
        x=(d.x * params.arch.signal_scale).astype(dt),
        rr=params.standardize_rr(d.rr).astype(dt),
        labels=d.labels.astype(float),
    )


# ----------------------------------------------------------------------------
# splits


@dataclass
class SplitPlan:
    test_patient_ids: list[str]
    folds: list[dict]  # {"train": [...], "validation": [...]}
    seed: int = 0
    ratio: float = 0.85

    def fold(self, k: int) -> dict:
        if not 0 <= k < len(self.folds):
            raise ParameterError("fold", f"{k} outside [0, {len(self.folds)})")
        return self.folds[k]

    def pool_patient_ids(self) -> list[str]:
        f = self.folds[0]
        return sorted(set(f["train"]) | set(f["validation"]))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "SplitPlan":
        return cls(list(d["test_patient_ids"]), [dict(train=list(f["train"]), validation=list(f["validation"]))
                                                 for f in d["folds"]], int(d.get("seed", 0)), float(d.get("ratio", 0.85)))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path) -> "SplitPlan":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _patient_labels(items) -> dict:
    """patient_id -> label (None for unlabeled); one label per patient."""
    labels: dict = {}
    for it in items:
        lab = getattr(it, "label", None)
        lab = None if lab is None or (isinstance(lab, float) and np.isnan(lab)) else int(lab)
        if it.patient_id in labels and labels[it.patient_id] != lab:
            raise DataError(f"patient {it.patient_id} carries conflicting labels")
        labels[it.patient_id] = lab
    return labels


def _largest_remainder(total: int, sizes: dict) -> dict:
    n = sum(sizes.values())
    exact = {k: total * v / n for k, v in sizes.items()}
    alloc = {k: int(np.floor(e)) for k, e in exact.items()}
    for k in sorted(exact, key=lambda k: (-(exact[k] - alloc[k]), str(k)))[: total - sum(alloc.values())]:
        alloc[k] += 1
    return alloc


def make_splits(records, ratio: float = 0.85, n_folds: int = 5, seed: int = 0) -> SplitPlan:
    """Patient-grouped, label-stratified test holdout plus k-fold CV.

    ``records`` are EcgRecords or MeanBeats (anything with ``patient_id`` and
    ``label``). ``round((1 - ratio) * n_patients)`` patients go to the test
    set, allocated across label classes by largest remainder. The remaining
    pool is dealt class by class into ``n_folds`` validation blocks; fold k
    trains on the other blocks.
    """
    if not 0 < ratio < 1:
        raise ParameterError("ratio", "must lie strictly between 0 and 1")
    if n_folds < 2:
        raise ParameterError("n_folds", "must be >= 2")
    labels = _patient_labels(records)
    strata: dict = {}
    for pid in sorted(labels):
        strata.setdefault(labels[pid], []).append(pid)
    labeled = [k for k in strata if k is not None]
    if labeled:
        if set(labeled) != {0, 1}:
            raise DataError("labeled data must contain both classes")
        for k in labeled:
            if len(strata[k]) < 2:
                raise DataError(f"class {k} has {len(strata[k])} patients, need >= 2")
    if len(labels) < n_folds + 1:
        raise DataError(f"{len(labels)} patients cannot form {n_folds} folds and a test set")

    rng = np.random.default_rng(seed)
    n_test = int(round((1 - ratio) * len(labels)))
    alloc = _largest_remainder(n_test, {k: len(v) for k, v in strata.items()})
    test, pool = [], {}
    for k in sorted(strata, key=str):
        ids = [strata[k][i] for i in rng.permutation(len(strata[k]))]
        test += ids[: alloc[k]]
        pool[k] = ids[alloc[k]:]

    blocks: list[list[str]] = [[] for _ in range(n_folds)]
    offset = 0
    for k in sorted(pool, key=str):
        # continue dealing where the previous class stopped so block sizes
        # differ by at most one patient
        for i, pid in enumerate(pool[k]):
            blocks[(offset + i) % n_folds].append(pid)
        offset += len(pool[k])
    folds = []
    for k in range(n_folds):
        val = sorted(blocks[k])
        train = sorted(pid for j, b in enumerate(blocks) if j != k for pid in b)
        folds.append({"train": train, "validation": val})
    return SplitPlan(sorted(test), folds, int(seed), float(ratio))


# ----------------------------------------------------------------------------
# sampling


def balanced_batches(labels, batch_size: int, rng: np.random.Generator):
    """Index batches for one epoch.

    With labels, every majority-class item appears exactly once and the
    minority class is oversampled to the same count (whole shuffled copies
    plus a draw without replacement for the remainder), so the expected
    share of each class per batch is one half. Unlabeled data (any NaN
    label) gives plain shuffled batches.
    """
    if batch_size < 1:
        raise ParameterError("batch_size", "must be >= 1")
    labels = np.asarray(labels, dtype=float)
    if labels.size == 0:
        return []
    if np.isnan(labels).any() or np.unique(labels).size < 2:
        order = rng.permutation(labels.size)
    else:
        pos, neg = np.flatnonzero(labels == 1), np.flatnonzero(labels == 0)
        major, minor = (neg, pos) if neg.size >= pos.size else (pos, neg)
        reps, rem = divmod(major.size, minor.size)
        parts = [rng.permutation(minor) for _ in range(reps)]
        parts.append(rng.choice(minor, size=rem, replace=False))
        order = rng.permutation(np.concatenate([major, *parts]))
    return [order[i:i + batch_size] for i in range(0, order.size, batch_size)]


# ----------------------------------------------------------------------------
# optimisation


@dataclass(frozen=True)
class TrainConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 64
    patience_epochs: int = 25
    clip_norm: float = 1.0
    max_epochs: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.patience_epochs < 1:
            raise ParameterError("patience_epochs", "must be >= 1")
        if not self.clip_norm > 0:
            raise ParameterError("clip_norm", "must be > 0")
        if not self.learning_rate >= 0:
            raise ParameterError("learning_rate", "must be >= 0")
        if not self.weight_decay >= 0:
            raise ParameterError("weight_decay", "must be >= 0")
        if self.batch_size < 1:
            raise ParameterError("batch_size", "must be >= 1")
        if self.max_epochs < 1:
            raise ParameterError("max_epochs", "must be >= 1")

    def to_dict(self):
        d = asdict(self)
        d["weights"] = asdict(self.weights)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["weights"] = LossWeights(**d.get("weights", {}))
        return cls(**d)


def clip_gradients(grads: dict, clip_norm: float):
    """Scale all gradients by min(1, clip_norm / global_norm).

    Returns ``(clipped, norm_before)``.
    """
    norm = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))
    if not np.isfinite(norm):
        raise NumericError("gradient", "non-finite gradient norm")
    scale = min(1.0, clip_norm / norm) if norm > 0 else 1.0
    if scale == 1.0:
        return grads, norm
    return {k: g * np.asarray(scale, dtype=g.dtype) for k, g in grads.items()}, norm


class AdamW:
    """Adam with decoupled weight decay, updating only the named blocks."""

    def __init__(self, params: vm.VaeParams, names, lr=1e-3, weight_decay=1e-4,
                 beta1=0.9, beta2=0.999, eps=1e-8):
        self.names = list(names)
        self.lr, self.wd = lr, weight_decay
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(params[k]) for k in self.names}
        self.v = {k: np.zeros_like(params[k]) for k in self.names}

    def step(self, params: vm.VaeParams, grads: dict) -> vm.VaeParams:
        """New parameter value after one update (input is not modified)."""
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        tensors = dict(params.tensors)
        for k in self.names:
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            p = params[k]
            upd = (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            tensors[k] = (p - self.lr * self.wd * p - self.lr * upd).astype(p.dtype)
        return vm.VaeParams(params.arch, tensors, params.rr_stats.copy())


class EarlyStopping:
    """Tracks the best validation loss and the parameters that produced it.

    Improvement means strictly below the running minimum; ``step`` returns
    True once ``patience`` epochs passed without one.
    """

    def __init__(self, patience: int):
        self.patience = patience
        self.best_loss = np.inf
        self.best_epoch = -1
        self.best_state = None
        self.bad_epochs = 0

    def step(self, epoch: int, loss: float, state) -> bool:
        if loss < self.best_loss:
            self.best_loss, self.best_epoch, self.best_state = loss, epoch, state
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


@dataclass
class TrainLog:
    phase: str
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    stop_reason: str = ""

    def to_jsonl(self) -> str:
        lines = [json.dumps({"phase": self.phase, **e}, sort_keys=True) for e in self.epochs]
        lines.append(json.dumps({"phase": self.phase, "best_epoch": self.best_epoch,
                                 "stop_reason": self.stop_reason}, sort_keys=True))
        return "\n".join(lines) + "\n"

    def val_series(self, term="total"):
        return [e["validation"][term] for e in self.epochs]


# ----------------------------------------------------------------------------
# evaluation helpers


def evaluate_loss(params: vm.VaeParams, data: BeatSet, weights: LossWeights, phase: str,
                  chunk: int = 256) -> dict:
    """Eval-mode loss terms averaged over every record of ``data``."""
    sums = {"mse": 0.0, "kl": 0.0, "bce": 0.0}
    n = len(data)
    for i in range(0, n, chunk):
        idx = np.arange(i, min(n, i + chunk))
        lt, _ = vm.loss_and_grads(params, make_batch(params, data, idx), weights, phase, need_grads=False)
        for k in sums:
            sums[k] += getattr(lt, k) * idx.size
    terms = {k: v / n for k, v in sums.items()}
    terms["total"] = float(combine_terms(terms["mse"], terms["kl"], terms["bce"], weights, phase))
    return terms


def _finite_or_raise(terms: dict):
    for k, v in terms.items():
        if not np.isfinite(v):
            log.error("non-finite %s loss: %r", k, terms)
            raise NumericError(k)


def _run(params: vm.VaeParams, train: BeatSet, val: BeatSet, config: TrainConfig, phase: str,
         mask: str, epoch_fn, log_fh=None) -> tuple[vm.VaeParams, TrainLog]:
    names = list(vm.head_names()) if mask == "head_only" else list(params.tensors)
    opt = AdamW(params, names, config.learning_rate, config.weight_decay)
    rng = np.random.default_rng(config.seed)
    stopper = EarlyStopping(config.patience_epochs)
    tlog = TrainLog(phase)
    stop_reason = "max_epochs"
    for epoch in range(config.max_epochs):
        params, train_terms, val_terms = epoch_fn(params, opt, rng)
        _finite_or_raise(train_terms)
        _finite_or_raise(val_terms)
        entry = {"epoch": epoch, "train": train_terms, "validation": val_terms}
        tlog.epochs.append(entry)
        if log_fh is not None:
            log_fh.write(json.dumps({"phase": phase, **entry}, sort_keys=True) + "\n")
        log.debug("%s epoch %d train %.4f val %.4f", phase, epoch, train_terms["total"], val_terms["total"])
        if stopper.step(epoch, val_terms["total"], params):
            stop_reason = "patience"
            break
    tlog.best_epoch = stopper.best_epoch
    tlog.stop_reason = stop_reason
    log.info("%s stopped (%s) after %d epochs, best epoch %d, val %.4f", phase, stop_reason,
             len(tlog.epochs), stopper.best_epoch, stopper.best_loss)
    return stopper.best_state, tlog


def _gradient_epoch(train: BeatSet, val: BeatSet, config: TrainConfig, phase: str):
    """Epoch function for the pretraining and end-to-end phases."""
    weights = config.weights

    def epoch_fn(params, opt, rng):
        sums = {"mse": 0.0, "kl": 0.0, "bce": 0.0}
        batches = balanced_batches(train.labels, config.batch_size, rng)
        seen = 0
        for idx in batches:
            batch = make_batch(params, train, idx)
            noise = vm.sample_noise(params.arch, len(idx), rng, params.dtype)
            lt, grads = vm.loss_and_grads(params, batch, weights, phase, "all", noise)
            grads, _ = clip_gradients(grads, config.clip_norm)
            params = opt.step(params, grads)
            for k in sums:
                sums[k] += getattr(lt, k) * len(idx)
            seen += len(idx)
        tr = {k: v / seen for k, v in sums.items()}
        tr["total"] = float(combine_terms(tr["mse"], tr["kl"], tr["bce"], weights, phase))
        return params, tr, evaluate_loss(params, val, weights, phase)

    return epoch_fn


def _with_rr_stats(params: vm.VaeParams, train: BeatSet) -> vm.VaeParams:
    out = params.copy()
    out.rr_stats = rr_stats(train.rr)
    return out


def pretrain(params: vm.VaeParams, train: BeatSet, val: BeatSet, config: TrainConfig,
             log_fh=None) -> tuple[vm.VaeParams, TrainLog]:
    """Self-supervised stage: MSE + beta*KL, labels ignored."""
    train, val = train.unlabeled(), val.unlabeled()
    params = _with_rr_stats(params, train)
    return _run(params, train, val, config, "pretrain", "all",
                _gradient_epoch(train, val, config, "pretrain"), log_fh)


def _require_labels(data: BeatSet, what: str):
    lab = data.labels[~np.isnan(data.labels)]
    if np.unique(lab).size < 2:
        raise DataError(f"{what} needs both label classes")


def finetune_head(params: vm.VaeParams, train: BeatSet, val: BeatSet, config: TrainConfig,
                  log_fh=None) -> tuple[vm.VaeParams, TrainLog]:
    """Train only the head on frozen eval-mode features.

    Encoder and decoder are untouched, so MSE and KL are constants of the
    data; they are computed once and added to every logged total.
    """
    _require_labels(train, "finetune_head")
    params = _with_rr_stats(params, train)
    weights = config.weights

    z_tr, mse_tr, kl_tr = _chunked_frozen(params, train)
    z_va, mse_va, kl_va = _chunked_frozen(params, val)
    rr_tr = params.standardize_rr(train.rr).astype(params.dtype)
    rr_va = params.standardize_rr(val.rr).astype(params.dtype)

    def head_terms(p, z, rr, labels):
        logit, head_in = vm.head_forward(p, z, rr)
        lg = logit.astype(float)
        has = ~np.isnan(labels)
        bce = np.zeros(labels.size)
        bce[has] = np.log1p(np.exp(-np.abs(lg[has]))) + np.maximum(lg[has], 0) - lg[has] * labels[has]
        return lg, head_in, has, bce

    def epoch_fn(p, opt, rng):
        bsum, seen = 0.0, 0
        for idx in balanced_batches(train.labels, config.batch_size, rng):
            lg, head_in, has, bce = head_terms(p, z_tr[idx], rr_tr[idx], train.labels[idx])
            n = idx.size
            dlogit = np.zeros(n, dtype=p.dtype)
            if weights.gamma != 0:
                sig = 1.0 / (1.0 + np.exp(-lg[has]))
                dlogit[has] = weights.gamma * (sig - train.labels[idx][has]) / n
            grads = {"head.w": head_in.T @ dlogit, "head.b": np.array([dlogit.sum()], dtype=p.dtype)}
            grads, _ = clip_gradients(grads, config.clip_norm)
            p = opt.step(p, grads)
            bsum += bce.sum()
            seen += n
        tr = {"mse": mse_tr, "kl": kl_tr, "bce": bsum / seen}
        tr["total"] = float(combine_terms(mse_tr, kl_tr, tr["bce"], weights, "head"))
        _, _, _, bce_v = head_terms(p, z_va, rr_va, val.labels)
        va = {"mse": mse_va, "kl": kl_va, "bce": float(bce_v.mean())}
        va["total"] = float(combine_terms(mse_va, kl_va, va["bce"], weights, "head"))
        return p, tr, va

    return _run(params, train, val, config, "head", "head_only", epoch_fn, log_fh)


def _chunked_frozen(params, data, chunk=256):
    zs, mse_sum, kl_sum = [], 0.0, 0.0
    scale = params.arch.signal_scale
    for i in range(0, len(data), chunk):
        d = data.subset(np.arange(i, min(len(data), i + chunk)))
        b = make_batch(params, d)
        fr = vm.forward(params, b.x, b.rr)
        zs.append(fr.z)
        diff = (fr.x_hat - d.x * scale).reshape(len(d), -1).astype(float)
        mse_sum += float(np.sum(np.mean(diff**2, axis=1)))
        mu, lv = fr.mu.astype(float), fr.logvar.astype(float)
        kl_sum += float(np.sum(0.5 * np.sum(mu**2 + np.expm1(lv) - lv, axis=1)))
    return np.concatenate(zs), mse_sum / len(data), kl_sum / len(data)


def finetune_full(params: vm.VaeParams, train: BeatSet, val: BeatSet, config: TrainConfig,
                  log_fh=None) -> tuple[vm.VaeParams, TrainLog]:
    """End-to-end stage with the three-term loss.

    Split-task behaviour follows from the architecture: with
    ``pred_dim < latent_dim`` the head reads only the first ``pred_dim``
    latent entries, so BCE gradients never reach the others.
    """
    _require_labels(train, "finetune_full")
    params = _with_rr_stats(params, train)
    return _run(params, train, val, config, "full", "all",
                _gradient_epoch(train, val, config, "full"), log_fh)


# ----------------------------------------------------------------------------
# features


FEATURE_META = ("rr_mean", "rr_std", "sex", "age", "label", "patient_id")


@dataclass
class FeatureTable:
    """Per-record feature rows: latent means, RR statistics, demographics."""

    z: np.ndarray
    rr: np.ndarray
    sex: np.ndarray
    age: np.ndarray
    labels: np.ndarray
    patient_ids: np.ndarray

    @property
    def columns(self) -> list[str]:
        return [f"z{i}" for i in range(self.z.shape[1])] + list(FEATURE_META)

    def features(self) -> np.ndarray:
        """Model inputs for logistic regression: z columns plus RR stats."""
        return np.hstack([self.z, self.rr])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns)
            for i in range(self.z.shape[0]):
                lab = "" if np.isnan(self.labels[i]) else int(self.labels[i])
                w.writerow([repr(float(v)) for v in self.z[i]] + [repr(float(self.rr[i, 0])), repr(float(self.rr[i, 1])),
                           int(self.sex[i]), int(self.age[i]), lab, self.patient_ids[i]])

    @classmethod
    def read_csv(cls, path) -> "FeatureTable":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise DataError(f"{path}: empty feature table")
        header, body = rows[0], rows[1:]
        nz = sum(1 for c in header if c.startswith("z"))
        if header != [f"z{i}" for i in range(nz)] + list(FEATURE_META):
            raise DataError(f"{path}: unexpected header {header}")
        arr = lambda j, f=float: np.array([f(r[j]) for r in body])  # noqa: E731
        return cls(
            z=np.array([[float(v) for v in r[:nz]] for r in body]).reshape(len(body), nz),
            rr=np.column_stack([arr(nz), arr(nz + 1)]) if body else np.zeros((0, 2)),
            sex=arr(nz + 2), age=arr(nz + 3),
            labels=np.array([np.nan if r[nz + 4] == "" else float(r[nz + 4]) for r in body]),
            patient_ids=np.array([r[nz + 5] for r in body]),
        )


def extract_features(params: vm.VaeParams, data: BeatSet, chunk: int = 256) -> FeatureTable:
    """Eval-mode latent means (z = mu) with the raw RR statistics."""
    zs = []
    for i in range(0, len(data), chunk):
        b = make_batch(params, data, np.arange(i, min(len(data), i + chunk)))
        mu, _, _ = vm.encode(params, b.x)
        zs.append(np.atleast_2d(mu))
    return FeatureTable(np.concatenate(zs).astype(float), data.rr.copy(), data.sex.copy(), data.age.copy(),
                        data.labels.copy(), data.patient_ids.copy())


def predict_proba(params: vm.VaeParams, data: BeatSet, chunk: int = 256) -> np.ndarray:
    """Sigmoid of the head logit in eval mode."""
    out = []
    for i in range(0, len(data), chunk):
        b = make_batch(params, data, np.arange(i, min(len(data), i + chunk)))
        fr = vm.forward(params, b.x, b.rr, decode=False)
        out.append(fr.logit.astype(float))
    logit = np.concatenate(out)
    return 1.0 / (1.0 + np.exp(-logit))


def reconstruct(params: vm.VaeParams, data: BeatSet, chunk: int = 256) -> np.ndarray:
    """Eval-mode reconstructions in mV."""
    out = []
    for i in range(0, len(data), chunk):
        b = make_batch(params, data, np.arange(i, min(len(data), i + chunk)))
        fr = vm.forward(params, b.x, b.rr)
        out.append(fr.x_hat.astype(float) / params.arch.signal_scale)
    return np.concatenate(out)
