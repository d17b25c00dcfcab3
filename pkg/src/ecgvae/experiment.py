"""Cross-validated comparison of task-naive and task-specific latent spaces.

For every fold the same recipe runs per latent size: pretrain on an
unlabeled cohort, read out eval-mode features with logistic regression
(task-naive), then fine-tune head and full network with the prediction loss
(task-specific, optionally split-task). PCA and sex+age baselines are fitted
on the same training fold. All models are scored on the shared test set.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import baselines as bl
from . import metrics as mt
from .prep import FilterConfig, preprocess_dataset
from .synth import generate_dataset
from .train import (BeatSet, SplitPlan, TrainConfig, extract_features, finetune_full, finetune_head,
                    make_splits, predict_proba, pretrain, reconstruct)
from .vae.losses import LossWeights
from .vae.model import VaeArchitecture, init_params

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelSpec:
    """One latent configuration; ``pred_dim < latent_dim`` is split-task."""

    latent_dim: int
    pred_dim: int | None = None

    @property
    def naive_name(self) -> str:
        return f"naive_L{self.latent_dim}"

    @property
    def specific_name(self) -> str:
        if self.pred_dim is not None and self.pred_dim < self.latent_dim:
            return f"split_L{self.latent_dim}_P{self.pred_dim}"
        return f"specific_L{self.latent_dim}"


@dataclass(frozen=True)
class ExperimentConfig:
    n_patients: int = 300
    records_per_patient: int = 5
    prevalence: float = 0.115
    pretrain_patients: int = 200
    pretrain_records_per_patient: int = 5
    data_seed: int = 0
    split_seed: int = 0
    train_seed: int = 0
    beta: float = 4.0
    gamma: float = 500.0
    models: tuple[ModelSpec, ...] = (ModelSpec(2), ModelSpec(10, 2))
    pretrain_epochs: int = 500
    head_epochs: int = 500
    full_epochs: int = 500
    patience: int = 25
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 64
    l1: float = 1e-3
    l2: float = 1e-3
    pca_components: int = 2
    folds: tuple[int, ...] | None = None
    threshold: float = 0.5

    def __post_init__(self):
        # accept plain dicts/lists as read back from a JSON config
        models = tuple(m if isinstance(m, ModelSpec) else ModelSpec(**m) for m in self.models)
        object.__setattr__(self, "models", models)
        if self.folds is not None:
            object.__setattr__(self, "folds", tuple(int(k) for k in self.folds))

    def train_config(self, max_epochs: int, seed_offset: int = 0) -> TrainConfig:
        return TrainConfig(weights=LossWeights(self.beta, self.gamma), learning_rate=self.learning_rate,
                           weight_decay=self.weight_decay, batch_size=self.batch_size,
                           patience_epochs=self.patience, max_epochs=max_epochs,
                           seed=self.train_seed + seed_offset)

    def to_dict(self):
        d = asdict(self)
        d["models"] = [asdict(m) for m in self.models]
        return d


@dataclass
class Cohorts:
    labeled: BeatSet
    pretrain_train: BeatSet
    pretrain_val: BeatSet
    plan: SplitPlan
    rejected: list = field(default_factory=list)


def build_cohorts(cfg: ExperimentConfig, filt: FilterConfig | None = None) -> Cohorts:
    """Labeled CV cohort plus a separate unlabeled pretraining cohort."""
    recs = generate_dataset(cfg.n_patients, cfg.records_per_patient, cfg.prevalence, cfg.data_seed)
    beats, rejected = preprocess_dataset(recs, filt)
    plan = make_splits(beats, 0.85, 5, cfg.split_seed)
    pre = generate_dataset(cfg.pretrain_patients, cfg.pretrain_records_per_patient, cfg.prevalence,
                           cfg.data_seed + 1_000_003)
    pre_beats, pre_rej = preprocess_dataset(pre, filt)
    for b in pre_beats:
        b.label = None
        b.patient_id = "U" + b.patient_id[1:]
    pre_plan = make_splits(pre_beats, 0.85, 5, cfg.split_seed)
    pre_set = BeatSet.from_mean_beats(pre_beats)
    return Cohorts(BeatSet.from_mean_beats(beats), pre_set.select_patients(pre_plan.pool_patient_ids()),
                   pre_set.select_patients(pre_plan.test_patient_ids), plan, rejected + pre_rej)


def _arch(model: ModelSpec) -> VaeArchitecture:
    return VaeArchitecture(latent_dim=model.latent_dim, pred_dim=model.pred_dim)


def pretrain_models(cfg: ExperimentConfig, cohorts: Cohorts) -> dict:
    """One pretrained network per latent configuration, shared by all folds
    (the pretraining cohort is disjoint from the labeled one)."""
    out = {}
    for i, model in enumerate(cfg.models):
        params = init_params(_arch(model), cfg.train_seed + 101 * i)
        out[model] = pretrain(params, cohorts.pretrain_train, cohorts.pretrain_val,
                             cfg.train_config(cfg.pretrain_epochs, 101 * i))
    return out


def run_fold(cfg: ExperimentConfig, cohorts: Cohorts, pretrained: dict, k: int) -> tuple[list[dict], dict]:
    """Rows for every configuration on fold ``k`` plus the trained params."""
    fold = cohorts.plan.fold(k)
    data = cohorts.labeled
    train = data.select_patients(fold["train"])
    val = data.select_patients(fold["validation"])
    test = data.select_patients(cohorts.plan.test_patient_ids)
    y = test.labels
    rows, probs, trained = [], {}, {}

    for i, model in enumerate(cfg.models):
        pre_params, _ = pretrained[model]
        # task-naive: frozen features read out by elastic-net logistic regression
        ft_tr, ft_te = extract_features(pre_params, train), extract_features(pre_params, test)
        lr = bl.logreg_fit(ft_tr.features(), ft_tr.labels, cfg.l1, cfg.l2)
        p_naive = bl.logreg_predict_proba(lr, ft_te.features())
        rows.append(mt.prediction_row(model.naive_name, k, p_naive, y, test.x, reconstruct(pre_params, test),
                                      cfg.threshold))
        probs[model.naive_name] = p_naive

        seed = 1000 * (k + 1) + 101 * i
        head, head_log = finetune_head(pre_params, train, val, cfg.train_config(cfg.head_epochs, seed))
        full, full_log = finetune_full(head, train, val, cfg.train_config(cfg.full_epochs, seed + 1))
        trained[model] = {"head": head, "full": full, "logs": (head_log, full_log)}
        # task-specific features go through the same logistic-regression
        # readout as the task-naive ones; the head output is reported too
        ft_tr, ft_te = extract_features(full, train), extract_features(full, test)
        lr = bl.logreg_fit(ft_tr.features(), ft_tr.labels, cfg.l1, cfg.l2)
        p_task = bl.logreg_predict_proba(lr, ft_te.features())
        rows.append(mt.prediction_row(model.specific_name + "_head", k, predict_proba(full, test), y,
                                      threshold=cfg.threshold))
        rows.append(mt.prediction_row(model.specific_name, k, p_task, y, test.x, reconstruct(full, test),
                                      cfg.threshold))
        probs[model.specific_name] = p_task

        # paired comparison of the two readouts of this latent size
        z, p = mt.auroc_paired_test(p_task, p_naive, y)
        rows[-1]["p_value"], rows[-1]["p_value_vs"] = p, model.naive_name

    if cfg.pca_components:
        pca = bl.pca_fit(train.x, cfg.pca_components)
        feats = lambda d: np.hstack([bl.pca_transform(pca, d.x), d.rr])  # noqa: E731
        lr = bl.logreg_fit(feats(train), train.labels, cfg.l1, cfg.l2)
        x_hat = bl.pca_inverse(pca, bl.pca_transform(pca, test.x)).reshape(test.x.shape)
        rows.append(mt.prediction_row(f"pca_k{cfg.pca_components}", k, bl.logreg_predict_proba(lr, feats(test)),
                                      y, test.x, x_hat, cfg.threshold))

    p_sa, _ = bl.sex_age_baseline(train, test, cfg.l1, cfg.l2)
    rows.append(mt.prediction_row("sexage", k, p_sa, y, threshold=cfg.threshold))
    return rows, trained


def run_experiment(cfg: ExperimentConfig, cohorts: Cohorts | None = None):
    """Full protocol; returns (rows incl. per-config means, cohorts)."""
    cohorts = cohorts or build_cohorts(cfg)
    pretrained = pretrain_models(cfg, cohorts)
    folds = cfg.folds if cfg.folds is not None else tuple(range(len(cohorts.plan.folds)))
    rows = []
    for k in folds:
        fold_rows, _ = run_fold(cfg, cohorts, pretrained, k)
        rows += fold_rows
        for r in fold_rows:
            log.info("fold %s %-16s auroc %.3f f1 %.3f corr %s p %s", r["fold"], r["config"], r["auroc"],
                     r["macro_f1"], r["correlation"], r["p_value"])
    return rows + mt.mean_rows(rows), cohorts


def latent_sweep(cfg: ExperimentConfig, latent_dims, cohorts: Cohorts | None = None):
    """Task-naive vs task-specific readouts for each latent size."""
    cfg = replace(cfg, models=tuple(ModelSpec(int(L)) for L in latent_dims))
    return run_experiment(cfg, cohorts)
