"""Command-line driver chaining the pipeline stages.

Every subcommand writes an ``*.config.json`` next to its output holding the
effective configuration (no timestamps), so replaying it reproduces the
outputs. Settings resolve as command-line flag, then ``--config`` file (a
flat JSON object keyed by option name), then built-in default.

Exit codes: 0 success, 2 usage error, 3 data or format error, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import baselines as bl
from . import io as eio
from . import metrics as mt
from .errors import ArchitectureMismatch, DataError, NumericError, ParameterError
from .prep import FilterConfig, preprocess_dataset
from .synth import generate_dataset
from .train import (BeatSet, FeatureTable, SplitPlan, TrainConfig, extract_features, finetune_full,
                    finetune_head, make_splits, predict_proba, pretrain, reconstruct)
from .vae.losses import LossWeights
from .vae.model import VaeArchitecture, head_names, init_params

log = logging.getLogger("ecgvae")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
RECORDS_FILE = "records.ebd"
MEANBEATS_FILE = "meanbeats.ebd"
# options that only steer where files go; kept out of checkpoint and report metadata
PATH_OPTIONS = ("in_dir", "out", "plan", "ckpt", "features", "config", "log_level")
# keys of a logged effective config that are not options; skipped when it is replayed
CONFIG_METADATA = ("version", "command", "method", "config")


class UsageError(Exception):
    pass


# ----------------------------------------------------------------------------
# helpers


def _effective(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


def _settings(args) -> dict:
    """Effective config without file locations, for embedding in outputs."""
    return {k: v for k, v in _effective(args).items() if k not in PATH_OPTIONS}


def _log_config(args, target: Path):
    cfg = {"version": __version__, **_effective(args)}
    text = json.dumps(cfg, sort_keys=True, indent=1)
    log.info("effective config: %s", json.dumps(cfg, sort_keys=True))
    path = target / "effective_config.json" if target.is_dir() else Path(str(target) + ".config.json")
    path.write_text(text + "\n")


def _ebd_path(path, default_name: str) -> Path:
    p = Path(path)
    return p / default_name if p.is_dir() else p


def _load_beats(path) -> BeatSet:
    data = eio.read_ebd(_ebd_path(path, MEANBEATS_FILE), expect_kind="meanbeat")
    return BeatSet.from_mean_beats(eio.ebd_to_meanbeats(data))


def _fold_sets(data: BeatSet, plan: SplitPlan, k: int):
    if not 0 <= k < len(plan.folds):
        raise ParameterError("fold", f"{k} outside [0, {len(plan.folds)})")
    fold = plan.fold(k)
    return (data.select_patients(fold["train"]), data.select_patients(fold["validation"]),
            data.select_patients(plan.test_patient_ids))


def _train_config(args, gamma: float = 0.0) -> TrainConfig:
    return TrainConfig(weights=LossWeights(args.beta, gamma), learning_rate=args.lr,
                       weight_decay=args.weight_decay, batch_size=args.batch_size,
                       patience_epochs=args.patience, clip_norm=args.clip_norm,
                       max_epochs=args.epochs, seed=args.seed)


def _labels_for_test(test: BeatSet) -> np.ndarray:
    y = test.labels
    if np.any(np.isnan(y)) or np.unique(y).size < 2:
        raise DataError("test set must carry labels of both classes")
    return y


# ----------------------------------------------------------------------------
# subcommands


def cmd_synth(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    recs = generate_dataset(args.patients, args.records_per_patient, args.prevalence, args.seed)
    eio.write_ebd(out / RECORDS_FILE, eio.records_to_ebd(recs))
    log.info("wrote %d records to %s", len(recs), out / RECORDS_FILE)
    _log_config(args, out)


def cmd_preprocess(args):
    src = eio.read_ebd(_ebd_path(args.in_dir, RECORDS_FILE), expect_kind="raw")
    filt = FilterConfig(args.mag_threshold, args.corr_mean, args.corr_max, args.min_beats)
    beats, rejected = preprocess_dataset(eio.ebd_to_records(src), filt)
    if not beats:
        raise DataError("every record was rejected")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    eio.write_ebd(out / MEANBEATS_FILE, eio.meanbeats_to_ebd(beats, src.fs_hz))
    with open(out / "rejected.jsonl", "w") as fh:
        for row in rejected:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    log.info("kept %d records, rejected %d", len(beats), len(rejected))
    _log_config(args, out)


def cmd_split(args):
    data = eio.read_ebd(_ebd_path(args.in_dir, MEANBEATS_FILE))
    beats = eio.ebd_to_meanbeats(data) if data.kind == "meanbeat" else eio.ebd_to_records(data)
    plan = make_splits(beats, args.ratio, args.folds, args.seed)
    plan.save(args.out)
    log.info("test patients %d, pool %d, folds %d", len(plan.test_patient_ids), len(plan.pool_patient_ids()),
             len(plan.folds))
    _log_config(args, Path(args.out))


def cmd_pretrain(args):
    train, val, _ = _fold_sets(_load_beats(args.in_dir), SplitPlan.load(args.plan), args.fold)
    arch = VaeArchitecture(latent_dim=args.latent, pred_dim=args.pred_dim, dropout_rate=args.dropout)
    params = init_params(arch, args.seed)
    with open(str(args.out) + ".log.jsonl", "w") as fh:
        params, tlog = pretrain(params, train, val, _train_config(args), fh)
    eio.save_checkpoint(args.out, params, "pretrain",
                        {"settings": _settings(args), "best_epoch": tlog.best_epoch, "stop_reason": tlog.stop_reason})
    _log_config(args, Path(args.out))


def _load_for_finetune(path, pred_dim: int | None, seed: int):
    params, header = eio.load_checkpoint(path)
    if pred_dim is None or pred_dim == params.arch.pred_dim:
        return params, header
    want = replace(params.arch, pred_dim=pred_dim)
    if header.get("phase") != "pretrain":
        # a trained head cannot change its input width
        raise ArchitectureMismatch(eio.architecture_diff(want, params.arch))
    # pretraining never touches the head, so a fresh one of the new width is equivalent
    fresh = init_params(want, seed)
    tensors = {k: (fresh.tensors[k] if k in head_names() else v) for k, v in params.tensors.items()}
    return type(params)(want, tensors, params.rr_stats.copy()), header


def cmd_finetune(args):
    params, header = _load_for_finetune(args.ckpt, args.pred_dim, args.seed)
    train, val, _ = _fold_sets(_load_beats(args.in_dir), SplitPlan.load(args.plan), args.fold)
    run = finetune_head if args.stage == "head" else finetune_full
    with open(str(args.out) + ".log.jsonl", "w") as fh:
        params, tlog = run(params, train, val, _train_config(args, args.gamma), fh)
    extra = {"settings": _settings(args), "parent_phase": header.get("phase"), "best_epoch": tlog.best_epoch,
             "stop_reason": tlog.stop_reason}
    eio.save_checkpoint(args.out, params, args.stage, extra)
    _log_config(args, Path(args.out))


def cmd_features(args):
    params, _ = eio.load_checkpoint(args.ckpt)
    table = extract_features(params, _load_beats(args.in_dir))
    table.to_csv(args.out)
    log.info("wrote %d feature rows", table.z.shape[0])
    _log_config(args, Path(args.out))


def _write_rows(args, rows, meta):
    out = Path(args.out)
    # "--out x.csv" names the table and "--out x.json" the document; the other goes alongside
    if out.suffix == ".csv":
        json_path, csv_path = out.with_suffix(".json"), out
    elif out.suffix == ".json":
        json_path, csv_path = out, out.with_suffix(".csv")
    else:
        json_path, csv_path = out, Path(str(out) + ".csv")
    mt.write_report(rows, json_path, csv_path, meta)
    for r in rows:
        log.info("%s fold %s auroc %.3f macro-F1 %.3f", r["config"], r["fold"], r["auroc"], r["macro_f1"])
    _log_config(args, out)


def cmd_eval(args):
    params, header = eio.load_checkpoint(args.ckpt)
    train, _, test = _fold_sets(_load_beats(args.in_dir), SplitPlan.load(args.plan), args.fold)
    y = _labels_for_test(test)
    if args.readout == "head":
        probs = predict_proba(params, test)
    else:
        ft_tr = extract_features(params, train)
        keep = ~np.isnan(ft_tr.labels)
        model = bl.logreg_fit(ft_tr.features()[keep], ft_tr.labels[keep], args.l1, args.l2)
        probs = bl.logreg_predict_proba(model, extract_features(params, test).features())
    name = args.name or f"{header.get('phase', 'model')}_L{params.arch.latent_dim}"
    row = mt.prediction_row(name, args.fold, probs, y, test.x, reconstruct(params, test), args.threshold)
    _write_rows(args, [row], {"settings": _settings(args), "architecture": params.arch.to_dict()})


def cmd_baseline(args):
    plan = SplitPlan.load(args.plan)
    if args.method == "logreg":
        table = FeatureTable.read_csv(args.features)
        fold = plan.fold(args.fold)
        pick = lambda ids: np.flatnonzero(np.isin(table.patient_ids, list(ids)))  # noqa: E731
        tr, te = pick(fold["train"]), pick(plan.test_patient_ids)
        x, y = table.features(), table.labels
        keep = tr[~np.isnan(y[tr])]
        model = bl.logreg_fit(x[keep], y[keep], args.l1, args.l2)
        y_te = y[te]
        if np.any(np.isnan(y_te)) or np.unique(y_te).size < 2:
            raise DataError("test set must carry labels of both classes")
        rows = [mt.prediction_row("logreg", args.fold, bl.logreg_predict_proba(model, x[te]), y_te,
                                  threshold=args.threshold)]
    else:
        train, _, test = _fold_sets(_load_beats(args.in_dir), plan, args.fold)
        y = _labels_for_test(test)
        if args.method == "pca":
            pca = bl.pca_fit(train.x, args.components)
            feats = lambda d: np.hstack([bl.pca_transform(pca, d.x), d.rr])  # noqa: E731
            keep = ~np.isnan(train.labels)
            model = bl.logreg_fit(feats(train)[keep], train.labels[keep], args.l1, args.l2)
            x_hat = bl.pca_inverse(pca, bl.pca_transform(pca, test.x)).reshape(test.x.shape)
            rows = [mt.prediction_row(f"pca_k{args.components}", args.fold, bl.logreg_predict_proba(model, feats(test)),
                                      y, test.x, x_hat, args.threshold)]
        else:
            probs, _ = bl.sex_age_baseline(train, test, args.l1, args.l2)
            rows = [mt.prediction_row("sexage", args.fold, probs, y, threshold=args.threshold)]
    _write_rows(args, rows, {"settings": _settings(args)})


def cmd_traverse(args):
    params, _ = eio.load_checkpoint(args.ckpt)
    data = _load_beats(args.in_dir)
    if args.plan:
        data, _, _ = _fold_sets(data, SplitPlan.load(args.plan), args.fold)
    mean, std = mt.latent_stats(extract_features(params, data).z)
    grid = mt.factor_traversal(params, args.feature, mean, std, args.steps)
    grid.to_csv(args.out, {"latent_dim": params.arch.latent_dim})
    _log_config(args, Path(args.out))


def _experiment_config(args, models):
    from .experiment import ExperimentConfig
    return ExperimentConfig(
        n_patients=args.patients, records_per_patient=args.records_per_patient, prevalence=args.prevalence,
        pretrain_patients=args.pretrain_patients, pretrain_records_per_patient=args.records_per_patient,
        data_seed=args.seed, split_seed=args.seed, train_seed=args.seed, beta=args.beta, gamma=args.gamma,
        models=models, pretrain_epochs=args.pretrain_epochs, head_epochs=args.head_epochs,
        full_epochs=args.full_epochs, patience=args.patience, learning_rate=args.lr,
        weight_decay=args.weight_decay, batch_size=args.batch_size, l1=args.l1, l2=args.l2,
        pca_components=args.components, folds=_int_list(args.folds) if args.folds else None,
        threshold=args.threshold)


def _int_list(text) -> list[int]:
    try:
        return [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def cmd_sweep(args):
    from .experiment import ModelSpec, run_experiment
    dims = _int_list(args.latent_dims)
    cfg = _experiment_config(args, tuple(ModelSpec(d) for d in dims))
    rows, _ = run_experiment(cfg)
    _write_rows(args, rows, {"experiment": cfg.to_dict()})


def cmd_experiment(args):
    from .experiment import ModelSpec, run_experiment
    models = [ModelSpec(d) for d in _int_list(args.latent_dims)]
    for item in args.split or []:
        try:
            L, P = (int(v) for v in item.split(":"))
        except ValueError:
            raise UsageError(f"--split expects L:P, got {item!r}") from None
        models.append(ModelSpec(L, P))
    cfg = _experiment_config(args, tuple(models))
    rows, _ = run_experiment(cfg)
    _write_rows(args, rows, {"experiment": cfg.to_dict()})


# ----------------------------------------------------------------------------
# parser


def _training_flags(p, epochs=500):
    p.add_argument("--beta", type=float, default=4.0)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--patience", type=int, default=25)
    p.add_argument("--clip-norm", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--seed", type=int, default=0)


def _readout_flags(p):
    p.add_argument("--l1", type=float, default=1e-3)
    p.add_argument("--l2", type=float, default=1e-3)
    p.add_argument("--threshold", type=float, default=0.5)


def _experiment_flags(p):
    p.add_argument("--patients", type=int, default=300)
    p.add_argument("--records-per-patient", type=int, default=5)
    p.add_argument("--prevalence", type=float, default=0.115)
    p.add_argument("--pretrain-patients", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--beta", type=float, default=4.0)
    p.add_argument("--gamma", type=float, default=500.0)
    p.add_argument("--pretrain-epochs", type=int, default=500)
    p.add_argument("--head-epochs", type=int, default=500)
    p.add_argument("--full-epochs", type=int, default=500)
    p.add_argument("--patience", type=int, default=25)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--components", type=int, default=2, help="PCA baseline size (0 disables)")
    p.add_argument("--folds", default=None, help="comma-separated fold subset")
    _readout_flags(p)


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    """The parser plus a map from command path to its sub-parser (used to
    apply config-file defaults)."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON file of option defaults")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(prog="ecgvae", description=__doc__.splitlines()[0], parents=[common])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    table = {}

    def add(name, func, help_text, parent=sub, key=None):
        p = parent.add_parser(name, help=help_text, parents=[common])
        p.set_defaults(func=func)
        table[key or name] = p
        return p

    p = add("synth", cmd_synth, "generate labeled synthetic 12-lead records")
    p.add_argument("--patients", type=int, required=True)
    p.add_argument("--records-per-patient", type=int, default=1)
    p.add_argument("--prevalence", type=float, default=0.115)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = add("preprocess", cmd_preprocess, "detect beats, filter and average them per record")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mag-threshold", type=float, default=0.05)
    p.add_argument("--corr-mean", type=float, default=0.5)
    p.add_argument("--corr-max", type=float, default=0.8)
    p.add_argument("--min-beats", type=int, default=3)

    p = add("split", cmd_split, "patient-grouped, label-stratified test holdout and folds")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--ratio", type=float, default=0.85)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = add("pretrain", cmd_pretrain, "self-supervised VAE training on one fold")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--latent", type=int, default=10)
    p.add_argument("--pred-dim", type=int, default=None)
    p.add_argument("--dropout", type=float, default=0.1)
    _training_flags(p)
    p.add_argument("--out", required=True)

    p = add("finetune", cmd_finetune, "prediction-loss fine-tuning (head, then full)")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--gamma", type=float, default=500.0)
    p.add_argument("--pred-dim", type=int, default=None)
    p.add_argument("--stage", choices=["head", "full"], required=True)
    _training_flags(p)
    p.add_argument("--out", required=True)

    p = add("features", cmd_features, "eval-mode latent features of every record")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)

    p = add("baseline", None, "PCA, logistic-regression or sex+age comparators")
    bsub = p.add_subparsers(dest="method", required=True)
    for method, text in (("pca", "PCA features + logistic regression"),
                         ("logreg", "logistic regression on a feature table"),
                         ("sexage", "logistic regression on sex and age")):
        q = add(method, cmd_baseline, text, parent=bsub, key=f"baseline {method}")
        if method == "logreg":
            q.add_argument("--features", required=True)
        else:
            q.add_argument("--in", dest="in_dir", required=True)
        if method == "pca":
            q.add_argument("--components", type=int, default=2)
        q.add_argument("--plan", required=True)
        q.add_argument("--fold", type=int, default=0)
        _readout_flags(q)
        q.add_argument("--out", required=True)

    p = add("eval", cmd_eval, "reconstruction and prediction metrics on the test set")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--readout", choices=["logreg", "head"], default="logreg")
    p.add_argument("--name", default=None, help="config name in the report")
    _readout_flags(p)
    p.add_argument("--out", required=True)

    p = add("traverse", cmd_traverse, "decode a sweep along one latent feature")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--plan", default=None, help="take latent statistics from this plan's training fold")
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--feature", type=int, required=True)
    p.add_argument("--steps", type=int, default=7)
    p.add_argument("--out", required=True)

    p = add("sweep", cmd_sweep, "task-naive vs task-specific over latent sizes")
    p.add_argument("--latent-dims", default="2,5,10,20,30")
    _experiment_flags(p)
    p.add_argument("--out", required=True)

    p = add("experiment", cmd_experiment, "full cross-validated comparison incl. split-task models")
    p.add_argument("--latent-dims", default="2")
    p.add_argument("--split", action="append", help="split-task model as L:P (repeatable)")
    _experiment_flags(p)
    p.add_argument("--out", required=True)
    return parser, table


def _command_key(argv, table) -> str | None:
    # the first bare word naming a command starts the path; option values
    # (such as the config file name) never match a command
    words = [a for a in argv if not a.startswith("-")]
    for i, w in enumerate(words):
        if w in table:
            pair = " ".join(words[i:i + 2])
            return pair if pair in table else w
    return None


def _apply_config_file(argv, parser, table):
    """Install the config file's values as defaults of the chosen subcommand."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        cfg = json.loads(Path(known.config).read_text())
    except OSError as exc:
        raise DataError(f"cannot read config file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{known.config}: not valid JSON ({exc})") from None
    if not isinstance(cfg, dict) or any(isinstance(v, (dict, list)) for v in cfg.values()):
        raise DataError(f"{known.config}: config must be a flat JSON object")
    key = _command_key(argv, table)
    if key is None:
        return
    sub = table[key]
    dests = {a.dest for a in sub._actions}
    values = {}
    for k, v in cfg.items():
        if k in CONFIG_METADATA:
            continue
        dest = k.lstrip("-").replace("-", "_")
        dest = "in_dir" if dest == "in" else dest
        if dest not in dests or dest in ("config", "help"):
            raise UsageError(f"config key {k!r} is not an option of '{key}'")
        values[dest] = v
    sub.set_defaults(**values)
    # required options satisfied by the file are no longer required on the command line
    for a in sub._actions:
        if a.dest in values:
            a.required = False


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, table = build_parser()
    try:
        _apply_config_file(argv, parser, table)
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ecgvae: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"ecgvae: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as exc:  # argparse: --help/--version exit 0, bad usage exits 2
        return int(exc.code or 0)

    logging.basicConfig(level=getattr(logging, args.log_level), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with np.errstate(over="ignore", under="ignore"):
            args.func(args)
    except (UsageError, ParameterError) as exc:
        print(f"ecgvae: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"ecgvae: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"ecgvae: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
