"""Stratified k-fold evaluation of the detection pipeline.

Per fold: feature selection (auto mode) and the standardizer are fitted on
the training rows only; each classifier is trained on them and scored on
the held-out rows.
"""
from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from importlib import resources

import numpy as np

from .classifiers import DISPLAY_NAMES, KINDS, ClassifierSpec, predict, score, train
from .dataset import (DEFAULT_FOLDS, DEFAULT_LABEL_COLUMN, DEFAULT_SEED, FeatureTable,
                      PositiveClass, load_csv, stratified_kfold)
from .metrics import (aggregate_folds, confusion, f_beta, format_mean_std, mean_roc,
                      precision_recall_accuracy, roc_curve, write_roc_csv)
from .numeric import derive_seed
from .preprocess import (DEFAULT_VARIANCE_THRESHOLD, DEFAULT_VIF_THRESHOLD, PRESETS,
                         SelectionReport, select_features)

log = logging.getLogger(__name__)

REPORT_VERSION = 1
METRIC_KEYS = ("accuracy", "precision", "recall", "f1", "f_beta", "auc")
TABLE_COLUMNS = (("Accuracy", "accuracy"), ("F-beta", "f_beta"), ("Recall", "recall"),
                 ("Precision", "precision"))


class ExperimentError(RuntimeError):
    """A failure inside one fold/classifier of an experiment."""

    def __init__(self, fold, classifier, cause: BaseException):
        where = f"fold {fold}" if classifier is None else f"fold {fold}, classifier {classifier}"
        super().__init__(f"{where}: {cause}")
        self.fold = fold
        self.classifier = classifier
        self.cause = cause


@dataclass
class ExperimentConfig:
    dataset: str | None = None
    label_column: str = DEFAULT_LABEL_COLUMN
    positive_class: str = PositiveClass.RANSOMWARE.value
    features: str = "paper13"
    scaling_mode: str = "raw"
    variance_threshold: float = DEFAULT_VARIANCE_THRESHOLD
    vif_threshold: float = DEFAULT_VIF_THRESHOLD
    global_selection: bool = False
    models: tuple[str, ...] = KINDS
    model_params: dict = field(default_factory=dict)
    k: int = DEFAULT_FOLDS
    seed: int = DEFAULT_SEED
    beta: float = 1.0
    nn_monitor: str = "validation"

    def __post_init__(self):
        self.models = tuple(m.lower() for m in self.models)
        self.positive_class = PositiveClass.parse(self.positive_class).value
        if self.k < 2:
            raise ValueError("k must be at least 2")
        bad = [m for m in self.models if m not in KINDS]
        if bad:
            raise ValueError(f"unknown model(s) {bad}")
        if len(set(self.models)) != len(self.models):
            raise ValueError("duplicate models in config")
        if self.nn_monitor not in ("validation", "test"):
            raise ValueError("nn_monitor must be 'validation' or 'test'")
        feature_mode(self.features)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["models"] = list(self.models)
        return d


def feature_mode(features: str):
    """Parse a feature option: ``auto``, a preset name, or ``list:a,b,c``."""
    if features == "auto":
        return "auto", None
    if features in PRESETS:
        return "preset", list(PRESETS[features])
    if features.startswith("list:"):
        names = [n.strip() for n in features[5:].split(",") if n.strip()]
        if not names:
            raise ValueError("empty explicit feature list")
        return "list", names
    raise ValueError(f"unknown feature mode {features!r}; use auto, "
                     f"{', '.join(PRESETS)} or list:a,b,...")


@dataclass
class EvalReport:
    config: dict
    selection: dict
    folds: dict  # display name -> list of per-fold dicts
    aggregate: dict  # display name -> metric -> (mean, std)
    roc: dict  # display name -> list of ROCCurve
    mean_roc: dict  # display name -> ROCCurve
    timings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        classifiers = {}
        for name in self.folds:
            m = self.mean_roc[name]
            classifiers[name] = {
                "folds": self.folds[name],
                "aggregate": {k: {"mean": v[0], "std": v[1]}
                              for k, v in self.aggregate[name].items()},
                "mean_roc": {"fpr": m.fpr.tolist(), "tpr": m.tpr.tolist(), "auc": m.auc},
            }
        return {"version": REPORT_VERSION, "config": self.config,
                "selection": self.selection, "classifiers": classifiers}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self, digits: int = 2) -> str:
        """Plain-text results table: mean±std per classifier for each metric."""
        header = ["Classifiers"] + [c for c, _ in TABLE_COLUMNS] + ["F1", "AUC"]
        rows = [header]
        for name, agg in self.aggregate.items():
            keys = [k for _, k in TABLE_COLUMNS] + ["f1", "auc"]
            rows.append([name] + [format_mean_std(*agg[k], digits=digits) for k in keys])
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()
                         for r in rows)

    def write_roc_csvs(self, directory) -> list[str]:
        os.makedirs(directory, exist_ok=True)
        written = []
        for name, curves in self.roc.items():
            stem = name.lower()
            for i, c in enumerate(curves):
                path = os.path.join(directory, f"{stem}_fold{i}.csv")
                write_roc_csv(c, path)
                written.append(path)
            path = os.path.join(directory, f"{stem}_mean.csv")
            write_roc_csv(self.mean_roc[name], path)
            written.append(path)
        return written


def fold_metrics(y_true, scores, threshold: float = 0.5, beta: float = 1.0) -> dict:
    y_pred = (np.asarray(scores) >= threshold).astype(np.int64)
    c = confusion(y_true, y_pred)
    r = precision_recall_accuracy(c)
    return {
        "accuracy": r.accuracy,
        "precision": r.precision,
        "recall": r.recall,
        "f1": f_beta(r.precision, r.recall, 1.0),
        "f_beta": f_beta(r.precision, r.recall, beta),
        "auc": roc_curve(y_true, scores).auc,
        "confusion": asdict(c),
        "degenerate": {"precision": r.precision_degenerate, "recall": r.recall_degenerate},
    }


def _select(table: FeatureTable, rows, config: ExperimentConfig) -> SelectionReport:
    return select_features(table.values[rows], table.columns, config.variance_threshold,
                           config.vif_threshold, config.scaling_mode)


def run_experiment(config: ExperimentConfig, table: FeatureTable | None = None) -> EvalReport:
    if table is None:
        if not config.dataset:
            raise ValueError("config has no dataset path and no table was given")
        table = load_csv(config.dataset, config.label_column, config.positive_class)
    elif table.positive_class.value != config.positive_class:
        raise ValueError(f"table positive class {table.positive_class.value!r} does not "
                         f"match config {config.positive_class!r}")

    mode, fixed = feature_mode(config.features)
    if fixed is not None:
        table.column_indices(fixed)
    plan = stratified_kfold(table, config.k, config.seed)
    y = table.labels.astype(np.int64)

    selection: dict = {"mode": mode}
    if mode == "auto" and config.global_selection:
        global_report = _select(table, slice(None), config)
        selection["global"] = global_report.to_dict()
        fixed = global_report.final_columns
    elif mode != "auto":
        selection["columns"] = list(fixed)
    per_fold_selection = []

    names = [DISPLAY_NAMES[m] for m in config.models]
    folds = {n: [] for n in names}
    curves = {n: [] for n in names}
    timings = {n: [] for n in names}
    for i in range(config.k):
        train_idx, test_idx = plan.split(i)
        if fixed is None:
            try:
                rep = _select(table, train_idx, config)
            except Exception as exc:
                raise ExperimentError(i, None, exc) from exc
            per_fold_selection.append(rep.to_dict())
            columns = rep.final_columns
        else:
            columns = fixed
        cols = table.column_indices(columns)
        X_train = table.values[np.ix_(train_idx, cols)]
        X_test = table.values[np.ix_(test_idx, cols)]
        y_train, y_test = y[train_idx], y[test_idx]

        for ci, (kind, name) in enumerate(zip(config.models, names)):
            spec = ClassifierSpec(kind, dict(config.model_params.get(kind, {})),
                                  derive_seed(config.seed, i, ci))
            t0 = time.perf_counter()
            try:
                monitor = (X_test, y_test) if kind == "nn" and config.nn_monitor == "test" else None
                model = train(spec, X_train, y_train, columns, monitor=monitor)
                s = score(model, X_test)
            except Exception as exc:
                raise ExperimentError(i, name, exc) from exc
            elapsed = time.perf_counter() - t0
            m = fold_metrics(y_test, s, beta=config.beta)
            m["fold"] = i
            m["n_train"] = int(train_idx.size)
            m["n_test"] = int(test_idx.size)
            m["features"] = list(columns)
            m["training"] = {k: v for k, v in model.metadata.items() if k != "seed"}
            folds[name].append(m)
            curves[name].append(roc_curve(y_test, s))
            timings[name].append(elapsed)
            log.info("fold %d %s: acc=%.4f auc=%.4f (%.1fs)", i, name, m["accuracy"],
                     m["auc"], elapsed)

    if per_fold_selection:
        selection["per_fold"] = per_fold_selection
    aggregate = {n: aggregate_folds([{k: f[k] for k in METRIC_KEYS} for f in folds[n]])
                 for n in names}
    mean_curves = {n: mean_roc(curves[n]) for n in names}
    return EvalReport(config.to_dict(), selection, folds, aggregate, curves, mean_curves,
                      timings)


def load_reference(path=None) -> dict:
    if path is None:
        text = resources.files("ransomguard").joinpath("data/reference_results.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    return json.loads(text)


# absorbs binary rounding so that e.g. |0.97 - 0.99| counts as exactly 0.02
_CMP_EPS = 1e-12


@dataclass(frozen=True)
class CellCheck:
    classifier: str
    metric: str
    reported: float
    reference: float
    passed: bool


def compare_to_reference(report, reference: dict, tolerance: float) -> tuple[list[CellCheck], list[CellCheck]]:
    """Check every reference cell against the report: |reported - reference| <= tolerance.

    ``report`` may be an :class:`EvalReport` or a plain ``{classifier: {metric:
    mean}}`` mapping. Returns ``(all_checks, failures)``. Classifiers absent
    from the report are skipped; a metric missing for a present classifier is
    a schema error.
    """
    if isinstance(report, EvalReport):
        reported = {n: {k: v[0] for k, v in agg.items()} for n, agg in report.aggregate.items()}
    else:
        reported = report
    ref = reference.get("metrics", reference)
    checks = []
    for name, cells in ref.items():
        if name not in reported:
            continue
        for metric, value in cells.items():
            if metric not in reported[name]:
                raise ValueError(f"report lacks metric {metric!r} for {name}")
            target = value[0] if isinstance(value, (list, tuple)) else value
            got = float(reported[name][metric])
            checks.append(CellCheck(name, metric, got, float(target),
                                    abs(got - float(target)) <= tolerance + _CMP_EPS))
    return checks, [c for c in checks if not c.passed]
