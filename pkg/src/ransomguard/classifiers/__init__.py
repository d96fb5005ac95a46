"""Train/score contract shared by the five classifiers.

``train`` fits a :class:`~ransomguard.preprocess.Standardizer` on the training
matrix and embeds it in the returned :class:`TrainedModel`, so scoring takes
raw feature values.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..dataset import stratified_holdout
from ..numeric import RandomSource
from ..preprocess import Standardizer, fit_standardizer
from .common import DivergenceError, SchemaError, SingleClassError, TrainingError, sigmoid
from .logistic import LogisticRegression, lr_loss_grad
from .naive_bayes import GaussianNB
from .neural import MLP, EarlyStopping, finite_difference, max_relative_error, nn_gradient_check
from .tree import DecisionTree, RandomForest, Tree, grow_tree

KINDS = ("dt", "rf", "nb", "lr", "nn")
DISPLAY_NAMES = {"dt": "DT", "rf": "RF", "nb": "NB", "lr": "LR", "nn": "NN"}
DEFAULT_THRESHOLD = 0.5

DEFAULTS: dict[str, dict] = {
    "dt": {"max_depth": None, "min_samples_split": 2},
    "rf": {"n_trees": 100, "max_features": "sqrt", "min_samples_split": 2,
           "max_depth": None, "bootstrap": True, "n_jobs": None},
    "nb": {"var_smoothing": 1e-9},
    "lr": {"learning_rate": 0.1, "max_epochs": 2000, "tol": 1e-8, "l2": 0.0},
    "nn": {"hidden": [64, 32], "learning_rate": 0.01, "beta1": 0.9, "beta2": 0.999,
           "eps": 1e-8, "batch_size": 256, "max_epochs": 100, "min_delta": 1e-3,
           "patience": 5, "validation_fraction": 0.1},
}

# Parameters that affect only how training is scheduled, not its result.
_EXECUTION_ONLY = {"n_jobs"}


@dataclass(frozen=True)
class ClassifierSpec:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 42

    def __post_init__(self):
        kind = str(self.kind).lower()
        if kind not in KINDS:
            raise TrainingError(f"unknown classifier kind {self.kind!r}; expected one of {KINDS}")
        unknown = set(self.params) - set(DEFAULTS[kind])
        if unknown:
            raise TrainingError(f"unknown {kind} hyperparameter(s): {sorted(unknown)}")
        merged = {**DEFAULTS[kind], **self.params}
        _validate(kind, merged)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "params", merged)

    def to_dict(self) -> dict:
        params = {k: v for k, v in self.params.items() if k not in _EXECUTION_ONLY}
        return {"kind": self.kind, "params": params, "seed": self.seed}


def _validate(kind, p):
    def need(cond, msg):
        if not cond:
            raise TrainingError(f"{kind}: {msg}")

    if kind in ("dt", "rf"):
        need(p["min_samples_split"] >= 2, "min_samples_split must be >= 2")
        need(p["max_depth"] is None or p["max_depth"] >= 1, "max_depth must be >= 1")
    if kind == "rf":
        need(p["n_trees"] >= 1, "n_trees must be >= 1")
        mf = p["max_features"]
        need(mf in ("sqrt", None) or (isinstance(mf, int) and mf >= 1),
             "max_features must be 'sqrt', None or a positive int")
    if kind == "nb":
        need(p["var_smoothing"] >= 0, "var_smoothing must be >= 0")
    if kind == "lr":
        need(p["learning_rate"] > 0, "learning_rate must be > 0")
        need(p["max_epochs"] >= 1, "max_epochs must be >= 1")
        need(p["l2"] >= 0, "l2 must be >= 0")
    if kind == "nn":
        need(p["learning_rate"] > 0, "learning_rate must be > 0")
        need(all(int(h) >= 1 for h in p["hidden"]), "hidden widths must be >= 1")
        need(p["batch_size"] >= 1, "batch_size must be >= 1")
        need(p["max_epochs"] >= 1, "max_epochs must be >= 1")
        need(p["patience"] >= 1, "patience must be >= 1")
        need(0 < p["validation_fraction"] < 1, "validation_fraction must be in (0, 1)")


def build_estimator(spec: ClassifierSpec):
    p = spec.params
    if spec.kind == "dt":
        return DecisionTree(p["max_depth"], p["min_samples_split"], None, spec.seed)
    if spec.kind == "rf":
        return RandomForest(p["n_trees"], p["max_features"], p["min_samples_split"],
                            p["max_depth"], p["bootstrap"], spec.seed, p["n_jobs"])
    if spec.kind == "nb":
        return GaussianNB(p["var_smoothing"])
    if spec.kind == "lr":
        return LogisticRegression(p["learning_rate"], p["max_epochs"], p["tol"], p["l2"])
    return MLP(tuple(int(h) for h in p["hidden"]), p["learning_rate"], p["beta1"], p["beta2"],
               p["eps"], p["batch_size"], p["max_epochs"], p["min_delta"], p["patience"],
               spec.seed)


@dataclass
class TrainedModel:
    kind: str
    estimator: object
    standardizer: Standardizer
    features: tuple[str, ...]
    spec: ClassifierSpec
    metadata: dict = field(default_factory=dict)

    def score(self, X, columns=None) -> np.ndarray:
        return score(self, X, columns)

    def predict(self, X, threshold: float = DEFAULT_THRESHOLD, columns=None) -> np.ndarray:
        return predict(self, X, threshold, columns)


def _check_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2:
        raise TrainingError(f"X must be 2-D, got shape {X.shape}")
    if X.shape[0] != y.shape[0]:
        raise TrainingError(f"X has {X.shape[0]} rows but y has {y.shape[0]} labels")
    if not np.isfinite(X).all():
        raise TrainingError("non-finite values in X")
    if not np.isin(y, (0, 1)).all():
        raise TrainingError("labels must be 0 or 1")
    if np.unique(y).size < 2:
        raise SingleClassError("training labels contain a single class")
    return X, y.astype(np.int64)


def train(spec: ClassifierSpec, X, y, features=None, monitor=None) -> TrainedModel:
    """Fit ``spec`` on raw features ``X`` and labels ``y``.

    For the network, early stopping watches a stratified validation split
    carved from the training data, unless ``monitor=(X_mon, y_mon)`` supplies
    an explicit monitoring set (raw features, standardized with the training
    fit).
    """
    X, y = _check_xy(X, y)
    if features is None:
        features = tuple(f"x{j}" for j in range(X.shape[1]))
    features = tuple(features)
    if len(features) != X.shape[1]:
        raise SchemaError(f"{len(features)} feature names for {X.shape[1]} columns")

    standardizer = fit_standardizer(X, features)
    Z = standardizer.transform(X)
    est = build_estimator(spec)
    meta = {"seed": spec.seed, "n_train": int(X.shape[0])}
    if spec.kind == "nn":
        if monitor is None:
            fit_idx, val_idx = stratified_holdout(
                y, spec.params["validation_fraction"], RandomSource(spec.seed).derive(7))
            est.fit(Z[fit_idx], y[fit_idx], Z[val_idx], y[val_idx])
            meta["monitor"] = "validation_split"
        else:
            Xm = np.asarray(monitor[0], dtype=np.float64)
            est.fit(Z, y, standardizer.transform(Xm), np.asarray(monitor[1], dtype=np.float64))
            meta["monitor"] = "external"
        meta["epochs_run"] = est.epochs_run
        meta["stopping_reason"] = est.stopping_reason
    elif spec.kind == "lr":
        est.fit(Z, y)
        meta["epochs_run"] = est.epochs_run
        meta["stopping_reason"] = est.stopping_reason
    else:
        est.fit(Z, y)
    return TrainedModel(spec.kind, est, standardizer, features, spec, meta)


def _as_rows(model: TrainedModel, x, columns=None) -> np.ndarray:
    if isinstance(x, dict):
        missing = [f for f in model.features if f not in x]
        if missing:
            raise SchemaError(f"input lacks model feature(s) {missing}")
        x = [float(x[f]) for f in model.features]
    elif columns is not None:
        columns = list(columns)
        missing = [f for f in model.features if f not in columns]
        if missing:
            raise SchemaError(f"input lacks model feature(s) {missing}")
        pos = [columns.index(f) for f in model.features]
        x = np.asarray(x, dtype=np.float64)
        x = x[..., pos]
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.shape[1] != len(model.features):
        raise SchemaError(f"expected {len(model.features)} features, got {a.shape[1]}")
    if not np.isfinite(a).all():
        raise SchemaError("non-finite input")
    return a


def score(model: TrainedModel, x, columns=None) -> np.ndarray:
    """Positive-class probability for each row of ``x`` (raw feature values).

    ``x`` may be a matrix ordered like ``model.features``, a mapping from
    feature name to value, or a matrix with explicit ``columns``.
    """
    a = _as_rows(model, x, columns)
    p = model.estimator.predict_proba(model.standardizer.transform(a))
    return np.clip(p, 0.0, 1.0)


def predict(model: TrainedModel, x, threshold: float = DEFAULT_THRESHOLD,
            columns=None) -> np.ndarray:
    """Hard labels: 1 iff score >= threshold."""
    return (score(model, x, columns) >= threshold).astype(np.int64)


def lr_gradient_check(X, y, l2=0.0, seed=0, h=1e-5) -> float:
    """Max relative error of the logistic-regression gradient against central differences."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    rng = RandomSource(seed)
    w = rng.normal(0.0, 1.0, size=X.shape[1])
    b = np.array([rng.normal()])
    _, gw, gb = lr_loss_grad(w, b[0], X, y, l2)

    def loss(ps):
        return lr_loss_grad(ps[0], ps[1][0], X, y, l2)[0]

    numeric = finite_difference(loss, [w, b], h)
    return max_relative_error([gw, np.array([gb])], numeric)


__all__ = [
    "KINDS", "DISPLAY_NAMES", "DEFAULTS", "ClassifierSpec", "TrainedModel", "train", "score",
    "predict", "build_estimator", "nn_gradient_check", "lr_gradient_check", "EarlyStopping",
    "TrainingError", "SingleClassError", "DivergenceError", "SchemaError", "sigmoid",
    "DecisionTree", "RandomForest", "Tree", "grow_tree", "GaussianNB", "LogisticRegression",
    "MLP",
]
