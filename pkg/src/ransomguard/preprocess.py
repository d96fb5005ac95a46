"""Standardization and two-stage feature selection (variance, then VIF)."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .numeric import (SingularMatrixError, ZeroVarianceError, as_matrix,
                      column_mean_variance, correlation_matrix, invert, solve_linear)

SELECTION_REPORT_VERSION = 1
DEFAULT_VARIANCE_THRESHOLD = 1.0
DEFAULT_VIF_THRESHOLD = 10.0
SCALING_MODES = ("raw", "zscore", "minmax")

# Selected features with their published VIF scores.
PUBLISHED_VIF = {
    "SizeOfOptionalHeader": 1.24,
    "MajorLinkerVersion": 1.15,
    "AddressOfEntryPoint": 1.04,
    "SectionAlignment": 1.03,
    "MinorOperatingSystemVersion": 4.04,
    "SizeOfHeaders": 1.0,
    "SizeOfStackReserve": 1.19,
    "LoaderFlags": 4.04,
    "SectionsMinEntropy": 1.31,
    "SectionsMaxEntropy": 1.41,
    "SectionMaxRawsize": 1.0,
    "SectionsMinVirtualsize": 1.02,
    "ResourcesMinEntropy": 1.08,
}
PUBLISHED_COLLINEAR_VIF = {"SectionsMeanRawsize": 19.52, "SectionMaxRawsize": 19.48}

PRESETS: dict[str, tuple[str, ...]] = {
    "paper13": tuple(PUBLISHED_VIF),
    "paper12": tuple(c for c in PUBLISHED_VIF if c != "SectionMaxRawsize"),
}


class SelectionError(ValueError):
    pass


@dataclass
class Standardizer:
    columns: tuple[str, ...]
    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        self.columns = tuple(self.columns)
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.scale = np.asarray(self.scale, dtype=np.float64)
        if not (len(self.columns) == self.mean.size == self.scale.size):
            raise SelectionError("standardizer lengths disagree")
        if (self.scale < 0).any():
            raise SelectionError("negative scale")

    def transform(self, m, columns=None) -> np.ndarray:
        return apply_standardizer(self, m, columns)

    def to_dict(self) -> dict:
        return {"columns": list(self.columns), "mean": self.mean.tolist(),
                "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Standardizer":
        return cls(tuple(d["columns"]), np.array(d["mean"], dtype=np.float64),
                   np.array(d["scale"], dtype=np.float64))


def fit_standardizer(m, columns=None) -> Standardizer:
    a = as_matrix(m)
    if a.shape[0] < 2:
        raise SelectionError("need at least 2 rows to fit a standardizer")
    if columns is None:
        columns = tuple(f"x{j}" for j in range(a.shape[1]))
    mean, var = column_mean_variance(a)
    return Standardizer(tuple(columns), mean, np.sqrt(var))


def apply_standardizer(s: Standardizer, m, columns=None) -> np.ndarray:
    """(x - mean) / scale column-wise; zero-scale columns map to 0."""
    a = as_matrix(m)
    if columns is not None and tuple(columns) != s.columns:
        raise SelectionError(
            f"schema mismatch: fitted on {list(s.columns)}, got {list(columns)}")
    if a.shape[1] != len(s.columns):
        raise SelectionError(
            f"schema mismatch: expected {len(s.columns)} columns, got {a.shape[1]}")
    safe = np.where(s.scale > 0, s.scale, 1.0)
    out = (a - s.mean) / safe
    out[:, s.scale == 0] = 0.0
    return out


def scale_for_variance(m, mode: str = "raw") -> np.ndarray:
    a = as_matrix(m)
    if mode == "raw":
        return a
    if mode == "zscore":
        return apply_standardizer(fit_standardizer(a), a)
    if mode == "minmax":
        lo, hi = a.min(axis=0), a.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        return (a - lo) / span
    raise SelectionError(f"unknown scaling mode {mode!r}; choose from {SCALING_MODES}")


def scaled_variances(m, mode: str = "raw") -> np.ndarray:
    """Column variances after ``mode`` scaling.

    Under ``zscore`` every non-constant column has variance exactly 1 by
    construction, so that value is reported instead of a rounded estimate.
    """
    if mode == "zscore":
        _, var = column_mean_variance(m)
        return np.where(var > 0, 1.0, 0.0)
    return column_mean_variance(scale_for_variance(m, mode))[1]


def variance_threshold(m, threshold: float = DEFAULT_VARIANCE_THRESHOLD,
                       mode: str = "raw") -> list[int]:
    """Indices of columns whose variance is strictly greater than ``threshold``."""
    var = scaled_variances(m, mode)
    return [int(j) for j in np.flatnonzero(var > threshold)]


def variance_sweep(m, thresholds, mode: str = "raw") -> list[tuple[float, int]]:
    thresholds = list(thresholds)
    if not thresholds:
        raise SelectionError("empty threshold list")
    var = scaled_variances(m, mode)
    return [(float(t), int(np.count_nonzero(var > t))) for t in thresholds]


def write_sweep_csv(pairs, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "count"])
        for t, c in pairs:
            w.writerow([repr(float(t)), int(c)])


def calibrate_scaling(m, threshold: float = DEFAULT_VARIANCE_THRESHOLD,
                      target: int = 13) -> dict:
    """Survivor count per scaling mode at ``threshold`` and which modes hit ``target``."""
    counts = {mode: len(variance_threshold(m, threshold, mode)) for mode in SCALING_MODES}
    return {"threshold": threshold, "target": target, "counts": counts,
            "matching_modes": [mode for mode, c in counts.items() if c == target]}


def _check_vif_input(a: np.ndarray):
    n, d = a.shape
    if d < 2:
        raise SelectionError("VIF needs at least 2 columns")
    if n < d + 1:
        raise SelectionError(f"VIF needs at least {d + 1} rows, got {n}")
    _, var = column_mean_variance(a)
    zero = np.flatnonzero(var == 0)
    if zero.size:
        raise ZeroVarianceError(zero.tolist())


def _r_squared_lstsq(a: np.ndarray, j: int) -> float:
    z = a - a.mean(axis=0)
    target = z[:, j]
    others = np.delete(z, j, axis=1)
    coef, *_ = np.linalg.lstsq(others, target, rcond=None)
    resid = target - others @ coef
    return 1.0 - float(resid @ resid) / float(target @ target)


def _vif_from_r2(r2: float) -> float:
    if r2 >= 1.0 - 1e-12:
        return math.inf
    return 1.0 / (1.0 - r2)


def compute_vif(m, columns=None) -> np.ndarray:
    """Variance inflation factors from the diagonal of the inverse correlation matrix.

    When the correlation matrix is singular, each column's R^2 is found by a
    minimum-norm least-squares fit instead and perfectly explained columns get
    ``inf``.
    """
    a = as_matrix(m)
    if columns is not None:
        a = a[:, list(columns)]
    _check_vif_input(a)
    try:
        inv = invert(correlation_matrix(a))
    except SingularMatrixError:
        return np.array([_vif_from_r2(_r_squared_lstsq(a, j)) for j in range(a.shape[1])])
    vif = np.diag(inv).copy()
    if (vif <= 0).any() or not np.isfinite(vif).all():
        return np.array([_vif_from_r2(_r_squared_lstsq(a, j)) for j in range(a.shape[1])])
    return vif


def vif_ols(m, columns=None) -> np.ndarray:
    """VIF by explicit OLS regressions (intercept included) via the normal equations."""
    a = as_matrix(m)
    if columns is not None:
        a = a[:, list(columns)]
    _check_vif_input(a)
    n, d = a.shape
    out = np.empty(d)
    for j in range(d):
        target = a[:, j]
        design = np.column_stack([np.ones(n), np.delete(a, j, axis=1)])
        try:
            beta = solve_linear(design.T @ design, design.T @ target)
        except SingularMatrixError:
            out[j] = _vif_from_r2(_r_squared_lstsq(a, j))
            continue
        resid = target - design @ beta
        centered = target - target.mean()
        out[j] = _vif_from_r2(1.0 - float(resid @ resid) / float(centered @ centered))
    return out


def _json_float(x: float):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return x


def _from_json_float(x) -> float:
    return float(x)


@dataclass
class SelectionReport:
    input_columns: list[str]
    scaling_mode: str
    variance_threshold: float
    variances: dict[str, float]
    scaled_variances: dict[str, float]
    stage1_columns: list[str]
    vif_threshold: float
    vif_iterations: list[dict] = field(default_factory=list)
    dropped: list[dict] = field(default_factory=list)
    final_columns: list[str] = field(default_factory=list)
    calibration: dict | None = None
    version: int = SELECTION_REPORT_VERSION

    @property
    def final_vif(self) -> dict[str, float]:
        return self.vif_iterations[-1]["vif"] if self.vif_iterations else {}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["vif_iterations"] = [
            {"vif": {k: _json_float(v) for k, v in it["vif"].items()},
             "dropped": it["dropped"]}
            for it in self.vif_iterations
        ]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d) -> "SelectionReport":
        if d.get("version") != SELECTION_REPORT_VERSION:
            raise SelectionError(f"unsupported selection report version {d.get('version')}")
        d = dict(d)
        d["vif_iterations"] = [
            {"vif": {k: _from_json_float(v) for k, v in it["vif"].items()},
             "dropped": it["dropped"]}
            for it in d["vif_iterations"]
        ]
        return cls(**d)


def vif_filter(m, columns, threshold: float = DEFAULT_VIF_THRESHOLD):
    """Iteratively drop the highest-VIF column until every VIF is <= threshold.

    Ties for the highest VIF go to the later column. Returns
    ``(final_columns, iterations, dropped)`` where each iteration records the
    VIF of every column still present and the column removed (or None).
    """
    a = as_matrix(m)
    names = list(columns)
    if len(names) != a.shape[1]:
        raise SelectionError("column names do not match matrix width")
    keep = list(range(a.shape[1]))
    iterations, dropped = [], []
    while len(keep) >= 2:
        vif = compute_vif(a[:, keep])
        scores = {names[j]: float(v) for j, v in zip(keep, vif)}
        top = float(np.max(vif))
        if top <= threshold:
            iterations.append({"vif": scores, "dropped": None})
            break
        pos = int(np.flatnonzero(vif == top)[-1])
        victim = names[keep[pos]]
        iterations.append({"vif": scores, "dropped": victim})
        dropped.append({"column": victim, "stage": "vif",
                        "reason": f"VIF {_json_float(top)} > {threshold}"})
        del keep[pos]
    else:
        if keep:
            iterations.append({"vif": {names[keep[0]]: 1.0}, "dropped": None})
    return [names[j] for j in keep], iterations, dropped


def select_features(m, columns, variance_threshold_value: float = DEFAULT_VARIANCE_THRESHOLD,
                    vif_threshold: float = DEFAULT_VIF_THRESHOLD,
                    scaling_mode: str = "raw") -> SelectionReport:
    """Variance filter under ``scaling_mode`` followed by iterative VIF filtering."""
    a = as_matrix(m)
    names = list(columns)
    _, raw_var = column_mean_variance(a)
    scaled_var = scaled_variances(a, scaling_mode)
    survivors = [j for j in range(a.shape[1]) if scaled_var[j] > variance_threshold_value]
    report = SelectionReport(
        input_columns=names,
        scaling_mode=scaling_mode,
        variance_threshold=float(variance_threshold_value),
        variances={n: float(v) for n, v in zip(names, raw_var)},
        scaled_variances={n: float(v) for n, v in zip(names, scaled_var)},
        stage1_columns=[names[j] for j in survivors],
        vif_threshold=float(vif_threshold),
    )
    for j in range(a.shape[1]):
        if j not in survivors:
            report.dropped.append({
                "column": names[j], "stage": "variance",
                "reason": f"{scaling_mode} variance {scaled_var[j]!r} <= {variance_threshold_value}"})
    if len(survivors) >= 2:
        final, iterations, dropped = vif_filter(
            apply_standardizer(fit_standardizer(a[:, survivors]), a[:, survivors]),
            report.stage1_columns, vif_threshold)
        report.vif_iterations = iterations
        report.dropped.extend(dropped)
        report.final_columns = final
    else:
        report.final_columns = list(report.stage1_columns)
    return report
