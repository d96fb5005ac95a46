import json

import numpy as np
import pytest

import ransomguard.evaluate as ev
from conftest import synthetic_table
from ransomguard.dataset import DatasetError, stratified_kfold
from ransomguard.evaluate import (EvalReport, ExperimentConfig, ExperimentError,
                                  compare_to_reference, feature_mode, fold_metrics,
                                  load_reference, run_experiment)

FAST = {"rf": {"n_trees": 5}, "nn": {"hidden": [8, 4], "max_epochs": 10}}
COLUMNS = "list:SizeOfOptionalHeader,MajorLinkerVersion,AddressOfEntryPoint,SectionsMaxEntropy"


def config(**kw):
    base = dict(positive_class="legitimate", features=COLUMNS, k=4, seed=42,
                model_params=FAST)
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def table():
    return synthetic_table(n=600, seed=1)


@pytest.fixture(scope="module")
def report(table):
    return run_experiment(config(), table)


def test_report_structure(report):
    assert list(report.folds) == ["DT", "RF", "NB", "LR", "NN"]
    for name, folds in report.folds.items():
        assert len(folds) == 4
        assert [f["fold"] for f in folds] == [0, 1, 2, 3]
        assert len(report.roc[name]) == 4
        assert set(report.aggregate[name]) == set(ev.METRIC_KEYS)
    d = json.loads(report.to_json())
    assert set(d["classifiers"]) == {"DT", "RF", "NB", "LR", "NN"}
    assert "timings" not in d


def test_report_table_layout(report):
    lines = report.table().splitlines()
    assert lines[0].split() == ["Classifiers", "Accuracy", "F-beta", "Recall", "Precision",
                                "F1", "AUC"]
    assert [ln.split()[0] for ln in lines[1:]] == ["DT", "RF", "NB", "LR", "NN"]
    assert all("±" in ln for ln in lines[1:])


def test_aggregate_matches_fold_values(report):
    for name, folds in report.folds.items():
        for key in ev.METRIC_KEYS:
            v = np.array([f[key] for f in folds])
            mean, std = report.aggregate[name][key]
            assert mean == pytest.approx(v.mean(), abs=1e-15)
            assert std == pytest.approx(v.std(ddof=1), abs=1e-15)
            # fold order is irrelevant to the summary
            assert np.array(v[::-1]).mean() == pytest.approx(mean, abs=1e-15)


def test_synthetic_signal_is_learned(report):
    assert report.aggregate["RF"]["auc"][0] > 0.8
    assert report.aggregate["LR"]["accuracy"][0] > 0.75


def test_byte_identical_reruns(table, report):
    again = run_experiment(config(), table)
    assert again.to_json() == report.to_json()
    other = run_experiment(config(seed=7), table)
    assert other.to_json() != report.to_json()


def test_fitting_never_sees_test_rows(table, monkeypatch):
    seen = []
    real_train, real_select = ev.train, ev.select_features

    def spy_train(spec, X, y, features=None, monitor=None):
        seen.append(("train", X[:, list(features).index("AddressOfEntryPoint")].copy()))
        return real_train(spec, X, y, features, monitor)

    def spy_select(m, *a, **kw):
        seen.append(("select", np.asarray(m)[:, col].copy()))
        return real_select(m, *a, **kw)

    col = table.columns.index("AddressOfEntryPoint")
    monkeypatch.setattr(ev, "train", spy_train)
    monkeypatch.setattr(ev, "select_features", spy_select)
    cfg = config(features="auto", models=("nb", "lr"))
    run_experiment(cfg, table)
    plan = stratified_kfold(table, cfg.k, cfg.seed)
    # the exponential column is continuous, so its values identify rows
    assert np.unique(table.values[:, col]).size == table.values.shape[0]
    per_fold = len(seen) // cfg.k
    assert per_fold == 3  # one selection and two trainings per fold
    for i in range(cfg.k):
        test_vals = set(table.values[plan.test_indices(i), col].tolist())
        train_vals = set(table.values[plan.train_indices(i), col].tolist())
        for _, values in seen[i * per_fold:(i + 1) * per_fold]:
            assert set(values.tolist()) == train_vals
            assert train_vals.isdisjoint(test_vals)


def test_auto_mode_records_selection(table):
    rep = run_experiment(config(features="auto", models=("nb",)), table)
    assert rep.selection["mode"] == "auto"
    assert len(rep.selection["per_fold"]) == 4
    for f in rep.folds["NB"]:
        assert "LoaderFlags" not in f["features"]
    glob = run_experiment(config(features="auto", models=("nb",), global_selection=True), table)
    assert "global" in glob.selection and "per_fold" not in glob.selection


def test_roc_csv_export(report, tmp_path):
    written = report.write_roc_csvs(tmp_path)
    assert len(written) == 5 * 5
    assert (tmp_path / "rf_fold0.csv").exists() and (tmp_path / "rf_mean.csv").exists()


def test_experiment_error_names_fold_and_classifier(table):
    with pytest.raises(ExperimentError) as err:
        run_experiment(config(models=("lr",), model_params={"lr": {"learning_rate": 1e300}}),
                       synthetic_table(n=200, seed=3))
    assert err.value.fold == 0 and err.value.classifier == "LR"


def test_config_validation(table):
    with pytest.raises(ValueError):
        ExperimentConfig(models=("svm",))
    with pytest.raises(ValueError):
        ExperimentConfig(k=1)
    with pytest.raises(ValueError):
        feature_mode("bogus")
    assert feature_mode("paper12")[0] == "preset"
    with pytest.raises(ValueError):
        run_experiment(config(positive_class="ransomware"), table)
    with pytest.raises(DatasetError):
        run_experiment(config(features="paper13"), table)  # columns absent from the table


def test_fold_metrics_values():
    m = fold_metrics([1, 1, 0, 0], [0.9, 0.4, 0.6, 0.1], beta=2.0)
    assert m["confusion"] == {"tp": 1, "fp": 1, "tn": 1, "fn": 1}
    assert m["accuracy"] == m["precision"] == m["recall"] == m["f1"] == 0.5
    assert m["auc"] == 0.75


def test_compare_to_reference_examples():
    ref = load_reference()
    assert ref["metrics"]["RF"]["accuracy"] == [0.99, 0.01]
    checks, failures = compare_to_reference({"RF": {"accuracy": 0.988}},
                                            {"RF": {"accuracy": 0.99}}, 0.02)
    assert len(checks) == 1 and failures == []
    _, failures = compare_to_reference({"LR": {"recall": 0.80}}, {"LR": {"recall": 0.89}}, 0.02)
    assert len(failures) == 1
    # exactly on the tolerance boundary
    _, failures = compare_to_reference({"NN": {"accuracy": 0.97}}, {"NN": {"accuracy": 0.99}},
                                       0.02)
    assert failures == []
    reported = {n: {k: 0.0 for k in cells} for n, cells in ref["metrics"].items()}
    checks, failures = compare_to_reference(reported, ref, 1.0)
    assert len(checks) == 5 * 4 + 4 and failures == []
    with pytest.raises(ValueError):
        compare_to_reference({"RF": {}}, ref, 0.5)


def test_compare_accepts_report(report):
    checks, _ = compare_to_reference(report, load_reference(), 1.0)
    assert {c.classifier for c in checks} == {"DT", "RF", "NB", "LR", "NN"}
    assert isinstance(report, EvalReport)
