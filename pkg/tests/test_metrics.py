import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ransomguard.metrics import (FPR_GRID, ConfusionCounts, MetricError, aggregate_folds,
                                 confusion, f_beta, format_mean_std, mann_whitney_auc,
                                 mean_roc, precision_recall_accuracy, read_roc_csv, roc_curve,
                                 write_roc_csv)


def brute_force_auc(y, s):
    pos = [v for v, t in zip(s, y) if t]
    neg = [v for v, t in zip(s, y) if not t]
    wins = 0.0
    for p in pos:
        for q in neg:
            wins += 1.0 if p > q else 0.5 if p == q else 0.0
    return wins / (len(pos) * len(neg))


def test_confusion_enumeration():
    assert confusion([1, 1, 0, 0], [1, 0, 1, 0]) == ConfusionCounts(tp=1, fp=1, tn=1, fn=1)


def test_confusion_perfect_and_inverted():
    y = np.array([1, 0, 1, 1, 0])
    c = confusion(y, y)
    assert c.fp == c.fn == 0
    c = confusion(y, 1 - y)
    assert c.tp == c.tn == 0


def test_confusion_errors():
    with pytest.raises(MetricError):
        confusion([1, 0], [1])
    with pytest.raises(MetricError):
        confusion([], [])


def test_rates_balanced():
    r = precision_recall_accuracy(ConfusionCounts(1, 1, 1, 1))
    assert (r.precision, r.recall, r.accuracy) == (0.5, 0.5, 0.5)
    assert not r.precision_degenerate and not r.recall_degenerate


def test_rates_degenerate_flags():
    r = precision_recall_accuracy(ConfusionCounts(tp=0, fp=0, tn=3, fn=2))
    assert r.precision == 0.0 and r.precision_degenerate
    assert r.recall == 0.0 and not r.recall_degenerate
    r = precision_recall_accuracy(ConfusionCounts(tp=0, fp=2, tn=3, fn=0))
    assert r.recall_degenerate


def test_f_beta_examples():
    assert f_beta(1.0, 1.0, 1.0) == 1.0
    for beta in (0.5, 1.0, 2.0, 7.0):
        assert f_beta(0.5, 0.5, beta) == pytest.approx(0.5, abs=1e-15)
    # by hand: (1 + 4) * 1 * 0.5 / (4 * 1 + 0.5) = 2.5 / 4.5
    assert f_beta(1.0, 0.5, 2.0) == pytest.approx(5 / 9, abs=1e-15)
    assert f_beta(0.0, 0.0) == 0.0
    with pytest.raises(MetricError):
        f_beta(0.5, 0.5, 0.0)


def test_auc_perfect_and_inverted():
    y = np.array([0, 0, 1, 1, 0, 1])
    assert roc_curve(y, y.astype(float)).auc == 1.0
    assert roc_curve(y, 1.0 - y).auc == 0.0


def test_roc_shape():
    c = roc_curve([1, 0, 1, 0], [0.9, 0.8, 0.8, 0.1])
    assert c.fpr[0] == 0.0 and c.tpr[0] == 0.0 and math.isinf(c.thresholds[0])
    assert c.fpr[-1] == 1.0 and c.tpr[-1] == 1.0
    # the tied pair at 0.8 moves as one diagonal step
    assert c.fpr.tolist() == [0.0, 0.0, 0.5, 1.0]
    assert c.tpr.tolist() == [0.0, 0.5, 1.0, 1.0]
    assert c.auc == pytest.approx(0.875)


def test_roc_single_class_rejected():
    with pytest.raises(MetricError):
        roc_curve([1, 1], [0.2, 0.3])


def test_auc_matches_mann_whitney_200_instances():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 501))
        y = rng.integers(0, 2, n)
        y[0], y[1] = 0, 1
        if rng.random() < 0.5:
            s = rng.integers(0, 6, n).astype(float)  # heavy ties
        else:
            s = rng.normal(size=n)
        auc = roc_curve(y, s).auc
        worst = max(worst, abs(auc - brute_force_auc(y.tolist(), s.tolist())))
        assert abs(auc - mann_whitney_auc(y, s)) <= 1e-12
    assert worst <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.integers(-5, 5)), min_size=2, max_size=60))
def test_auc_mann_whitney_property(pairs):
    y = [int(a) for a, _ in pairs]
    if len(set(y)) < 2:
        return
    s = [float(b) for _, b in pairs]
    assert abs(roc_curve(y, s).auc - brute_force_auc(y, s)) <= 1e-12


def test_auc_invariant_under_monotone_transform():
    rng = np.random.default_rng(5)
    y = rng.integers(0, 2, 300)
    s = rng.normal(size=300)
    assert roc_curve(y, s).auc == pytest.approx(roc_curve(y, np.exp(3 * s) + 7).auc, abs=1e-15)


def test_mean_roc_single_curve_identity():
    # 100 negatives put every curve vertex on the 0.01 grid, so each grid
    # value must equal the top of the vertical run at that FPR
    rng = np.random.default_rng(0)
    y = np.r_[np.ones(60, int), np.zeros(100, int)]
    c = roc_curve(y, rng.normal(size=160) + y)
    m = mean_roc([c])
    assert m.auc == c.auc
    assert np.array_equal(m.fpr, FPR_GRID)
    assert m.tpr[0] == 0.0 and m.tpr[-1] == 1.0
    for i in range(1, 101):
        top = c.tpr[np.isclose(c.fpr, i / 100)].max()
        assert m.tpr[i] == pytest.approx(top, abs=1e-12)
    area = float(np.sum(np.diff(m.fpr) * (m.tpr[1:] + m.tpr[:-1]) / 2))
    assert area == pytest.approx(c.auc, abs=0.005)  # forced tpr[0]=0 wedge


def test_mean_roc_identical_curves():
    y = np.array([0, 1, 0, 1, 1, 0, 0, 1])
    c = roc_curve(y, np.array([0.1, 0.9, 0.3, 0.35, 0.8, 0.2, 0.7, 0.6]))
    one, two = mean_roc([c]), mean_roc([c, c])
    assert np.array_equal(one.tpr, two.tpr) and one.auc == two.auc
    with pytest.raises(MetricError):
        mean_roc([])


def test_aggregate_hand_arithmetic():
    agg = aggregate_folds([{"acc": 0.98}, {"acc": 1.00}])
    mean, std = agg["acc"]
    assert mean == pytest.approx(0.99, abs=1e-15)
    assert std == pytest.approx(math.sqrt(2) / 100, abs=1e-15)
    assert format_mean_std(mean, std) == "0.99±0.01"
    mean, std = aggregate_folds([{"a": 0.5}] * 4)["a"]
    assert (mean, std) == (0.5, 0.0)
    with pytest.raises(MetricError):
        aggregate_folds([{"a": 1.0}])


def test_roc_csv_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    y = rng.integers(0, 2, 100)
    c = roc_curve(y, rng.random(100))
    p = tmp_path / "c.csv"
    write_roc_csv(c, p)
    assert p.read_text().splitlines()[0] == "fpr,tpr,threshold"
    back = read_roc_csv(p)
    assert np.array_equal(back.fpr, c.fpr) and np.array_equal(back.tpr, c.tpr)
    assert back.auc == c.auc


@pytest.mark.parametrize("text", ["a,b,c\n0,0,1\n1,1,0\n", "fpr,tpr,threshold\n0,0,1\n",
                                  "fpr,tpr,threshold\n0,0,1\nx,1,0\n",
                                  "fpr,tpr,threshold\n0.5,0,1\n0.2,1,0\n"])
def test_roc_csv_rejects_malformed(tmp_path, text):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(MetricError):
        read_roc_csv(p)
