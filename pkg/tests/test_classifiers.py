import math

import numpy as np
import pytest

from ransomguard.classifiers import (KINDS, ClassifierSpec, DecisionTree, DivergenceError,
                                     EarlyStopping, GaussianNB, LogisticRegression,
                                     RandomForest, SchemaError, SingleClassError, Tree,
                                     TrainingError, grow_tree, lr_gradient_check,
                                     nn_gradient_check, predict, score, train)
from ransomguard.classifiers.neural import MLP, init_params
from ransomguard.numeric import RandomSource

FAST = {"rf": {"n_trees": 8}, "nn": {"hidden": [8, 4], "max_epochs": 15}}


def blobs(n=500, d=2, gap=5.0, seed=0):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(-gap, 1, (n, d)), rng.normal(gap, 1, (n, d))])
    y = np.r_[np.zeros(n, int), np.ones(n, int)]
    return X, y


def gaussian_oracle(nb, x):
    """P(y=1 | x) from the product of per-feature normal densities, computed directly."""
    dens = []
    for c in (0, 1):
        p = math.exp(nb.log_prior[c])
        for j, v in enumerate(x):
            mu, var = nb.theta[c, j], nb.var[c, j]
            p *= math.exp(-(v - mu) ** 2 / (2 * var)) / math.sqrt(2 * math.pi * var)
        dens.append(p)
    return dens[1] / (dens[0] + dens[1])


def leaf(value):
    return Tree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]),
                np.array([float(value)]), np.array([1]))


def test_lr_separable_1d():
    rng = np.random.default_rng(0)
    x = np.r_[rng.uniform(0.1, 3, 100), rng.uniform(-3, -0.1, 100)]
    y = (x > 0).astype(int)
    m = train(ClassifierSpec("lr"), x[:, None], y)
    assert (predict(m, x[:, None]) == y).mean() == 1.0


def test_nb_blobs_accuracy():
    X, y = blobs()
    m = train(ClassifierSpec("nb"), X, y)
    assert (predict(m, X) == y).mean() >= 0.99


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_nb_posteriors_match_closed_form(d):
    rng = np.random.default_rng(d)
    X = np.vstack([rng.normal(0, 1, (80, d)), rng.normal(0.8, 1.5, (120, d))])
    y = np.r_[np.zeros(80, int), np.ones(120, int)]
    nb = GaussianNB().fit(X, y)
    # fitted parameters against a hand computation
    eps = 1e-9 * X.var(axis=0).max()
    assert np.allclose(nb.theta[1], X[y == 1].mean(axis=0), rtol=0, atol=1e-12)
    assert np.allclose(nb.var[0], X[y == 0].var(axis=0) + eps, rtol=0, atol=1e-12)
    probe = rng.normal(0.4, 1.5, (50, d))
    got = nb.predict_proba(probe)
    want = np.array([gaussian_oracle(nb, x) for x in probe])
    assert np.abs(got - want).max() <= 1e-9


def test_dt_xor():
    X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], float)
    y = np.array([0, 1, 1, 0])
    m = train(ClassifierSpec("dt"), X, y)
    assert (predict(m, X) == y).all()


def test_nb_symmetric_point_half():
    X = np.array([[-2.0], [-1.0], [1.0], [2.0]])
    nb = GaussianNB().fit(X, [0, 0, 1, 1])
    assert nb.predict_proba([[0.0]])[0] == pytest.approx(0.5, abs=1e-15)


def test_lr_zero_weights_half():
    lr = LogisticRegression().set_params({"w": np.zeros(3), "b": np.zeros(1)})
    assert np.array_equal(lr.predict_proba(np.random.default_rng(0).normal(size=(5, 3))),
                          np.full(5, 0.5))


def test_rf_mean_of_leaf_fractions():
    rf = RandomForest(n_trees=10)
    rf.trees = [leaf(1.0)] * 7 + [leaf(0.0)] * 3
    assert rf.predict_proba(np.zeros((2, 4))).tolist() == pytest.approx([0.7, 0.7], abs=1e-15)


def test_predict_boundary():
    X, y = blobs(50, 1)
    m = train(ClassifierSpec("lr"), X, y)
    m.estimator.set_params({"w": np.zeros(1), "b": np.zeros(1)})
    assert predict(m, X[:3]).tolist() == [1, 1, 1]  # score exactly 0.5
    assert predict(m, X[:3], threshold=0.49).tolist() == [1, 1, 1]
    assert predict(m, X[:3], threshold=0.51).tolist() == [0, 0, 0]
    m.estimator.set_params({"w": np.zeros(1), "b": np.array([math.log(0.7 / 0.3)])})
    assert predict(m, X[:1]).tolist() == [1]
    m.estimator.set_params({"w": np.zeros(1), "b": np.array([math.log(0.49 / 0.51)])})
    assert predict(m, X[:1]).tolist() == [0]


@pytest.mark.parametrize("seed", range(20))
def test_nn_gradient_check(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(20, 2))
    y = (rng.random(20) < 0.5).astype(float)
    assert nn_gradient_check(X, y, hidden=(4, 4), seed=seed) < 1e-4


@pytest.mark.parametrize("seed", range(20))
def test_lr_gradient_check(seed):
    rng = np.random.default_rng(100 + seed)
    X = rng.normal(size=(30, 4))
    y = (rng.random(30) < 0.5).astype(float)
    assert lr_gradient_check(X, y, l2=0.1 * (seed % 3), seed=seed) < 1e-4


def test_nn_gradient_single_sample():
    assert nn_gradient_check([[0.7]], [1.0], hidden=(3,), seed=3) < 1e-6


def test_nn_gradient_check_moves_off_kink():
    sizes = (2, 4, 4, 1)
    zeros = [np.zeros_like(p) for p in init_params(sizes, RandomSource(0))]
    X = np.random.default_rng(1).normal(size=(20, 2))
    y = (X[:, 0] > 0).astype(float)
    assert nn_gradient_check(X, y, hidden=(4, 4), params=zeros) < 1e-4


def test_early_stopping_plateau():
    stop = EarlyStopping(min_delta=1e-3, patience=5)
    losses = [1.0, 0.8, 0.79999] + [0.8] * 20
    halted = None
    for epoch, loss in enumerate(losses):
        if stop.update(loss, epoch):
            halted = epoch
            break
    assert stop.best_epoch == 1
    assert halted == stop.best_epoch + 5


def test_early_stopping_exact_delta_counts():
    stop = EarlyStopping(min_delta=0.25, patience=1)
    assert not stop.update(1.0, 0)
    assert not stop.update(0.75, 1)  # improvement of exactly min_delta
    assert stop.best_epoch == 1


def test_mlp_stops_five_epochs_after_last_improvement():
    X, y = blobs(100, 2)
    rng = np.random.default_rng(3)
    # the monitor labels carry no signal, so its loss soon stops improving
    Xm, ym = rng.normal(size=(200, 2)), rng.integers(0, 2, 200)
    net = MLP(hidden=(4,), max_epochs=200, patience=5, min_delta=1e-3, seed=1)
    net.fit(X, y, Xm, ym)
    assert net.stopping_reason == "early_stopping"
    best, last_improvement = math.inf, -1
    for h in net.history:
        if best - h["val_loss"] >= 1e-3:
            best, last_improvement = h["val_loss"], h["epoch"]
    assert net.history[-1]["epoch"] == last_improvement + 5


@pytest.mark.parametrize("kind", KINDS)
def test_training_is_deterministic(kind):
    X, y = blobs(120, 3, gap=1.0, seed=4)
    spec = ClassifierSpec(kind, FAST.get(kind, {}), seed=11)
    a = score(train(spec, X, y), X)
    b = score(train(spec, X, y), X)
    assert a.tobytes() == b.tobytes()
    assert ((a >= 0) & (a <= 1)).all()


def test_rf_thread_count_does_not_change_result():
    X, y = blobs(150, 4, gap=0.7, seed=2)
    one = RandomForest(n_trees=6, seed=3, n_jobs=1).fit(X, y).predict_proba(X)
    many = RandomForest(n_trees=6, seed=3, n_jobs=3).fit(X, y).predict_proba(X)
    assert one.tobytes() == many.tobytes()


def test_rf_single_tree_equals_grown_tree():
    X, y = blobs(100, 5, gap=0.5, seed=6)
    rf = RandomForest(n_trees=1, seed=9).fit(X, y)
    t = grow_tree(X, y, rf.bootstrap_indices(X.shape[0], 0), 3, 2, None,
                  RandomSource(9).child_seed(0, 1))
    for name in Tree.ARRAYS:
        assert np.array_equal(getattr(rf.trees[0], name), getattr(t, name))


def test_dt_pure_leaves_and_depth_limit():
    X, y = blobs(100, 2, gap=0.3, seed=1)
    full = DecisionTree(seed=0).fit(X, y)
    assert np.unique(X, axis=0).shape[0] == X.shape[0]
    assert ((full.predict_proba(X) >= 0.5) == y).mean() == 1.0
    stump = DecisionTree(max_depth=1, seed=0).fit(X, y)
    assert stump.tree.depth == 1 and stump.tree.node_count == 3


def test_lr_monotone_in_decision_function():
    X, y = blobs(100, 3, gap=0.8, seed=7)
    m = train(ClassifierSpec("lr"), X, y)
    z = m.estimator.decision_function(m.standardizer.transform(X))
    s = score(m, X)
    order = np.argsort(z)
    assert (np.diff(s[order]) >= 0).all()
    assert m.metadata["stopping_reason"] in ("converged", "max_epochs")


def test_score_input_forms():
    X, y = blobs(60, 2)
    m = train(ClassifierSpec("nb"), X, y, features=("a", "b"))
    row = X[0]
    direct = score(m, row)
    assert score(m, {"b": row[1], "a": row[0], "extra": 5.0}).tolist() == direct.tolist()
    assert score(m, np.array([[9.0, row[1], row[0]]]), columns=["z", "b", "a"]).tolist() == \
        direct.tolist()
    with pytest.raises(SchemaError):
        score(m, {"a": 1.0})
    with pytest.raises(SchemaError):
        score(m, np.zeros((1, 3)))
    with pytest.raises(SchemaError):
        score(m, [[np.nan, 0.0]])


def test_training_errors():
    X = np.random.default_rng(0).normal(size=(10, 2))
    with pytest.raises(SingleClassError):
        train(ClassifierSpec("lr"), X, np.ones(10, int))
    with pytest.raises(TrainingError):
        ClassifierSpec("svm")
    with pytest.raises(TrainingError):
        ClassifierSpec("rf", {"n_tree": 5})
    with pytest.raises(TrainingError):
        ClassifierSpec("lr", {"learning_rate": -1})
    with pytest.raises(TrainingError):
        train(ClassifierSpec("lr"), X, np.arange(10) % 3)
    with pytest.raises(SchemaError):
        train(ClassifierSpec("lr"), X, np.arange(10) % 2, features=("only",))


def test_lr_divergence_reported():
    X = np.array([[1e200], [-1e200], [2e200], [-3e200]])
    with pytest.raises(DivergenceError):
        LogisticRegression(learning_rate=1e300, max_epochs=10).fit(X, [1, 0, 1, 0])


def test_spec_defaults_and_serialisation():
    spec = ClassifierSpec("RF", {"n_jobs": 4})
    assert spec.kind == "rf" and spec.params["n_trees"] == 100
    assert spec.params["max_features"] == "sqrt"
    assert "n_jobs" not in spec.to_dict()["params"]
