"""CART with Gini impurity and a bagged random forest built on it.

The tree grower is compiled with numba (``nogil``) so forest members can be
grown on threads. Trees are stored as flat arrays; a sample goes left when
``x[feature] <= threshold``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from ..numeric import RandomSource

LEAF = -1

_U1 = np.uint64(1)
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@numba.njit(cache=True, nogil=True)
def _next(state):
    # splitmix64 step on a 1-element uint64 state array
    state[0] = state[0] + _GAMMA
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True, nogil=True)
def _randbelow(state, n):
    return np.int64(_next(state) % np.uint64(n))


@numba.njit(cache=True, nogil=True)
def _best_split(X, y, idx, start, end, f, buf_x, buf_y):
    n = end - start
    for i in range(n):
        buf_x[i] = X[idx[start + i], f]
    order = np.argsort(buf_x[:n], kind="mergesort")
    total_pos = 0.0
    for i in range(n):
        buf_y[i] = y[idx[start + i]]
        total_pos += buf_y[i]
    best = np.inf
    best_thr = 0.0
    found = False
    left_pos = 0.0
    for i in range(n - 1):
        left_pos += buf_y[order[i]]
        xa = buf_x[order[i]]
        xb = buf_x[order[i + 1]]
        if xa == xb:
            continue
        nl = i + 1.0
        nr = n - nl
        pl = left_pos / nl
        pr = (total_pos - left_pos) / nr
        gini = nl * (2.0 * pl * (1.0 - pl)) + nr * (2.0 * pr * (1.0 - pr))
        if gini < best:
            best = gini
            thr = xa + (xb - xa) / 2.0
            if thr >= xb:
                thr = xa
            best_thr = thr
            found = True
    return found, best / n, best_thr


@numba.njit(cache=True, nogil=True)
def _grow(X, y, sample_idx, max_features, min_samples_split, max_depth, seed):
    n = sample_idx.size
    d = X.shape[1]
    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap, np.float64)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap, np.float64)
    count = np.zeros(cap, np.int64)

    idx = sample_idx.copy()
    buf_x = np.empty(n, np.float64)
    buf_y = np.empty(n, np.float64)
    feats = np.arange(d)
    state = np.empty(1, np.uint64)
    state[0] = np.uint64(seed)

    stack = np.empty((cap, 4), np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n
    stack[0, 3] = 0
    top = 1
    n_nodes = 1
    while top > 0:
        top -= 1
        node = stack[top, 0]
        start = stack[top, 1]
        end = stack[top, 2]
        depth = stack[top, 3]
        m = end - start
        pos = 0.0
        for i in range(start, end):
            pos += y[idx[i]]
        value[node] = pos / m
        count[node] = m
        if pos == 0.0 or pos == m or m < min_samples_split:
            continue
        if max_depth >= 0 and depth >= max_depth:
            continue

        # Fisher-Yates over feature order; try max_features, keep going if none splits
        for i in range(d - 1, 0, -1):
            j = _randbelow(state, i + 1)
            t = feats[i]
            feats[i] = feats[j]
            feats[j] = t
        best = np.inf
        best_f = -1
        best_thr = 0.0
        for k in range(d):
            if k >= max_features and best_f >= 0:
                break
            f = feats[k]
            ok, imp, thr = _best_split(X, y, idx, start, end, f, buf_x, buf_y)
            if ok and imp < best:
                best = imp
                best_f = f
                best_thr = thr
        if best_f < 0:
            continue

        # partition idx[start:end] in place
        lo = start
        hi = end - 1
        while lo <= hi:
            if X[idx[lo], best_f] <= best_thr:
                lo += 1
            else:
                t = idx[lo]
                idx[lo] = idx[hi]
                idx[hi] = t
                hi -= 1
        feature[node] = best_f
        threshold[node] = best_thr
        l_id = n_nodes
        r_id = n_nodes + 1
        n_nodes += 2
        left[node] = l_id
        right[node] = r_id
        stack[top, 0] = r_id
        stack[top, 1] = lo
        stack[top, 2] = end
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = l_id
        stack[top, 1] = start
        stack[top, 2] = lo
        stack[top, 3] = depth + 1
        top += 1
    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy(), count[:n_nodes].copy())


@numba.njit(cache=True, nogil=True)
def _apply(X, feature, threshold, left, right, value):
    out = np.empty(X.shape[0], np.float64)
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@dataclass
class Tree:
    """Flat binary tree; ``value`` is the positive fraction of training samples at each node."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray

    @property
    def node_count(self) -> int:
        return int(self.feature.size)

    @property
    def depth(self) -> int:
        depth = np.zeros(self.node_count, np.int64)
        for node in range(self.node_count):
            if self.feature[node] >= 0:
                depth[self.left[node]] = depth[self.right[node]] = depth[node] + 1
        return int(depth.max())

    def predict_proba(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _apply(X, self.feature, self.threshold, self.left, self.right, self.value)

    ARRAYS = ("feature", "threshold", "left", "right", "value", "n_samples")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.ARRAYS}

    @classmethod
    def from_dict(cls, d) -> "Tree":
        return cls(**{k: np.asarray(d[k]) for k in cls.ARRAYS})


def grow_tree(X, y, sample_idx=None, max_features: int | None = None,
              min_samples_split: int = 2, max_depth: int | None = None,
              seed: int = 0) -> Tree:
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if sample_idx is None:
        sample_idx = np.arange(X.shape[0], dtype=np.int64)
    d = X.shape[1]
    max_features = d if max_features is None else max(1, min(int(max_features), d))
    arrays = _grow(X, y, np.ascontiguousarray(sample_idx, dtype=np.int64), max_features,
                   int(min_samples_split), -1 if max_depth is None else int(max_depth),
                   np.uint64(seed & ((1 << 64) - 1)))
    return Tree(*arrays)


class DecisionTree:
    kind = "dt"

    def __init__(self, max_depth=None, min_samples_split=2, max_features=None, seed=0):
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.max_features = max_features
        self.seed = seed
        self.tree: Tree | None = None

    def fit(self, X, y, sample_idx=None):
        self.tree = grow_tree(X, y, sample_idx, self.max_features, self.min_samples_split,
                              self.max_depth, RandomSource(self.seed).child_seed(0))
        return self

    def predict_proba(self, X) -> np.ndarray:
        return self.tree.predict_proba(X)

    def get_params(self) -> dict:
        return {"tree": self.tree.to_dict()}

    def set_params(self, params) -> "DecisionTree":
        self.tree = Tree.from_dict(params["tree"])
        return self


class RandomForest:
    """Bagged CART ensemble scored by the mean of the trees' leaf fractions.

    Tree ``i`` draws its bootstrap sample and its split randomness from
    sub-streams ``i`` of the forest seed, so results do not depend on how
    many worker threads grow the trees.
    """

    kind = "rf"

    def __init__(self, n_trees=100, max_features="sqrt", min_samples_split=2,
                 max_depth=None, bootstrap=True, seed=0, n_jobs=None):
        self.n_trees = n_trees
        self.max_features = max_features
        self.min_samples_split = min_samples_split
        self.max_depth = max_depth
        self.bootstrap = bootstrap
        self.seed = seed
        self.n_jobs = n_jobs
        self.trees: list[Tree] = []

    def _resolve_max_features(self, d: int) -> int:
        if self.max_features == "sqrt":
            return max(1, math.ceil(math.sqrt(d)))
        if self.max_features is None:
            return d
        return int(self.max_features)

    def bootstrap_indices(self, n: int, i: int) -> np.ndarray:
        if not self.bootstrap:
            return np.arange(n, dtype=np.int64)
        return RandomSource(self.seed).derive(i, 0).integers(0, n, size=n).astype(np.int64)

    def fit(self, X, y):
        X = np.ascontiguousarray(X, dtype=np.float64)
        y = np.ascontiguousarray(y, dtype=np.float64)
        n, d = X.shape
        mf = self._resolve_max_features(d)
        root = RandomSource(self.seed)

        def one(i):
            return grow_tree(X, y, self.bootstrap_indices(n, i), mf, self.min_samples_split,
                             self.max_depth, root.child_seed(i, 1))

        workers = self.n_jobs or 1
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                self.trees = list(pool.map(one, range(self.n_trees)))
        else:
            self.trees = [one(i) for i in range(self.n_trees)]
        return self

    def predict_proba(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        total = np.zeros(X.shape[0])
        for t in self.trees:
            total += t.predict_proba(X)
        return total / len(self.trees)

    def get_params(self) -> dict:
        return {"trees": [t.to_dict() for t in self.trees]}

    def set_params(self, params) -> "RandomForest":
        self.trees = [Tree.from_dict(t) for t in params["trees"]]
        return self
