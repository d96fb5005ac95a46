"""Fully connected ReLU network with a sigmoid output, trained with Adam."""
from __future__ import annotations

import numpy as np

from ..numeric import RandomSource
from .common import DivergenceError, bce_from_logits, sigmoid


def init_params(sizes, rng: RandomSource) -> list[np.ndarray]:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    return params


def forward(params, X):
    """Returns (logits, cache). Hidden layers use ReLU; the last layer is linear."""
    a = X
    cache = []
    n_layers = len(params) // 2
    for k in range(n_layers):
        W, b = params[2 * k], params[2 * k + 1]
        z = a @ W + b
        cache.append((a, z))
        a = np.maximum(z, 0.0) if k < n_layers - 1 else z
    return a[:, 0], cache


def loss_and_grads(params, X, y):
    """Mean binary cross-entropy and its gradient for every parameter array."""
    logits, cache = forward(params, X)
    loss = bce_from_logits(logits, y)
    delta = ((sigmoid(logits) - y) / X.shape[0])[:, None]
    grads = [None] * len(params)
    for k in range(len(params) // 2 - 1, -1, -1):
        a_prev, _ = cache[k]
        grads[2 * k] = a_prev.T @ delta
        grads[2 * k + 1] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ params[2 * k].T) * (cache[k - 1][1] > 0)
    return loss, grads


class Adam:
    def __init__(self, params, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class EarlyStopping:
    """Patience counter on a monitored loss.

    An epoch counts as an improvement when it lowers the best loss seen so
    far by at least ``min_delta``. Training should stop once ``patience``
    consecutive epochs pass without one.
    """

    def __init__(self, min_delta=1e-3, patience=5):
        self.min_delta = min_delta
        self.patience = patience
        self.best = np.inf
        self.wait = 0
        self.best_epoch = -1

    def update(self, loss: float, epoch: int) -> bool:
        """Record ``loss``; return True when training should stop."""
        if self.best - loss >= self.min_delta:
            self.best = loss
            self.wait = 0
            self.best_epoch = epoch
            return False
        self.wait += 1
        return self.wait >= self.patience


class MLP:
    kind = "nn"

    def __init__(self, hidden=(64, 32), learning_rate=0.01, beta1=0.9, beta2=0.999,
                 eps=1e-8, batch_size=256, max_epochs=100, min_delta=1e-3, patience=5,
                 seed=0):
        self.hidden = tuple(hidden)
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.min_delta = min_delta
        self.patience = patience
        self.seed = seed
        self.params: list[np.ndarray] = []
        self.epochs_run = 0
        self.stopping_reason = None
        self.history: list[dict] = []

    def fit(self, X, y, X_monitor=None, y_monitor=None):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        rng = RandomSource(self.seed)
        self.params = init_params((X.shape[1],) + self.hidden + (1,), rng.derive(0))
        opt = Adam(self.params, self.learning_rate, self.beta1, self.beta2, self.eps)
        stopper = EarlyStopping(self.min_delta, self.patience)
        shuffler = rng.derive(1)
        n = X.shape[0]
        self.stopping_reason = "max_epochs"
        self.epochs_run = self.max_epochs
        for epoch in range(self.max_epochs):
            order = shuffler.permutation(n)
            for lo in range(0, n, self.batch_size):
                batch = order[lo:lo + self.batch_size]
                loss, grads = loss_and_grads(self.params, X[batch], y[batch])
                if not np.isfinite(loss):
                    raise DivergenceError(f"network loss became {loss} in epoch {epoch}")
                opt.step(self.params, grads)
            train_loss = bce_from_logits(forward(self.params, X)[0], y)
            entry = {"epoch": epoch, "loss": train_loss}
            if X_monitor is not None:
                val = bce_from_logits(forward(self.params, X_monitor)[0], y_monitor)
                if not np.isfinite(val):
                    raise DivergenceError(f"monitored loss became {val} in epoch {epoch}")
                entry["val_loss"] = val
                self.history.append(entry)
                if stopper.update(val, epoch):
                    self.epochs_run = epoch + 1
                    self.stopping_reason = "early_stopping"
                    break
            else:
                self.history.append(entry)
        return self

    def predict_proba(self, X) -> np.ndarray:
        return sigmoid(forward(self.params, np.asarray(X, dtype=np.float64))[0])

    def get_params(self) -> dict:
        return {f"p{i}": p for i, p in enumerate(self.params)}

    def set_params(self, params) -> "MLP":
        self.params = [np.asarray(params[f"p{i}"], dtype=np.float64)
                       for i in range(len(params))]
        return self


def max_relative_error(analytic, numeric, floor=1e-8) -> float:
    a = np.concatenate([np.ravel(g) for g in analytic])
    n = np.concatenate([np.ravel(g) for g in numeric])
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def finite_difference(loss_fn, params, h=1e-5) -> list[np.ndarray]:
    """Central differences of ``loss_fn(params)`` for every entry of every array."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn(params)
            flat[i] = orig - h
            down = loss_fn(params)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def _min_hidden_margin(params, X) -> float:
    _, cache = forward(params, X)
    zs = [z for _, z in cache[:-1]]
    return min(float(np.min(np.abs(z))) for z in zs) if zs else np.inf


def nn_gradient_check(X, y, hidden=(64, 32), params=None, seed=0, h=1e-5,
                      margin=1e-3, max_tries=200) -> float:
    """Max relative error between backprop and central finite differences.

    The check runs at a random parameter point (or near ``params`` when
    given). Points where any hidden pre-activation lies within ``margin`` of
    the ReLU kink are re-drawn, since finite differences are meaningless
    there.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    rng = RandomSource(seed)
    sizes = (X.shape[1],) + tuple(hidden) + (1,)
    base = init_params(sizes, rng.derive(0)) if params is None else [np.array(p, dtype=np.float64) for p in params]
    point = [p.copy() for p in base]
    for attempt in range(max_tries):
        if _min_hidden_margin(point, X) > margin:
            break
        jitter = rng.derive(1, attempt)
        point = [p + jitter.normal(0.0, 0.5, size=p.shape) for p in base]
    else:
        raise RuntimeError("could not find a parameter point away from ReLU kinks")

    _, analytic = loss_and_grads(point, X, y)
    numeric = finite_difference(lambda ps: bce_from_logits(forward(ps, X)[0], y), point, h)
    return max_relative_error(analytic, numeric)
