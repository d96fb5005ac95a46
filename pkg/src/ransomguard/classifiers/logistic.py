from __future__ import annotations

import numpy as np

from .common import DivergenceError, bce_from_logits, sigmoid


def lr_loss_grad(w, b, X, y, l2=0.0):
    """Mean binary cross-entropy (+ l2/2 ||w||^2) and its gradient w.r.t. (w, b)."""
    z = X @ w + b
    loss = bce_from_logits(z, y) + 0.5 * l2 * float(w @ w)
    r = (sigmoid(z) - y) / X.shape[0]
    return loss, X.T @ r + l2 * w, float(r.sum())


class LogisticRegression:
    """Full-batch gradient descent on the cross-entropy loss.

    Stops after ``max_epochs`` or once an epoch improves the loss by less than
    ``tol``.
    """

    kind = "lr"

    def __init__(self, learning_rate=0.1, max_epochs=2000, tol=1e-8, l2=0.0):
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.tol = tol
        self.l2 = l2
        self.w = None
        self.b = 0.0
        self.epochs_run = 0
        self.stopping_reason = None
        self.loss_history: list[float] = []

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        self.w = np.zeros(X.shape[1])
        self.b = 0.0
        self.stopping_reason = "max_epochs"
        with np.errstate(over="ignore", invalid="ignore"):
            self._descend(X, y)
        return self

    def _descend(self, X, y):
        prev = np.inf
        for epoch in range(self.max_epochs):
            loss, gw, gb = lr_loss_grad(self.w, self.b, X, y, self.l2)
            if not np.isfinite(loss):
                raise DivergenceError(f"logistic regression loss became {loss} at epoch {epoch}")
            self.loss_history.append(loss)
            if prev - loss < self.tol:
                self.epochs_run = epoch
                self.stopping_reason = "converged"
                break
            prev = loss
            self.w -= self.learning_rate * gw
            self.b -= self.learning_rate * gb
        else:
            self.epochs_run = self.max_epochs

    def decision_function(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.w + self.b

    def predict_proba(self, X) -> np.ndarray:
        return sigmoid(self.decision_function(X))

    def get_params(self) -> dict:
        return {"w": self.w, "b": np.array([self.b])}

    def set_params(self, params) -> "LogisticRegression":
        self.w = np.asarray(params["w"], dtype=np.float64)
        self.b = float(np.asarray(params["b"]).reshape(-1)[0])
        return self
